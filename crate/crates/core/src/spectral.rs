//! Trigonometric interpolation on the periodic grid: exact fractional shifts
//! and spectral derivatives of nodal fields.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::discretization::{DiscreteField, SpaceTimeGrid};

#[derive(Clone)]
pub struct Fourier {
    n: usize,
    l: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fourier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fourier")
            .field("n", &self.n)
            .field("l", &self.l)
            .finish()
    }
}

impl Fourier {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n: grid.n(),
            l: grid.l(),
            forward: planner.plan_fft_forward(grid.n()),
            inverse: planner.plan_fft_inverse(grid.n()),
        }
    }

    /// Signed wavenumber index of FFT bin `k`.
    fn signed(&self, k: usize) -> i64 {
        if 2 * k <= self.n {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }

    fn is_nyquist(&self, k: usize) -> bool {
        self.n.is_multiple_of(2) && 2 * k == self.n
    }

    pub fn spectrum(&self, field: &DiscreteField) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = field.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    fn synthesize(&self, mut buf: Vec<Complex64>) -> DiscreteField {
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        DVector::from_iterator(self.n, buf.iter().map(|c| c.re * scale))
    }

    /// Applies a per-wavenumber multiplier to a precomputed spectrum.
    fn filter(
        &self,
        spectrum: &[Complex64],
        multiplier: impl Fn(i64, bool) -> Complex64,
    ) -> DiscreteField {
        let buf = spectrum
            .iter()
            .enumerate()
            .map(|(k, &c)| c * multiplier(self.signed(k), self.is_nyquist(k)))
            .collect();
        self.synthesize(buf)
    }

    fn shift_multiplier(&self, z: f64) -> impl Fn(i64, bool) -> Complex64 + '_ {
        let base = -2.0 * PI * z / self.l;
        move |k, nyquist| {
            let arg = base * k as f64;
            if nyquist {
                // keep the shifted field real
                Complex64::new(arg.cos(), 0.0)
            } else {
                Complex64::new(arg.cos(), arg.sin())
            }
        }
    }

    fn derivative_multiplier(&self, order: u8) -> impl Fn(i64, bool) -> Complex64 + '_ {
        let w = 2.0 * PI / self.l;
        move |k, nyquist| {
            let ik = Complex64::new(0.0, w * k as f64);
            if nyquist && order % 2 == 1 {
                Complex64::new(0.0, 0.0)
            } else {
                ik.powu(order as u32)
            }
        }
    }

    /// Trigonometric interpolant of `field` evaluated at `x_i - z`.
    pub fn shift(&self, field: &DiscreteField, z: f64) -> DiscreteField {
        self.shift_spectrum(&self.spectrum(field), z)
    }

    pub fn shift_spectrum(&self, spectrum: &[Complex64], z: f64) -> DiscreteField {
        self.filter(spectrum, self.shift_multiplier(z))
    }

    pub fn derivative(&self, field: &DiscreteField, order: u8) -> DiscreteField {
        self.filter(&self.spectrum(field), self.derivative_multiplier(order))
    }
}
