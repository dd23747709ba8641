//! The periodic shift operator `T(z)`, its derivative action and the
//! transformation of snapshot data into the co-moving frame.
//!
//! `T(z) phi` evaluated at `x_i` is `phi((x_i - z) mod l)`. Shifts that are an
//! integer multiple of `dx` are exact index rotations under every scheme.
//! Fractional shifts are either linearly interpolated between neighbouring
//! nodes ([`ShiftScheme::Interpolated`], paired with central differences for
//! mode derivatives) or evaluated through the trigonometric interpolant
//! ([`ShiftScheme::Spectral`], paired with spectral derivatives). Only the
//! spectral pair satisfies `d/dz T(z) phi = -T(z) phi'` exactly on the grid.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::discretization::{central_derivative, DiscreteField, SpaceTimeGrid};
use crate::error::{check_len, Error, Result};
use crate::fom::SnapshotMatrix;
use crate::spectral::Fourier;

/// Shift values `z(t_j)`, one per time node.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftPath(DVector<f64>);

impl ShiftPath {
    pub fn new(z: DVector<f64>) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "shift path has non-finite entries".into(),
            ));
        }
        Ok(Self(z))
    }

    pub fn zeros(n_t: usize) -> Self {
        Self(DVector::zeros(n_t))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn at(&self, j: usize) -> f64 {
        self.0[j]
    }
}

/// `z_j = v t_j`, the position of the uncontrolled wave.
pub fn uncontrolled_shift_path(grid: &SpaceTimeGrid) -> ShiftPath {
    ShiftPath(DVector::from_fn(grid.n_t(), |j, _| grid.v() * grid.t(j)))
}

/// Integer rotation when `z` is a whole number of cells.
fn aligned_rotation(z: f64, grid: &SpaceTimeGrid) -> Option<usize> {
    let s = z.rem_euclid(grid.l()) / grid.dx();
    let r = s.round();
    if (s - r).abs() <= 1e-9 * s.abs().max(1.0) {
        Some((r as usize) % grid.n())
    } else {
        None
    }
}

fn rotate_by(field: &DiscreteField, k: usize) -> DiscreteField {
    let n = field.len();
    DVector::from_fn(n, |i, _| field[(i + n - k) % n])
}

/// `T(z) field` with periodic linear interpolation between nodes.
pub fn shift_field(field: &DiscreteField, z: f64, grid: &SpaceTimeGrid) -> Result<DiscreteField> {
    check_len("shift_field", grid.n(), field.len())?;
    if let Some(k) = aligned_rotation(z, grid) {
        return Ok(rotate_by(field, k));
    }
    let n = grid.n();
    let s = z.rem_euclid(grid.l()) / grid.dx();
    let k = s.floor();
    let frac = s - k;
    let k = k as usize % n;
    Ok(DVector::from_fn(n, |i, _| {
        let a = field[(i + n - k) % n];
        let b = field[(i + 2 * n - k - 1) % n];
        (1.0 - frac) * a + frac * b
    }))
}

/// `T*(z) = T(-z)`.
pub fn shift_adjoint(field: &DiscreteField, z: f64, grid: &SpaceTimeGrid) -> Result<DiscreteField> {
    shift_field(field, -z, grid)
}

/// `T'(z) mode = -T(z) mode'` with a central-difference `mode'`.
pub fn shift_derivative_field(
    mode: &DiscreteField,
    z: f64,
    grid: &SpaceTimeGrid,
) -> Result<DiscreteField> {
    let d = central_derivative(mode, grid, 1)?;
    Ok(-shift_field(&d, z, grid)?)
}

/// Column `j` becomes `T(-z_j) Q_j`, i.e. the data seen in the co-moving frame.
pub fn transform_snapshots(
    q: &SnapshotMatrix,
    path: &ShiftPath,
    grid: &SpaceTimeGrid,
) -> Result<SnapshotMatrix> {
    Shifter::new(grid, ShiftScheme::Interpolated).transform_snapshots(q, path)
}

/// How fractional shifts and mode derivatives are discretized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ShiftScheme {
    /// Trigonometric interpolation and spectral derivatives.
    #[default]
    Spectral,
    /// Linear interpolation and second-order central differences.
    Interpolated,
}

impl FromStr for ShiftScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "interpolated" | "linear" => Ok(Self::Interpolated),
            other => Err(format!(
                "unknown shift scheme '{other}' (expected spectral or interpolated)"
            )),
        }
    }
}

impl std::fmt::Display for ShiftScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Spectral => "spectral",
            Self::Interpolated => "interpolated",
        })
    }
}

/// Shift operator and matching derivative for one grid.
#[derive(Clone, Debug)]
pub struct Shifter {
    grid: SpaceTimeGrid,
    scheme: ShiftScheme,
    fourier: Option<Fourier>,
}

impl Shifter {
    pub fn new(grid: &SpaceTimeGrid, scheme: ShiftScheme) -> Self {
        let fourier = match scheme {
            ShiftScheme::Spectral => Some(Fourier::new(grid)),
            ShiftScheme::Interpolated => None,
        };
        Self {
            grid: *grid,
            scheme,
            fourier,
        }
    }

    pub fn scheme(&self) -> ShiftScheme {
        self.scheme
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    /// `T(z) field`.
    pub fn shift(&self, field: &DiscreteField, z: f64) -> DiscreteField {
        if let Some(k) = aligned_rotation(z, &self.grid) {
            return rotate_by(field, k);
        }
        match &self.fourier {
            Some(f) => f.shift(field, z),
            None => shift_field(field, z, &self.grid).expect("field length checked by caller"),
        }
    }

    /// Shifts every column of `fields` by the same `z`.
    pub fn shift_columns(&self, fields: &DMatrix<f64>, z: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(fields.nrows(), fields.ncols());
        for (k, col) in fields.column_iter().enumerate() {
            out.set_column(k, &self.shift(&col.into_owned(), z));
        }
        out
    }

    pub fn derivative(&self, field: &DiscreteField, order: u8) -> DiscreteField {
        match &self.fourier {
            Some(f) => f.derivative(field, order),
            None => central_derivative(field, &self.grid, order)
                .expect("field length checked by caller"),
        }
    }

    pub fn derivative_columns(&self, fields: &DMatrix<f64>, order: u8) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(fields.nrows(), fields.ncols());
        for (k, col) in fields.column_iter().enumerate() {
            out.set_column(k, &self.derivative(&col.into_owned(), order));
        }
        out
    }

    /// `T'(z) mode = -T(z) mode'`.
    pub fn shift_derivative(&self, mode: &DiscreteField, z: f64) -> DiscreteField {
        -self.shift(&self.derivative(mode, 1), z)
    }

    pub fn transform_snapshots(
        &self,
        q: &SnapshotMatrix,
        path: &ShiftPath,
    ) -> Result<SnapshotMatrix> {
        check_len("transform_snapshots rows", self.grid.n(), q.n())?;
        check_len("transform_snapshots path", q.n_t(), path.len())?;
        let mut out = DMatrix::zeros(q.n(), q.n_t());
        for j in 0..q.n_t() {
            out.set_column(j, &self.shift(&q.column(j), -path.at(j)));
        }
        Ok(SnapshotMatrix::from_matrix(out))
    }
}
