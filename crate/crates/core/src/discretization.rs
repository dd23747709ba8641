//! Periodic space-time grid, quadrature and finite-difference operators.
//!
//! The spatial grid has `n` nodes `x_i = i * dx` on `[0, l)`; node `n` is
//! identified with node `0`. Time nodes are `t_j = j * dt` for
//! `j = 0..n_t`, and every snapshot matrix carries one column per time node.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Nodal values of a field on the periodic grid.
pub type DiscreteField = DVector<f64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceTimeGrid {
    l: f64,
    n: usize,
    dx: f64,
    t_final: f64,
    n_t: usize,
    dt: f64,
    v: f64,
}

impl SpaceTimeGrid {
    pub fn new(l: f64, n: usize, t_final: f64, n_t: usize, v: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 spatial points, got {n}"
            )));
        }
        if n_t < 1 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "domain length must be positive, got {l}"
            )));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        if !v.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "velocity must be finite, got {v}"
            )));
        }
        Ok(Self {
            l,
            n,
            dx: l / n as f64,
            t_final,
            n_t,
            dt: t_final / n_t as f64,
            v,
        })
    }

    /// Grid whose final time is chosen so that `|v| dt / dx` equals `cfl`.
    pub fn with_cfl(l: f64, n: usize, n_t: usize, v: f64, cfl: f64) -> Result<Self> {
        if v == 0.0 || cfl <= 0.0 {
            return Err(Error::InvalidGrid(
                "CFL-based construction needs v != 0 and cfl > 0".into(),
            ));
        }
        let dx = l / n as f64;
        let dt = cfl * dx / v.abs();
        Self::new(l, n, dt * n_t as f64, n_t, v)
    }

    /// Same spatial grid and horizon with `n_t` replaced.
    pub fn with_time_steps(&self, n_t: usize) -> Result<Self> {
        Self::new(self.l, self.n, self.t_final, n_t, self.v)
    }

    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn cfl(&self) -> f64 {
        self.v.abs() * self.dt / self.dx
    }

    pub fn points(&self) -> DiscreteField {
        DVector::from_fn(self.n, |i, _| self.x(i))
    }

    /// Samples `f` at the grid nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> DiscreteField {
        DVector::from_fn(self.n, |i, _| f(self.x(i)))
    }

    pub fn zeros(&self) -> DiscreteField {
        DVector::zeros(self.n)
    }

    pub fn inner_product(&self, a: &DiscreteField, b: &DiscreteField) -> Result<f64> {
        inner_product(a, b, self)
    }

    pub fn norm(&self, a: &DiscreteField) -> f64 {
        (self.dx * a.norm_squared()).sqrt()
    }

    pub fn upwind_operator(&self) -> UpwindOperator {
        UpwindOperator::new(self)
    }
}

/// `dx * sum_i a_i b_i`.
pub fn inner_product(a: &DiscreteField, b: &DiscreteField, grid: &SpaceTimeGrid) -> Result<f64> {
    check_len("inner_product (a)", grid.n, a.len())?;
    check_len("inner_product (b)", grid.n, b.len())?;
    Ok(grid.dx * a.dot(b))
}

/// First-order upwind discretization of `-v d/dx` with periodic wrap.
///
/// Every row holds two nonzeros: `-v/dx` on the diagonal and `+v/dx` on the
/// upwind neighbour (`i - 1` for `v > 0`, `i + 1` for `v < 0`), scaled so that
/// row sums vanish.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpwindOperator {
    n: usize,
    diag: f64,
    neighbour: f64,
    upwind_left: bool,
}

impl UpwindOperator {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        let v = grid.v();
        let c = v.abs() / grid.dx();
        Self {
            n: grid.n(),
            diag: -c,
            neighbour: c,
            upwind_left: v >= 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn left(&self, i: usize) -> usize {
        (i + self.n - 1) % self.n
    }

    fn right(&self, i: usize) -> usize {
        (i + 1) % self.n
    }

    /// `y -> A_h y`.
    pub fn apply(&self, y: &DiscreteField) -> DiscreteField {
        let mut out = DVector::zeros(self.n);
        self.apply_into(y.as_slice(), out.as_mut_slice());
        out
    }

    pub fn apply_into(&self, y: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let j = if self.upwind_left {
                self.left(i)
            } else {
                self.right(i)
            };
            out[i] = self.diag * y[i] + self.neighbour * y[j];
        }
    }

    /// `y -> A_h^T y`; for `v > 0` this is the forward-difference stencil of `v d/dx`.
    pub fn apply_transpose(&self, y: &DiscreteField) -> DiscreteField {
        let mut out = DVector::zeros(self.n);
        self.apply_transpose_into(y.as_slice(), out.as_mut_slice());
        out
    }

    pub fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let j = if self.upwind_left {
                self.right(i)
            } else {
                self.left(i)
            };
            out[i] = self.diag * y[i] + self.neighbour * y[j];
        }
    }

    /// Nonzero entries as `(row, col, value)`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        if self.diag == 0.0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(2 * self.n);
        for i in 0..self.n {
            let j = if self.upwind_left {
                self.left(i)
            } else {
                self.right(i)
            };
            out.push((i, i, self.diag));
            out.push((i, j, self.neighbour));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for (i, j, val) in self.triplets() {
            a[(i, j)] += val;
        }
        a
    }
}

/// Second-order periodic central differences of order 1 or 2.
pub fn central_derivative(
    field: &DiscreteField,
    grid: &SpaceTimeGrid,
    order: u8,
) -> Result<DiscreteField> {
    check_len("central_derivative", grid.n(), field.len())?;
    let n = grid.n();
    let dx = grid.dx();
    let y = field.as_slice();
    match order {
        1 => Ok(DVector::from_fn(n, |i, _| {
            (y[(i + 1) % n] - y[(i + n - 1) % n]) / (2.0 * dx)
        })),
        2 => Ok(DVector::from_fn(n, |i, _| {
            (y[(i + 1) % n] - 2.0 * y[i] + y[(i + n - 1) % n]) / (dx * dx)
        })),
        _ => Err(Error::InvalidParameter(format!(
            "derivative order must be 1 or 2, got {order}"
        ))),
    }
}

/// Dense matrix of the first-order central difference.
pub fn central_difference_matrix(grid: &SpaceTimeGrid) -> DMatrix<f64> {
    let n = grid.n();
    let c = 1.0 / (2.0 * grid.dx());
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        d[(i, (i + 1) % n)] += c;
        d[(i, (i + n - 1) % n)] -= c;
    }
    d
}
