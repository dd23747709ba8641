//! Control shape functions, the control operator `B` and its adjoint.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::discretization::{DiscreteField, SpaceTimeGrid};
use crate::error::{check_len, Error, Result};

/// Shape functions `b_k` sampled on the grid, one per column.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlShapes {
    shapes: DMatrix<f64>,
    xi: Option<usize>,
}

impl ControlShapes {
    /// Arbitrary user-supplied shapes; every column must be nonzero.
    pub fn from_matrix(shapes: DMatrix<f64>) -> Result<Self> {
        if shapes.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "at least one control shape is required".into(),
            ));
        }
        if let Some(k) = shapes.column_iter().position(|c| c.amax() == 0.0) {
            return Err(Error::InvalidParameter(format!(
                "control shape {} is identically zero",
                k + 1
            )));
        }
        Ok(Self { shapes, xi: None })
    }

    /// `b_1 = 1`, `b_{2k} = sin(2 pi k x / l)`, `b_{2k+1} = -cos(2 pi k x / l)`.
    pub fn fourier(grid: &SpaceTimeGrid, xi: usize) -> Self {
        let m = 2 * xi + 1;
        let l = grid.l();
        let shapes = DMatrix::from_fn(grid.n(), m, |i, col| {
            let x = grid.x(i);
            if col == 0 {
                1.0
            } else {
                let k = col.div_ceil(2) as f64;
                let arg = 2.0 * PI * k * x / l;
                if col % 2 == 1 {
                    arg.sin()
                } else {
                    -arg.cos()
                }
            }
        });
        Self {
            shapes,
            xi: Some(xi),
        }
    }

    pub fn m(&self) -> usize {
        self.shapes.ncols()
    }

    pub fn n(&self) -> usize {
        self.shapes.nrows()
    }

    /// Harmonic count when built from Fourier shapes.
    pub fn xi(&self) -> Option<usize> {
        self.xi
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.shapes
    }

    pub fn shape(&self, k: usize) -> DiscreteField {
        self.shapes.column(k).into_owned()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            shapes: &self.shapes * c,
            xi: self.xi,
        }
    }

    /// `sum_k b_k u_k`.
    pub fn apply(&self, u: &DVector<f64>) -> Result<DiscreteField> {
        check_len("apply_control", self.m(), u.len())?;
        Ok(&self.shapes * u)
    }

    /// Component `k` is `<b_k, field>_H`.
    pub fn adjoint(&self, field: &DiscreteField, grid: &SpaceTimeGrid) -> Result<DVector<f64>> {
        check_len("adjoint_control", self.n(), field.len())?;
        check_len("adjoint_control (grid)", grid.n(), field.len())?;
        Ok(self.shapes.tr_mul(field) * grid.dx())
    }

    /// Applies `B` to every column of a control signal.
    pub fn apply_signal(&self, u: &ControlSignal) -> Result<DMatrix<f64>> {
        check_len("apply_control (signal)", self.m(), u.m())?;
        Ok(&self.shapes * u.matrix())
    }

    /// Gram matrix `[<b_i, b_j>_H]`.
    pub fn gram(&self, grid: &SpaceTimeGrid) -> DMatrix<f64> {
        self.shapes.tr_mul(&self.shapes) * grid.dx()
    }

    /// Spectral norm of `u -> B u` from Euclidean `R^m` into `H`.
    pub fn operator_norm(&self, grid: &SpaceTimeGrid) -> f64 {
        // the largest singular value of sqrt(dx) * shapes is the root of the
        // largest Gram eigenvalue
        let eig = SymmetricEigen::new(self.gram(grid));
        eig.eigenvalues.max().max(0.0).sqrt()
    }
}

/// `apply_control` as a free function.
pub fn apply_control(shapes: &ControlShapes, u_at_t: &DVector<f64>) -> Result<DiscreteField> {
    shapes.apply(u_at_t)
}

/// `adjoint_control` as a free function.
pub fn adjoint_control(
    shapes: &ControlShapes,
    field: &DiscreteField,
    grid: &SpaceTimeGrid,
) -> Result<DVector<f64>> {
    shapes.adjoint(field, grid)
}

pub fn operator_norm_b(shapes: &ControlShapes, grid: &SpaceTimeGrid) -> f64 {
    shapes.operator_norm(grid)
}

/// Control coefficients `u_k(t_j)`; `m` rows, one column per time node.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSignal(DMatrix<f64>);

impl ControlSignal {
    pub fn zeros(m: usize, n_t: usize) -> Self {
        Self(DMatrix::zeros(m, n_t))
    }

    pub fn from_matrix(coefficients: DMatrix<f64>) -> Self {
        Self(coefficients)
    }

    pub fn m(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn at(&self, j: usize) -> DVector<f64> {
        self.0.column(j).into_owned()
    }

    pub fn check_dims(&self, m: usize, n_t: usize) -> Result<()> {
        check_len("control signal rows", m, self.m())?;
        check_len("control signal columns", n_t, self.n_t())
    }

    /// `dt * sum_j ||u(t_j)||^2`, the rectangle-rule `L^2(0,T;R^m)` norm squared.
    pub fn l2_norm_squared(&self, dt: f64) -> f64 {
        dt * self.0.norm_squared()
    }

    /// dt-weighted Frobenius pairing.
    pub fn dot(&self, other: &Self, dt: f64) -> f64 {
        dt * self.0.dot(&other.0)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        Self(&self.0 + &other.0 * alpha)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(&self.0 - &other.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}
