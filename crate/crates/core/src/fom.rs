//! Full-order model: explicit Euler with first-order upwinding for the state,
//! the backward adjoint sweep, the tracking cost and its gradient.

use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::control::{ControlShapes, ControlSignal};
use crate::discretization::{DiscreteField, SpaceTimeGrid};
use crate::error::{check_len, Error, Result};
use crate::optimizer::{ControlledModel, Evaluation, ModelKind, PhaseTimings};

/// `n x n_t` matrix whose column `j` is a field at time `t_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotMatrix(DMatrix<f64>);

impl SnapshotMatrix {
    pub fn zeros(n: usize, n_t: usize) -> Self {
        Self(DMatrix::zeros(n, n_t))
    }

    pub fn from_matrix(columns: DMatrix<f64>) -> Self {
        Self(columns)
    }

    /// Every column equal to `field`.
    pub fn replicate(field: &DiscreteField, n_t: usize) -> Self {
        Self(DMatrix::from_fn(field.len(), n_t, |i, _| field[i]))
    }

    pub fn n(&self) -> usize {
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

    pub fn column(&self, j: usize) -> DiscreteField {
        self.0.column(j).into_owned()
    }

    pub fn column_slice(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.0.as_slice()[j * n..(j + 1) * n]
    }

    pub fn set_column(&mut self, j: usize, field: &DiscreteField) {
        self.0.set_column(j, field);
    }

    pub fn check_dims(&self, grid: &SpaceTimeGrid) -> Result<()> {
        check_len("snapshot rows", grid.n(), self.n())?;
        check_len("snapshot columns", grid.n_t(), self.n_t())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostBreakdown {
    pub tracking: f64,
    pub regularization: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(tracking: f64, regularization: f64) -> Self {
        Self {
            tracking,
            regularization,
            total: tracking + regularization,
        }
    }
}

fn check_finite(column: &[f64], model: &'static str, step: usize) -> Result<()> {
    if column.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { model, step })
    }
}

/// Forward sweep `y^{j+1} = y^j + dt (A_h y^j + B u(t_j))`, column 0 is `y0`.
pub fn solve_state(
    grid: &SpaceTimeGrid,
    shapes: &ControlShapes,
    u: &ControlSignal,
    y0: &DiscreteField,
) -> Result<SnapshotMatrix> {
    let (n, n_t) = (grid.n(), grid.n_t());
    check_len("solve_state initial condition", n, y0.len())?;
    check_len("solve_state shapes", n, shapes.n())?;
    u.check_dims(shapes.m(), n_t)?;
    if grid.cfl() > 1.0 + 1e-12 {
        warn!(
            "CFL number {:.4} exceeds 1; explicit upwinding is unstable",
            grid.cfl()
        );
    }
    let a = grid.upwind_operator();
    let dt = grid.dt();
    let forcing = shapes.apply_signal(u)?;
    let mut q = DMatrix::zeros(n, n_t);
    q.set_column(0, y0);
    let mut ay = vec![0.0; n];
    let data = q.as_mut_slice();
    for j in 0..n_t - 1 {
        let (head, tail) = data.split_at_mut((j + 1) * n);
        let prev = &head[j * n..];
        let next = &mut tail[..n];
        a.apply_into(prev, &mut ay);
        let f = &forcing.as_slice()[j * n..(j + 1) * n];
        for i in 0..n {
            next[i] = prev[i] + dt * (ay[i] + f[i]);
        }
        check_finite(next, "full-order state", j + 1)?;
    }
    Ok(SnapshotMatrix(q))
}

/// Backward sweep `lambda^{j-1} = lambda^j + dt (A_h^T lambda^j + y^j - y_d^j)`
/// from `lambda^{n_t-1} = 0`.
pub fn solve_adjoint(
    grid: &SpaceTimeGrid,
    state: &SnapshotMatrix,
    target: &SnapshotMatrix,
) -> Result<SnapshotMatrix> {
    state.check_dims(grid)?;
    target.check_dims(grid)?;
    let (n, n_t) = (grid.n(), grid.n_t());
    let a = grid.upwind_operator();
    let dt = grid.dt();
    let mut lam = DMatrix::zeros(n, n_t);
    let mut al = vec![0.0; n];
    let data = lam.as_mut_slice();
    for j in (1..n_t).rev() {
        let (head, tail) = data.split_at_mut(j * n);
        let cur = &tail[..n];
        let prev = &mut head[(j - 1) * n..];
        a.apply_transpose_into(cur, &mut al);
        let y = state.column_slice(j);
        let yd = target.column_slice(j);
        for i in 0..n {
            prev[i] = cur[i] + dt * (al[i] + y[i] - yd[i]);
        }
        check_finite(prev, "full-order adjoint", j - 1)?;
    }
    Ok(SnapshotMatrix(lam))
}

/// Rectangle-rule tracking and regularization terms.
pub fn cost(
    grid: &SpaceTimeGrid,
    state: &SnapshotMatrix,
    target: &SnapshotMatrix,
    u: &ControlSignal,
    mu: f64,
) -> Result<CostBreakdown> {
    state.check_dims(grid)?;
    target.check_dims(grid)?;
    check_len("cost control columns", grid.n_t(), u.n_t())?;
    let tracking = 0.5 * grid.dt() * grid.dx() * (state.matrix() - target.matrix()).norm_squared();
    let regularization = 0.5 * mu * u.l2_norm_squared(grid.dt());
    Ok(CostBreakdown::new(tracking, regularization))
}

/// Column `j` is `mu u(t_j) + B^* lambda^j`.
pub fn gradient_fom(
    grid: &SpaceTimeGrid,
    shapes: &ControlShapes,
    adjoint: &SnapshotMatrix,
    u: &ControlSignal,
    mu: f64,
) -> Result<ControlSignal> {
    adjoint.check_dims(grid)?;
    u.check_dims(shapes.m(), grid.n_t())?;
    let b_star = shapes.matrix().tr_mul(adjoint.matrix()) * grid.dx();
    Ok(ControlSignal::from_matrix(u.matrix() * mu + b_star))
}

/// Full-order model behind the optimizer interface.
#[derive(Clone, Debug)]
pub struct FomModel {
    grid: SpaceTimeGrid,
    shapes: ControlShapes,
    y0: DiscreteField,
    target: SnapshotMatrix,
    mu: f64,
}

impl FomModel {
    pub fn new(
        grid: SpaceTimeGrid,
        shapes: ControlShapes,
        y0: DiscreteField,
        target: SnapshotMatrix,
        mu: f64,
    ) -> Result<Self> {
        check_len("FOM initial condition", grid.n(), y0.len())?;
        check_len("FOM shapes", grid.n(), shapes.n())?;
        target.check_dims(&grid)?;
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mu must be positive, got {mu}"
            )));
        }
        Ok(Self {
            grid,
            shapes,
            y0,
            target,
            mu,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn state(&self, u: &ControlSignal) -> Result<SnapshotMatrix> {
        solve_state(&self.grid, &self.shapes, u, &self.y0)
    }
}

impl ControlledModel for FomModel {
    fn evaluate(&mut self, u: &ControlSignal, timings: &mut PhaseTimings) -> Result<Evaluation> {
        let start = Instant::now();
        let y = self.state(u)?;
        timings.state += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let cost = cost(&self.grid, &y, &self.target, u, self.mu)?;
        timings.cost += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let lam = solve_adjoint(&self.grid, &y, &self.target)?;
        timings.adjoint += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let gradient = gradient_fom(&self.grid, &self.shapes, &lam, u, self.mu)?;
        timings.gradient += start.elapsed().as_secs_f64();
        Ok(Evaluation { cost, gradient })
    }

    fn cost(&mut self, u: &ControlSignal) -> Result<CostBreakdown> {
        let y = self.state(u)?;
        cost(&self.grid, &y, &self.target, u, self.mu)
    }

    fn refine_basis(
        &mut self,
        _u: &ControlSignal,
    ) -> Result<Option<crate::basis::SingularSpectrum>> {
        Ok(None)
    }

    fn mode_count(&self) -> usize {
        self.grid.n()
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Fom
    }

    fn dt(&self) -> f64 {
        self.grid.dt()
    }
}

/// `y` circularly rotated by `k` cells in the direction of positive transport.
pub fn rotate(y: &DiscreteField, k: isize) -> DiscreteField {
    let n = y.len() as isize;
    DVector::from_fn(y.len(), |i, _| y[(i as isize - k).rem_euclid(n) as usize])
}
