//! POD-Galerkin reduced model: assembly, reduced state and adjoint sweeps,
//! reduced gradient and lifting back to the grid.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::basis::{mode_count_by_tolerance, pod_basis, BasisFrame, ModeBasis, SingularSpectrum};
use crate::control::{ControlShapes, ControlSignal};
use crate::discretization::{DiscreteField, SpaceTimeGrid};
use crate::error::{check_len, Error, Result};
use crate::fom::{solve_state, CostBreakdown, SnapshotMatrix};
use crate::optimizer::{ControlledModel, Evaluation, ModeRule, ModelKind, PhaseTimings};

/// `A_l = [<phi_i, A_h phi_j>_H]`, `B_l = [<phi_i, b_j>_H]`, `alpha0 = [<phi_j, y0>_H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PodRomOperators {
    pub a_l: DMatrix<f64>,
    pub b_l: DMatrix<f64>,
    pub alpha0: DVector<f64>,
}

impl PodRomOperators {
    pub fn ell(&self) -> usize {
        self.alpha0.len()
    }

    pub fn m(&self) -> usize {
        self.b_l.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PodReducedTrajectory {
    pub alpha: DMatrix<f64>,
    pub lambda: Option<DMatrix<f64>>,
}

pub fn assemble_pod_rom(
    basis: &ModeBasis,
    shapes: &ControlShapes,
    y0: &DiscreteField,
    grid: &SpaceTimeGrid,
) -> Result<PodRomOperators> {
    check_len("assemble_pod_rom basis", grid.n(), basis.n())?;
    check_len("assemble_pod_rom shapes", grid.n(), shapes.n())?;
    check_len("assemble_pod_rom initial condition", grid.n(), y0.len())?;
    if basis.r() == 0 {
        return Err(Error::InvalidParameter("basis has no modes".into()));
    }
    let a = grid.upwind_operator();
    let phi = basis.modes();
    let mut a_phi = DMatrix::zeros(grid.n(), basis.r());
    for (k, col) in phi.column_iter().enumerate() {
        let mut out = vec![0.0; grid.n()];
        a.apply_into(col.as_slice(), &mut out);
        a_phi.set_column(k, &DVector::from_vec(out));
    }
    Ok(PodRomOperators {
        a_l: phi.tr_mul(&a_phi) * grid.dx(),
        b_l: phi.tr_mul(shapes.matrix()) * grid.dx(),
        alpha0: basis.project(y0, grid)?,
    })
}

fn check_reduced_finite(column: &[f64], model: &'static str, step: usize) -> Result<()> {
    if column.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { model, step })
    }
}

/// `alpha^{j+1} = alpha^j + dt (A_l alpha^j + B_l u(t_j))`.
pub fn solve_pod_state(
    ops: &PodRomOperators,
    u: &ControlSignal,
    grid: &SpaceTimeGrid,
) -> Result<PodReducedTrajectory> {
    u.check_dims(ops.m(), grid.n_t())?;
    let (ell, n_t, dt) = (ops.ell(), grid.n_t(), grid.dt());
    let forcing = &ops.b_l * u.matrix();
    let mut alpha = DMatrix::zeros(ell, n_t);
    alpha.set_column(0, &ops.alpha0);
    for j in 0..n_t - 1 {
        let a = alpha.column(j);
        let next = a + (&ops.a_l * a + forcing.column(j)) * dt;
        check_reduced_finite(next.as_slice(), "POD-Galerkin state", j + 1)?;
        alpha.set_column(j + 1, &next);
    }
    Ok(PodReducedTrajectory {
        alpha,
        lambda: None,
    })
}

/// `lambda^{j-1} = lambda^j + dt (A_l^T lambda^j + alpha^j - yd_reduced^j)` from
/// `lambda^{n_t-1} = 0`.
pub fn solve_pod_adjoint(
    ops: &PodRomOperators,
    alpha: &DMatrix<f64>,
    yd_reduced: &DMatrix<f64>,
    grid: &SpaceTimeGrid,
) -> Result<DMatrix<f64>> {
    let (ell, n_t, dt) = (ops.ell(), grid.n_t(), grid.dt());
    check_len("solve_pod_adjoint state rows", ell, alpha.nrows())?;
    check_len("solve_pod_adjoint state columns", n_t, alpha.ncols())?;
    check_len("solve_pod_adjoint target rows", ell, yd_reduced.nrows())?;
    check_len("solve_pod_adjoint target columns", n_t, yd_reduced.ncols())?;
    let a_t = ops.a_l.transpose();
    let mut lam = DMatrix::zeros(ell, n_t);
    for j in (1..n_t).rev() {
        let cur = lam.column(j);
        let prev = cur + (&a_t * cur + alpha.column(j) - yd_reduced.column(j)) * dt;
        check_reduced_finite(prev.as_slice(), "POD-Galerkin adjoint", j - 1)?;
        lam.set_column(j - 1, &prev);
    }
    Ok(lam)
}

/// Column `j` is `mu u(t_j) + B_l^T lambda^j`.
pub fn gradient_pod(
    ops: &PodRomOperators,
    lambda: &DMatrix<f64>,
    u: &ControlSignal,
    mu: f64,
) -> Result<ControlSignal> {
    u.check_dims(ops.m(), lambda.ncols())?;
    check_len("gradient_pod adjoint rows", ops.ell(), lambda.nrows())?;
    Ok(ControlSignal::from_matrix(
        u.matrix() * mu + ops.b_l.tr_mul(lambda),
    ))
}

/// Column `j` is `sum_i alpha_i^j phi_i`.
pub fn lift_pod(basis: &ModeBasis, alpha: &DMatrix<f64>) -> Result<SnapshotMatrix> {
    check_len("lift_pod", basis.r(), alpha.nrows())?;
    Ok(SnapshotMatrix::from_matrix(basis.modes() * alpha))
}

/// Target coefficients `[<phi_i, y_d(t_j)>_H]` and the tracking energy of
/// `y_d` outside the span, `1/2 dt sum_j (||y_d^j||^2 - ||yhat_d^j||^2)`.
pub fn project_target(
    basis: &ModeBasis,
    target: &SnapshotMatrix,
    grid: &SpaceTimeGrid,
) -> Result<(DMatrix<f64>, f64)> {
    target.check_dims(grid)?;
    let yd = basis.project_columns(target.matrix(), grid)?;
    let full = grid.dx() * target.matrix().norm_squared();
    let inside = yd.norm_squared();
    Ok((yd, 0.5 * grid.dt() * (full - inside).max(0.0)))
}

/// Reduced tracking term plus out-of-span constant, and regularization.
pub fn reduced_cost(
    alpha: &DMatrix<f64>,
    yd_reduced: &DMatrix<f64>,
    out_of_span: f64,
    u: &ControlSignal,
    mu: f64,
    dt: f64,
) -> CostBreakdown {
    let tracking = 0.5 * dt * (alpha - yd_reduced).norm_squared() + out_of_span;
    CostBreakdown::new(tracking, 0.5 * mu * u.l2_norm_squared(dt))
}

/// POD-Galerkin model whose basis is rebuilt from full-order snapshots.
#[derive(Clone, Debug)]
pub struct PodModel {
    grid: SpaceTimeGrid,
    shapes: ControlShapes,
    y0: DiscreteField,
    target: SnapshotMatrix,
    mu: f64,
    rule: ModeRule,
    reduced: Option<Reduced>,
}

#[derive(Clone, Debug)]
struct Reduced {
    basis: ModeBasis,
    ops: PodRomOperators,
    yd: DMatrix<f64>,
    out_of_span: f64,
}

impl PodModel {
    pub fn new(
        grid: SpaceTimeGrid,
        shapes: ControlShapes,
        y0: DiscreteField,
        target: SnapshotMatrix,
        mu: f64,
        rule: ModeRule,
    ) -> Result<Self> {
        check_len("POD model initial condition", grid.n(), y0.len())?;
        check_len("POD model shapes", grid.n(), shapes.n())?;
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
            rule,
            reduced: None,
        })
    }

    /// Uses `basis` as-is instead of building one from snapshots.
    pub fn set_basis(&mut self, basis: ModeBasis) -> Result<()> {
        let ops = assemble_pod_rom(&basis, &self.shapes, &self.y0, &self.grid)?;
        let (yd, out_of_span) = project_target(&basis, &self.target, &self.grid)?;
        self.reduced = Some(Reduced {
            basis,
            ops,
            yd,
            out_of_span,
        });
        Ok(())
    }

    pub fn basis(&self) -> Option<&ModeBasis> {
        self.reduced.as_ref().map(|r| &r.basis)
    }

    pub fn operators(&self) -> Option<&PodRomOperators> {
        self.reduced.as_ref().map(|r| &r.ops)
    }

    fn reduced(&self) -> Result<&Reduced> {
        self.reduced.as_ref().ok_or_else(|| {
            Error::InvalidParameter("POD model has no basis; call refine_basis first".into())
        })
    }

    pub fn state(&self, u: &ControlSignal) -> Result<PodReducedTrajectory> {
        solve_pod_state(&self.reduced()?.ops, u, &self.grid)
    }

    /// Reduced state lifted to the grid.
    pub fn lifted_state(&self, u: &ControlSignal) -> Result<SnapshotMatrix> {
        lift_pod(&self.reduced()?.basis, &self.state(u)?.alpha)
    }
}

impl ControlledModel for PodModel {
    fn evaluate(&mut self, u: &ControlSignal, timings: &mut PhaseTimings) -> Result<Evaluation> {
        let r = self.reduced()?;
        let start = Instant::now();
        let traj = solve_pod_state(&r.ops, u, &self.grid)?;
        timings.state += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let cost = reduced_cost(
            &traj.alpha,
            &r.yd,
            r.out_of_span,
            u,
            self.mu,
            self.grid.dt(),
        );
        timings.cost += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let lam = solve_pod_adjoint(&r.ops, &traj.alpha, &r.yd, &self.grid)?;
        timings.adjoint += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let gradient = gradient_pod(&r.ops, &lam, u, self.mu)?;
        timings.gradient += start.elapsed().as_secs_f64();
        Ok(Evaluation { cost, gradient })
    }

    fn cost(&mut self, u: &ControlSignal) -> Result<CostBreakdown> {
        let r = self.reduced()?;
        let traj = solve_pod_state(&r.ops, u, &self.grid)?;
        Ok(reduced_cost(
            &traj.alpha,
            &r.yd,
            r.out_of_span,
            u,
            self.mu,
            self.grid.dt(),
        ))
    }

    fn refine_basis(&mut self, u: &ControlSignal) -> Result<Option<SingularSpectrum>> {
        let q = solve_state(&self.grid, &self.shapes, u, &self.y0)?;
        let max = self.grid.n().min(self.grid.n_t());
        let (basis, spectrum) = pod_basis(&q, max, &self.grid)?;
        let r = match self.rule {
            ModeRule::Fixed(r) => r,
            ModeRule::Tolerance(tol) => mode_count_by_tolerance(&spectrum, tol)?,
        };
        self.set_basis(basis.truncated(r).with_frame(BasisFrame::Stationary))?;
        Ok(Some(spectrum))
    }

    fn mode_count(&self) -> usize {
        self.reduced.as_ref().map_or(0, |r| r.basis.r())
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Pod
    }

    fn dt(&self) -> f64 {
        self.grid.dt()
    }
}
