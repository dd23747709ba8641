//! Shifted-POD Galerkin reduced model.
//!
//! The state is approximated as `y(t) = T(z(t)) sum_i alpha_i(t) phi_i` with
//! modes living in the co-moving frame. Amplitudes and shift evolve under
//!
//! ```text
//! [ I       N a      ] [alpha']   [ v N a + B1(z) u        ]
//! [ a^T N^T a^T M2 a ] [z'    ] = [ v a^T M2 a + a^T B2(z) u ]
//! ```
//!
//! with `N = -[<phi_i, phi_j'>]`, `M2 = [<phi_i', phi_j'>]`,
//! `B1(z) = [<T(z) phi_i, b_j>]` and `B2(z) = [<T'(z) phi_i, b_j>]`.

use std::f64::consts::E;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{
    eigenfunction_stationary_basis, mode_count_by_tolerance, pod_basis, BasisFrame, ModeBasis,
    SingularSpectrum,
};
use crate::control::{ControlShapes, ControlSignal};
use crate::discretization::{DiscreteField, SpaceTimeGrid};
use crate::error::{check_len, Error, Result};
use crate::fom::{solve_state, CostBreakdown, SnapshotMatrix};
use crate::optimizer::{ControlledModel, Evaluation, ModeRule, ModelKind, PhaseTimings};
use crate::transform::{uncontrolled_shift_path, ShiftPath, ShiftScheme, Shifter};

/// Mass matrices with condition number above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `l x m` matrices sampled on an equispaced shift grid over `[0, l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftTable {
    l: f64,
    values: Vec<DMatrix<f64>>,
}

impl ShiftTable {
    pub fn new(l: f64, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "shift tables need at least 2 samples, got {}",
                values.len()
            )));
        }
        if !(l > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "period must be positive, got {l}"
            )));
        }
        Ok(Self { l, values })
    }

    pub fn n_samples(&self) -> usize {
        self.values.len()
    }

    pub fn spacing(&self) -> f64 {
        self.l / self.values.len() as f64
    }

    pub fn sample_shifts(&self) -> Vec<f64> {
        (0..self.n_samples())
            .map(|s| s as f64 * self.spacing())
            .collect()
    }

    pub fn sample(&self, s: usize) -> &DMatrix<f64> {
        &self.values[s]
    }

    /// Periodic linear interpolation in `z`.
    pub fn lookup(&self, z: f64) -> DMatrix<f64> {
        let n = self.values.len();
        let s = z.rem_euclid(self.l) / self.spacing();
        let i0 = (s.floor() as usize).min(n - 1);
        let frac = s - i0 as f64;
        let i1 = (i0 + 1) % n;
        if frac == 0.0 {
            return self.values[i0].clone();
        }
        &self.values[i0] * (1.0 - frac) + &self.values[i1] * frac
    }
}

pub fn lookup_b(table: &ShiftTable, z: f64) -> DMatrix<f64> {
    table.lookup(z)
}

#[derive(Clone, Debug)]
pub struct SpodRomOperators {
    /// `-[<phi_i, phi_j'>_H]`.
    pub n_mat: DMatrix<f64>,
    /// `[<phi_i', phi_j'>_H]`.
    pub m2: DMatrix<f64>,
    /// `[<T(z) phi_i, b_j>_H]`.
    pub b1: ShiftTable,
    /// `[<T'(z) phi_i, b_j>_H] = -[<T(z) phi_i', b_j>_H]`.
    pub b2: ShiftTable,
    /// `[<T''(z) phi_i, b_j>_H] = [<T(z) phi_i'', b_j>_H]`.
    pub b3: ShiftTable,
    pub alpha0: DVector<f64>,
    pub z0: f64,
    pub v: f64,
    /// Mode derivatives, one per column.
    pub dmodes: DMatrix<f64>,
}

impl SpodRomOperators {
    pub fn ell(&self) -> usize {
        self.alpha0.len()
    }

    pub fn m(&self) -> usize {
        self.b1.sample(0).ncols()
    }

    /// `M_c = [[I, N], [N^T, M2]]`.
    pub fn gramian(&self) -> DMatrix<f64> {
        let l = self.ell();
        let mut g = DMatrix::zeros(2 * l, 2 * l);
        g.view_mut((0, 0), (l, l)).fill_with_identity();
        g.view_mut((0, l), (l, l)).copy_from(&self.n_mat);
        g.view_mut((l, 0), (l, l))
            .copy_from(&self.n_mat.transpose());
        g.view_mut((l, l), (l, l)).copy_from(&self.m2);
        g
    }

    /// The `(l+1) x (l+1)` mass matrix at amplitude `alpha`.
    pub fn mass_matrix(&self, alpha: &DVector<f64>) -> DMatrix<f64> {
        let l = self.ell();
        let a = &self.n_mat * alpha;
        let c = alpha.dot(&(&self.m2 * alpha));
        let mut m = DMatrix::identity(l + 1, l + 1);
        m.view_mut((0, l), (l, 1)).copy_from(&a);
        m.view_mut((l, 0), (1, l)).copy_from(&a.transpose());
        m[(l, l)] = c;
        m
    }
}

/// Mass matrix `[[I, a], [a^T, c]]` kept in factored form.
#[derive(Clone, Debug)]
struct Mass {
    a: DVector<f64>,
    c: f64,
    schur: f64,
}

impl Mass {
    fn new(ops: &SpodRomOperators, alpha: &DVector<f64>, step: usize) -> Result<Self> {
        let a = &ops.n_mat * alpha;
        let c = alpha.dot(&(&ops.m2 * alpha));
        let aa = a.norm_squared();
        let schur = c - aa;
        // eigenvalues are 1 (multiplicity l-1) and those of [[1, |a|], [|a|, c]]
        let tr = 1.0 + c;
        let disc = ((1.0 - c).powi(2) + 4.0 * aa).sqrt();
        let hi = 0.5 * (tr + disc);
        let lo = schur / hi;
        let cond = hi.max(1.0) / lo.min(1.0);
        if !(schur > 0.0) || !(cond <= MAX_CONDITION) || !cond.is_finite() {
            return Err(Error::Singular {
                step,
                reason: format!(
                    "condition number {cond:.3e} (|alpha| = {:.3e}, Schur complement {schur:.3e})",
                    alpha.norm()
                ),
            });
        }
        Ok(Self { a, c, schur })
    }

    fn solve(&self, r1: &DVector<f64>, r2: f64) -> (DVector<f64>, f64) {
        let s = (r2 - self.a.dot(r1)) / self.schur;
        (r1 - &self.a * s, s)
    }

    fn apply(&self, x: &DVector<f64>, s: f64) -> (DVector<f64>, f64) {
        (x + &self.a * s, self.a.dot(x) + self.c * s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpodReducedTrajectory {
    pub alpha: DMatrix<f64>,
    pub z: DVector<f64>,
}

impl SpodReducedTrajectory {
    pub fn path(&self) -> ShiftPath {
        ShiftPath::new(self.z.clone()).expect("solver keeps the path finite")
    }

    /// `(alpha', z')` at node `j` by forward differences, backward at the end.
    fn rates(&self, j: usize, dt: f64) -> (DVector<f64>, f64) {
        let n_t = self.z.len();
        let (a, b) = if j + 1 < n_t { (j, j + 1) } else { (j - 1, j) };
        (
            (self.alpha.column(b) - self.alpha.column(a)) / dt,
            (self.z[b] - self.z[a]) / dt,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpodAdjointTrajectory {
    pub lambda_a: DMatrix<f64>,
    pub z_a: DVector<f64>,
}

/// Which backward recurrence produces the reduced adjoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AdjointForm {
    /// Explicit Euler on the continuous adjoint system with
    /// `E12 = (N^T - N) alpha' + 2 (z' - v) M2 alpha - B2(z) u`.
    #[default]
    Continuous,
    /// Same, with `E12 = 2 (z' - v) M2 alpha - B2(z) u`.
    ContinuousReduced,
    /// Exact adjoint of the explicit Euler forward recurrence.
    Discrete,
}

impl FromStr for AdjointForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "continuous" => Ok(Self::Continuous),
            "continuous-reduced" => Ok(Self::ContinuousReduced),
            "discrete" => Ok(Self::Discrete),
            other => Err(format!(
                "unknown adjoint form '{other}' (expected continuous, continuous-reduced or discrete)"
            )),
        }
    }
}

impl std::fmt::Display for AdjointForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Continuous => "continuous",
            Self::ContinuousReduced => "continuous-reduced",
            Self::Discrete => "discrete",
        })
    }
}

/// Builds `N`, `M2`, the shift tables and the initial reduced state.
pub fn assemble_spod_rom(
    basis: &ModeBasis,
    shapes: &ControlShapes,
    y0: &DiscreteField,
    shifter: &Shifter,
    n_samples: usize,
) -> Result<SpodRomOperators> {
    let grid = shifter.grid();
    check_len("assemble_spod_rom basis", grid.n(), basis.n())?;
    check_len("assemble_spod_rom shapes", grid.n(), shapes.n())?;
    check_len("assemble_spod_rom initial condition", grid.n(), y0.len())?;
    if n_samples < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_samples must be at least 2 for interpolation, got {n_samples}"
        )));
    }
    if basis.r() == 0 {
        return Err(Error::InvalidParameter("basis has no modes".into()));
    }
    let dx = grid.dx();
    let phi = basis.modes();
    let d1 = shifter.derivative_columns(phi, 1);
    let d2 = shifter.derivative_columns(phi, 2);
    let n_mat = -(phi.tr_mul(&d1)) * dx;
    let m2 = d1.tr_mul(&d1) * dx;

    let h = grid.l() / n_samples as f64;
    let samples: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            // <T(z) f, b> = <f, T(-z) b>
            let shifted = shifter.shift_columns(shapes.matrix(), -(s as f64) * h);
            (
                phi.tr_mul(&shifted) * dx,
                -(d1.tr_mul(&shifted)) * dx,
                d2.tr_mul(&shifted) * dx,
            )
        })
        .collect();
    let (mut b1, mut b2, mut b3) = (Vec::new(), Vec::new(), Vec::new());
    for (a, b, c) in samples {
        b1.push(a);
        b2.push(b);
        b3.push(c);
    }
    Ok(SpodRomOperators {
        n_mat,
        m2,
        b1: ShiftTable::new(grid.l(), b1)?,
        b2: ShiftTable::new(grid.l(), b2)?,
        b3: ShiftTable::new(grid.l(), b3)?,
        alpha0: basis.project(y0, grid)?,
        z0: 0.0,
        v: grid.v(),
        dmodes: d1,
    })
}

/// Explicit Euler on the mass-matrix system, one Schur solve per step.
pub fn solve_spod_state(
    ops: &SpodRomOperators,
    u: &ControlSignal,
    grid: &SpaceTimeGrid,
) -> Result<SpodReducedTrajectory> {
    u.check_dims(ops.m(), grid.n_t())?;
    if !(ops.alpha0.norm() > 0.0) {
        return Err(Error::Singular {
            step: 0,
            reason: "initial amplitudes vanish".into(),
        });
    }
    let (ell, n_t, dt, v) = (ops.ell(), grid.n_t(), grid.dt(), ops.v);
    let mut alpha = DMatrix::zeros(ell, n_t);
    let mut z = DVector::zeros(n_t);
    alpha.set_column(0, &ops.alpha0);
    z[0] = ops.z0;
    for j in 0..n_t - 1 {
        let a = alpha.column(j).into_owned();
        let mass = Mass::new(ops, &a, j)?;
        let uj = u.matrix().column(j);
        let bu1 = ops.b1.lookup(z[j]) * uj;
        let bu2 = ops.b2.lookup(z[j]) * uj;
        let r1 = &mass.a * v + bu1;
        let r2 = v * mass.c + a.dot(&bu2);
        let (da, dz) = mass.solve(&r1, r2);
        let next = a + da * dt;
        let zn = z[j] + dt * dz;
        if !zn.is_finite() || next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                model: "sPOD-Galerkin state",
                step: j + 1,
            });
        }
        alpha.set_column(j + 1, &next);
        z[j + 1] = zn;
    }
    Ok(SpodReducedTrajectory { alpha, z })
}

/// Per-step data shared by the adjoint recurrences.
struct StepTerms {
    /// `(J_M - d_w F)^T` in block form.
    k11: DMatrix<f64>,
    k12: DVector<f64>,
    k21: DVector<f64>,
    k22: f64,
}

impl StepTerms {
    fn new(
        ops: &SpodRomOperators,
        alpha: &DVector<f64>,
        z: f64,
        da: &DVector<f64>,
        dz: f64,
        uj: &DVector<f64>,
    ) -> Self {
        let v = ops.v;
        let bu2 = ops.b2.lookup(z) * uj;
        let bu3 = ops.b3.lookup(z) * uj;
        let m2a = &ops.m2 * alpha;
        Self {
            k11: ops.n_mat.transpose() * (dz - v),
            k12: ops.n_mat.tr_mul(da) + m2a * (2.0 * (dz - v)) - &bu2,
            k21: -bu2,
            k22: -alpha.dot(&bu3),
        }
    }

    fn apply(&self, q: &DVector<f64>, qz: f64) -> (DVector<f64>, f64) {
        (
            &self.k11 * q + &self.k12 * qz,
            self.k21.dot(q) + self.k22 * qz,
        )
    }
}

/// `(<T(z_j) phi_i, y_d^j>_H, <T(z_j) phi_i', y_d^j>_H)` for every mode.
fn target_projections(
    phi: &DMatrix<f64>,
    dphi: &DMatrix<f64>,
    shifter: &Shifter,
    target: &SnapshotMatrix,
    z: f64,
    j: usize,
) -> (DVector<f64>, DVector<f64>) {
    let dx = shifter.grid().dx();
    let w = shifter.shift(&target.column(j), -z);
    (phi.tr_mul(&w) * dx, dphi.tr_mul(&w) * dx)
}

/// Backward sweep from zero terminal data.
///
/// `d_w l = (alpha - yhat_d, alpha^T [<T(z) phi_i', y_d>])` is the gradient of
/// the instantaneous tracking term.
#[allow(clippy::too_many_arguments)]
pub fn solve_spod_adjoint(
    ops: &SpodRomOperators,
    traj: &SpodReducedTrajectory,
    u: &ControlSignal,
    target: &SnapshotMatrix,
    basis: &ModeBasis,
    shifter: &Shifter,
    form: AdjointForm,
) -> Result<SpodAdjointTrajectory> {
    let grid = shifter.grid();
    let (ell, n_t, dt) = (ops.ell(), grid.n_t(), grid.dt());
    check_len(
        "solve_spod_adjoint trajectory rows",
        ell,
        traj.alpha.nrows(),
    )?;
    check_len(
        "solve_spod_adjoint trajectory columns",
        n_t,
        traj.alpha.ncols(),
    )?;
    check_len("solve_spod_adjoint basis", ell, basis.r())?;
    u.check_dims(ops.m(), n_t)?;
    target.check_dims(grid)?;
    let mut lam = DMatrix::zeros(ell, n_t);
    let mut za = DVector::zeros(n_t);
    for j in (1..n_t).rev() {
        let alpha = traj.alpha.column(j).into_owned();
        let z = traj.z[j];
        let uj = u.at(j);
        let (p, d) = target_projections(basis.modes(), &ops.dmodes, shifter, target, z, j);
        let dl_a = &alpha - p;
        let dl_z = alpha.dot(&d);
        let (da, dz) = traj.rates(j, dt);
        let terms = StepTerms::new(ops, &alpha, z, &da, dz, &uj);
        let q = lam.column(j).into_owned();
        let qz = za[j];
        let (kq, kz) = terms.apply(&q, qz);

        let (prev, prev_z) = match form {
            AdjointForm::Continuous | AdjointForm::ContinuousReduced => {
                let mass = Mass::new(ops, &alpha, j)?;
                // E = K - dM/dt
                let na = &ops.n_mat * &da;
                let mut e1 = kq - &na * qz;
                let mut e2 = kz - na.dot(&q) - 2.0 * alpha.dot(&(&ops.m2 * &da)) * qz;
                if form == AdjointForm::ContinuousReduced {
                    // drop (N^T - N) alpha' from E12
                    e1 -= (ops.n_mat.tr_mul(&da) - &na) * qz;
                }
                e1 -= &dl_a;
                e2 -= dl_z;
                let (x, xz) = mass.solve(&e1, e2);
                (q - x * dt, qz - dt * xz)
            }
            AdjointForm::Discrete => {
                let here = Mass::new(ops, &alpha, j)?;
                let before = Mass::new(ops, &traj.alpha.column(j - 1).into_owned(), j - 1)?;
                let (mq, mz) = here.apply(&q, qz);
                let r1 = mq - kq * dt + dl_a * dt;
                let r2 = mz - dt * kz + dt * dl_z;
                before.solve(&r1, r2)
            }
        };
        if !prev_z.is_finite() || prev.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                model: "sPOD-Galerkin adjoint",
                step: j - 1,
            });
        }
        lam.set_column(j - 1, &prev);
        za[j - 1] = prev_z;
    }
    Ok(SpodAdjointTrajectory {
        lambda_a: lam,
        z_a: za,
    })
}

/// Column `j` is `mu u_j + B1(z_j)^T lambda_a^j + B2(z_j)^T alpha^j z_a^j`.
pub fn gradient_spod(
    ops: &SpodRomOperators,
    traj: &SpodReducedTrajectory,
    adjoint: &SpodAdjointTrajectory,
    u: &ControlSignal,
    mu: f64,
) -> Result<ControlSignal> {
    let n_t = traj.z.len();
    u.check_dims(ops.m(), n_t)?;
    check_len(
        "gradient_spod adjoint columns",
        n_t,
        adjoint.lambda_a.ncols(),
    )?;
    let mut g = u.matrix() * mu;
    for j in 0..n_t {
        let lam = adjoint.lambda_a.column(j);
        let za = adjoint.z_a[j];
        if za == 0.0 && lam.iter().all(|&x| x == 0.0) {
            continue;
        }
        let z = traj.z[j];
        let col =
            ops.b1.lookup(z).tr_mul(&lam) + ops.b2.lookup(z).tr_mul(&traj.alpha.column(j)) * za;
        let mut gj = g.column_mut(j);
        gj += col;
    }
    Ok(ControlSignal::from_matrix(g))
}

/// Column `j` is `T(z_j) sum_i alpha_i^j phi_i`.
pub fn lift_spod(
    basis: &ModeBasis,
    traj: &SpodReducedTrajectory,
    shifter: &Shifter,
) -> Result<SnapshotMatrix> {
    check_len("lift_spod", basis.r(), traj.alpha.nrows())?;
    let grid = shifter.grid();
    let cols: Vec<DiscreteField> = (0..traj.z.len())
        .into_par_iter()
        .map(|j| shifter.shift(&(basis.modes() * traj.alpha.column(j)), traj.z[j]))
        .collect();
    let mut out = DMatrix::zeros(grid.n(), cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    Ok(SnapshotMatrix::from_matrix(out))
}

/// Tracking cost of the lifted trajectory plus regularization.
pub fn spod_cost(
    basis: &ModeBasis,
    traj: &SpodReducedTrajectory,
    target: &SnapshotMatrix,
    u: &ControlSignal,
    mu: f64,
    shifter: &Shifter,
) -> Result<CostBreakdown> {
    let grid = shifter.grid();
    target.check_dims(grid)?;
    check_len("spod_cost basis", basis.r(), traj.alpha.nrows())?;
    let tracking: f64 = (0..traj.z.len())
        .into_par_iter()
        .map(|j| {
            let y = shifter.shift(&(basis.modes() * traj.alpha.column(j)), traj.z[j]);
            (y - target.matrix().column(j)).norm_squared()
        })
        .sum();
    let dt = grid.dt();
    Ok(CostBreakdown::new(
        0.5 * dt * grid.dx() * tracking,
        0.5 * mu * u.l2_norm_squared(dt),
    ))
}

/// Sufficient condition for well-posedness of the reduced state equation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmallnessCertificate {
    pub bound: f64,
    pub u_norm_sq: f64,
    pub zeta: f64,
    pub satisfied: bool,
}

impl SmallnessCertificate {
    /// Bounds `(T l ||B||^2 zeta, (e + 1) ||alpha0||^2)` on `||alpha(t)||^2`.
    pub fn envelope(
        &self,
        alpha0: &DVector<f64>,
        b_norm: f64,
        t_final: f64,
        ell: usize,
    ) -> (f64, f64) {
        (
            t_final * ell as f64 * b_norm * b_norm * self.zeta,
            (E + 1.0) * alpha0.norm_squared(),
        )
    }
}

pub fn certify_smallness(
    ops: &SpodRomOperators,
    u: &ControlSignal,
    shapes: &ControlShapes,
    grid: &SpaceTimeGrid,
) -> SmallnessCertificate {
    let b = shapes.operator_norm(grid);
    let bound = ops.alpha0.norm_squared() / (b * b * E * grid.t_final() * ops.ell() as f64);
    let u_norm_sq = u.l2_norm_squared(grid.dt());
    SmallnessCertificate {
        bound,
        u_norm_sq,
        zeta: bound - u_norm_sq,
        satisfied: u_norm_sq < bound,
    }
}

/// Where the sPOD modes come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SpodBasisSource {
    /// POD of full-order snapshots transformed along the frozen path `v t`.
    #[default]
    Snapshots,
    /// Fixed span of the initial condition and the control shapes.
    Eigenfunctions,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpodSettings {
    pub rule: ModeRule,
    pub scheme: ShiftScheme,
    pub n_samples: usize,
    pub adjoint: AdjointForm,
    pub source: SpodBasisSource,
}

impl Default for SpodSettings {
    fn default() -> Self {
        Self {
            rule: ModeRule::default(),
            scheme: ShiftScheme::default(),
            n_samples: 800,
            adjoint: AdjointForm::default(),
            source: SpodBasisSource::default(),
        }
    }
}

#[derive(Clone, Debug)]
struct SpodReduced {
    basis: ModeBasis,
    ops: SpodRomOperators,
}

/// sPOD-Galerkin model with basis refinement from transformed snapshots.
#[derive(Clone, Debug)]
pub struct SpodModel {
    grid: SpaceTimeGrid,
    shapes: ControlShapes,
    y0: DiscreteField,
    target: SnapshotMatrix,
    mu: f64,
    settings: SpodSettings,
    shifter: Shifter,
    path: ShiftPath,
    reduced: Option<SpodReduced>,
}

impl SpodModel {
    pub fn new(
        grid: SpaceTimeGrid,
        shapes: ControlShapes,
        y0: DiscreteField,
        target: SnapshotMatrix,
        mu: f64,
        settings: SpodSettings,
    ) -> Result<Self> {
        check_len("sPOD model initial condition", grid.n(), y0.len())?;
        check_len("sPOD model shapes", grid.n(), shapes.n())?;
        target.check_dims(&grid)?;
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mu must be positive, got {mu}"
            )));
        }
        if settings.n_samples < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_samples must be at least 2, got {}",
                settings.n_samples
            )));
        }
        Ok(Self {
            shifter: Shifter::new(&grid, settings.scheme),
            path: uncontrolled_shift_path(&grid),
            grid,
            shapes,
            y0,
            target,
            mu,
            settings,
            reduced: None,
        })
    }

    pub fn settings(&self) -> &SpodSettings {
        &self.settings
    }

    pub fn shifter(&self) -> &Shifter {
        &self.shifter
    }

    /// Shift path used to transform snapshots.
    pub fn frozen_path(&self) -> &ShiftPath {
        &self.path
    }

    pub fn set_basis(&mut self, basis: ModeBasis) -> Result<()> {
        let ops = assemble_spod_rom(
            &basis,
            &self.shapes,
            &self.y0,
            &self.shifter,
            self.settings.n_samples,
        )?;
        self.reduced = Some(SpodReduced { basis, ops });
        Ok(())
    }

    pub fn basis(&self) -> Option<&ModeBasis> {
        self.reduced.as_ref().map(|r| &r.basis)
    }

    pub fn operators(&self) -> Option<&SpodRomOperators> {
        self.reduced.as_ref().map(|r| &r.ops)
    }

    fn reduced(&self) -> Result<&SpodReduced> {
        self.reduced.as_ref().ok_or_else(|| {
            Error::InvalidParameter("sPOD model has no basis; call refine_basis first".into())
        })
    }

    pub fn state(&self, u: &ControlSignal) -> Result<SpodReducedTrajectory> {
        solve_spod_state(&self.reduced()?.ops, u, &self.grid)
    }

    pub fn lifted_state(&self, u: &ControlSignal) -> Result<SnapshotMatrix> {
        let r = self.reduced()?;
        lift_spod(&r.basis, &self.state(u)?, &self.shifter)
    }

    /// Full-order snapshots at `u` seen in the co-moving frame.
    pub fn transformed_snapshots(&self, u: &ControlSignal) -> Result<SnapshotMatrix> {
        let q = solve_state(&self.grid, &self.shapes, u, &self.y0)?;
        self.shifter.transform_snapshots(&q, &self.path)
    }
}

impl ControlledModel for SpodModel {
    fn evaluate(&mut self, u: &ControlSignal, timings: &mut PhaseTimings) -> Result<Evaluation> {
        let r = self.reduced()?;
        let start = Instant::now();
        let traj = solve_spod_state(&r.ops, u, &self.grid)?;
        timings.state += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let cost = spod_cost(&r.basis, &traj, &self.target, u, self.mu, &self.shifter)?;
        timings.cost += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let adj = solve_spod_adjoint(
            &r.ops,
            &traj,
            u,
            &self.target,
            &r.basis,
            &self.shifter,
            self.settings.adjoint,
        )?;
        timings.adjoint += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let gradient = gradient_spod(&r.ops, &traj, &adj, u, self.mu)?;
        timings.gradient += start.elapsed().as_secs_f64();
        Ok(Evaluation { cost, gradient })
    }

    fn cost(&mut self, u: &ControlSignal) -> Result<CostBreakdown> {
        let r = self.reduced()?;
        let traj = solve_spod_state(&r.ops, u, &self.grid)?;
        spod_cost(&r.basis, &traj, &self.target, u, self.mu, &self.shifter)
    }

    fn refine_basis(&mut self, u: &ControlSignal) -> Result<Option<SingularSpectrum>> {
        match self.settings.source {
            SpodBasisSource::Eigenfunctions => {
                if self.reduced.is_some() {
                    return Ok(None);
                }
                let basis = eigenfunction_stationary_basis(&self.grid, &self.shapes, &self.y0)?;
                self.set_basis(basis.with_frame(BasisFrame::Shifted(self.path.clone())))?;
                Ok(None)
            }
            SpodBasisSource::Snapshots => {
                let q = self.transformed_snapshots(u)?;
                let max = self.grid.n().min(self.grid.n_t());
                let (basis, spectrum) = pod_basis(&q, max, &self.grid)?;
                let r = match self.settings.rule {
                    ModeRule::Fixed(r) => r,
                    ModeRule::Tolerance(tol) => mode_count_by_tolerance(&spectrum, tol)?,
                };
                self.set_basis(
                    basis
                        .truncated(r)
                        .with_frame(BasisFrame::Shifted(self.path.clone())),
                )?;
                Ok(Some(spectrum))
            }
        }
    }

    fn mode_count(&self) -> usize {
        self.reduced.as_ref().map_or(0, |r| r.basis.r())
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Spod
    }

    fn dt(&self) -> f64 {
        self.grid.dt()
    }
}
