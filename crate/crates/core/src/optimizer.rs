//! Gradient descent over control signals with periodic basis refinement,
//! two-way backtracking and a late Barzilai-Borwein phase.

use std::fmt;
use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::DMatrix;

use crate::basis::SingularSpectrum;
use crate::control::ControlSignal;
use crate::error::{Error, Result};
use crate::fom::CostBreakdown;

pub const ARMIJO_C: f64 = 1e-4;
pub const MAX_HALVINGS: usize = 30;
pub const MAX_DOUBLINGS: usize = 30;
pub const BB_MIN: f64 = 1e-8;
pub const BB_MAX: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Fom,
    Pod,
    Spod,
    Quadratic,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fom => "fom",
            Self::Pod => "pod",
            Self::Spod => "spod",
            Self::Quadratic => "quadratic",
        })
    }
}

/// Seconds spent per phase, in the categories basis / state / cost / adjoint /
/// gradient / update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimings {
    pub basis: f64,
    pub state: f64,
    pub cost: f64,
    pub adjoint: f64,
    pub gradient: f64,
    pub update: f64,
}

impl PhaseTimings {
    pub const CATEGORIES: [&'static str; 6] =
        ["basis", "state", "cost", "adjoint", "gradient", "update"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.basis,
            self.state,
            self.cost,
            self.adjoint,
            self.gradient,
            self.update,
        ]
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }

    pub fn accumulate(&mut self, other: &Self) {
        self.basis += other.basis;
        self.state += other.state;
        self.cost += other.cost;
        self.adjoint += other.adjoint;
        self.gradient += other.gradient;
        self.update += other.update;
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub cost: CostBreakdown,
    pub gradient: ControlSignal,
}

/// A model the optimizer can drive: FOM or one of the reduced models.
pub trait ControlledModel {
    /// Cost and gradient at `u`, accumulating phase timings.
    fn evaluate(&mut self, u: &ControlSignal, timings: &mut PhaseTimings) -> Result<Evaluation>;

    /// Cost only, as used by the line search.
    fn cost(&mut self, u: &ControlSignal) -> Result<CostBreakdown>;

    /// Rebuilds the basis around `u`. `None` means the model has no basis.
    fn refine_basis(&mut self, u: &ControlSignal) -> Result<Option<SingularSpectrum>>;

    fn mode_count(&self) -> usize;

    fn kind(&self) -> ModelKind;

    /// Time step of the pairing `<u, w> = dt sum_j u_j . w_j`.
    fn dt(&self) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModeRule {
    Fixed(usize),
    Tolerance(f64),
}

impl Default for ModeRule {
    fn default() -> Self {
        Self::Fixed(35)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub mu: f64,
    pub beta: f64,
    pub omega0: f64,
    pub n_iter: usize,
    pub n_samples: usize,
    pub mode_rule: ModeRule,
    pub refine_every: usize,
    pub bb_switch_threshold: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            mu: 1e-3,
            beta: 1e-5,
            omega0: 1.0,
            n_iter: 20000,
            n_samples: 800,
            mode_rule: ModeRule::default(),
            refine_every: 5,
            bb_switch_threshold: 5e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.mu > 0.0) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return bad(format!(
                "omega0 must be positive and finite, got {}",
                self.omega0
            ));
        }
        if self.n_iter == 0 {
            return bad("n_iter must be at least 1".into());
        }
        if self.n_samples < 2 {
            return bad(format!(
                "n_samples must be at least 2, got {}",
                self.n_samples
            ));
        }
        if self.refine_every == 0 {
            return bad("refine_every must be positive".into());
        }
        if !(self.bb_switch_threshold >= 0.0) {
            return bad(format!(
                "bb_switch_threshold must be nonnegative, got {}",
                self.bb_switch_threshold
            ));
        }
        match self.mode_rule {
            ModeRule::Fixed(0) => bad("mode count must be positive".into()),
            ModeRule::Tolerance(t) if !(t > 0.0 && t < 1.0) => {
                bad(format!("mode tolerance must lie in (0, 1), got {t}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TerminalStatus {
    Converged,
    MaxIter,
    /// Line search failed again right after a basis refinement.
    Stalled,
    Diverged(String),
}

impl TerminalStatus {
    pub fn is_success(&self) -> bool {
        !matches!(self, Self::Diverged(_))
    }
}

impl fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Converged => f.write_str("converged"),
            Self::MaxIter => f.write_str("max_iter"),
            Self::Stalled => f.write_str("stalled"),
            Self::Diverged(reason) => write!(f, "diverged: {reason}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// No step taken (converged before the update).
    None,
    Backtracking,
    BarzilaiBorwein,
    /// Line search failed; `u` left unchanged.
    Failed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: CostBreakdown,
    pub grad_norm: f64,
    pub rel_grad: f64,
    pub omega: f64,
    pub step: StepKind,
    pub modes: usize,
    pub refined: bool,
    pub timings: PhaseTimings,
    pub wall: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerReport {
    pub kind: ModelKind,
    pub records: Vec<IterationRecord>,
    pub status: TerminalStatus,
}

impl OptimizerReport {
    pub fn final_cost(&self) -> Option<CostBreakdown> {
        self.records.last().map(|r| r.cost)
    }

    pub fn total_timings(&self) -> PhaseTimings {
        let mut t = PhaseTimings::default();
        for r in &self.records {
            t.accumulate(&r.timings);
        }
        t
    }

    pub fn average_modes(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.modes as f64).sum::<f64>() / self.records.len() as f64
    }
}

/// Receives each record as it is produced, together with the spectrum of a
/// refinement performed in that iteration.
pub trait IterationObserver {
    fn observe(
        &mut self,
        record: &IterationRecord,
        spectrum: Option<&SingularSpectrum>,
        u: &ControlSignal,
    ) -> Result<()>;

    fn finish(&mut self, _report: &OptimizerReport) -> Result<()> {
        Ok(())
    }
}

impl IterationObserver for () {
    fn observe(
        &mut self,
        _: &IterationRecord,
        _: Option<&SingularSpectrum>,
        _: &ControlSignal,
    ) -> Result<()> {
        Ok(())
    }
}

/// `true` iff `i mod refine_every == 0` or the last step-size search failed.
pub fn refinement_policy(i: usize, last_linesearch_ok: bool, config: &OptimizerConfig) -> bool {
    i.is_multiple_of(config.refine_every) || !last_linesearch_ok
}

/// Armijo search along `-g` from `omega_prev`, halving while the sufficient
/// decrease test fails and doubling while it keeps holding.
///
/// `f(omega)` is the cost at `u - omega g`, `j0` the cost at `u` and
/// `g_norm_sq` the squared gradient norm. Errors from `f` (divergence or a
/// singular reduced model) count as a failed test.
pub fn two_way_backtracking(
    mut f: impl FnMut(f64) -> Result<f64>,
    j0: f64,
    g_norm_sq: f64,
    omega_prev: f64,
) -> (f64, bool) {
    let mut eval = |w: f64| match f(w) {
        Ok(v) if v.is_finite() => v <= j0 - ARMIJO_C * w * g_norm_sq,
        Ok(_) => false,
        Err(e) => {
            debug!("line search trial omega = {w:e} rejected: {e}");
            false
        }
    };
    let mut w = omega_prev;
    if eval(w) {
        for _ in 0..MAX_DOUBLINGS {
            if eval(2.0 * w) {
                w *= 2.0;
            } else {
                break;
            }
        }
        return (w, true);
    }
    for _ in 0..MAX_HALVINGS {
        w *= 0.5;
        if eval(w) {
            return (w, true);
        }
    }
    (w, false)
}

/// BB1 step `<s, s> / <s, y>` clamped to `[BB_MIN, BB_MAX]`; falls back to
/// `omega_prev` when the curvature estimate is not positive.
pub fn barzilai_borwein_step(
    s: &ControlSignal,
    y: &ControlSignal,
    dt: f64,
    omega_prev: f64,
) -> f64 {
    let sy = s.dot(y, dt);
    let ss = s.dot(s, dt);
    let w = ss / sy;
    if !(sy > 0.0) || !w.is_finite() || !(w > 0.0) {
        return omega_prev;
    }
    w.clamp(BB_MIN, BB_MAX)
}

fn gradient_norm(g: &ControlSignal, dt: f64) -> f64 {
    g.dot(g, dt).sqrt()
}

pub fn optimize<M: ControlledModel + ?Sized>(
    model: &mut M,
    u0: ControlSignal,
    config: &OptimizerConfig,
) -> Result<(ControlSignal, OptimizerReport)> {
    optimize_with(model, u0, config, &mut ())
}

/// Runs the descent loop, reporting each iteration to `observer`.
///
/// The basis is built before the first evaluation and then refined whenever
/// [`refinement_policy`] asks for it.
pub fn optimize_with<M: ControlledModel + ?Sized>(
    model: &mut M,
    u0: ControlSignal,
    config: &OptimizerConfig,
    observer: &mut dyn IterationObserver,
) -> Result<(ControlSignal, OptimizerReport)> {
    config.validate()?;
    let dt = model.dt();
    let mut u = u0;
    let mut omega = config.omega0;
    let mut last_ok = true;
    let mut failed_before = false;
    let mut memory: Option<(ControlSignal, ControlSignal)> = None;
    let mut g1 = None;
    let mut report = OptimizerReport {
        kind: model.kind(),
        records: Vec::new(),
        status: TerminalStatus::MaxIter,
    };

    for i in 1..=config.n_iter {
        let wall = Instant::now();
        let mut timings = PhaseTimings::default();
        let mut refined = false;
        let mut spectrum = None;

        if i == 1 || refinement_policy(i, last_ok, config) {
            let start = Instant::now();
            match model.refine_basis(&u) {
                Ok(s) => {
                    if s.is_some() {
                        refined = true;
                        memory = None;
                    }
                    spectrum = s;
                }
                Err(e) => {
                    report.status = TerminalStatus::Diverged(e.to_string());
                    break;
                }
            }
            timings.basis += start.elapsed().as_secs_f64();
        }

        let eval = match model.evaluate(&u, &mut timings) {
            Ok(e) => e,
            Err(e) => {
                warn!("iteration {i}: evaluation failed: {e}");
                report.status = TerminalStatus::Diverged(e.to_string());
                break;
            }
        };
        let g = eval.gradient;
        let g_norm = gradient_norm(&g, dt);
        let g1_norm = *g1.get_or_insert(g_norm);
        let rel = if g1_norm > 0.0 { g_norm / g1_norm } else { 0.0 };

        let mut record = IterationRecord {
            iteration: i,
            cost: eval.cost,
            grad_norm: g_norm,
            rel_grad: rel,
            omega: 0.0,
            step: StepKind::None,
            modes: model.mode_count(),
            refined,
            timings,
            wall: 0.0,
        };

        let converged = rel < config.beta || g_norm == 0.0;
        if !converged && i < config.n_iter {
            let start = Instant::now();
            let use_bb = rel < config.bb_switch_threshold && memory.is_some();
            if use_bb {
                let (u_prev, g_prev) = memory.as_ref().expect("checked above");
                omega = barzilai_borwein_step(&u.sub(u_prev), &g.sub(g_prev), dt, omega);
                memory = Some((u.clone(), g.clone()));
                u = u.axpy(-omega, &g);
                record.step = StepKind::BarzilaiBorwein;
                last_ok = true;
            } else {
                let j0 = eval.cost.total;
                let (w, ok) = two_way_backtracking(
                    |w| model.cost(&u.axpy(-w, &g)).map(|c| c.total),
                    j0,
                    g_norm * g_norm,
                    omega,
                );
                if ok {
                    omega = w;
                    memory = Some((u.clone(), g.clone()));
                    u = u.axpy(-omega, &g);
                    record.step = StepKind::Backtracking;
                } else {
                    record.step = StepKind::Failed;
                    memory = None;
                }
                last_ok = ok;
            }
            record.omega = omega;
            record.timings.update += start.elapsed().as_secs_f64();
        }
        record.wall = wall.elapsed().as_secs_f64();

        if i == 1 || i % 100 == 0 || converged {
            info!(
                "{} iteration {i}: J = {:.10e}, |g|/|g1| = {:.3e}, omega = {:.3e}, modes = {}",
                model.kind(),
                record.cost.total,
                rel,
                record.omega,
                record.modes
            );
        }
        let failed = record.step == StepKind::Failed;
        observer.observe(&record, spectrum.as_ref(), &u)?;
        report.records.push(record);

        if converged {
            report.status = TerminalStatus::Converged;
            break;
        }
        if failed && failed_before {
            warn!("iteration {i}: step-size search failed again after refinement; stopping");
            report.status = TerminalStatus::Stalled;
            break;
        }
        failed_before = failed;
    }
    observer.finish(&report)?;
    Ok((u, report))
}

/// `J(u) = 1/2 dt sum h_kj (u_kj - u*_kj)^2`, a closed-form test problem.
#[derive(Clone, Debug)]
pub struct QuadraticModel {
    pub curvature: DMatrix<f64>,
    pub optimum: ControlSignal,
    pub dt: f64,
}

impl QuadraticModel {
    pub fn new(curvature: DMatrix<f64>, optimum: ControlSignal, dt: f64) -> Result<Self> {
        crate::error::check_len("quadratic curvature rows", optimum.m(), curvature.nrows())?;
        crate::error::check_len(
            "quadratic curvature columns",
            optimum.n_t(),
            curvature.ncols(),
        )?;
        if curvature.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::InvalidParameter("curvature must be positive".into()));
        }
        Ok(Self {
            curvature,
            optimum,
            dt,
        })
    }

    fn residual(&self, u: &ControlSignal) -> DMatrix<f64> {
        u.matrix() - self.optimum.matrix()
    }
}

impl ControlledModel for QuadraticModel {
    fn evaluate(&mut self, u: &ControlSignal, timings: &mut PhaseTimings) -> Result<Evaluation> {
        let start = Instant::now();
        let cost = ControlledModel::cost(self, u)?;
        timings.cost += start.elapsed().as_secs_f64();
        let start = Instant::now();
        let g = self.residual(u).component_mul(&self.curvature);
        timings.gradient += start.elapsed().as_secs_f64();
        Ok(Evaluation {
            cost,
            gradient: ControlSignal::from_matrix(g),
        })
    }

    fn cost(&mut self, u: &ControlSignal) -> Result<CostBreakdown> {
        u.check_dims(self.optimum.m(), self.optimum.n_t())?;
        let r = self.residual(u);
        let j = 0.5 * self.dt * r.component_mul(&r).component_mul(&self.curvature).sum();
        Ok(CostBreakdown::new(j, 0.0))
    }

    fn refine_basis(&mut self, _u: &ControlSignal) -> Result<Option<SingularSpectrum>> {
        Ok(None)
    }

    fn mode_count(&self) -> usize {
        0
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Quadratic
    }

    fn dt(&self) -> f64 {
        self.dt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(h: &[f64], dt: f64) -> QuadraticModel {
        let m = h.len();
        let curvature = DMatrix::from_fn(m, 1, |k, _| h[k]);
        let optimum = ControlSignal::from_matrix(DMatrix::from_fn(m, 1, |k, _| 1.0 + k as f64));
        QuadraticModel::new(curvature, optimum, dt).unwrap()
    }

    #[test]
    fn defaults() {
        let c = OptimizerConfig::default();
        assert_eq!((c.mu, c.beta, c.omega0), (1e-3, 1e-5, 1.0));
        assert_eq!((c.n_iter, c.n_samples, c.refine_every), (20000, 800, 5));
        assert_eq!(c.bb_switch_threshold, 5e-3);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn refinement_schedule() {
        let c = OptimizerConfig::default();
        assert!(refinement_policy(5, true, &c));
        assert!(!refinement_policy(7, true, &c));
        assert!(refinement_policy(7, false, &c));
    }

    #[test]
    fn backtracking_exact_minimizer() {
        let (w, ok) = two_way_backtracking(|w| Ok((1.0 - w) * (1.0 - w)), 1.0, 2.0, 1.0);
        assert!(ok);
        assert_eq!(w, 1.0);
    }

    #[test]
    fn backtracking_halves_on_increasing_function() {
        // f grows for large steps but descends initially with slope -1
        let f = |w: f64| Ok(1.0 - w + 10.0 * w * w);
        let (w, ok) = two_way_backtracking(f, 1.0, 1.0, 1.0);
        assert!(ok);
        assert!(w < 0.1);
        assert!(f(w).unwrap() <= 1.0 - ARMIJO_C * w);
    }

    #[test]
    fn backtracking_grows_small_steps() {
        let (w, ok) = two_way_backtracking(|w| Ok((1.0 - w) * (1.0 - w)), 1.0, 2.0, 1e-3);
        assert!(ok);
        assert!(w >= 2e-3);
        assert!(w > 0.5 && w < 2.0);
    }

    #[test]
    fn backtracking_reports_failure() {
        let (_, ok) = two_way_backtracking(|_| Ok(2.0), 1.0, 1.0, 1.0);
        assert!(!ok);
        let (_, ok) = two_way_backtracking(|_| Err(Error::EmptySnapshots), 1.0, 1.0, 1.0);
        assert!(!ok);
    }

    #[test]
    fn bb_step_cases() {
        let s = ControlSignal::from_matrix(DMatrix::from_fn(3, 4, |k, j| (k + 2 * j) as f64 - 3.0));
        assert!((barzilai_borwein_step(&s, &s, 0.1, 7.0) - 1.0).abs() < 1e-14);
        let y = ControlSignal::from_matrix(s.matrix() * 4.0);
        assert!((barzilai_borwein_step(&s, &y, 0.1, 7.0) - 0.25).abs() < 1e-14);
        let neg = ControlSignal::from_matrix(s.matrix() * -1.0);
        assert_eq!(barzilai_borwein_step(&s, &neg, 0.1, 7.0), 7.0);
        let zero = ControlSignal::zeros(3, 4);
        assert_eq!(barzilai_borwein_step(&zero, &zero, 0.1, 7.0), 7.0);
        let tiny = ControlSignal::from_matrix(s.matrix() * 1e12);
        assert_eq!(barzilai_borwein_step(&s, &tiny, 0.1, 7.0), BB_MIN);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut model = quadratic(&[1.0, 2.0, 5.0, 10.0], 0.5);
        let (u, report) = optimize(
            &mut model,
            ControlSignal::zeros(4, 1),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert_eq!(report.status, TerminalStatus::Converged);
        assert!(report.records.len() <= 200);
        assert_eq!(report.records[0].rel_grad, 1.0);
        assert!(report.records.last().unwrap().rel_grad < 1e-5);
        // |g| < 1e-5 |g1| with curvature >= 1 bounds the distance to the optimum
        let g1 = report.records[0].grad_norm / model.dt.sqrt();
        assert!((u.matrix() - model.optimum.matrix()).norm() < 1e-5 * g1);
    }

    #[test]
    fn infinite_beta_stops_after_one_iteration() {
        let mut model = quadratic(&[1.0, 3.0], 1.0);
        let config = OptimizerConfig {
            beta: f64::INFINITY,
            ..Default::default()
        };
        let (u, report) = optimize(&mut model, ControlSignal::zeros(2, 1), &config).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.status, TerminalStatus::Converged);
        assert_eq!(u.matrix().amax(), 0.0);
    }

    #[test]
    fn backtracking_phase_is_monotone() {
        let mut model = quadratic(&[1.0, 4.0, 30.0], 1.0);
        let config = OptimizerConfig {
            bb_switch_threshold: 0.0,
            n_iter: 60,
            ..Default::default()
        };
        let (_, report) = optimize(&mut model, ControlSignal::zeros(3, 1), &config).unwrap();
        for w in report.records.windows(2) {
            assert!(w[1].cost.total < w[0].cost.total || w[1].cost.total == 0.0);
        }
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut model = quadratic(&[1.0, 7.0, 40.0], 0.3);
            let (_, r) = optimize(
                &mut model,
                ControlSignal::zeros(3, 1),
                &OptimizerConfig::default(),
            )
            .unwrap();
            r.records
                .iter()
                .map(|r| r.cost.total.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_invalid_config() {
        let bad = OptimizerConfig {
            mode_rule: ModeRule::Tolerance(2.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            refine_every: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
