use std::fs;
use std::path::Path;

use csv::Writer;
use log::info;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::{singular_spectrum, SingularSpectrum};
use crate::control::{ControlShapes, ControlSignal};
use crate::discretization::{DiscreteField, SpaceTimeGrid};
use crate::error::{Error, Result};
use crate::fom::{solve_state, FomModel, SnapshotMatrix};
use crate::io::{fmt_f64, write_control_csv, write_snapshots_bin, ReportWriter};
use crate::optimizer::{
    optimize_with, ControlledModel, IterationObserver, IterationRecord, ModeRule, ModelKind,
    OptimizerReport, PhaseTimings,
};
use crate::rom_pod::PodModel;
use crate::rom_spod::{SpodBasisSource, SpodModel};

use super::config::ScenarioConfig;
use super::target::build_target;

/// Problem data shared by every model built from one configuration.
#[derive(Clone, Debug)]
pub struct Problem {
    pub grid: SpaceTimeGrid,
    pub shapes: ControlShapes,
    pub y0: DiscreteField,
    pub target: SnapshotMatrix,
}

impl Problem {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        let grid = config.grid()?;
        Self::on_grid(config, grid)
    }

    pub fn on_grid(config: &ScenarioConfig, grid: SpaceTimeGrid) -> Result<Self> {
        let shapes = config.shapes(&grid);
        let y0 = config.initial_condition(&grid);
        let target = build_target(&grid, &y0, &config.target)?;
        Ok(Self {
            grid,
            shapes,
            y0,
            target,
        })
    }

    pub fn model(&self, config: &ScenarioConfig) -> Result<Box<dyn ScenarioModel>> {
        let mu = config.optimizer.mu;
        let (g, b, y0, yd) = (
            self.grid,
            self.shapes.clone(),
            self.y0.clone(),
            self.target.clone(),
        );
        Ok(match config.model {
            ModelKind::Fom => Box::new(FomModel::new(g, b, y0, yd, mu)?),
            ModelKind::Pod => {
                Box::new(PodModel::new(g, b, y0, yd, mu, config.optimizer.mode_rule)?)
            }
            ModelKind::Spod => Box::new(SpodModel::new(g, b, y0, yd, mu, config.spod_settings())?),
            ModelKind::Quadratic => {
                return Err(Error::InvalidParameter(
                    "quadratic models are not scenario models".into(),
                ))
            }
        })
    }
}

/// A [`ControlledModel`] whose reduced basis can be copied to another grid.
pub trait ScenarioModel: ControlledModel + Send {
    fn export_basis(&self) -> Option<crate::basis::ModeBasis>;
    fn import_basis(&mut self, basis: crate::basis::ModeBasis) -> Result<()>;
}

impl ScenarioModel for FomModel {
    fn export_basis(&self) -> Option<crate::basis::ModeBasis> {
        None
    }

    fn import_basis(&mut self, _basis: crate::basis::ModeBasis) -> Result<()> {
        Ok(())
    }
}

impl ScenarioModel for PodModel {
    fn export_basis(&self) -> Option<crate::basis::ModeBasis> {
        self.basis().cloned()
    }

    fn import_basis(&mut self, basis: crate::basis::ModeBasis) -> Result<()> {
        self.set_basis(basis)
    }
}

impl ScenarioModel for SpodModel {
    fn export_basis(&self) -> Option<crate::basis::ModeBasis> {
        self.basis().cloned()
    }

    fn import_basis(&mut self, basis: crate::basis::ModeBasis) -> Result<()> {
        self.set_basis(basis)
    }
}

/// `u_k(t) = a (c_k0 + c_k1 sin(3 t/T) + c_k2 cos(7 t/T))` with `c ~ U(-1, 1)`.
pub fn random_smooth_control<R: Rng>(
    m: usize,
    grid: &SpaceTimeGrid,
    amplitude: f64,
    rng: &mut R,
) -> ControlSignal {
    let c: Vec<f64> = (0..3 * m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t_final = grid.t_final();
    ControlSignal::from_matrix(DMatrix::from_fn(m, grid.n_t(), |k, j| {
        let s = grid.t(j) / t_final;
        amplitude * (c[3 * k] + c[3 * k + 1] * (3.0 * s).sin() + c[3 * k + 2] * (7.0 * s).cos())
    }))
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub control: ControlSignal,
    pub report: OptimizerReport,
}

struct Pair<'a, A: ?Sized, B: ?Sized>(&'a mut A, &'a mut B);

impl<A: IterationObserver + ?Sized, B: IterationObserver + ?Sized> IterationObserver
    for Pair<'_, A, B>
{
    fn observe(
        &mut self,
        r: &IterationRecord,
        s: Option<&SingularSpectrum>,
        u: &ControlSignal,
    ) -> Result<()> {
        self.0.observe(r, s, u)?;
        self.1.observe(r, s, u)
    }

    fn finish(&mut self, report: &OptimizerReport) -> Result<()> {
        self.0.finish(report)?;
        self.1.finish(report)
    }
}

fn prepare_out_dir(config: &ScenarioConfig) -> Result<()> {
    fs::create_dir_all(&config.out_dir)?;
    fs::write(
        config.out_dir.join("scenario.cfg"),
        config.to_config_string(),
    )?;
    Ok(())
}

fn run_with(config: &ScenarioConfig, extra: &mut dyn IterationObserver) -> Result<ScenarioOutcome> {
    config.validate()?;
    prepare_out_dir(config)?;
    let problem = Problem::new(config)?;
    let mut model = problem.model(config)?;
    info!(
        "{} on n = {}, n_t = {}, CFL = {:.4}",
        config.model,
        problem.grid.n(),
        problem.grid.n_t(),
        problem.grid.cfl()
    );
    let mut writer = ReportWriter::create(&config.out_dir, config.write_spectra)?;
    let u0 = ControlSignal::zeros(problem.shapes.m(), problem.grid.n_t());
    let (control, report) = optimize_with(
        model.as_mut(),
        u0,
        &config.optimizer,
        &mut Pair(&mut writer, extra),
    )?;

    write_control_csv(config.out_dir.join("final_control.csv"), &control)?;
    let state = solve_state(&problem.grid, &problem.shapes, &control, &problem.y0)?;
    write_snapshots_bin(config.out_dir.join("final_state.bin"), &state)?;
    write_plot_scripts(&config.out_dir, false)?;
    info!("{} finished: {}", config.model, report.status);
    Ok(ScenarioOutcome { control, report })
}

/// Optimizes from `u = 0` and writes the history, final control and final
/// full-order state into `config.out_dir`.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutcome> {
    run_with(config, &mut ())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub rule: ModeRule,
    pub final_cost: f64,
    pub iterations: usize,
    pub average_modes: f64,
    pub status: String,
    pub timings: PhaseTimings,
}

/// One scenario per mode rule, each in its own subdirectory, run in parallel.
/// Writes `sweep.csv` into `config.out_dir`.
pub fn run_sweep(config: &ScenarioConfig, rules: &[ModeRule]) -> Result<Vec<SweepRow>> {
    fs::create_dir_all(&config.out_dir)?;
    let rows = rules
        .par_iter()
        .map(|&rule| {
            let label = match rule {
                ModeRule::Fixed(r) => format!("modes_{r}"),
                ModeRule::Tolerance(t) => format!("tol_{t:e}"),
            };
            let mut c = config.clone();
            c.optimizer.mode_rule = rule;
            c.out_dir = config.out_dir.join(&label);
            let outcome = run_scenario(&c)?;
            let r = &outcome.report;
            Ok(SweepRow {
                label,
                rule,
                final_cost: r.final_cost().map_or(f64::NAN, |c| c.total),
                iterations: r.records.len(),
                average_modes: r.average_modes(),
                status: r.status.to_string(),
                timings: r.total_timings(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut w = Writer::from_path(config.out_dir.join("sweep.csv"))?;
    let mut header = vec!["run", "rule", "J", "iterations", "average_modes", "status"];
    header.extend(PhaseTimings::CATEGORIES);
    w.write_record(&header)?;
    for r in &rows {
        let rule = match r.rule {
            ModeRule::Fixed(n) => n.to_string(),
            ModeRule::Tolerance(t) => fmt_f64(t),
        };
        let mut rec = vec![
            r.label.clone(),
            rule,
            fmt_f64(r.final_cost),
            r.iterations.to_string(),
            fmt_f64(r.average_modes),
            r.status.clone(),
        ];
        rec.extend(r.timings.values().iter().map(|&t| fmt_f64(t)));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankRow {
    pub iteration: usize,
    /// `sigma_{m+1} / sigma_1`
    pub next: f64,
    /// `sigma_{m+2} / sigma_1`
    pub beyond: f64,
}

impl RankRow {
    fn from_spectrum(iteration: usize, s: &SingularSpectrum, m: usize) -> Self {
        let ratio = |i: usize| if i <= s.len() { s.ratio(i) } else { 0.0 };
        Self {
            iteration,
            next: ratio(m + 1),
            beyond: ratio(m + 2),
        }
    }
}

/// Spectrum of the full-order snapshots at `u` in the frame moving with `v`.
pub fn transformed_spectrum(
    model: &SpodModel,
    u: &ControlSignal,
    grid: &SpaceTimeGrid,
) -> Result<SingularSpectrum> {
    singular_spectrum(model.transformed_snapshots(u)?.matrix(), grid)
}

struct RankObserver {
    probe: SpodModel,
    grid: SpaceTimeGrid,
    m: usize,
    every: usize,
    rows: Vec<RankRow>,
    out: Writer<fs::File>,
}

impl RankObserver {
    fn push(&mut self, row: RankRow) -> Result<()> {
        self.out.write_record([
            row.iteration.to_string(),
            fmt_f64(row.next),
            fmt_f64(row.beyond),
        ])?;
        self.out.flush()?;
        self.rows.push(row);
        Ok(())
    }
}

impl IterationObserver for RankObserver {
    fn observe(
        &mut self,
        r: &IterationRecord,
        _: Option<&SingularSpectrum>,
        u: &ControlSignal,
    ) -> Result<()> {
        if r.iteration.is_multiple_of(self.every) {
            let s = transformed_spectrum(&self.probe, u, &self.grid)?;
            self.push(RankRow::from_spectrum(r.iteration, &s, self.m))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RankStudy {
    pub rows: Vec<RankRow>,
    pub outcome: ScenarioOutcome,
}

/// sPOD optimization on the eigenfunction basis that records the trailing
/// singular values of the transformed snapshots every 10 iterations.
pub fn run_rank_study(config: &ScenarioConfig) -> Result<RankStudy> {
    let mut config = config.clone();
    config.model = ModelKind::Spod;
    config.basis_source = SpodBasisSource::Eigenfunctions;
    config.validate()?;
    prepare_out_dir(&config)?;
    let problem = Problem::new(&config)?;
    let m = problem.shapes.m();
    let probe = SpodModel::new(
        problem.grid,
        problem.shapes.clone(),
        problem.y0.clone(),
        problem.target.clone(),
        config.optimizer.mu,
        config.spod_settings(),
    )?;
    let mut out = Writer::from_path(config.out_dir.join("rank_study.csv"))?;
    out.write_record(["iteration", "sigma_m1_ratio", "sigma_m2_ratio"])?;
    let mut obs = RankObserver {
        probe,
        grid: problem.grid,
        m,
        every: 10,
        rows: Vec::new(),
        out,
    };
    let s0 = transformed_spectrum(
        &obs.probe,
        &ControlSignal::zeros(m, problem.grid.n_t()),
        &problem.grid,
    )?;
    obs.push(RankRow::from_spectrum(0, &s0, m))?;
    let outcome = run_with(&config, &mut obs)?;
    write_plot_scripts(&config.out_dir, true)?;
    Ok(RankStudy {
        rows: obs.rows,
        outcome,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionCheck {
    pub n_t: usize,
    pub direction: usize,
    pub adjoint: f64,
    pub finite_difference: f64,
}

impl DirectionCheck {
    pub fn rel_error(&self) -> f64 {
        ((self.finite_difference - self.adjoint) / self.finite_difference).abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub rows: Vec<DirectionCheck>,
}

impl GradientCheck {
    /// `(n_t, worst relative error)` per resolution, coarse to fine.
    pub fn worst_by_resolution(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|(n, _)| *n == r.n_t) {
                Some((_, e)) => *e = e.max(r.rel_error()),
                None => out.push((r.n_t, r.rel_error())),
            }
        }
        out
    }

    /// Error ratio between consecutive resolutions.
    pub fn halving_factors(&self) -> Vec<f64> {
        self.worst_by_resolution()
            .windows(2)
            .map(|w| w[0].1 / w[1].1)
            .collect()
    }
}

/// Central differences `(J(u + eps d) - J(u - eps d)) / 2 eps` against the
/// adjoint gradient paired with `d`.
pub fn check_directions<M: ControlledModel + ?Sized>(
    model: &mut M,
    u: &ControlSignal,
    directions: &[ControlSignal],
    eps: f64,
) -> Result<Vec<(f64, f64)>> {
    let dt = model.dt();
    let g = model.evaluate(u, &mut PhaseTimings::default())?.gradient;
    directions
        .iter()
        .map(|d| {
            let plus = model.cost(&u.axpy(eps, d))?.total;
            let minus = model.cost(&u.axpy(-eps, d))?.total;
            Ok((g.dot(d, dt), (plus - minus) / (2.0 * eps)))
        })
        .collect()
}

pub const CHECK_DIRECTIONS: usize = 10;
const CHECK_EPS: f64 = 1e-4;
const CHECK_CONTROL_AMPLITUDE: f64 = 0.01;

/// Finite-difference check at `n_t, 2 n_t, ..., 2^(levels-1) n_t` with a basis
/// frozen on the coarsest grid. Writes `gradient_check.csv`.
pub fn run_gradient_check(config: &ScenarioConfig, levels: usize) -> Result<GradientCheck> {
    config.validate()?;
    if levels == 0 {
        return Err(Error::InvalidParameter(
            "need at least one resolution".into(),
        ));
    }
    fs::create_dir_all(&config.out_dir)?;
    let coarse = config.grid()?;
    let m = config.shapes(&coarse).m();

    let basis = {
        let problem = Problem::on_grid(config, coarse)?;
        let mut model = problem.model(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let u_b = random_smooth_control(m, &coarse, CHECK_CONTROL_AMPLITUDE, &mut rng);
        model.refine_basis(&u_b)?;
        model.export_basis()
    };

    let mut rows = Vec::new();
    for level in 0..levels {
        let grid = coarse.with_time_steps(coarse.n_t() << level)?;
        let problem = Problem::on_grid(config, grid)?;
        let mut model = problem.model(config)?;
        match &basis {
            Some(b) => model.import_basis(b.clone())?,
            None => {
                model.refine_basis(&ControlSignal::zeros(m, grid.n_t()))?;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        let u = random_smooth_control(m, &grid, CHECK_CONTROL_AMPLITUDE, &mut rng);
        let dirs: Vec<ControlSignal> = (0..CHECK_DIRECTIONS)
            .map(|_| random_smooth_control(m, &grid, 1.0, &mut rng))
            .collect();
        for (i, (adjoint, fd)) in check_directions(model.as_mut(), &u, &dirs, CHECK_EPS)?
            .into_iter()
            .enumerate()
        {
            rows.push(DirectionCheck {
                n_t: grid.n_t(),
                direction: i + 1,
                adjoint,
                finite_difference: fd,
            });
        }
    }

    let check = GradientCheck { rows };
    let mut w = Writer::from_path(config.out_dir.join("gradient_check.csv"))?;
    w.write_record([
        "n_t",
        "direction",
        "adjoint",
        "finite_difference",
        "rel_error",
    ])?;
    for r in &check.rows {
        w.write_record([
            r.n_t.to_string(),
            r.direction.to_string(),
            fmt_f64(r.adjoint),
            fmt_f64(r.finite_difference),
            fmt_f64(r.rel_error()),
        ])?;
    }
    w.flush()?;
    Ok(check)
}

const COMMON: &str = "set datafile separator ','\nset key autotitle columnhead\nset grid\n";

/// gnuplot command files for the CSVs of one run.
pub fn write_plot_scripts(dir: &Path, rank_study: bool) -> Result<()> {
    let scripts = [
        (
            "cost_history.gp",
            "set xlabel 'iteration'\nset ylabel 'J'\nset logscale y\nplot 'cost_history.csv' using 1:2 with lines\n",
        ),
        (
            "gradient_history.gp",
            "set xlabel 'iteration'\nset ylabel '|g| / |g_1|'\nset logscale y\nplot 'gradient_history.csv' using 1:3 with lines\n",
        ),
        (
            "modes_per_iteration.gp",
            "set xlabel 'iteration'\nset ylabel 'modes'\nplot 'modes_per_iteration.csv' using 1:2 with steps\n",
        ),
        (
            "timings.gp",
            "set style data histograms\nset style histogram rowstacked\nset style fill solid\nset xlabel 'iteration'\nset ylabel 'seconds'\nplot for [c=2:7] 'timings.csv' using c\n",
        ),
    ];
    for (name, body) in scripts {
        fs::write(dir.join(name), format!("{COMMON}{body}"))?;
    }
    if rank_study {
        fs::write(
            dir.join("rank_study.gp"),
            format!(
                "{COMMON}set xlabel 'iteration'\nset ylabel 'sigma_i / sigma_1'\nset logscale y\nplot 'rank_study.csv' using 1:2 with linespoints, '' using 1:3 with linespoints\n"
            ),
        )?;
    }
    Ok(())
}
