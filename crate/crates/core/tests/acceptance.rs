//! Exit criteria. Prints one PASS/FAIL line per criterion and a summary.
//! Exits nonzero on a failed required criterion only if ADVECTION_ROM_STRICT is set.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use advection_rom::basis::{
    eigenfunction_stationary_basis, mode_count_by_tolerance, pod_basis, singular_spectrum,
    ModeBasis,
};
use advection_rom::control::{adjoint_control, apply_control, ControlShapes, ControlSignal};
use advection_rom::discretization::SpaceTimeGrid;
use advection_rom::experiments::{
    parse_config_str, random_smooth_control, run_gradient_check, run_scenario, ScenarioConfig,
};
use advection_rom::fom::{rotate, solve_adjoint, solve_state, SnapshotMatrix};
use advection_rom::optimizer::{optimize, OptimizerConfig, PhaseTimings, QuadraticModel};
use advection_rom::rom_spod::{
    assemble_spod_rom, certify_smallness, solve_spod_adjoint, solve_spod_state, AdjointForm,
};
use advection_rom::transform::{shift_field, uncontrolled_shift_path, ShiftScheme, Shifter};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn config(text: &str, out: &Path) -> ScenarioConfig {
    let mut c = parse_config_str(text, Path::new("acceptance.cfg")).expect("valid configuration");
    c.out_dir = out.to_path_buf();
    c
}

fn within(elapsed: Duration, limit_s: f64) -> Check {
    if elapsed.as_secs_f64() < limit_s {
        Ok(String::new())
    } else {
        Err(format!(
            "runtime {:.1}s exceeds {limit_s}s",
            elapsed.as_secs_f64()
        ))
    }
}

fn gaussian(grid: &SpaceTimeGrid) -> DVector<f64> {
    grid.sample(|x| (-(x - grid.l() / 12.0).powi(2)).exp())
}

fn desk_grid() -> SpaceTimeGrid {
    SpaceTimeGrid::with_cfl(100.0, 401, 300, 0.55, 1.0).unwrap()
}

fn exact_transport() -> Check {
    let start = Instant::now();
    let grid = SpaceTimeGrid::with_cfl(100.0, 321, 240, 0.55, 1.0).unwrap();
    let y0 = gaussian(&grid);
    let shapes = ControlShapes::fourier(&grid, 1);
    let q = solve_state(&grid, &shapes, &ControlSignal::zeros(3, 240), &y0)
        .map_err(|e| e.to_string())?;
    let err = (0..240)
        .map(|j| (q.column(j) - rotate(&y0, j as isize)).amax())
        .fold(0.0, f64::max);
    within(start.elapsed(), 1.0)?;
    if err < 1e-12 {
        Ok(format!("max error {err:.2e}"))
    } else {
        Err(format!("max error {err:.2e} >= 1e-12"))
    }
}

fn halving_check(text: &str, limit_s: f64, gate_error: bool) -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let check = run_gradient_check(&config(text, dir.path()), 2).map_err(|e| e.to_string())?;
    let worst = check.worst_by_resolution();
    let factor = check.halving_factors()[0];
    let detail = format!(
        "rel. error {:.2e} at n_t = {}, {:.2e} at n_t = {}, halving factor {factor:.3}",
        worst[0].1, worst[0].0, worst[1].1, worst[1].0
    );
    within(start.elapsed(), limit_s).map_err(|e| format!("{detail}; {e}"))?;
    let mut problems = Vec::new();
    if gate_error && !(worst[0].1 < 1e-3) {
        problems.push("error at dt not below 1e-3");
    }
    if !(1.5..=3.0).contains(&factor) {
        problems.push("halving factor outside [1.5, 3]");
    }
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", problems.join(", ")))
    }
}

fn fom_gradient() -> Check {
    halving_check(
        "n = 101\nn_t = 60\ncfl = 1\nxi = 1\nmu = 1e-3\nmodel = fom\n",
        10.0,
        true,
    )
}

fn spod_gradient() -> Check {
    halving_check(
        "n = 101\nn_t = 80\ncfl = 1\nxi = 1\ny0_width = 20\nmodel = spod\nmodes = 5\nadjoint = continuous\n",
        30.0,
        false,
    )
}

fn rank_bound() -> Check {
    let start = Instant::now();
    let grid = desk_grid();
    let shapes = ControlShapes::fourier(&grid, 4);
    let m = shapes.m();
    let y0 = gaussian(&grid);
    let shifter = Shifter::new(&grid, ShiftScheme::Spectral);
    let path = uncontrolled_shift_path(&grid);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_beyond, mut max_next, mut max_rank) = (0.0f64, 0.0f64, 0);
    for _ in 0..20 {
        let u = random_smooth_control(m, &grid, 1.0, &mut rng);
        let q = solve_state(&grid, &shapes, &u, &y0).map_err(|e| e.to_string())?;
        let qt = shifter
            .transform_snapshots(&q, &path)
            .map_err(|e| e.to_string())?;
        let s = singular_spectrum(qt.matrix(), &grid).map_err(|e| e.to_string())?;
        max_rank = max_rank.max(s.numerical_rank(1e-12));
        worst_beyond = worst_beyond.max(s.ratio(m + 2));
        max_next = max_next.max(s.ratio(m + 1));
    }
    let detail = format!(
        "max rank {max_rank}, max sigma_(m+1)/sigma_1 {max_next:.2e}, max sigma_(m+2)/sigma_1 {worst_beyond:.2e}"
    );
    within(start.elapsed(), 60.0).map_err(|e| format!("{detail}; {e}"))?;
    if max_rank <= m + 1 && worst_beyond < 1e-12 && max_next > 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cost_agreement() -> Check {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for xi in [2, 5] {
        let mut j = Vec::new();
        for model in ["fom", "spod"] {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let text = format!("n = 401\nn_t = 300\ncfl = 1\nxi = {xi}\nmodel = {model}\nbasis = eigenfunctions\nspectra = false\n");
            let out = run_scenario(&config(&text, dir.path())).map_err(|e| e.to_string())?;
            let r = &out.report;
            j.push((
                r.final_cost().unwrap().total,
                r.records.len(),
                r.status.to_string(),
            ));
        }
        let rel = ((j[0].0 - j[1].0) / j[0].0).abs();
        ok &= rel < 0.01;
        details.push(format!(
            "xi = {xi}: FOM {:.6} ({} it, {}), sPOD-G {:.6} ({} it, {}), rel. diff {rel:.2e}",
            j[0].0, j[0].1, j[0].2, j[1].0, j[1].1, j[1].2
        ));
    }
    let detail = details.join("; ");
    within(start.elapsed(), 600.0).map_err(|e| format!("{detail}; {e}"))?;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn envelope() -> Check {
    let start = Instant::now();
    let grid = desk_grid();
    let shapes = ControlShapes::fourier(&grid, 1);
    let y0 = gaussian(&grid);
    let basis = eigenfunction_stationary_basis(&grid, &shapes, &y0).map_err(|e| e.to_string())?;
    if basis.r() != 4 {
        return Err(format!("expected 4 modes, got {}", basis.r()));
    }
    let shifter = Shifter::new(&grid, ShiftScheme::Spectral);
    let ops = assemble_spod_rom(&basis, &shapes, &y0, &shifter, 800).map_err(|e| e.to_string())?;
    let b_norm = shapes.operator_norm(&grid);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut low_margin, mut high_margin) = (f64::INFINITY, f64::INFINITY);
    for trial in 0..20 {
        let raw = random_smooth_control(3, &grid, 1.0, &mut rng);
        let raw_cert = certify_smallness(&ops, &raw, &shapes, &grid);
        let scale = rng.random_range(0.05..0.95) * raw_cert.bound / raw_cert.u_norm_sq;
        let u = ControlSignal::from_matrix(raw.matrix() * scale.sqrt());
        let cert = certify_smallness(&ops, &u, &shapes, &grid);
        if !cert.satisfied {
            return Err(format!(
                "trial {trial}: scaled control fails the certificate"
            ));
        }
        let (lo, hi) = cert.envelope(&ops.alpha0, b_norm, grid.t_final(), 4);
        let traj = solve_spod_state(&ops, &u, &grid).map_err(|e| format!("trial {trial}: {e}"))?;
        for (j, a) in traj.alpha.column_iter().enumerate() {
            let n2 = a.norm_squared();
            if !(n2 > 0.95 * lo && n2 < 1.05 * hi) {
                return Err(format!(
                    "trial {trial}, step {j}: |alpha|^2 = {n2:.4e} outside ({lo:.4e}, {hi:.4e})"
                ));
            }
            low_margin = low_margin.min(n2 / lo);
            high_margin = high_margin.min(hi / n2);
        }
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "min |alpha|^2 / lower = {low_margin:.3}, min upper / |alpha|^2 = {high_margin:.3}"
    ))
}

fn random_modes(grid: &SpaceTimeGrid, r: usize, rng: &mut ChaCha8Rng) -> ModeBasis {
    let l = grid.l();
    let data = DMatrix::from_fn(grid.n(), r + 2, |i, _| {
        let x = grid.x(i);
        (1..=4)
            .map(|k| {
                let w = 2.0 * std::f64::consts::PI * k as f64 / l;
                rng.random_range(-1.0..1.0) * (w * x).sin()
                    + rng.random_range(-1.0..1.0) * (w * x).cos()
            })
            .sum::<f64>()
    });
    pod_basis(&SnapshotMatrix::from_matrix(data), r, grid)
        .unwrap()
        .0
}

fn structural_invariants() -> Check {
    let start = Instant::now();
    let grid = SpaceTimeGrid::with_cfl(100.0, 201, 120, 0.55, 1.0).unwrap();
    let shapes = ControlShapes::fourier(&grid, 2);
    let y0 = gaussian(&grid);
    let shifter = Shifter::new(&grid, ShiftScheme::Spectral);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut report = Vec::new();

    let mut skew = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for _ in 0..10 {
        let basis = random_modes(&grid, 5, &mut rng);
        let ops =
            assemble_spod_rom(&basis, &shapes, &y0, &shifter, 64).map_err(|e| e.to_string())?;
        skew = skew.max((&ops.n_mat + ops.n_mat.transpose()).amax());
        for _ in 0..5 {
            let alpha = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let mass = ops.mass_matrix(&alpha);
            min_eig = min_eig.min(SymmetricEigen::new(mass).eigenvalues.min());
        }
    }
    if !(skew < 1e-10) {
        return Err(format!("N skew-symmetry defect {skew:.2e}"));
    }
    if !(min_eig > 0.0) {
        return Err(format!("mass matrix min eigenvalue {min_eig:.2e}"));
    }
    report.push(format!("skew {skew:.1e}, min eig {min_eig:.2e}"));

    let y = DVector::from_fn(grid.n(), |_, _| rng.random_range(-1.0..1.0));
    for k in [1usize, 17, 200, 201, 403] {
        let shifted = shift_field(&y, k as f64 * grid.dx(), &grid).map_err(|e| e.to_string())?;
        let mut a: Vec<f64> = y.iter().copied().collect();
        let mut b: Vec<f64> = shifted.iter().copied().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        if a != b {
            return Err(format!("aligned shift by {k} cells is not a permutation"));
        }
    }

    let mut pairing = 0.0f64;
    for _ in 0..10 {
        let u = DVector::from_fn(shapes.m(), |_, _| rng.random_range(-1.0..1.0));
        let field = DVector::from_fn(grid.n(), |_, _| rng.random_range(-1.0..1.0));
        let bu = apply_control(&shapes, &u).map_err(|e| e.to_string())?;
        let lhs = grid.inner_product(&bu, &field).map_err(|e| e.to_string())?;
        let rhs = u.dot(&adjoint_control(&shapes, &field, &grid).map_err(|e| e.to_string())?);
        pairing = pairing.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    if !(pairing < 1e-10) {
        return Err(format!("control adjoint pairing defect {pairing:.2e}"));
    }
    report.push(format!("pairing {pairing:.1e}"));

    let target = SnapshotMatrix::replicate(&y0, grid.n_t());
    let u = random_smooth_control(shapes.m(), &grid, 0.1, &mut rng);
    let q = solve_state(&grid, &shapes, &u, &y0).map_err(|e| e.to_string())?;
    let lam = solve_adjoint(&grid, &q, &target).map_err(|e| e.to_string())?;
    if lam.column(grid.n_t() - 1).iter().any(|&x| x != 0.0) {
        return Err("full-order terminal adjoint is not zero".into());
    }
    let basis = random_modes(&grid, 5, &mut rng);
    let ops = assemble_spod_rom(&basis, &shapes, &y0, &shifter, 64).map_err(|e| e.to_string())?;
    let traj = solve_spod_state(&ops, &u, &grid).map_err(|e| e.to_string())?;
    let adj = solve_spod_adjoint(
        &ops,
        &traj,
        &u,
        &target,
        &basis,
        &shifter,
        AdjointForm::Continuous,
    )
    .map_err(|e| e.to_string())?;
    if adj
        .lambda_a
        .column(grid.n_t() - 1)
        .iter()
        .any(|&x| x != 0.0)
        || adj.z_a[grid.n_t() - 1] != 0.0
    {
        return Err("reduced terminal adjoint is not zero".into());
    }

    let spectrum = singular_spectrum(q.matrix(), &grid).map_err(|e| e.to_string())?;
    let counts: Vec<usize> = (1..=12)
        .map(|p| mode_count_by_tolerance(&spectrum, 10f64.powi(-p)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    if counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(format!("mode counts not monotone in tolerance: {counts:?}"));
    }
    report.push(format!("mode counts {}..{}", counts[0], counts[11]));
    within(start.elapsed(), 30.0)?;
    Ok(report.join(", "))
}

fn quadratic_problem(rng: &mut ChaCha8Rng) -> QuadraticModel {
    let (m, n_t) = (4, 50);
    let curvature = DMatrix::from_fn(m, n_t, |k, j| {
        1.0 + 99.0 * ((k * n_t + j) as f64 / (m * n_t - 1) as f64)
    });
    let optimum =
        ControlSignal::from_matrix(DMatrix::from_fn(m, n_t, |_, _| rng.random_range(-1.0..1.0)));
    QuadraticModel::new(curvature, optimum, 0.1).unwrap()
}

fn quadratic_optimizer() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let problem = quadratic_problem(&mut rng);
    let base = OptimizerConfig {
        n_iter: 200_000,
        ..OptimizerConfig::default()
    };
    let u0 = ControlSignal::zeros(problem.optimum.m(), problem.optimum.n_t());
    let run = |cfg: &OptimizerConfig| -> Result<(usize, f64), String> {
        let mut model = problem.clone();
        let (u, report) = optimize(&mut model, u0.clone(), cfg).map_err(|e| e.to_string())?;
        let rel = report.records.last().unwrap().rel_grad;
        let dist = (u.matrix() - problem.optimum.matrix()).amax();
        if !(rel < 1e-5) {
            return Err(format!(
                "relative gradient {rel:.2e} after {} iterations (|u - u*| {dist:.2e})",
                report.records.len()
            ));
        }
        Ok((report.records.len(), dist))
    };
    let (bb_iters, bb_dist) = run(&base)?;
    let (bt_iters, _) = run(&OptimizerConfig {
        bb_switch_threshold: 0.0,
        ..base.clone()
    })?;
    let detail =
        format!("BB {bb_iters} iterations (|u - u*| {bb_dist:.1e}), backtracking only {bt_iters}");
    within(start.elapsed(), 10.0).map_err(|e| format!("{detail}; {e}"))?;
    if bt_iters >= 2 * bb_iters {
        Ok(detail)
    } else {
        Err(format!("{detail}; speed-up below 2x"))
    }
}

fn full_scale() -> Check {
    let mut details = Vec::new();
    let mut ok = true;
    for (target, model, modes, reference) in [
        ("single", "fom", 0, 8.499),
        ("double", "fom", 0, 25.60),
        ("single", "spod", 35, 8.54),
    ] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut text = format!("target = {target}\nmodel = {model}\nspectra = false\n");
        if modes > 0 {
            text.push_str(&format!("modes = {modes}\n"));
        }
        let out = run_scenario(&config(&text, dir.path())).map_err(|e| e.to_string())?;
        let j = out.report.final_cost().unwrap().total;
        let rel = ((j - reference) / reference).abs();
        ok &= rel < 0.05;
        details.push(format!(
            "{target} {model}: J = {j:.4} vs {reference} ({:.1}%)",
            100.0 * rel
        ));
    }
    let detail = details.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn timing_categories() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = "n = 101\nn_t = 60\ncfl = 1\nxi = 1\ny0_width = 20\nmodel = spod\nmodes = 4\nn_iter = 5\nn_samples = 64\n";
    let out = run_scenario(&config(text, dir.path())).map_err(|e| e.to_string())?;
    let csv = std::fs::read_to_string(dir.path().join("timings.csv")).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    for c in PhaseTimings::CATEGORIES {
        if !header.contains(&c) {
            return Err(format!("timings.csv lacks column '{c}'"));
        }
    }
    let rows = lines.count();
    if rows != out.report.records.len() {
        return Err(format!(
            "{rows} timing rows for {} iterations",
            out.report.records.len()
        ));
    }
    let total = out.report.total_timings();
    if total.values().iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(format!("invalid timings {total:?}"));
    }
    Ok(PhaseTimings::CATEGORIES
        .iter()
        .zip(total.values())
        .map(|(c, t)| format!("{c} {t:.3}s"))
        .collect::<Vec<_>>()
        .join(", "))
}

fn run(id: usize, name: &str, required: bool, f: fn() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let tag = if required { "" } else { " [optional]" };
    match result {
        Ok(detail) => {
            println!("criterion {id:>2} PASS {name}{tag} ({secs:.1}s): {detail}");
            true
        }
        Err(detail) => {
            println!("criterion {id:>2} FAIL {name}{tag} ({secs:.1}s): {detail}");
            !required
        }
    }
}

fn main() -> ExitCode {
    let mut failed = Vec::new();
    let mut check = |id: usize, name: &str, f: fn() -> Check| {
        if !run(id, name, true, f) {
            failed.push(id);
        }
    };
    check(1, "exact transport at CFL 1", exact_transport);
    check(2, "full-order gradient check", fom_gradient);
    check(3, "sPOD-G gradient check", spod_gradient);
    check(4, "transformed snapshot rank bound", rank_bound);
    check(5, "FOM / sPOD-G cost agreement", cost_agreement);
    check(6, "reduced state envelope", envelope);
    check(7, "structural invariants", structural_invariants);
    check(8, "optimizer on quadratics", quadratic_optimizer);
    if std::env::var_os("ADVECTION_ROM_FULL_SCALE").is_some() {
        run(9, "full-scale reproduction", false, full_scale);
    } else {
        println!("criterion  9 SKIP full-scale reproduction [optional]: set ADVECTION_ROM_FULL_SCALE=1 to run (hours)");
    }
    check(10, "timing categories", timing_categories);
    println!(
        "{} of 9 required criteria passed, failed: {failed:?}",
        9 - failed.len()
    );
    // Reporting mode by default; ADVECTION_ROM_STRICT turns failures into a nonzero exit.
    if failed.is_empty() || std::env::var_os("ADVECTION_ROM_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
