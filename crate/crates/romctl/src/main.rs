//! `romctl`: runs optimal-control scenarios, mode sweeps, the rank study and
//! gradient checks from a `key = value` configuration file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advection_rom::experiments::{
    parse_config, parse_config_str, run_gradient_check, run_rank_study, run_scenario, run_sweep,
    ScenarioConfig,
};
use advection_rom::optimizer::{ModeRule, TerminalStatus};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "romctl",
    version,
    about = "Optimal control of linear advection with FOM, POD-G and sPOD-G models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory, overrides `out` in the configuration
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed, overrides `seed` in the configuration
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Only print warnings and errors
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize one scenario
    Run { config: PathBuf },
    /// Repeat a scenario for several mode counts or tolerances
    Sweep {
        config: Option<PathBuf>,
        /// Comma-separated fixed mode counts
        #[arg(long, value_delimiter = ',')]
        modes: Vec<usize>,
        /// Comma-separated mode tolerances
        #[arg(long, value_delimiter = ',')]
        tols: Vec<f64>,
    },
    /// Track trailing singular values of the transformed snapshots
    RankStudy { config: PathBuf },
    /// Compare adjoint gradients with central finite differences
    GradientCheck {
        config: PathBuf,
        /// Number of time resolutions, each halving dt
        #[arg(long, default_value_t = 2)]
        levels: usize,
    },
}

fn load(path: Option<&Path>, common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => parse_config(p).with_context(|| format!("reading {}", p.display()))?,
        None => parse_config_str("", Path::new("<defaults>"))?,
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ROMCTL_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("ROMCTL_THREADS must be a positive integer, got '{v}'"))?;
        if n == 0 {
            bail!("ROMCTL_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn status_code(status: &TerminalStatus) -> ExitCode {
    if status.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    configure_threads()?;
    match cli.command {
        Command::Run { config } => {
            let cfg = load(Some(&config), &cli.common)?;
            let out = run_scenario(&cfg)?;
            let j = out.report.final_cost().map_or(f64::NAN, |c| c.total);
            println!(
                "{}: J = {j:.16e} after {} iterations ({})",
                cfg.model,
                out.report.records.len(),
                out.report.status
            );
            Ok(status_code(&out.report.status))
        }
        Command::Sweep {
            config,
            modes,
            tols,
        } => {
            let cfg = load(config.as_deref(), &cli.common)?;
            let rules: Vec<ModeRule> = modes
                .into_iter()
                .map(ModeRule::Fixed)
                .chain(tols.into_iter().map(ModeRule::Tolerance))
                .collect();
            if rules.is_empty() {
                bail!("sweep needs --modes or --tols");
            }
            let rows = run_sweep(&cfg, &rules)?;
            let mut code = ExitCode::SUCCESS;
            for r in &rows {
                println!(
                    "{}: J = {:.16e}, {} iterations, {:.2} modes on average ({})",
                    r.label, r.final_cost, r.iterations, r.average_modes, r.status
                );
                if r.status.starts_with("diverged") {
                    code = ExitCode::from(2);
                }
            }
            Ok(code)
        }
        Command::RankStudy { config } => {
            let cfg = load(Some(&config), &cli.common)?;
            let study = run_rank_study(&cfg)?;
            let worst = |f: fn(&advection_rom::experiments::RankRow) -> f64| {
                study.rows.iter().map(f).fold(0.0, f64::max)
            };
            println!(
                "max sigma_(m+1)/sigma_1 = {:.3e}, max sigma_(m+2)/sigma_1 = {:.3e} over {} samples",
                worst(|r| r.next),
                worst(|r| r.beyond),
                study.rows.len()
            );
            Ok(status_code(&study.outcome.report.status))
        }
        Command::GradientCheck { config, levels } => {
            let cfg = load(Some(&config), &cli.common)?;
            let check = run_gradient_check(&cfg, levels)?;
            for (n_t, e) in check.worst_by_resolution() {
                println!("n_t = {n_t}: max relative error {e:.3e}");
            }
            for f in check.halving_factors() {
                println!("error ratio per dt halving: {f:.3}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
