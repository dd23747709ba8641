//! Scenario setup, configuration files and the end-to-end studies: optimization
//! runs, mode sweeps, the rank study and finite-difference gradient checks.

mod config;
mod run;
mod target;

pub use config::{parse_config, parse_config_str, parse_model, ScenarioConfig};
pub use run::{
    check_directions, random_smooth_control, run_gradient_check, run_rank_study, run_scenario,
    run_sweep, transformed_spectrum, write_plot_scripts, DirectionCheck, GradientCheck, Problem,
    RankRow, RankStudy, ScenarioModel, ScenarioOutcome, SweepRow, CHECK_DIRECTIONS,
};
pub use target::{build_target, Kink, TargetSpec};
