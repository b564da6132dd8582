//! Experiment orchestration: configuration, the experiment pipeline, sweeps
//! with confidence intervals, plot data and the one-dimensional bias study.

mod config;
mod fig2;
mod run;
mod sweep;

pub use config::{DatasetSource, ExperimentConfig, MethodOverrides, KEYS};
pub use fig2::{biases_compound, fig2_csv, fig2_study, ols_line, Fig2Config, LineFit};
pub use run::{
    load_datasets, results_csv, run_experiment, run_on, simulate_for_seed, stage_seed, train_config_for_seed, RunResult,
    RESULTS_HEADER,
};
pub use sweep::{emit_plot_data, summary_csv, sweep, t_interval, t_quantile, Axis, SummaryRow, SweepResult, SUMMARY_HEADER};
