//! Configuration, scenario presets, λ-sweeps, slope fitting and reports.
//!
//! An [`ExperimentConfig`] (TOML, unknown keys rejected) names a grid, a
//! phase set, background and free-data presets, a strictly decreasing λ
//! list and the gate tolerances. [`run`] executes the whole pipeline for
//! every λ, evaluates the gates and fits the λ-slopes; the ledger
//! (`λ, t, metric, value`) and a JSON summary are written when an output
//! directory is configured.

mod config;
mod fit;
mod run;
pub mod studies;

pub use config::{
    scenario, scenario_library, Bend, ErrorSpec, ExperimentConfig, GridSpec, PhaseDecl, SlopeSpec, Tolerances, SCENARIOS,
};
pub use fit::{fit_slope, SlopeFit};
pub use run::{
    check_constraints, run, run_error, sweep, sweep_fits, write_outputs, ConstraintCheck, ErrorRun, Gate, LambdaReport,
    LedgerRow, MetricFit, RunReport, SweepReport,
};

#[cfg(test)]
mod tests;
