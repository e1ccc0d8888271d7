//! Experiment harness: JSON run configuration, the generate / train /
//! attack-eval / defend / tradeoff / report stages, tidy metrics CSV and
//! the bundled scenario presets.
//!
//! Every stage is deterministic given the config and seed. Wall-clock
//! times are only recorded when `record_wall_time` is set, so that repeated
//! runs produce byte-identical CSVs.

pub mod config;
pub mod metrics;
pub mod pipeline;
pub mod presets;
pub mod report;

#[cfg(test)]
mod desk_tests;

pub use config::{Case, RunConfig};
pub use metrics::{read_metrics, write_metrics, MetricsRecord, Phase, METRICS_HEADER};
pub use pipeline::{
    attack_eval_to, defend_to, defend_model, evaluate_model, generate_to, load_workspace, train_model, train_to,
    tradeoff, tradeoff_to, DefendedModel, Manifest, ModelMeta, TrainedModel, Workspace,
};
pub use report::{build_report, report_to, write_report, Report};
