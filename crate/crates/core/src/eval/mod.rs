//! Metrics, the synthetic benchmark and the experiment protocols.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod synthetic;

pub use experiment::{
    build_split, evaluate_methods, holdout_split, load_data, parameter_grid, parameter_grid_on,
    run_experiment, run_protocol_on, score_factors, ExperimentData, MethodRun, MetricReport,
    Prediction, Protocol, TrainedModels,
};
pub use metrics::{mae, rmse};
pub use synthetic::{generate_single_domain, generate_synthetic, CrossMap, SyntheticData, SyntheticSpec};
