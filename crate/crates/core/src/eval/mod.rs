//! Metrics, experiment drivers, feature export and efficiency measurement.

mod efficiency;
mod features;
mod lab;
mod metrics;

pub use efficiency::{
    allocator_installed, current_bytes, measure_efficiency, peak_bytes, regression_slope, reset_peak,
    EfficiencyReport, PeakAllocator,
};
pub use features::{export_features, linear_probe, read_features, FeatureTable};
pub use lab::{
    canonical_config, make_split, pretrain_corpus, AblationReport, AblationRow, CellResult, ExperimentSetup, GeneralizationReport,
    GeneralizationRow, Lab, PositionArm, SweepResult,
};
pub use metrics::{evaluate, mean_std, MetricsReport};
