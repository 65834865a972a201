//! File formats: datasets, model configuration, and fit outputs.

pub mod config;
pub mod dataset;
pub mod output;

pub use config::{parse_config_str, read_config, ModelConfig, ResponseTransform};
pub use dataset::{
    apply_covariance_overrides, read_covariance_overrides, read_dataset, read_dataset_str,
    write_dataset,
};
pub use output::{
    read_coefficients, read_curves, read_residuals, read_scan, read_summary, write_coefficients,
    write_curves, write_residuals, write_scan, write_summary, CurveRow, ResidualRow,
    SummaryContext,
};
