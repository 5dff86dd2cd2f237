//! Metrics, the pooling-autoencoder baseline and the leakage experiments.

mod baseline;
mod experiments;
mod metrics;
mod report;

pub use baseline::{train_baseline, LossyBaseline, BASELINE_BATCH, BASELINE_LR, BASELINE_WIDTHS};
pub use experiments::{
    baseline_chain, block_means, drift_experiment, non_decreasing, reverse_eval, reverse_passthrough, serial_chain,
    serial_eval, DriftCurve, DriftPipeline, DriftRun, MetricRow, SerialOutput,
};
pub use metrics::{gaussian_taps, l2_metric, linf_metric, ssim_metric, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{write_drift_table, write_frames, write_metric_table, Summary};
