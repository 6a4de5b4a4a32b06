//! Run configuration, evaluation metrics and end-to-end orchestration.

mod config;
mod metrics;
mod run;
mod study;

pub use config::{Ablation, EvalConfig, RunConfig};
pub use metrics::{
    align_warp, blurred_baseline, nearest_rgb_view, score, strip, EvalReport, MetricReport, ViewMetric,
};
pub use run::{
    baseline_images, evaluate_run, make_session, reconstruct, render_test_views, score_views, RunOutput,
};
pub use study::{ordering_variants, run_study, StudyRow};
