//! Classification metrics, evaluation, latency benchmarks and reports.

mod bench;
mod evaluate;
mod metrics;
mod report;

pub use bench::{bench_activations, bench_model, host_device, ActivationTiming, LatencyReport, MIN_TIMED_ITERS};
pub use evaluate::{argmax_rows, evaluate, MetricsReport};
pub use metrics::{f1_scores, ConfusionMatrix, F1Scores};
pub use report::{report, LatencySection, MetricsSection, ModelSection, Report};
