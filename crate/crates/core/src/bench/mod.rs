//! Metrics, baselines and the benchmark runner.

mod baselines;
mod metrics;
mod runner;

pub use baselines::{
    coordinate_descent, HistoricalAverage, LinearBaseline, LinearKind, Mlp, LAMBDA_GRID, MLP_HIDDEN,
};
pub use metrics::{channel_metrics, compute_metrics, MetricPair};
pub use runner::{run_benchmark, BenchConfig, BenchReport, BenchRow, Method, Suite};
