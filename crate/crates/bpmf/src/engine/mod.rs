//! Run orchestration: configuration, pipeline, metrics.

mod config;
mod metrics;
mod pipeline;

pub use config::{Backend, DataFormat, EngineError, RunConfig};
pub use metrics::{MetricsRecord, MetricsSink};
pub use pipeline::{execute, EngineReport};
