//! Per-iteration metrics in CSV (for plotting) and structured log lines
//! (for machine parsing).

use std::io::Write;

use crate::sampler::IterationStats;
use crate::transport::OverlapStats;

use super::EngineError;

pub const METRICS_HEADER: &str = "iteration,phase_u_ms,phase_v_ms,rmse_sample,rmse_avg,\
updates_per_sec,comm_ms,both_ms,bytes_sent,msgs_sent";

/// One metrics CSV row. Traffic fields are per-iteration deltas of the
/// transport's cumulative counters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub iteration: u32,
    pub phase_u_ms: f64,
    pub phase_v_ms: f64,
    pub rmse_sample: f64,
    pub rmse_avg: f64,
    pub updates_per_sec: f64,
    pub comm_ms: f64,
    pub both_ms: f64,
    pub bytes_sent: u64,
    pub msgs_sent: u64,
}

impl MetricsRecord {
    /// Build a record from iteration stats, subtracting the previous
    /// cumulative transport snapshot.
    pub fn from_stats(stats: &IterationStats, previous: &OverlapStats) -> MetricsRecord {
        let t = &stats.transport;
        MetricsRecord {
            iteration: stats.iteration,
            phase_u_ms: stats.phase_user_secs * 1e3,
            phase_v_ms: stats.phase_movie_secs * 1e3,
            rmse_sample: stats.rmse_sample,
            rmse_avg: stats.rmse_avg,
            updates_per_sec: stats.updates_per_sec,
            comm_ms: (t.comm_time.as_secs_f64() - previous.comm_time.as_secs_f64()) * 1e3,
            both_ms: (t.both_time.as_secs_f64() - previous.both_time.as_secs_f64()) * 1e3,
            bytes_sent: t.bytes_sent - previous.bytes_sent,
            msgs_sent: t.messages_sent - previous.messages_sent,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.3},{:.3},{:.6},{:.6},{:.3},{:.3},{:.3},{},{}",
            self.iteration,
            self.phase_u_ms,
            self.phase_v_ms,
            self.rmse_sample,
            self.rmse_avg,
            self.updates_per_sec,
            self.comm_ms,
            self.both_ms,
            self.bytes_sent,
            self.msgs_sent
        )
    }

    pub fn log_line(&self) -> String {
        format!(
            "metrics iteration={} phase_u_ms={:.3} phase_v_ms={:.3} rmse_sample={:.6} \
             rmse_avg={:.6} updates_per_sec={:.3} comm_ms={:.3} both_ms={:.3} \
             bytes_sent={} msgs_sent={}",
            self.iteration,
            self.phase_u_ms,
            self.phase_v_ms,
            self.rmse_sample,
            self.rmse_avg,
            self.updates_per_sec,
            self.comm_ms,
            self.both_ms,
            self.bytes_sent,
            self.msgs_sent
        )
    }
}

/// CSV file plus optional structured-log file, header written eagerly so an
/// aborted run still leaves a parseable file.
pub struct MetricsSink {
    csv: std::io::BufWriter<std::fs::File>,
    log: Option<std::io::BufWriter<std::fs::File>>,
    csv_path: String,
}

impl MetricsSink {
    pub fn create(
        csv_path: &std::path::Path,
        log_path: Option<&std::path::Path>,
    ) -> Result<MetricsSink, EngineError> {
        let io_err = |path: &std::path::Path, source| EngineError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut csv = std::io::BufWriter::new(
            std::fs::File::create(csv_path).map_err(|e| io_err(csv_path, e))?,
        );
        writeln!(csv, "{METRICS_HEADER}").map_err(|e| io_err(csv_path, e))?;
        csv.flush().map_err(|e| io_err(csv_path, e))?;
        let log = match log_path {
            Some(p) => Some(std::io::BufWriter::new(
                std::fs::File::create(p).map_err(|e| io_err(p, e))?,
            )),
            None => None,
        };
        Ok(MetricsSink { csv, log, csv_path: csv_path.display().to_string() })
    }

    pub fn emit(&mut self, record: &MetricsRecord) -> Result<(), EngineError> {
        let err = |source: std::io::Error| EngineError::Metrics(format!(
            "writing {}: {source}",
            self.csv_path
        ));
        writeln!(self.csv, "{}", record.csv_line()).map_err(err)?;
        self.csv.flush().map_err(|e| {
            EngineError::Metrics(format!("flushing {}: {e}", self.csv_path))
        })?;
        if let Some(log) = &mut self.log {
            writeln!(log, "{}", record.log_line())
                .and_then(|_| log.flush())
                .map_err(|e| EngineError::Metrics(format!("writing log: {e}")))?;
        }
        Ok(())
    }
}
