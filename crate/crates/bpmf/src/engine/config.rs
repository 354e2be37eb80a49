//! Run configuration with a parse/print round trip.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::partition::PartitionError;
use crate::ratings::RatingsError;
use crate::sampler::SamplerError;
use crate::transport::{SendPolicy, TransportError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] RatingsError),
    #[error("partitioning error: {0}")]
    Partition(#[from] PartitionError),
    #[error("transport error: {0}")]
    Transport(#[from] TransportError),
    #[error("sampler error: {0}")]
    Sampler(SamplerError),
    #[error("metrics error: {0}")]
    Metrics(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<SamplerError> for EngineError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Transport(t) => EngineError::Transport(t),
            other => EngineError::Sampler(other),
        }
    }
}

impl EngineError {
    /// Process exit code: 2 config, 3 data, 4 transport, 5 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Config(_) => 2,
            EngineError::Data(_) => 3,
            EngineError::Partition(_) => 3,
            EngineError::Transport(_) => 4,
            EngineError::Sampler(SamplerError::Transport(_)) => 4,
            EngineError::Sampler(_) => 5,
            EngineError::Metrics(_) => 5,
            EngineError::Io { .. } => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    MatrixMarket,
    Csv,
}

impl FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mm" => Ok(DataFormat::MatrixMarket),
            "csv" => Ok(DataFormat::Csv),
            other => Err(format!("unknown format {other:?} (expected mm or csv)")),
        }
    }
}

impl std::fmt::Display for DataFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataFormat::MatrixMarket => write!(f, "mm"),
            DataFormat::Csv => write!(f, "csv"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    InProc,
    Tcp,
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(Backend::InProc),
            "tcp" => Ok(Backend::Tcp),
            other => Err(format!("unknown backend {other:?} (expected inproc or tcp)")),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::InProc => write!(f, "inproc"),
            Backend::Tcp => write!(f, "tcp"),
        }
    }
}

/// Everything one run needs. `to_text`/`from_text` round-trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: PathBuf,
    pub format: DataFormat,
    pub test_fraction: f64,
    pub k: usize,
    pub alpha: f64,
    pub iterations: u32,
    pub burnin: u32,
    pub seed: u64,
    pub workers: usize,
    pub nodes: usize,
    pub node_id: usize,
    pub peers: Vec<String>,
    pub backend: Backend,
    pub policy: SendPolicy,
    pub center: bool,
    pub clamp: bool,
    pub out: PathBuf,
    pub checkpoint_every: u32,
    pub resume: Option<PathBuf>,
    pub csv_delimiter: u8,
    pub csv_has_header: bool,
    pub phase_timeout: Duration,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: PathBuf::from("train.mtx"),
            format: DataFormat::MatrixMarket,
            test_fraction: 0.2,
            k: 50,
            alpha: 2.0,
            iterations: 100,
            burnin: 20,
            seed: 42,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            nodes: 1,
            node_id: 0,
            peers: Vec::new(),
            backend: Backend::InProc,
            policy: SendPolicy::Buffered(crate::transport::DEFAULT_BUFFER_CAPACITY),
            center: true,
            clamp: false,
            out: PathBuf::from("bpmf-out"),
            checkpoint_every: 0,
            resume: None,
            csv_delimiter: b',',
            csv_has_header: true,
            phase_timeout: Duration::from_secs(60),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.node_id >= self.nodes {
            return Err(EngineError::Config(format!(
                "node-id {} out of range for {} nodes",
                self.node_id, self.nodes
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(EngineError::Config(format!(
                "test-fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        if self.backend == Backend::Tcp && self.nodes > 1 && self.peers.len() != self.nodes {
            return Err(EngineError::Config(format!(
                "tcp backend needs one peer endpoint per node ({} nodes, {} peers)",
                self.nodes,
                self.peers.len()
            )));
        }
        Ok(())
    }

    /// Digest pinned in the transport handshake; all processes of one run
    /// must agree on it.
    pub fn run_digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut absorb = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        absorb(self.seed);
        absorb(self.k as u64);
        absorb(self.alpha.to_bits());
        absorb(self.iterations as u64);
        absorb(self.burnin as u64);
        absorb(self.test_fraction.to_bits());
        absorb(self.center as u64);
        absorb(self.clamp as u64);
        absorb(self.nodes as u64);
        h
    }

    /// Key-value text form (one `key value` pair per line).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        use std::fmt::Write;
        writeln!(s, "train {}", self.train.display()).unwrap();
        writeln!(s, "format {}", self.format).unwrap();
        writeln!(s, "test-fraction {}", self.test_fraction).unwrap();
        writeln!(s, "k {}", self.k).unwrap();
        writeln!(s, "alpha {}", self.alpha).unwrap();
        writeln!(s, "iterations {}", self.iterations).unwrap();
        writeln!(s, "burnin {}", self.burnin).unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "workers {}", self.workers).unwrap();
        writeln!(s, "nodes {}", self.nodes).unwrap();
        writeln!(s, "node-id {}", self.node_id).unwrap();
        writeln!(s, "peers {}", self.peers.join(",")).unwrap();
        writeln!(s, "backend {}", self.backend).unwrap();
        writeln!(s, "policy {}", self.policy).unwrap();
        writeln!(s, "center {}", if self.center { "on" } else { "off" }).unwrap();
        writeln!(s, "clamp {}", if self.clamp { "on" } else { "off" }).unwrap();
        writeln!(s, "out {}", self.out.display()).unwrap();
        writeln!(s, "checkpoint-every {}", self.checkpoint_every).unwrap();
        if let Some(resume) = &self.resume {
            writeln!(s, "resume {}", resume.display()).unwrap();
        }
        let delim = if self.csv_delimiter == b'\t' {
            "tab".to_string()
        } else {
            (self.csv_delimiter as char).to_string()
        };
        writeln!(s, "csv-delimiter {delim}").unwrap();
        writeln!(s, "csv-has-header {}", self.csv_has_header).unwrap();
        writeln!(s, "phase-timeout-ms {}", self.phase_timeout.as_millis()).unwrap();
        s
    }

    /// Parse the text form produced by [`RunConfig::to_text`].
    pub fn from_text(text: &str) -> Result<RunConfig, EngineError> {
        let mut cfg = RunConfig { resume: None, ..Default::default() };
        let bad = |line: &str, what: &str| {
            EngineError::Config(format!("bad config line {line:?}: {what}"))
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(' ').unwrap_or((line, ""));
            let value = value.trim();
            match key {
                "train" => cfg.train = PathBuf::from(value),
                "format" => cfg.format = value.parse().map_err(|e: String| bad(line, &e))?,
                "test-fraction" => {
                    cfg.test_fraction = value.parse().map_err(|_| bad(line, "not a float"))?
                }
                "k" => cfg.k = value.parse().map_err(|_| bad(line, "not an integer"))?,
                "alpha" => cfg.alpha = value.parse().map_err(|_| bad(line, "not a float"))?,
                "iterations" => {
                    cfg.iterations = value.parse().map_err(|_| bad(line, "not an integer"))?
                }
                "burnin" => cfg.burnin = value.parse().map_err(|_| bad(line, "not an integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(line, "not an integer"))?,
                "workers" => {
                    cfg.workers = value.parse().map_err(|_| bad(line, "not an integer"))?
                }
                "nodes" => cfg.nodes = value.parse().map_err(|_| bad(line, "not an integer"))?,
                "node-id" => {
                    cfg.node_id = value.parse().map_err(|_| bad(line, "not an integer"))?
                }
                "peers" => {
                    cfg.peers = if value.is_empty() {
                        Vec::new()
                    } else {
                        value.split(',').map(str::to_string).collect()
                    }
                }
                "backend" => cfg.backend = value.parse().map_err(|e: String| bad(line, &e))?,
                "policy" => cfg.policy = value.parse().map_err(|e: String| bad(line, &e))?,
                "center" => cfg.center = parse_on_off(value).ok_or_else(|| bad(line, "on|off"))?,
                "clamp" => cfg.clamp = parse_on_off(value).ok_or_else(|| bad(line, "on|off"))?,
                "out" => cfg.out = PathBuf::from(value),
                "checkpoint-every" => {
                    cfg.checkpoint_every = value.parse().map_err(|_| bad(line, "not an integer"))?
                }
                "resume" => cfg.resume = Some(PathBuf::from(value)),
                "csv-delimiter" => {
                    if value == "tab" {
                        cfg.csv_delimiter = b'\t';
                    } else {
                        let mut chars = value.chars();
                        let c = chars.next().ok_or_else(|| bad(line, "empty delimiter"))?;
                        if chars.next().is_some() || !c.is_ascii() {
                            return Err(bad(line, "delimiter must be one ascii char"));
                        }
                        cfg.csv_delimiter = c as u8;
                    }
                }
                "csv-has-header" => {
                    cfg.csv_has_header = value.parse().map_err(|_| bad(line, "true|false"))?
                }
                "phase-timeout-ms" => {
                    cfg.phase_timeout = Duration::from_millis(
                        value.parse().map_err(|_| bad(line, "not an integer"))?,
                    )
                }
                _ => return Err(bad(line, "unknown key")),
            }
        }
        Ok(cfg)
    }
}

fn parse_on_off(v: &str) -> Option<bool> {
    match v {
        "on" => Some(true),
        "off" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_default() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn text_roundtrip_customized() {
        let cfg = RunConfig {
            train: PathBuf::from("/data/x.mtx"),
            format: DataFormat::Csv,
            test_fraction: 0.125,
            k: 16,
            alpha: 2.5,
            iterations: 40,
            burnin: 10,
            seed: 777,
            workers: 8,
            nodes: 4,
            node_id: 2,
            peers: vec!["a:1".into(), "b:2".into(), "c:3".into(), "d:4".into()],
            backend: Backend::Tcp,
            policy: SendPolicy::Eager,
            center: false,
            clamp: true,
            out: PathBuf::from("out-dir"),
            checkpoint_every: 5,
            resume: Some(PathBuf::from("prev/ckpt")),
            csv_delimiter: b'\t',
            csv_has_header: false,
            phase_timeout: Duration::from_millis(1500),
        };
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_catches_bad_node_id() {
        let cfg = RunConfig { nodes: 2, node_id: 2, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(EngineError::Config(_))));
    }

    #[test]
    fn digest_tracks_chain_relevant_fields() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.run_digest(), b.run_digest());
        b.seed += 1;
        assert_ne!(a.run_digest(), b.run_digest());
        let mut c = RunConfig::default();
        c.out = PathBuf::from("elsewhere"); // output path is not chain-relevant
        assert_eq!(a.run_digest(), c.run_digest());
    }
}
