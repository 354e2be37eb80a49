//! Compute/communication overlap accounting.
//!
//! The sender-side progress machinery records an interval per wire write;
//! the sampler records an interval per phase of computation. `both` is the
//! total time where a comm interval and a compute interval coincide, i.e.
//! communication hidden under computation.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Monotone counters plus the three Fig.-style durations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverlapStats {
    pub compute_time: Duration,
    pub comm_time: Duration,
    pub both_time: Duration,
    pub bytes_sent: u64,
    pub messages_sent: u64,
    pub wire_writes: u64,
}

impl OverlapStats {
    /// Share of communication hidden under computation; 0 when nothing was
    /// communicated.
    pub fn overlap_fraction(&self) -> f64 {
        let comm = self.comm_time.as_secs_f64();
        if comm <= 0.0 {
            0.0
        } else {
            self.both_time.as_secs_f64() / comm
        }
    }
}

#[derive(Debug)]
pub(crate) struct StatsCollector {
    origin: Instant,
    comm_intervals: Mutex<Vec<(f64, f64)>>,
    compute_intervals: Mutex<Vec<(f64, f64)>>,
    pub(crate) bytes_sent: AtomicU64,
    pub(crate) messages_sent: AtomicU64,
    pub(crate) wire_writes: AtomicU64,
}

impl StatsCollector {
    pub fn new() -> Arc<Self> {
        Arc::new(StatsCollector {
            origin: Instant::now(),
            comm_intervals: Mutex::new(Vec::new()),
            compute_intervals: Mutex::new(Vec::new()),
            bytes_sent: AtomicU64::new(0),
            messages_sent: AtomicU64::new(0),
            wire_writes: AtomicU64::new(0),
        })
    }

    pub fn record_comm(&self, start: Instant, end: Instant) {
        let s = start.duration_since(self.origin).as_secs_f64();
        let e = end.duration_since(self.origin).as_secs_f64();
        self.comm_intervals.lock().unwrap().push((s, e));
    }

    pub fn record_compute(&self, start: Instant, end: Instant) {
        let s = start.duration_since(self.origin).as_secs_f64();
        let e = end.duration_since(self.origin).as_secs_f64();
        self.compute_intervals.lock().unwrap().push((s, e));
    }

    pub fn snapshot(&self) -> OverlapStats {
        let comm = merge(self.comm_intervals.lock().unwrap().clone());
        let compute = merge(self.compute_intervals.lock().unwrap().clone());
        let comm_total: f64 = comm.iter().map(|(s, e)| e - s).sum();
        let compute_total: f64 = compute.iter().map(|(s, e)| e - s).sum();
        let both = intersection_length(&comm, &compute);
        OverlapStats {
            compute_time: Duration::from_secs_f64(compute_total),
            comm_time: Duration::from_secs_f64(comm_total),
            both_time: Duration::from_secs_f64(both),
            bytes_sent: self.bytes_sent.load(Ordering::Relaxed),
            messages_sent: self.messages_sent.load(Ordering::Relaxed),
            wire_writes: self.wire_writes.load(Ordering::Relaxed),
        }
    }
}

/// RAII guard marking a span of computation.
pub struct ComputeGuard {
    collector: Arc<StatsCollector>,
    start: Instant,
}

impl ComputeGuard {
    pub(crate) fn new(collector: Arc<StatsCollector>) -> Self {
        ComputeGuard { collector, start: Instant::now() }
    }
}

impl Drop for ComputeGuard {
    fn drop(&mut self) {
        self.collector.record_compute(self.start, Instant::now());
    }
}

fn merge(mut intervals: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
    for (s, e) in intervals {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Total length of the intersection of two merged interval lists.
fn intersection_length(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}
