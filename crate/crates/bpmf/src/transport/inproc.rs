//! In-process multi-node fabric: real concurrency, simulated wire.
//!
//! Every simulated node gets an endpoint whose progress thread pops wire
//! writes, spends the injected latency, and pushes the bytes into the
//! destination inbox. Fault hooks drop or corrupt a chosen write for
//! protocol tests.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::frame::FRAME_HEADER_LEN;
use super::stats::StatsCollector;
use super::{EndpointCore, InboxEntry, SendPolicy, Transport, WireWrite};

/// Inject a fault on the n-th wire write (1-based) from one node to another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Silently drop the write.
    DropWrite { from: usize, to: usize, nth: u64 },
    /// Flip one payload byte of the first frame in the write.
    CorruptWrite { from: usize, to: usize, nth: u64 },
}

pub struct InProcFabricBuilder {
    nodes: usize,
    policy: SendPolicy,
    timeout: Duration,
    latency_per_write: Duration,
    latency_per_byte: Duration,
    fault: Option<Fault>,
}

impl InProcFabricBuilder {
    pub fn new(nodes: usize) -> Self {
        InProcFabricBuilder {
            nodes,
            policy: SendPolicy::Eager,
            timeout: Duration::from_secs(60),
            latency_per_write: Duration::ZERO,
            latency_per_byte: Duration::ZERO,
            fault: None,
        }
    }

    pub fn policy(mut self, policy: SendPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Sender-side busy time per wire write, to make overlap measurable.
    pub fn latency_per_write(mut self, latency: Duration) -> Self {
        self.latency_per_write = latency;
        self
    }

    /// Additional busy time per transmitted byte (bandwidth model).
    pub fn latency_per_byte(mut self, latency: Duration) -> Self {
        self.latency_per_byte = latency;
        self
    }

    pub fn fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    /// Build one connected transport per node.
    pub fn build(self) -> Vec<Transport> {
        assert!(self.nodes >= 1);
        let mut inbox_txs: Vec<Sender<InboxEntry>> = Vec::with_capacity(self.nodes);
        let mut inbox_rxs: Vec<Receiver<InboxEntry>> = Vec::with_capacity(self.nodes);
        for _ in 0..self.nodes {
            let (tx, rx) = channel();
            inbox_txs.push(tx);
            inbox_rxs.push(rx);
        }

        let mut transports = Vec::with_capacity(self.nodes);
        for (node_id, inbox_rx) in inbox_rxs.into_iter().enumerate() {
            let (out_tx, out_rx) = channel::<WireWrite>();
            let stats = StatsCollector::new();
            let failure = Arc::new(Mutex::new(None));
            let completed = Arc::new(std::sync::atomic::AtomicU64::new(0));
            spawn_progress(
                node_id,
                out_rx,
                inbox_txs.clone(),
                Arc::clone(&stats),
                Arc::clone(&completed),
                self.latency_per_write,
                self.latency_per_byte,
                self.fault,
            );
            let core = EndpointCore::new(
                node_id,
                self.nodes,
                self.policy,
                self.timeout,
                out_tx,
                inbox_rx,
                stats,
                failure,
                completed,
            );
            transports.push(Transport::InProc(InProcNode { core }));
        }
        transports
    }
}

pub struct InProcNode {
    pub(crate) core: EndpointCore,
}

#[allow(clippy::too_many_arguments)]
fn spawn_progress(
    node_id: usize,
    out_rx: Receiver<WireWrite>,
    inbox_txs: Vec<Sender<InboxEntry>>,
    stats: Arc<StatsCollector>,
    completed: Arc<std::sync::atomic::AtomicU64>,
    latency: Duration,
    latency_per_byte: Duration,
    fault: Option<Fault>,
) {
    std::thread::Builder::new()
        .name(format!("inproc-progress-{node_id}"))
        .spawn(move || {
            let mut write_counts = vec![0u64; inbox_txs.len()];
            for WireWrite { dest, mut bytes } in out_rx {
                let start = std::time::Instant::now();
                let wire_time = latency + latency_per_byte * bytes.len() as u32;
                if !wire_time.is_zero() {
                    std::thread::sleep(wire_time);
                }
                stats.wire_writes.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                stats
                    .bytes_sent
                    .fetch_add(bytes.len() as u64, std::sync::atomic::Ordering::Relaxed);
                stats.record_comm(start, std::time::Instant::now());

                write_counts[dest] += 1;
                let nth = write_counts[dest];
                let mut deliver = true;
                match fault {
                    Some(Fault::DropWrite { from, to, nth: n })
                        if from == node_id && to == dest && n == nth =>
                    {
                        deliver = false;
                    }
                    Some(Fault::CorruptWrite { from, to, nth: n })
                        if from == node_id && to == dest && n == nth =>
                    {
                        // flip a payload byte of the first frame
                        if bytes.len() > FRAME_HEADER_LEN + 4 {
                            bytes[FRAME_HEADER_LEN] ^= 0x01;
                        }
                    }
                    _ => {}
                }
                if deliver {
                    // receiver gone means the run is over on that node
                    let _ = inbox_txs[dest].send(InboxEntry::Blob(bytes));
                }
                completed.fetch_add(1, std::sync::atomic::Ordering::Release);
            }
        })
        .expect("spawn progress thread");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{ExpectedPhase, ItemMessage, Phase, TransportError};

    fn msg(phase: Phase, iteration: u32, index: u32) -> ItemMessage {
        ItemMessage::new(phase, iteration, index, vec![index as f64, -1.5])
    }

    #[test]
    fn buffered_below_capacity_writes_nothing() {
        let nodes = InProcFabricBuilder::new(2).policy(SendPolicy::Buffered(4)).build();
        for i in 0..3 {
            nodes[0].send_item(1, msg(Phase::Movie, 0, i)).unwrap();
        }
        std::thread::sleep(Duration::from_millis(30));
        assert_eq!(nodes[0].collect_stats().wire_writes, 0);
    }

    #[test]
    fn buffered_at_capacity_writes_once() {
        let nodes = InProcFabricBuilder::new(2).policy(SendPolicy::Buffered(4)).build();
        for i in 0..4 {
            nodes[0].send_item(1, msg(Phase::Movie, 0, i)).unwrap();
        }
        std::thread::sleep(Duration::from_millis(50));
        assert_eq!(nodes[0].collect_stats().wire_writes, 1);
        assert_eq!(nodes[0].collect_stats().messages_sent, 4);
    }

    #[test]
    fn eager_writes_per_item() {
        let nodes = InProcFabricBuilder::new(2).policy(SendPolicy::Eager).build();
        for i in 0..4 {
            nodes[0].send_item(1, msg(Phase::Movie, 0, i)).unwrap();
        }
        std::thread::sleep(Duration::from_millis(50));
        assert_eq!(nodes[0].collect_stats().wire_writes, 4);
    }

    #[test]
    fn buffered_write_count_law() {
        // ⌈sends/cap⌉ wire writes per destination and phase, marker included
        let cap = 8;
        let sends = 29u32;
        let nodes = InProcFabricBuilder::new(2).policy(SendPolicy::Buffered(cap)).build();
        let expect_a = ExpectedPhase {
            items: Vec::new(),
            agg_blocks: Vec::new(),
            marker_peers: vec![1],
        };
        let expect_b = ExpectedPhase {
            items: (0..sends).collect(),
            agg_blocks: Vec::new(),
            marker_peers: vec![0],
        };
        let b = std::thread::scope(|s| {
            let h = s.spawn(|| {
                nodes[1].end_phase(Phase::Movie, 0, Vec::new(), &expect_b).unwrap()
            });
            for i in 0..sends {
                nodes[0].send_item(1, msg(Phase::Movie, 0, i)).unwrap();
            }
            nodes[0].end_phase(Phase::Movie, 0, Vec::new(), &expect_a).unwrap();
            h.join().unwrap()
        });
        assert_eq!(b.items.len(), sends as usize);
        // item frames flow through the buffer; the marker batch is one more
        let expected_writes = (sends as u64).div_ceil(cap as u64) + 1;
        assert_eq!(nodes[0].collect_stats().wire_writes, expected_writes);
    }

    #[test]
    fn loopback_roundtrip_bitwise() {
        let nodes = InProcFabricBuilder::new(2).policy(SendPolicy::Eager).build();
        let payload = vec![1.0f64 / 3.0, -2.5e-17, 4.0];
        let out = ItemMessage::new(Phase::User, 3, 11, payload.clone());
        let inbox = std::thread::scope(|s| {
            let h = s.spawn(|| {
                let expect = ExpectedPhase {
                    items: vec![11],
                    agg_blocks: Vec::new(),
                    marker_peers: vec![0],
                };
                nodes[1].end_phase(Phase::User, 3, Vec::new(), &expect).unwrap()
            });
            nodes[0].send_item(1, out).unwrap();
            let expect = ExpectedPhase {
                items: Vec::new(),
                agg_blocks: Vec::new(),
                marker_peers: vec![1],
            };
            nodes[0].end_phase(Phase::User, 3, Vec::new(), &expect).unwrap();
            h.join().unwrap()
        });
        assert_eq!(inbox.items.len(), 1);
        assert_eq!(inbox.items[0].0, 11);
        let bits_sent: Vec<u64> = payload.iter().map(|v| v.to_bits()).collect();
        let bits_got: Vec<u64> = inbox.items[0].1.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_sent, bits_got);
    }

    #[test]
    fn dropped_write_times_out_with_missing_list() {
        let nodes = InProcFabricBuilder::new(2)
            .policy(SendPolicy::Eager)
            .timeout(Duration::from_millis(300))
            .fault(Fault::DropWrite { from: 0, to: 1, nth: 2 })
            .build();
        std::thread::scope(|s| {
            let h = s.spawn(|| {
                let expect = ExpectedPhase {
                    items: vec![5, 6, 7],
                    agg_blocks: Vec::new(),
                    marker_peers: vec![0],
                };
                let err = nodes[1].end_phase(Phase::Movie, 1, Vec::new(), &expect).unwrap_err();
                match err {
                    TransportError::Timeout { missing, .. } => {
                        assert_eq!(missing, vec![(Phase::Movie, 6)]);
                    }
                    other => panic!("expected timeout, got {other:?}"),
                }
            });
            for i in [5u32, 6, 7] {
                nodes[0].send_item(1, msg(Phase::Movie, 1, i)).unwrap();
            }
            let expect = ExpectedPhase {
                items: Vec::new(),
                agg_blocks: Vec::new(),
                marker_peers: vec![1],
            };
            // peer cannot finish; our own wait would block on its marker
            let _ = nodes[0].end_phase(
                Phase::Movie,
                1,
                Vec::new(),
                &ExpectedPhase { marker_peers: Vec::new(), ..expect },
            );
            h.join().unwrap();
        });
    }

    #[test]
    fn corrupted_write_reports_checksum_failure() {
        let nodes = InProcFabricBuilder::new(2)
            .policy(SendPolicy::Eager)
            .timeout(Duration::from_millis(300))
            .fault(Fault::CorruptWrite { from: 0, to: 1, nth: 1 })
            .build();
        std::thread::scope(|s| {
            let h = s.spawn(|| {
                let expect = ExpectedPhase {
                    items: vec![9],
                    agg_blocks: Vec::new(),
                    marker_peers: vec![0],
                };
                let err = nodes[1].end_phase(Phase::Movie, 0, Vec::new(), &expect).unwrap_err();
                match err {
                    TransportError::ChecksumFailure { index: 9, .. } => {}
                    other => panic!("expected checksum failure, got {other:?}"),
                }
            });
            nodes[0].send_item(1, msg(Phase::Movie, 0, 9)).unwrap();
            let _ = nodes[0].end_phase(
                Phase::Movie,
                0,
                Vec::new(),
                &ExpectedPhase::default(),
            );
            h.join().unwrap();
        });
    }

    #[test]
    fn delivery_soak_exactly_once() {
        // many items, several phases, no loss and no duplicates
        let nodes = InProcFabricBuilder::new(3).policy(SendPolicy::Buffered(7)).build();
        for iteration in 0..5u32 {
            std::thread::scope(|s| {
                let mut handles = Vec::new();
                for (id, node) in nodes.iter().enumerate() {
                    handles.push(s.spawn(move || {
                        // node owns items id*100..id*100+40, sends to both peers
                        for i in 0..40u32 {
                            let idx = id as u32 * 100 + i;
                            for dest in 0..3 {
                                if dest != id {
                                    node.send_item(
                                        dest,
                                        ItemMessage::new(
                                            Phase::User,
                                            iteration,
                                            idx,
                                            vec![idx as f64],
                                        ),
                                    )
                                    .unwrap();
                                }
                            }
                        }
                        let mut items: Vec<u32> = (0..3)
                            .filter(|&p| p != id)
                            .flat_map(|p| (0..40).map(move |i| p as u32 * 100 + i))
                            .collect();
                        items.sort_unstable();
                        let expect = ExpectedPhase {
                            items: items.clone(),
                            agg_blocks: Vec::new(),
                            marker_peers: (0..3).filter(|&p| p != id).collect(),
                        };
                        let inbox =
                            node.end_phase(Phase::User, iteration, Vec::new(), &expect).unwrap();
                        let mut got: Vec<u32> = inbox.items.iter().map(|&(i, _)| i).collect();
                        got.sort_unstable();
                        assert_eq!(got, items);
                    }));
                }
                for h in handles {
                    h.join().unwrap();
                }
            });
        }
    }

    #[test]
    fn end_phase_idempotent() {
        let nodes = InProcFabricBuilder::new(2).build();
        std::thread::scope(|s| {
            let h = s.spawn(|| {
                let expect = ExpectedPhase {
                    items: Vec::new(),
                    agg_blocks: Vec::new(),
                    marker_peers: vec![0],
                };
                nodes[1].end_phase(Phase::Movie, 0, Vec::new(), &expect).unwrap();
                // second call returns immediately, empty
                let again = nodes[1].end_phase(Phase::Movie, 0, Vec::new(), &expect).unwrap();
                assert!(again.items.is_empty());
            });
            nodes[0]
                .end_phase(
                    Phase::Movie,
                    0,
                    Vec::new(),
                    &ExpectedPhase {
                        items: Vec::new(),
                        agg_blocks: Vec::new(),
                        marker_peers: vec![1],
                    },
                )
                .unwrap();
            h.join().unwrap();
        });
    }
}
