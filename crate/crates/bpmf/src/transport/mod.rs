//! Asynchronous item exchange between nodes.
//!
//! Compute workers enqueue updated items; dedicated progress threads move
//! bytes so computation never blocks on the network. Three send policies
//! trade message count against overlap: `Eager` writes each item as soon as
//! it is computed, `Buffered(c)` batches `c` frames per destination before
//! writing, `Broadcast` holds everything until the phase ends. The policy
//! changes timing only — the sampled chain is policy-invariant.
//!
//! Two backends share one wire format and one endpoint state machine:
//! in-process queues (multi-node simulation in one process, with optional
//! per-write latency injection and fault hooks for tests) and TCP sockets.

mod frame;
mod inproc;
mod stats;
mod tcp;

pub use frame::{Frame, FrameKind, ItemMessage, Phase, WireError, FRAME_HEADER_LEN, WIRE_MAGIC,
                WIRE_VERSION};
pub use inproc::{Fault, InProcFabricBuilder, InProcNode};
pub use stats::{ComputeGuard, OverlapStats};
pub use tcp::{connect as tcp_connect, TcpConfig, TcpNode};

use std::collections::{HashMap, HashSet};
use std::str::FromStr;
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use stats::StatsCollector;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("destination node {dest} is not reachable")]
    Disconnected { dest: usize },
    #[error("invalid destination {dest} from node {node}")]
    InvalidDestination { node: usize, dest: usize },
    #[error("phase {phase:?} iteration {iteration} timed out; missing {missing:?}")]
    Timeout { phase: Phase, iteration: u32, missing: Vec<(Phase, u32)> },
    #[error("checksum failure on (kind {kind}, iteration {iteration}, index {index})")]
    ChecksumFailure { kind: u8, iteration: u32, index: u32 },
    #[error("duplicate frame (kind {kind}, iteration {iteration}, index {index})")]
    Duplicate { kind: u8, iteration: u32, index: u32 },
    #[error("handshake mismatch: {0}")]
    HandshakeMismatch(String),
    #[error("wire error: {0}")]
    Wire(#[from] WireError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// When an enqueued item actually hits the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendPolicy {
    /// Write each item as soon as it is computed.
    Eager,
    /// Batch this many frames per destination before writing.
    Buffered(usize),
    /// Hold everything until the phase barrier.
    Broadcast,
}

pub const DEFAULT_BUFFER_CAPACITY: usize = 64;

impl FromStr for SendPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eager" => Ok(SendPolicy::Eager),
            "broadcast" => Ok(SendPolicy::Broadcast),
            "buffered" => Ok(SendPolicy::Buffered(DEFAULT_BUFFER_CAPACITY)),
            other => {
                if let Some(cap) = other.strip_prefix("buffered:") {
                    let cap: usize =
                        cap.parse().map_err(|_| format!("bad buffer capacity in {other:?}"))?;
                    if cap == 0 {
                        return Err("buffer capacity must be at least 1".into());
                    }
                    Ok(SendPolicy::Buffered(cap))
                } else {
                    Err(format!("unknown send policy {other:?}"))
                }
            }
        }
    }
}

impl std::fmt::Display for SendPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SendPolicy::Eager => write!(f, "eager"),
            SendPolicy::Buffered(c) => write!(f, "buffered:{c}"),
            SendPolicy::Broadcast => write!(f, "broadcast"),
        }
    }
}

/// What a node must have received before a phase may complete.
#[derive(Debug, Clone, Default)]
pub struct ExpectedPhase {
    /// Item indices of the phase's side owned by peers but needed here.
    pub items: Vec<u32>,
    /// Aggregate block ids owned by peers.
    pub agg_blocks: Vec<u32>,
    /// Peers that will signal phase end.
    pub marker_peers: Vec<usize>,
}

/// Everything received for one completed phase.
#[derive(Debug, Default)]
pub struct PhaseInbox {
    pub items: Vec<(u32, Vec<f64>)>,
    pub agg_blocks: Vec<(u32, Vec<f64>)>,
}

struct Bin {
    entries: Vec<(u32, Vec<f64>)>,
    seen: HashSet<u32>,
}

impl Bin {
    fn new() -> Self {
        Bin { entries: Vec::new(), seen: HashSet::new() }
    }
}

#[derive(Default)]
struct Pending {
    bins: HashMap<(u8, u32), Bin>,
    completed: HashSet<(u8, u32)>,
}

pub(crate) enum InboxEntry {
    Blob(Vec<u8>),
    PeerClosed(usize),
}

pub(crate) struct WireWrite {
    pub dest: usize,
    pub bytes: Vec<u8>,
}

struct DestBuffer {
    bytes: Vec<u8>,
    frames: u64,
}

/// Backend-independent endpoint state: outbound buffering by policy,
/// inbound frame sorting by (kind, iteration), and the phase rendezvous.
pub(crate) struct EndpointCore {
    node_id: usize,
    num_nodes: usize,
    policy: SendPolicy,
    timeout: Duration,
    outbound: Sender<WireWrite>,
    inbox: Mutex<Receiver<InboxEntry>>,
    pending: Mutex<Pending>,
    buffers: Mutex<Vec<DestBuffer>>,
    stats: Arc<StatsCollector>,
    /// First hard transport failure seen by the progress machinery.
    failure: Arc<Mutex<Option<String>>>,
    /// Wire writes handed to the progress machinery / completed by it.
    enqueued_writes: std::sync::atomic::AtomicU64,
    completed_writes: Arc<std::sync::atomic::AtomicU64>,
}

impl EndpointCore {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        node_id: usize,
        num_nodes: usize,
        policy: SendPolicy,
        timeout: Duration,
        outbound: Sender<WireWrite>,
        inbox: Receiver<InboxEntry>,
        stats: Arc<StatsCollector>,
        failure: Arc<Mutex<Option<String>>>,
        completed_writes: Arc<std::sync::atomic::AtomicU64>,
    ) -> Self {
        let buffers =
            (0..num_nodes).map(|_| DestBuffer { bytes: Vec::new(), frames: 0 }).collect();
        EndpointCore {
            node_id,
            num_nodes,
            policy,
            timeout,
            outbound,
            inbox: Mutex::new(inbox),
            pending: Mutex::new(Pending::default()),
            buffers: Mutex::new(buffers),
            stats,
            failure,
            enqueued_writes: std::sync::atomic::AtomicU64::new(0),
            completed_writes,
        }
    }

    fn check_failure(&self) -> Result<(), TransportError> {
        if let Some(msg) = self.failure.lock().unwrap().clone() {
            return Err(TransportError::Io(std::io::Error::other(msg)));
        }
        Ok(())
    }

    fn queue_frame(&self, dest: usize, frame: &Frame) -> Result<(), TransportError> {
        if dest == self.node_id || dest >= self.num_nodes {
            return Err(TransportError::InvalidDestination { node: self.node_id, dest });
        }
        self.stats.messages_sent.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        match self.policy {
            SendPolicy::Eager => self.write(dest, frame.encode()),
            SendPolicy::Buffered(cap) => {
                let mut buffers = self.buffers.lock().unwrap();
                let buf = &mut buffers[dest];
                frame.encode_into(&mut buf.bytes);
                buf.frames += 1;
                if buf.frames >= cap as u64 {
                    let bytes = std::mem::take(&mut buf.bytes);
                    buf.frames = 0;
                    drop(buffers);
                    self.write(dest, bytes)?;
                }
                Ok(())
            }
            SendPolicy::Broadcast => {
                let mut buffers = self.buffers.lock().unwrap();
                let buf = &mut buffers[dest];
                frame.encode_into(&mut buf.bytes);
                buf.frames += 1;
                Ok(())
            }
        }
    }

    fn write(&self, dest: usize, bytes: Vec<u8>) -> Result<(), TransportError> {
        self.outbound
            .send(WireWrite { dest, bytes })
            .map_err(|_| TransportError::Disconnected { dest })?;
        self.enqueued_writes.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        Ok(())
    }

    /// Block until every enqueued wire write has left this node. Models the
    /// synchronous collective of the broadcast baseline.
    fn wait_outbound_drained(
        &self,
        phase: Phase,
        iteration: u32,
        deadline: Instant,
    ) -> Result<(), TransportError> {
        use std::sync::atomic::Ordering;
        loop {
            self.check_failure()?;
            if self.completed_writes.load(Ordering::Acquire)
                >= self.enqueued_writes.load(Ordering::Relaxed)
            {
                return Ok(());
            }
            if Instant::now() >= deadline {
                return Err(TransportError::Timeout { phase, iteration, missing: Vec::new() });
            }
            std::thread::sleep(Duration::from_micros(100));
        }
    }

    fn flush_dest(&self, dest: usize) -> Result<(), TransportError> {
        let mut buffers = self.buffers.lock().unwrap();
        let buf = &mut buffers[dest];
        if buf.frames == 0 {
            return Ok(());
        }
        let bytes = std::mem::take(&mut buf.bytes);
        buf.frames = 0;
        drop(buffers);
        self.write(dest, bytes)
    }

    fn send_item(&self, dest: usize, msg: ItemMessage) -> Result<(), TransportError> {
        self.check_failure()?;
        self.queue_frame(dest, &msg.into_frame())
    }

    fn end_phase(
        &self,
        phase: Phase,
        iteration: u32,
        agg_out: Vec<(u32, Vec<f64>)>,
        expect: &ExpectedPhase,
    ) -> Result<PhaseInbox, TransportError> {
        let marker_kind = FrameKind::marker(phase);
        {
            let pending = self.pending.lock().unwrap();
            if pending.completed.contains(&(marker_kind as u8, iteration)) {
                return Ok(PhaseInbox::default());
            }
        }

        // per peer: drain the residual item buffer, then one batch carrying
        // the aggregate blocks and the end-of-phase marker. Barrier data
        // bypasses the send policy; only item messages are policy-shaped.
        let agg_kind = FrameKind::agg(phase);
        for dest in 0..self.num_nodes {
            if dest == self.node_id {
                continue;
            }
            self.flush_dest(dest)?;
            let mut batch = Vec::new();
            let mut frames = 0u64;
            for (block, payload) in &agg_out {
                Frame { kind: agg_kind, iteration, index: *block, payload: payload.clone() }
                    .encode_into(&mut batch);
                frames += 1;
            }
            Frame {
                kind: marker_kind,
                iteration,
                index: self.node_id as u32,
                payload: Vec::new(),
            }
            .encode_into(&mut batch);
            frames += 1;
            self.stats.messages_sent.fetch_add(frames, std::sync::atomic::Ordering::Relaxed);
            self.write(dest, batch)?;
        }

        let deadline = Instant::now() + self.timeout;
        // the broadcast baseline is a synchronous collective: it returns
        // only after its own transfers completed, so nothing it sends can
        // hide under later computation
        if matches!(self.policy, SendPolicy::Broadcast) {
            self.wait_outbound_drained(phase, iteration, deadline)?;
        }

        // rendezvous: wait for expected items, aggregate blocks and markers
        let mut want_items: HashSet<u32> = expect.items.iter().copied().collect();
        let mut want_aggs: HashSet<u32> = expect.agg_blocks.iter().copied().collect();
        let mut want_markers: HashSet<u32> =
            expect.marker_peers.iter().map(|&p| p as u32).collect();
        let item_kind = FrameKind::item(phase);

        {
            // frames may have arrived before this call
            let pending = self.pending.lock().unwrap();
            for (kind, want) in [
                (item_kind, &mut want_items),
                (agg_kind, &mut want_aggs),
                (marker_kind, &mut want_markers),
            ] {
                if let Some(bin) = pending.bins.get(&(kind as u8, iteration)) {
                    want.retain(|idx| !bin.seen.contains(idx));
                }
            }
        }

        let inbox = self.inbox.lock().unwrap();
        loop {
            if want_items.is_empty() && want_aggs.is_empty() && want_markers.is_empty() {
                break;
            }
            self.check_failure()?;
            // all markers in but data missing: those frames preceded the
            // markers in stream order, so they were lost
            if want_markers.is_empty() {
                return Err(self.timeout_error(phase, iteration, &want_items, &want_aggs));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(self.timeout_error(phase, iteration, &want_items, &want_aggs));
            }
            match inbox.recv_timeout(deadline - now) {
                Ok(InboxEntry::Blob(blob)) => {
                    self.ingest_blob(&blob, |kind, iter, idx| {
                        if iter != iteration {
                            return;
                        }
                        if kind == item_kind {
                            want_items.remove(&idx);
                        } else if kind == agg_kind {
                            want_aggs.remove(&idx);
                        } else if kind == marker_kind {
                            want_markers.remove(&idx);
                        }
                    })?;
                }
                Ok(InboxEntry::PeerClosed(peer)) => {
                    if expect.marker_peers.contains(&peer) && want_markers.contains(&(peer as u32))
                    {
                        return Err(TransportError::Disconnected { dest: peer });
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(self.timeout_error(phase, iteration, &want_items, &want_aggs));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(TransportError::Disconnected { dest: self.node_id });
                }
            }
        }
        drop(inbox);

        let mut pending = self.pending.lock().unwrap();
        let items = pending
            .bins
            .remove(&(item_kind as u8, iteration))
            .map(|b| b.entries)
            .unwrap_or_default();
        let agg_blocks = pending
            .bins
            .remove(&(agg_kind as u8, iteration))
            .map(|b| b.entries)
            .unwrap_or_default();
        pending.bins.remove(&(marker_kind as u8, iteration));
        pending.completed.insert((marker_kind as u8, iteration));
        Ok(PhaseInbox { items, agg_blocks })
    }

    fn timeout_error(
        &self,
        phase: Phase,
        iteration: u32,
        want_items: &HashSet<u32>,
        want_aggs: &HashSet<u32>,
    ) -> TransportError {
        let mut missing: Vec<(Phase, u32)> =
            want_items.iter().map(|&i| (phase, i)).collect();
        missing.sort_unstable_by_key(|&(_, i)| i);
        // aggregate blocks are reported after items, tagged with the phase
        let mut aggs: Vec<(Phase, u32)> = want_aggs.iter().map(|&i| (phase, i)).collect();
        aggs.sort_unstable_by_key(|&(_, i)| i);
        missing.extend(aggs);
        TransportError::Timeout { phase, iteration, missing }
    }

    /// Decode every frame in a blob, file it, and invoke `note` with its key.
    fn ingest_blob(
        &self,
        blob: &[u8],
        mut note: impl FnMut(FrameKind, u32, u32),
    ) -> Result<(), TransportError> {
        let mut offset = 0;
        while offset < blob.len() {
            let (frame, used) = match Frame::decode(&blob[offset..]) {
                Ok(ok) => ok,
                Err(WireError::ChecksumMismatch { kind, iteration, index }) => {
                    return Err(TransportError::ChecksumFailure { kind, iteration, index });
                }
                Err(e) => return Err(e.into()),
            };
            offset += used;
            let key = (frame.kind as u8, frame.iteration);
            let mut pending = self.pending.lock().unwrap();
            let bin = pending.bins.entry(key).or_insert_with(Bin::new);
            if !bin.seen.insert(frame.index) {
                return Err(TransportError::Duplicate {
                    kind: frame.kind as u8,
                    iteration: frame.iteration,
                    index: frame.index,
                });
            }
            note(frame.kind, frame.iteration, frame.index);
            bin.entries.push((frame.index, frame.payload));
        }
        Ok(())
    }

    /// Broadcast this node's test-stat blocks and collect the expected ones.
    fn exchange_stats(
        &self,
        iteration: u32,
        mine: Vec<(u32, Vec<f64>)>,
        expected: &[u32],
    ) -> Result<Vec<(u32, Vec<f64>)>, TransportError> {
        self.check_failure()?;
        for dest in 0..self.num_nodes {
            if dest == self.node_id {
                continue;
            }
            let mut bytes = Vec::new();
            let mut frames = 0;
            for (block, payload) in &mine {
                Frame {
                    kind: FrameKind::TestStat,
                    iteration,
                    index: *block,
                    payload: payload.clone(),
                }
                .encode_into(&mut bytes);
                frames += 1;
            }
            if frames > 0 {
                self.stats
                    .messages_sent
                    .fetch_add(frames, std::sync::atomic::Ordering::Relaxed);
                self.write(dest, bytes)?;
            }
        }

        let mut want: HashSet<u32> = expected.iter().copied().collect();
        {
            let pending = self.pending.lock().unwrap();
            if let Some(bin) = pending.bins.get(&(FrameKind::TestStat as u8, iteration)) {
                want.retain(|idx| !bin.seen.contains(idx));
            }
        }
        let deadline = Instant::now() + self.timeout;
        let inbox = self.inbox.lock().unwrap();
        while !want.is_empty() {
            self.check_failure()?;
            let now = Instant::now();
            if now >= deadline {
                let mut missing: Vec<(Phase, u32)> =
                    want.iter().map(|&i| (Phase::User, i)).collect();
                missing.sort_unstable_by_key(|&(_, i)| i);
                return Err(TransportError::Timeout { phase: Phase::User, iteration, missing });
            }
            match inbox.recv_timeout(deadline - now) {
                Ok(InboxEntry::Blob(blob)) => {
                    self.ingest_blob(&blob, |kind, iter, idx| {
                        if kind == FrameKind::TestStat && iter == iteration {
                            want.remove(&idx);
                        }
                    })?;
                }
                Ok(InboxEntry::PeerClosed(_)) => {}
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(TransportError::Disconnected { dest: self.node_id });
                }
            }
        }
        drop(inbox);
        let mut pending = self.pending.lock().unwrap();
        Ok(pending
            .bins
            .remove(&(FrameKind::TestStat as u8, iteration))
            .map(|b| b.entries)
            .unwrap_or_default())
    }
}

/// Trivial endpoint for a one-node run: nothing to send, nothing to expect.
pub struct SingleNode {
    stats: Arc<StatsCollector>,
}

/// One node's connection to the rest of the run.
pub enum Transport {
    Single(SingleNode),
    InProc(inproc::InProcNode),
    Tcp(tcp::TcpNode),
}

impl Transport {
    /// Transport for a run with a single node.
    pub fn single() -> Transport {
        Transport::Single(SingleNode { stats: StatsCollector::new() })
    }

    pub fn node_id(&self) -> usize {
        match self {
            Transport::Single(_) => 0,
            Transport::InProc(n) => n.core.node_id,
            Transport::Tcp(n) => n.core.node_id,
        }
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            Transport::Single(_) => 1,
            Transport::InProc(n) => n.core.num_nodes,
            Transport::Tcp(n) => n.core.num_nodes,
        }
    }

    fn core(&self) -> Option<&EndpointCore> {
        match self {
            Transport::Single(_) => None,
            Transport::InProc(n) => Some(&n.core),
            Transport::Tcp(n) => Some(&n.core),
        }
    }

    fn stats_collector(&self) -> &Arc<StatsCollector> {
        match self {
            Transport::Single(n) => &n.stats,
            Transport::InProc(n) => &n.core.stats,
            Transport::Tcp(n) => &n.core.stats,
        }
    }

    /// Enqueue one updated item for a peer. Returns as soon as the frame is
    /// buffered or handed to the progress thread.
    pub fn send_item(&self, dest: usize, msg: ItemMessage) -> Result<(), TransportError> {
        match self.core() {
            None => Err(TransportError::InvalidDestination { node: 0, dest }),
            Some(core) => core.send_item(dest, msg),
        }
    }

    /// Flush residual buffers, announce phase end, and block until every
    /// expected item, aggregate block and peer marker has arrived. Calling
    /// again for a completed phase returns an empty inbox.
    pub fn end_phase(
        &self,
        phase: Phase,
        iteration: u32,
        agg_out: Vec<(u32, Vec<f64>)>,
        expect: &ExpectedPhase,
    ) -> Result<PhaseInbox, TransportError> {
        match self.core() {
            None => {
                debug_assert!(expect.items.is_empty() && expect.agg_blocks.is_empty());
                Ok(PhaseInbox::default())
            }
            Some(core) => core.end_phase(phase, iteration, agg_out, expect),
        }
    }

    /// All-gather of per-block test statistics at the end of an iteration.
    pub fn exchange_stats(
        &self,
        iteration: u32,
        mine: Vec<(u32, Vec<f64>)>,
        expected: &[u32],
    ) -> Result<Vec<(u32, Vec<f64>)>, TransportError> {
        match self.core() {
            None => Ok(Vec::new()),
            Some(core) => core.exchange_stats(iteration, mine, expected),
        }
    }

    /// Cumulative traffic and overlap counters.
    pub fn collect_stats(&self) -> OverlapStats {
        self.stats_collector().snapshot()
    }

    /// RAII span marking computation time for overlap accounting.
    pub fn compute_scope(&self) -> ComputeGuard {
        ComputeGuard::new(Arc::clone(self.stats_collector()))
    }
}
