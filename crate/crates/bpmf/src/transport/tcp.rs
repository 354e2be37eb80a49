//! TCP backend: one duplex stream per node pair, length-structured frames.
//!
//! Node `i` listens on `endpoints[i]`; for every pair `(i, j)` with `i < j`
//! the higher id connects to the lower. The 29-byte handshake pins node id,
//! node count, latent dimension and a run digest so mismatched processes
//! abort instead of desynchronizing.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::frame::{FRAME_HEADER_LEN, WIRE_MAGIC, WIRE_VERSION};
use super::stats::StatsCollector;
use super::{EndpointCore, InboxEntry, SendPolicy, Transport, TransportError, WireWrite};

const HELLO_LEN: usize = 29;

#[derive(Debug, Clone)]
pub struct TcpConfig {
    pub node_id: usize,
    /// One `host:port` per node, in node-id order; entry `node_id` is the
    /// local listen address.
    pub endpoints: Vec<String>,
    pub policy: SendPolicy,
    pub phase_timeout: Duration,
    pub connect_timeout: Duration,
    /// Latent dimension, validated against every peer.
    pub k: usize,
    /// Digest of the run configuration; all nodes must agree.
    pub run_digest: u64,
}

fn encode_hello(node_id: u32, num_nodes: u32, k: u32, digest: u64) -> [u8; HELLO_LEN] {
    let mut out = [0u8; HELLO_LEN];
    out[0..4].copy_from_slice(&WIRE_MAGIC);
    out[4] = WIRE_VERSION;
    out[5..9].copy_from_slice(&node_id.to_le_bytes());
    out[9..13].copy_from_slice(&num_nodes.to_le_bytes());
    out[13..17].copy_from_slice(&k.to_le_bytes());
    out[17..25].copy_from_slice(&digest.to_le_bytes());
    let crc = crc32fast::hash(&out[0..25]);
    out[25..29].copy_from_slice(&crc.to_le_bytes());
    out
}

fn decode_hello(buf: &[u8; HELLO_LEN]) -> Result<(u32, u32, u32, u64), TransportError> {
    if buf[0..4] != WIRE_MAGIC {
        return Err(TransportError::HandshakeMismatch("bad magic".into()));
    }
    if buf[4] != WIRE_VERSION {
        return Err(TransportError::HandshakeMismatch(format!(
            "peer wire version {} vs {}",
            buf[4], WIRE_VERSION
        )));
    }
    let crc = u32::from_le_bytes(buf[25..29].try_into().unwrap());
    if crc != crc32fast::hash(&buf[0..25]) {
        return Err(TransportError::HandshakeMismatch("corrupt hello".into()));
    }
    Ok((
        u32::from_le_bytes(buf[5..9].try_into().unwrap()),
        u32::from_le_bytes(buf[9..13].try_into().unwrap()),
        u32::from_le_bytes(buf[13..17].try_into().unwrap()),
        u64::from_le_bytes(buf[17..25].try_into().unwrap()),
    ))
}

pub struct TcpNode {
    pub(crate) core: EndpointCore,
}

/// Establish the full mesh and return this node's transport. Blocks until
/// every peer link is up and handshaken.
pub fn connect(cfg: &TcpConfig) -> Result<Transport, TransportError> {
    let n = cfg.endpoints.len();
    assert!(cfg.node_id < n, "node id out of range");
    let listener = TcpListener::bind(&cfg.endpoints[cfg.node_id])?;

    let mut streams: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();

    // lower ids accept from higher ids
    let expected_incoming = n - 1 - cfg.node_id;
    let accept_handle = if expected_incoming > 0 {
        let listener = listener.try_clone()?;
        Some(std::thread::spawn(move || -> Result<Vec<TcpStream>, std::io::Error> {
            let mut got = Vec::with_capacity(expected_incoming);
            for _ in 0..expected_incoming {
                let (stream, _) = listener.accept()?;
                got.push(stream);
            }
            Ok(got)
        }))
    } else {
        None
    };

    // connect to every lower id, retrying while peers start up
    for peer in 0..cfg.node_id {
        let deadline = Instant::now() + cfg.connect_timeout;
        let stream = loop {
            match TcpStream::connect(&cfg.endpoints[peer]) {
                Ok(s) => break s,
                Err(e) => {
                    if Instant::now() >= deadline {
                        return Err(TransportError::Io(e));
                    }
                    std::thread::sleep(Duration::from_millis(50));
                }
            }
        };
        streams[peer] = Some(stream);
    }

    if let Some(handle) = accept_handle {
        let incoming = handle.join().expect("accept thread")?;
        // identities are established by the handshake below
        let mut unidentified = incoming;
        let hello = encode_hello(cfg.node_id as u32, n as u32, cfg.k as u32, cfg.run_digest);
        for mut stream in unidentified.drain(..) {
            stream.write_all(&hello)?;
            let mut buf = [0u8; HELLO_LEN];
            stream.read_exact(&mut buf)?;
            let (peer_id, peer_n, peer_k, peer_digest) = decode_hello(&buf)?;
            validate_peer(cfg, n, peer_id, peer_n, peer_k, peer_digest)?;
            if (peer_id as usize) <= cfg.node_id || streams[peer_id as usize].is_some() {
                return Err(TransportError::HandshakeMismatch(format!(
                    "unexpected connection from node {peer_id}"
                )));
            }
            streams[peer_id as usize] = Some(stream);
        }
    }

    // handshake outgoing links
    let hello = encode_hello(cfg.node_id as u32, n as u32, cfg.k as u32, cfg.run_digest);
    for peer in 0..cfg.node_id {
        let stream = streams[peer].as_mut().expect("outgoing stream");
        stream.write_all(&hello)?;
        let mut buf = [0u8; HELLO_LEN];
        stream.read_exact(&mut buf)?;
        let (peer_id, peer_n, peer_k, peer_digest) = decode_hello(&buf)?;
        validate_peer(cfg, n, peer_id, peer_n, peer_k, peer_digest)?;
        if peer_id as usize != peer {
            return Err(TransportError::HandshakeMismatch(format!(
                "endpoint {} answered as node {peer_id}, expected {peer}",
                cfg.endpoints[peer]
            )));
        }
    }

    let stats = StatsCollector::new();
    let failure: Arc<Mutex<Option<String>>> = Arc::new(Mutex::new(None));
    let completed = Arc::new(std::sync::atomic::AtomicU64::new(0));
    let (inbox_tx, inbox_rx) = channel::<InboxEntry>();
    let (out_tx, out_rx) = channel::<WireWrite>();

    let mut write_halves: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
    for (peer, slot) in streams.into_iter().enumerate() {
        if let Some(stream) = slot {
            stream.set_nodelay(true)?;
            let read_half = stream.try_clone()?;
            write_halves[peer] = Some(stream);
            spawn_reader(peer, read_half, inbox_tx.clone());
        }
    }
    spawn_writer(
        out_rx,
        write_halves,
        Arc::clone(&stats),
        Arc::clone(&failure),
        Arc::clone(&completed),
    );

    let core = EndpointCore::new(
        cfg.node_id,
        n,
        cfg.policy,
        cfg.phase_timeout,
        out_tx,
        inbox_rx,
        stats,
        failure,
        completed,
    );
    Ok(Transport::Tcp(TcpNode { core }))
}

fn validate_peer(
    cfg: &TcpConfig,
    n: usize,
    peer_id: u32,
    peer_n: u32,
    peer_k: u32,
    peer_digest: u64,
) -> Result<(), TransportError> {
    if peer_n as usize != n {
        return Err(TransportError::HandshakeMismatch(format!(
            "peer {peer_id} runs {peer_n} nodes, this run has {n}"
        )));
    }
    if peer_k as usize != cfg.k {
        return Err(TransportError::HandshakeMismatch(format!(
            "peer {peer_id} uses k={peer_k}, this run uses k={}",
            cfg.k
        )));
    }
    if peer_digest != cfg.run_digest {
        return Err(TransportError::HandshakeMismatch(format!(
            "peer {peer_id} run digest {peer_digest:#x} differs from {:#x}",
            cfg.run_digest
        )));
    }
    Ok(())
}

fn spawn_reader(peer: usize, mut stream: TcpStream, inbox: Sender<InboxEntry>) {
    std::thread::Builder::new()
        .name(format!("tcp-reader-{peer}"))
        .spawn(move || {
            loop {
                let mut header = [0u8; FRAME_HEADER_LEN];
                if stream.read_exact(&mut header).is_err() {
                    let _ = inbox.send(InboxEntry::PeerClosed(peer));
                    return;
                }
                let k = u32::from_le_bytes(header[14..18].try_into().unwrap()) as usize;
                let mut rest = vec![0u8; k * 8 + 4];
                if stream.read_exact(&mut rest).is_err() {
                    let _ = inbox.send(InboxEntry::PeerClosed(peer));
                    return;
                }
                let mut blob = Vec::with_capacity(FRAME_HEADER_LEN + rest.len());
                blob.extend_from_slice(&header);
                blob.extend_from_slice(&rest);
                if inbox.send(InboxEntry::Blob(blob)).is_err() {
                    return;
                }
            }
        })
        .expect("spawn reader thread");
}

fn spawn_writer(
    out_rx: Receiver<WireWrite>,
    mut streams: Vec<Option<TcpStream>>,
    stats: Arc<StatsCollector>,
    failure: Arc<Mutex<Option<String>>>,
    completed: Arc<std::sync::atomic::AtomicU64>,
) {
    std::thread::Builder::new()
        .name("tcp-writer".into())
        .spawn(move || {
            for WireWrite { dest, bytes } in out_rx {
                let start = Instant::now();
                let result = match streams[dest].as_mut() {
                    Some(stream) => stream.write_all(&bytes),
                    None => Err(std::io::Error::other("no stream for destination")),
                };
                stats.wire_writes.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                stats
                    .bytes_sent
                    .fetch_add(bytes.len() as u64, std::sync::atomic::Ordering::Relaxed);
                stats.record_comm(start, Instant::now());
                completed.fetch_add(1, std::sync::atomic::Ordering::Release);
                if let Err(e) = result {
                    *failure.lock().unwrap() = Some(format!("write to node {dest}: {e}"));
                    return;
                }
            }
        })
        .expect("spawn writer thread");
}
