//! Versioned binary checkpoint; resuming reproduces the uninterrupted chain
//! bit for bit.
//!
//! ```text
//! file := magic "BPMFCKPT" | version u32 LE | body | crc32 LE
//! body := next_iteration u32 | node_id u32 | num_nodes u32
//!       | k u32 | seed u64 | alpha f64 | center u8 | samples u32
//!       | range(owned_u) | vectors(owned_u)
//!       | range(owned_v) | vectors(owned_v)
//!       | hyper(mu k×f64, lambda k²×f64)   (user side)
//!       | hyper(...)                        (movie side)
//!       | pred_sums: count u64, count × f64
//! range   := start u64 | end u64
//! vectors := (end − start)·k × f64
//! ```
//!
//! All floats are stored as raw little-endian IEEE-754 bits. The CRC covers
//! magic through body. Only rows owned by the writing node are stored; peer
//! replicas are rebuilt by a replica sync on resume.

use std::ops::Range;
use std::path::Path;

use crate::linalg::SquareMatrix;

use super::{HyperParams, SamplerError};

const CKPT_MAGIC: &[u8; 8] = b"BPMFCKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub next_iteration: u32,
    pub node_id: u32,
    pub num_nodes: u32,
    pub k: u32,
    pub seed: u64,
    pub alpha: f64,
    pub center: bool,
    /// Post-burn-in samples accumulated into `pred_sums`.
    pub samples: u32,
    pub owned_u: Range<u64>,
    pub u_rows: Vec<f64>,
    pub owned_v: Range<u64>,
    pub v_rows: Vec<f64>,
    pub hyper_u_mu: Vec<f64>,
    pub hyper_u_lambda: Vec<f64>,
    pub hyper_v_mu: Vec<f64>,
    pub hyper_v_lambda: Vec<f64>,
    /// Running prediction sums, aligned with the node's owned test pairs.
    pub pred_sums: Vec<f64>,
}

impl Checkpoint {
    pub fn hyper_u(&self) -> Result<HyperParams, SamplerError> {
        let k = self.k as usize;
        HyperParams::from_parts(
            self.hyper_u_mu.clone(),
            SquareMatrix::from_vec(k, self.hyper_u_lambda.clone()),
        )
        .map_err(SamplerError::Kernel)
    }

    pub fn hyper_v(&self) -> Result<HyperParams, SamplerError> {
        let k = self.k as usize;
        HyperParams::from_parts(
            self.hyper_v_mu.clone(),
            SquareMatrix::from_vec(k, self.hyper_v_lambda.clone()),
        )
        .map_err(SamplerError::Kernel)
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SamplerError> {
        if self.pos + n > self.buf.len() {
            return Err(SamplerError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, SamplerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, SamplerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, SamplerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, SamplerError> {
        let bytes = self.take(n * 8)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Serialize and atomically replace `path` (write temp, then rename).
pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), SamplerError> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(CKPT_MAGIC);
    w.u32(CKPT_VERSION);
    w.u32(ckpt.next_iteration);
    w.u32(ckpt.node_id);
    w.u32(ckpt.num_nodes);
    w.u32(ckpt.k);
    w.u64(ckpt.seed);
    w.f64(ckpt.alpha);
    w.buf.push(ckpt.center as u8);
    w.u32(ckpt.samples);
    for (range, rows) in [(&ckpt.owned_u, &ckpt.u_rows), (&ckpt.owned_v, &ckpt.v_rows)] {
        w.u64(range.start);
        w.u64(range.end);
        w.f64s(rows);
    }
    w.f64s(&ckpt.hyper_u_mu);
    w.f64s(&ckpt.hyper_u_lambda);
    w.f64s(&ckpt.hyper_v_mu);
    w.f64s(&ckpt.hyper_v_lambda);
    w.u64(ckpt.pred_sums.len() as u64);
    w.f64s(&ckpt.pred_sums);
    let crc = crc32fast::hash(&w.buf);
    w.buf.extend_from_slice(&crc.to_le_bytes());

    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &w.buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, SamplerError> {
    let buf = std::fs::read(path)?;
    if buf.len() < CKPT_MAGIC.len() + 8 {
        return Err(SamplerError::Checkpoint("file too short".into()));
    }
    if &buf[..8] != CKPT_MAGIC {
        return Err(SamplerError::Checkpoint("bad checkpoint magic".into()));
    }
    let body_end = buf.len() - 4;
    let stored = u32::from_le_bytes(buf[body_end..].try_into().unwrap());
    if crc32fast::hash(&buf[..body_end]) != stored {
        return Err(SamplerError::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: &buf[..body_end], pos: 8 };
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(SamplerError::Checkpoint(format!("unsupported version {version}")));
    }
    let next_iteration = r.u32()?;
    let node_id = r.u32()?;
    let num_nodes = r.u32()?;
    let k = r.u32()?;
    let seed = r.u64()?;
    let alpha = r.f64()?;
    let center = r.take(1)?[0] != 0;
    let samples = r.u32()?;
    let ku = k as usize;
    let mut ranges_rows = Vec::new();
    for _ in 0..2 {
        let start = r.u64()?;
        let end = r.u64()?;
        if end < start {
            return Err(SamplerError::Checkpoint("inverted range".into()));
        }
        let rows = r.f64s((end - start) as usize * ku)?;
        ranges_rows.push((start..end, rows));
    }
    let hyper_u_mu = r.f64s(ku)?;
    let hyper_u_lambda = r.f64s(ku * ku)?;
    let hyper_v_mu = r.f64s(ku)?;
    let hyper_v_lambda = r.f64s(ku * ku)?;
    let n_pred = r.u64()? as usize;
    let pred_sums = r.f64s(n_pred)?;
    let (owned_v, v_rows) = ranges_rows.pop().unwrap();
    let (owned_u, u_rows) = ranges_rows.pop().unwrap();
    Ok(Checkpoint {
        next_iteration,
        node_id,
        num_nodes,
        k,
        seed,
        alpha,
        center,
        samples,
        owned_u,
        u_rows,
        owned_v,
        v_rows,
        hyper_u_mu,
        hyper_u_lambda,
        hyper_v_mu,
        hyper_v_lambda,
        pred_sums,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        Checkpoint {
            next_iteration: 5,
            node_id: 1,
            num_nodes: 2,
            k: 2,
            seed: 42,
            alpha: 2.0,
            center: true,
            samples: 3,
            owned_u: 4..7,
            u_rows: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            owned_v: 0..2,
            v_rows: vec![1.0, -1.0, 2.0, -2.0],
            hyper_u_mu: vec![0.5, -0.5],
            hyper_u_lambda: vec![2.0, 0.1, 0.1, 1.0],
            hyper_v_mu: vec![0.0, 0.0],
            hyper_v_lambda: vec![1.0, 0.0, 0.0, 1.0],
            pred_sums: vec![3.25, 4.5],
        }
    }

    #[test]
    fn roundtrip_bitwise() {
        let ckpt = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        write_checkpoint(&ckpt, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn corruption_detected() {
        let ckpt = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        write_checkpoint(&ckpt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        match read_checkpoint(&path) {
            Err(SamplerError::Checkpoint(msg)) => assert!(msg.contains("checksum")),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(SamplerError::Checkpoint(_))));
    }
}
