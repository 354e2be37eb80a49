//! Binary wire format shared by the in-process and TCP backends.
//!
//! ```text
//! frame := magic "BPMF" | version u8 | phase u8 | iteration u32 LE
//!        | item index u32 LE | k u32 LE | payload k × f64 LE | crc32 LE
//! ```
//!
//! The CRC-32 (IEEE, as in zip/png) covers every frame byte before the
//! checksum field, magic included. The `phase` byte doubles as the frame
//! kind:
//!
//! | value | meaning                          | index field          |
//! |-------|----------------------------------|----------------------|
//! | 0     | movie item vector                | movie index          |
//! | 1     | user item vector                 | user index           |
//! | 2     | movie-side aggregate block       | block id             |
//! | 3     | user-side aggregate block        | block id             |
//! | 4     | test statistics block            | block id             |
//! | 5     | movie phase-end marker           | sender node id       |
//! | 6     | user phase-end marker            | sender node id       |

use thiserror::Error;

pub const WIRE_MAGIC: [u8; 4] = *b"BPMF";
pub const WIRE_VERSION: u8 = 1;
/// Fixed bytes before the payload: magic, version, phase, iteration, index, k.
pub const FRAME_HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4 + 4;

/// Which side of the model a phase updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Movie,
    User,
}

impl Phase {
    pub fn opposite(self) -> Phase {
        match self {
            Phase::Movie => Phase::User,
            Phase::User => Phase::Movie,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Movie => "movie",
            Phase::User => "user",
        }
    }
}

/// Frame kinds carried in the phase byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameKind {
    MovieItem = 0,
    UserItem = 1,
    MovieAgg = 2,
    UserAgg = 3,
    TestStat = 4,
    MovieMarker = 5,
    UserMarker = 6,
}

impl FrameKind {
    pub fn item(phase: Phase) -> FrameKind {
        match phase {
            Phase::Movie => FrameKind::MovieItem,
            Phase::User => FrameKind::UserItem,
        }
    }

    pub fn agg(phase: Phase) -> FrameKind {
        match phase {
            Phase::Movie => FrameKind::MovieAgg,
            Phase::User => FrameKind::UserAgg,
        }
    }

    pub fn marker(phase: Phase) -> FrameKind {
        match phase {
            Phase::Movie => FrameKind::MovieMarker,
            Phase::User => FrameKind::UserMarker,
        }
    }

    fn from_byte(b: u8) -> Option<FrameKind> {
        Some(match b {
            0 => FrameKind::MovieItem,
            1 => FrameKind::UserItem,
            2 => FrameKind::MovieAgg,
            3 => FrameKind::UserAgg,
            4 => FrameKind::TestStat,
            5 => FrameKind::MovieMarker,
            6 => FrameKind::UserMarker,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported wire version {0}")]
    BadVersion(u8),
    #[error("unknown frame kind {0}")]
    BadKind(u8),
    #[error("checksum mismatch on frame (kind {kind}, iteration {iteration}, index {index})")]
    ChecksumMismatch { kind: u8, iteration: u32, index: u32 },
    #[error("truncated frame ({0} bytes)")]
    Truncated(usize),
}

/// One wire unit: an item vector, an aggregate block, a stat block or a
/// marker, addressed by `(kind, iteration, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub iteration: u32,
    pub index: u32,
    pub payload: Vec<f64>,
}

impl Frame {
    pub fn encoded_len(&self) -> usize {
        FRAME_HEADER_LEN + self.payload.len() * 8 + 4
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(&WIRE_MAGIC);
        out.push(WIRE_VERSION);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.index.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    /// Checksum of the canonical encoding (the value on the wire).
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&WIRE_MAGIC);
        hasher.update(&[WIRE_VERSION, self.kind as u8]);
        hasher.update(&self.iteration.to_le_bytes());
        hasher.update(&self.index.to_le_bytes());
        hasher.update(&(self.payload.len() as u32).to_le_bytes());
        for v in &self.payload {
            hasher.update(&v.to_le_bytes());
        }
        hasher.finalize()
    }

    /// Decode one frame from the start of `buf`; returns the frame and the
    /// bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize), WireError> {
        if buf.len() < FRAME_HEADER_LEN {
            return Err(WireError::Truncated(buf.len()));
        }
        let magic: [u8; 4] = buf[0..4].try_into().unwrap();
        if magic != WIRE_MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        if buf[4] != WIRE_VERSION {
            return Err(WireError::BadVersion(buf[4]));
        }
        let kind_byte = buf[5];
        let iteration = u32::from_le_bytes(buf[6..10].try_into().unwrap());
        let index = u32::from_le_bytes(buf[10..14].try_into().unwrap());
        let k = u32::from_le_bytes(buf[14..18].try_into().unwrap()) as usize;
        let total = FRAME_HEADER_LEN + k * 8 + 4;
        if buf.len() < total {
            return Err(WireError::Truncated(buf.len()));
        }
        let stored_crc = u32::from_le_bytes(buf[total - 4..total].try_into().unwrap());
        if crc32fast::hash(&buf[..total - 4]) != stored_crc {
            return Err(WireError::ChecksumMismatch { kind: kind_byte, iteration, index });
        }
        let kind = FrameKind::from_byte(kind_byte).ok_or(WireError::BadKind(kind_byte))?;
        let mut payload = Vec::with_capacity(k);
        for i in 0..k {
            let off = FRAME_HEADER_LEN + i * 8;
            payload.push(f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()));
        }
        Ok((Frame { kind, iteration, index, payload }, total))
    }
}

/// Wire unit carrying one updated item vector between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemMessage {
    pub phase: Phase,
    pub iteration: u32,
    pub index: u32,
    pub payload: Vec<f64>,
    pub checksum: u32,
}

impl ItemMessage {
    pub fn new(phase: Phase, iteration: u32, index: u32, payload: Vec<f64>) -> Self {
        let frame =
            Frame { kind: FrameKind::item(phase), iteration, index, payload };
        let checksum = frame.checksum();
        ItemMessage { phase, iteration, index, payload: frame.payload, checksum }
    }

    pub fn into_frame(self) -> Frame {
        Frame {
            kind: FrameKind::item(self.phase),
            iteration: self.iteration,
            index: self.index,
            payload: self.payload,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_frame_bytes() {
        // freeze the wire layout: any byte change is a protocol break
        let frame = Frame {
            kind: FrameKind::MovieItem,
            iteration: 7,
            index: 258,
            payload: vec![1.0, -2.5],
        };
        let bytes = frame.encode();
        let expect_prefix: Vec<u8> = [
            b"BPMF".as_slice(),
            &[1u8, 0u8],
            &7u32.to_le_bytes(),
            &258u32.to_le_bytes(),
            &2u32.to_le_bytes(),
            &1.0f64.to_le_bytes(),
            &(-2.5f64).to_le_bytes(),
        ]
        .concat();
        assert_eq!(&bytes[..bytes.len() - 4], &expect_prefix[..]);
        assert_eq!(
            bytes[bytes.len() - 4..],
            crc32fast::hash(&expect_prefix).to_le_bytes()
        );
        // full golden encoding, little-endian reference
        assert_eq!(
            bytes,
            vec![
                0x42, 0x50, 0x4d, 0x46, // BPMF
                0x01, 0x00, // version, phase
                0x07, 0x00, 0x00, 0x00, // iteration
                0x02, 0x01, 0x00, 0x00, // index 258
                0x02, 0x00, 0x00, 0x00, // k = 2
                0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xf0, 0x3f, // 1.0
                0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x04, 0xc0, // -2.5
                bytes[34], bytes[35], bytes[36], bytes[37], // crc
            ]
        );
    }

    #[test]
    fn roundtrip_all_kinds() {
        for (i, kind) in [
            FrameKind::MovieItem,
            FrameKind::UserItem,
            FrameKind::MovieAgg,
            FrameKind::UserAgg,
            FrameKind::TestStat,
            FrameKind::MovieMarker,
            FrameKind::UserMarker,
        ]
        .into_iter()
        .enumerate()
        {
            let frame = Frame {
                kind,
                iteration: i as u32,
                index: 1000 + i as u32,
                payload: (0..i).map(|x| x as f64 * 0.25 - 1.0).collect(),
            };
            let bytes = frame.encode();
            let (back, used) = Frame::decode(&bytes).unwrap();
            assert_eq!(used, bytes.len());
            assert_eq!(back, frame);
        }
    }

    #[test]
    fn corrupted_payload_detected() {
        let frame = Frame {
            kind: FrameKind::UserItem,
            iteration: 3,
            index: 9,
            payload: vec![0.5, 0.25, 0.125],
        };
        let mut bytes = frame.encode();
        bytes[FRAME_HEADER_LEN + 2] ^= 0x40;
        match Frame::decode(&bytes) {
            Err(WireError::ChecksumMismatch { iteration: 3, index: 9, .. }) => {}
            other => panic!("expected checksum mismatch, got {other:?}"),
        }
    }

    #[test]
    fn truncated_frame_detected() {
        let frame =
            Frame { kind: FrameKind::MovieItem, iteration: 0, index: 0, payload: vec![1.0] };
        let bytes = frame.encode();
        assert!(matches!(Frame::decode(&bytes[..10]), Err(WireError::Truncated(10))));
    }

    #[test]
    fn item_message_checksum_matches_wire() {
        let msg = ItemMessage::new(Phase::User, 5, 77, vec![3.5, -1.0]);
        let frame = msg.clone().into_frame();
        let bytes = frame.encode();
        let wire_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(msg.checksum, wire_crc);
    }
}
