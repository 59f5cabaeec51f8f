//! `.bisw` container.
//!
//! ```text
//! magic     "BISW"          4 bytes
//! version   u16 = 1
//! disp      u16
//! difp      u16
//! line_bits u32
//! n         u64
//! d         u32
//! d_pad     u32
//! payload   lines in storage order, each as line_bits/64 little-endian u64 lanes
//! crc32     u32 over the payload bytes
//! ```
//! All integers little-endian.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{LayoutParams, WeaveShape, WeavedMatrix, MAX_FEATURES};

pub const MAGIC: &[u8; 4] = b"BISW";
pub const VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 2 + 2 + 4 + 8 + 4 + 4;
const CRC_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected \"BISW\"")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated stream: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("header advertises {d} features, above the hardware bound of {MAX_FEATURES}")]
    HardwareBound { d: u64 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("{0} trailing bytes after checksum")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(super) fn serialize(w: &WeavedMatrix) -> Vec<u8> {
    let s = &w.shape;
    let mut out = Vec::with_capacity(HEADER_LEN + w.lanes.len() * 8 + CRC_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(s.layout.disp as u16).to_le_bytes());
    out.extend_from_slice(&(s.layout.difp as u16).to_le_bytes());
    out.extend_from_slice(&(s.layout.line_bits() as u32).to_le_bytes());
    out.extend_from_slice(&(s.n as u64).to_le_bytes());
    out.extend_from_slice(&(s.d as u32).to_le_bytes());
    out.extend_from_slice(&(s.d_pad as u32).to_le_bytes());
    for lane in &w.lanes {
        out.extend_from_slice(&lane.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn need(bytes: &[u8], expected: usize) -> Result<(), FormatError> {
    if bytes.len() < expected {
        Err(FormatError::Truncated { expected, actual: bytes.len() })
    } else {
        Ok(())
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub(super) fn deserialize(bytes: &[u8]) -> Result<WeavedMatrix, FormatError> {
    need(bytes, 4)?;
    if &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    need(bytes, 6)?;
    let version = u16_at(bytes, 4);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    need(bytes, HEADER_LEN)?;
    let disp = u16_at(bytes, 6) as usize;
    let difp = u16_at(bytes, 8) as usize;
    let line_bits = u32_at(bytes, 10) as usize;
    let n = u64_at(bytes, 14);
    let d = u32_at(bytes, 22);
    let d_pad = u32_at(bytes, 26) as usize;

    if d as usize > MAX_FEATURES {
        return Err(FormatError::HardwareBound { d: u64::from(d) });
    }
    let invalid = |msg: String| FormatError::InvalidHeader(msg);
    let layout = LayoutParams { disp, difp };
    layout.validate().map_err(|e| invalid(e.to_string()))?;
    if line_bits != layout.line_bits() {
        return Err(invalid(format!("line_bits {line_bits} != disp*difp {}", layout.line_bits())));
    }
    let n = usize::try_from(n).map_err(|_| invalid(format!("sample count {n} too large")))?;
    let shape = WeaveShape::new(layout, n, d as usize).map_err(|e| invalid(e.to_string()))?;
    if shape.d_pad != d_pad {
        return Err(invalid(format!("d_pad {d_pad} inconsistent with d {d}")));
    }

    let payload_len =
        shape.word_count().checked_mul(line_bits / 8).ok_or_else(|| invalid("payload size overflows".into()))?;
    let total = HEADER_LEN + payload_len + CRC_LEN;
    need(bytes, total)?;
    if bytes.len() > total {
        return Err(FormatError::TrailingBytes(bytes.len() - total));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = u32_at(bytes, HEADER_LEN + payload_len);
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed });
    }
    let lanes = payload.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    WeavedMatrix::from_parts(shape, lanes).map_err(|e| invalid(e.to_string()))
}

impl WeavedMatrix {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FormatError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        deserialize(&fs::read(path)?)
    }
}
