//! Little-endian binary event container.
//!
//! Header (26 bytes): `b"AEVT"`, version `u16`, width `u16`, height `u16`,
//! threshold `f32`, reserved `u32`, count `u64`. Each record is 16 bytes:
//! `t_us u64`, `x u16`, `y u16`, `polarity i8`, three zero bytes.

use std::path::Path;

use super::{Event, EventStream};

const MAGIC: &[u8; 4] = b"AEVT";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 26;
const RECORD_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum AevtError {
    #[error("not an AEVT file (bad magic)")]
    BadMagic,
    #[error("unsupported AEVT version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated AEVT data: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("event {index} is out of (t, y, x) order")]
    Unsorted { index: u64 },
    #[error("event {index} at ({x}, {y}) lies outside the {width}x{height} sensor")]
    OutOfBounds {
        index: u64,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("event {index} has polarity {polarity}")]
    BadPolarity { index: u64, polarity: i8 },
    #[error("invalid contrast threshold {0}")]
    BadThreshold(f32),
    #[error("AEVT i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl AevtError {
    /// Stable numeric identifier for each failure kind.
    pub fn code(&self) -> u32 {
        match self {
            AevtError::BadMagic => 1,
            AevtError::UnsupportedVersion(_) => 2,
            AevtError::Truncated { .. } => 3,
            AevtError::Unsorted { .. } => 4,
            AevtError::OutOfBounds { .. } => 5,
            AevtError::BadPolarity { .. } => 6,
            AevtError::BadThreshold(_) => 7,
            AevtError::Io(_) => 8,
        }
    }
}

pub fn encode_events(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.events.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(stream.width as u16).to_le_bytes());
    out.extend_from_slice(&(stream.height as u16).to_le_bytes());
    out.extend_from_slice(&(stream.contrast_threshold() as f32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(stream.events.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t_us.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity as u8);
        out.extend_from_slice(&[0, 0, 0]);
    }
    out
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8-byte slice"))
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream, AevtError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(AevtError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(AevtError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u16_at(bytes, 4);
    if version != VERSION {
        return Err(AevtError::UnsupportedVersion(version));
    }
    let width = u16_at(bytes, 6);
    let height = u16_at(bytes, 8);
    let threshold = f32::from_le_bytes(bytes[10..14].try_into().expect("4-byte slice"));
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(AevtError::BadThreshold(threshold));
    }
    let count = u64_at(bytes, 18);
    let expected = (HEADER_LEN as u64).saturating_add(count.saturating_mul(RECORD_LEN as u64));
    if (bytes.len() as u64) < expected {
        return Err(AevtError::Truncated {
            expected,
            found: bytes.len() as u64,
        });
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut prev: Option<(u64, u16, u16)> = None;
    for index in 0..count {
        let at = HEADER_LEN + index as usize * RECORD_LEN;
        let e = Event {
            t_us: u64_at(bytes, at),
            x: u16_at(bytes, at + 8),
            y: u16_at(bytes, at + 10),
            polarity: bytes[at + 12] as i8,
        };
        if e.x >= width || e.y >= height {
            return Err(AevtError::OutOfBounds {
                index,
                x: e.x,
                y: e.y,
                width,
                height,
            });
        }
        if e.polarity != 1 && e.polarity != -1 {
            return Err(AevtError::BadPolarity {
                index,
                polarity: e.polarity,
            });
        }
        let key = e.key();
        if prev.is_some_and(|p| key < p) {
            return Err(AevtError::Unsorted { index });
        }
        prev = Some(key);
        events.push(e);
    }
    Ok(EventStream {
        width: width as usize,
        height: height as usize,
        contrast_threshold: threshold as f64,
        events,
    })
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<(), AevtError> {
    std::fs::write(path, encode_events(stream))?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<EventStream, AevtError> {
    decode_events(&std::fs::read(path)?)
}
