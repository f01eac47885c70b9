//! `PTAG0001` time-tag files.
//!
//! Layout, all little-endian: 8-byte magic `PTAG0001`, `u16` version (1),
//! `u64` record count, then 16-byte records of `u64` timestamp (ps), `u8`
//! channel (0 = A, 1 = B) and 7 zero bytes. Records are sorted by timestamp,
//! ties by channel.

use std::io::{Read, Write};
use std::path::Path;

use qdsource::detection::{Channel, TimeTag};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"PTAG0001";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 18;
const RECORD_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum TimetagError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 8]),
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("record {0} is out of order")]
    Unsorted(u64),
    #[error("record {0} has an invalid channel byte {1}")]
    Channel(u64, u8),
    #[error("record {0} has nonzero reserved bytes")]
    Reserved(u64),
    #[error("trailing bytes after {0} records")]
    Trailing(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(tags: &[TimeTag]) -> Result<Vec<u8>, TimetagError> {
    if let Some(i) = tags.windows(2).position(|w| w[1] < w[0]) {
        return Err(TimetagError::Unsorted(i as u64 + 1));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * tags.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tags.len() as u64).to_le_bytes());
    for t in tags {
        out.extend_from_slice(&t.timestamp_ps.to_le_bytes());
        out.push(t.channel.index());
        out.extend_from_slice(&[0u8; 7]);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<TimeTag>, TimetagError> {
    if bytes.len() < HEADER_LEN {
        return Err(TimetagError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 8] = bytes[..8].try_into().expect("length checked");
    if &magic != MAGIC {
        return Err(TimetagError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != VERSION {
        return Err(TimetagError::Version(version));
    }
    let count = u64::from_le_bytes(bytes[10..18].try_into().expect("length checked"));
    let expected = count
        .checked_mul(RECORD_LEN as u64)
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .unwrap_or(u64::MAX);
    let found = bytes.len() as u64;
    if found < expected {
        return Err(TimetagError::Truncated { expected, found });
    }
    if found > expected {
        return Err(TimetagError::Trailing(count));
    }
    let mut tags = Vec::with_capacity(count as usize);
    for (i, rec) in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN).enumerate() {
        let i = i as u64;
        let timestamp_ps = u64::from_le_bytes(rec[..8].try_into().expect("record length"));
        let channel = Channel::from_index(rec[8]).ok_or(TimetagError::Channel(i, rec[8]))?;
        if rec[9..].iter().any(|&b| b != 0) {
            return Err(TimetagError::Reserved(i));
        }
        let tag = TimeTag { timestamp_ps, channel };
        if tags.last().is_some_and(|prev: &TimeTag| tag < *prev) {
            return Err(TimetagError::Unsorted(i));
        }
        tags.push(tag);
    }
    Ok(tags)
}

pub fn write(path: &Path, tags: &[TimeTag]) -> Result<(), TimetagError> {
    let bytes = encode(tags)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<TimeTag>, TimetagError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
