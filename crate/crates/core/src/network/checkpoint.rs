//! Binary checkpoint format.
//!
//! ```text
//! "NTPCKPT1"
//! u32   width count, then u32 widths
//! u8    activation tag
//! u8    seed flag (0 or 1), then u64 seed
//! u64   parameter count, then f64 parameters
//! ```
//!
//! Everything little-endian.

use thiserror::Error;

use crate::diffcore::ActivationKind;

use super::{DenseNet, NetworkError};

pub const MAGIC: &[u8; 8] = b"NTPCKPT1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("truncated checkpoint: need {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("unknown activation tag {tag} at offset {offset}")]
    UnknownActivation { offset: usize, tag: u8 },
    #[error("invalid seed flag {flag} at offset {offset}")]
    BadSeedFlag { offset: usize, flag: u8 },
    #[error("invalid architecture: {0}")]
    Architecture(#[from] NetworkError),
    #[error("non-finite parameter at offset {offset}")]
    NonFinite { offset: usize },
    #[error("{extra} trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
}

pub(super) fn serialize(net: &DenseNet) -> Vec<u8> {
    let widths = net.widths();
    let mut out = Vec::with_capacity(8 + 4 + 4 * widths.len() + 18 + 8 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for &w in widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.push(net.activation().tag());
    out.push(net.seed().is_some() as u8);
    out.extend_from_slice(&net.seed().unwrap_or(0).to_le_bytes());
    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub(super) fn deserialize(bytes: &[u8]) -> Result<DenseNet, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let count = r.u32()? as usize;
    // Guard the allocation against a corrupt count.
    if (bytes.len() - r.pos) / 4 < count {
        return Err(CheckpointError::Truncated {
            offset: r.pos,
            needed: 4 * count,
        });
    }
    let widths = (0..count).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>, _>>()?;
    let tag_offset = r.pos;
    let tag = r.u8()?;
    let activation = ActivationKind::from_tag(tag).ok_or(CheckpointError::UnknownActivation {
        offset: tag_offset,
        tag,
    })?;
    let flag_offset = r.pos;
    let flag = r.u8()?;
    let seed_value = r.u64()?;
    let seed = match flag {
        0 => None,
        1 => Some(seed_value),
        _ => {
            return Err(CheckpointError::BadSeedFlag {
                offset: flag_offset,
                flag,
            })
        }
    };
    let n = r.u64()? as usize;
    if (bytes.len() - r.pos) / 8 < n {
        return Err(CheckpointError::Truncated {
            offset: r.pos,
            needed: n.saturating_mul(8),
        });
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let offset = r.pos;
        let v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(CheckpointError::NonFinite { offset });
        }
        params.push(v);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes {
            offset: r.pos,
            extra: bytes.len() - r.pos,
        });
    }
    let mut net = DenseNet::from_params(&widths, activation, params)?;
    net.seed = seed;
    Ok(net)
}
