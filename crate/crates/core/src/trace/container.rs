//! `PSCT` trace container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "PSCT" | version u16 = 1 | flags u8 = 0 | reserved u8 = 0
//! n_traces u32 | n_samples u32 | meta_len u32 | meta (UTF-8 JSON)
//! n_traces * n_samples f32, trace-major
//! ```
//!
//! The JSON header carries the per-trace labels and the provenance map.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PowerTrace, Scenario, TraceSet};
use crate::error::{at_path, Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"PSCT";
const VERSION: u16 = 1;
const FIXED_HEADER: usize = 4 + 2 + 1 + 1 + 4 + 4 + 4;

#[derive(Serialize, Deserialize)]
struct Header {
    labels: Vec<Scenario>,
    meta: BTreeMap<String, String>,
}

/// Samples are narrowed to `f32`; sets that already hold `f32`-exact values
/// round-trip bit for bit.
pub fn write_traceset_to<W: Write>(set: &TraceSet, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        labels: set.labels.clone(),
        meta: set.meta.clone(),
    })
    .map_err(FormatError::from)?;
    let count = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::Shape(format!("{what} {n} exceeds u32")))
    };

    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[0, 0])?;
    w.write_all(&count(set.len(), "trace count")?.to_le_bytes())?;
    w.write_all(&count(set.trace_len(), "trace length")?.to_le_bytes())?;
    w.write_all(&count(header.len(), "header length")?.to_le_bytes())?;
    w.write_all(&header)?;

    let mut buf = Vec::with_capacity(set.trace_len() * 4);
    for trace in &set.traces {
        buf.clear();
        for &x in &trace.samples {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn write_traceset(set: &TraceSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(at_path(path))?;
    let mut w = io::BufWriter::new(file);
    write_traceset_to(set, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_traceset(path: impl AsRef<Path>) -> Result<TraceSet> {
    let path = path.as_ref();
    read_traceset_from(&fs::read(path).map_err(at_path(path))?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                section,
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }
}

pub fn read_traceset_from(bytes: &[u8]) -> Result<TraceSet> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if bytes.len() < FIXED_HEADER {
        // Still report a wrong magic first when at least those bytes exist.
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic {
                expected: MAGIC,
                found: bytes[..4].try_into().unwrap(),
            }
            .into());
        }
        return Err(FormatError::Truncated {
            section: "header",
            needed: FIXED_HEADER,
            available: bytes.len(),
        }
        .into());
    }
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic,
        }
        .into());
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let flags = cur.take(2, "flags")?;
    if flags != [0, 0] {
        return Err(FormatError::UnsupportedFlags {
            flags: flags[0],
            reserved: flags[1],
        }
        .into());
    }
    let n_traces = cur.u32("trace count")? as usize;
    let n_samples = cur.u32("trace length")? as usize;
    let meta_len = cur.u32("header length")? as usize;
    let header_bytes = cur.take(meta_len, "metadata")?;
    let header_text = std::str::from_utf8(header_bytes).map_err(|_| FormatError::Utf8)?;
    let header: Header = serde_json::from_str(header_text).map_err(FormatError::from)?;

    if n_traces == 0 {
        return Err(FormatError::EmptySet.into());
    }
    if header.labels.len() != n_traces {
        return Err(FormatError::LabelCountMismatch {
            labels: header.labels.len(),
            traces: n_traces,
        }
        .into());
    }
    if n_samples == 0 {
        return Err(Error::EmptyInput("traces have zero samples"));
    }

    let payload_len = n_traces
        .checked_mul(n_samples)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Shape("payload size overflows".into()))?;
    let payload = cur.take(payload_len, "payload")?;
    let trailing = bytes.len() - cur.pos;
    if trailing != 0 {
        return Err(FormatError::TrailingBytes(trailing).into());
    }

    let mut traces = Vec::with_capacity(n_traces);
    for (t, row) in payload.chunks_exact(n_samples * 4).enumerate() {
        let samples: Vec<f64> = row
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        if let Some(sample) = samples.iter().position(|x| !x.is_finite()) {
            return Err(FormatError::NonFinite { trace: t, sample }.into());
        }
        traces.push(PowerTrace { samples });
    }
    TraceSet::new(traces, header.labels, header.meta)
}
