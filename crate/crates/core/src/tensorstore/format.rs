//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes   "LPNT"
//! version      u32       1
//! header_len   u64       byte length of the JSON header
//! header       UTF-8 JSON {"meta": {..}, "tensors": [{name, shape, offset, length}, ..]}
//! payload      f32 values; `offset` and `length` are in bytes, relative to the payload start
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Checkpoint, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LPNT";
pub const FORMAT_VERSION: u32 = 1;

const PREAMBLE_LEN: usize = 4 + 4 + 8;

#[derive(Serialize, Deserialize)]
struct Header {
    meta: BTreeMap<String, String>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

pub(crate) fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut offset = 0u64;
    let entries = ckpt
        .tensors()
        .iter()
        .map(|t| {
            let length = 4 * t.numel() as u64;
            let e = Entry {
                name: t.name().to_string(),
                shape: t.shape().to_vec(),
                offset,
                length,
            };
            offset += length;
            e
        })
        .collect();
    let header = Header {
        meta: ckpt.meta().clone(),
        tensors: entries,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in ckpt.tensors() {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let fmt = |m: String| Error::Format(m);
    if bytes.len() < PREAMBLE_LEN {
        return Err(fmt(format!("file is {} bytes, shorter than the preamble", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fmt(format!("bad magic bytes {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(fmt(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let rest = &bytes[PREAMBLE_LEN..];
    if header_len > rest.len() as u64 {
        return Err(fmt(format!(
            "header length {header_len} exceeds remaining {} bytes",
            rest.len()
        )));
    }
    let (header, payload) = rest.split_at(header_len as usize);
    let header: Header =
        serde_json::from_slice(header).map_err(|e| fmt(format!("malformed header: {e}")))?;

    let mut spans = Vec::with_capacity(header.tensors.len());
    let mut ckpt = Checkpoint::new();
    for e in header.tensors {
        let numel = e
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| fmt(format!("tensor `{}`: shape overflows", e.name)))?;
        if (numel as u64).checked_mul(4) != Some(e.length) {
            return Err(fmt(format!(
                "tensor `{}`: shape {:?} needs {} bytes but entry declares {}",
                e.name,
                e.shape,
                numel as u128 * 4,
                e.length
            )));
        }
        let end = e
            .offset
            .checked_add(e.length)
            .filter(|&end| end <= payload.len() as u64)
            .ok_or_else(|| {
                fmt(format!(
                    "tensor `{}`: bytes {}..{} exceed payload of {} bytes (truncated?)",
                    e.name,
                    e.offset,
                    e.offset.saturating_add(e.length),
                    payload.len()
                ))
            })?;
        let raw = &payload[e.offset as usize..end as usize];
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        spans.push((e.offset, end));
        let tensor = Tensor::new(e.name, e.shape, data).map_err(|err| fmt(err.to_string()))?;
        ckpt.push(tensor).map_err(|err| fmt(err.to_string()))?;
    }

    spans.sort_unstable();
    let mut covered = 0u64;
    for (start, end) in spans {
        if start < covered {
            return Err(fmt("tensor payload ranges overlap".into()));
        }
        covered = end;
    }
    let declared: u64 = ckpt.tensors().iter().map(|t| 4 * t.numel() as u64).sum();
    if declared != payload.len() as u64 {
        return Err(fmt(format!(
            "payload is {} bytes but tensors declare {declared}",
            payload.len()
        )));
    }

    for (k, v) in header.meta {
        ckpt.set_meta(k, v);
    }
    Ok(ckpt)
}

/// Writes `ckpt` to `path` via a temporary sibling file and a rename.
pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&to_bytes(ckpt))?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint::from_tensors([
            Tensor::new("W", vec![2, 3], vec![1.0, -2.5, 0.0, -0.0, 3.25, 1e-30]).unwrap(),
            Tensor::new("b", vec![2], vec![0.5, -0.5]).unwrap(),
        ])
        .unwrap()
        .with_meta("language", "eng")
        .with_meta("seed", "7")
    }

    #[test]
    fn layout_preamble() {
        let bytes = to_bytes(&sample());
        assert_eq!(&bytes[..4], b"LPNT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let hl = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hl]).unwrap();
        assert_eq!(header["tensors"][1]["name"], "b");
        assert_eq!(header["tensors"][1]["offset"], 24);
        assert_eq!(header["tensors"][1]["length"], 8);
        assert_eq!(bytes.len(), 16 + hl + 32);
        let first = f32::from_le_bytes(bytes[16 + hl..20 + hl].try_into().unwrap());
        assert_eq!(first, 1.0);
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample();
        save(&c, &path).unwrap();
        let back = load(&path).unwrap();
        assert!(back.tensors_bits_eq(&c));
        assert_eq!(back.meta(), c.meta());
        assert_eq!(back.full_digest(), c.full_digest());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = to_bytes(&sample());
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_version() {
        let mut bytes = to_bytes(&sample());
        bytes[4] = 2;
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload() {
        let bytes = to_bytes(&sample());
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 4]), Err(Error::Format(_))));
        assert!(matches!(from_bytes(&bytes[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn shape_product_mismatch() {
        let c = sample();
        let bytes = to_bytes(&c);
        let hl = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + hl]).unwrap();
        let forged = header.replace("\"shape\":[2,3]", "\"shape\":[3,3]");
        assert_ne!(forged, header);
        let mut out = Vec::new();
        out.extend_from_slice(&bytes[..8]);
        out.extend_from_slice(&(forged.len() as u64).to_le_bytes());
        out.extend_from_slice(forged.as_bytes());
        out.extend_from_slice(&bytes[16 + hl..]);
        match from_bytes(&out) {
            Err(Error::Format(m)) => assert!(m.contains("needs 36 bytes"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = to_bytes(&sample());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load("/nonexistent/x.ckpt"), Err(Error::Io { .. })));
    }
}
