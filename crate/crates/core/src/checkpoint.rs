//! Binary model checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (model spec, iteration, config echo, tensor table), then each
//! tensor as a `u64` element count followed by little-endian `f64` values.
//! All integers are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, RadianceModel, TensorId};

const MAGIC: &[u8; 8] = b"VXSCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: TensorId,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    iteration: usize,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A model plus the training state recorded with it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: RadianceModel,
    pub iteration: usize,
    /// Free-form echo of the configuration that produced the model.
    pub config: serde_json::Value,
}

pub fn encode_checkpoint(model: &RadianceModel, iteration: usize, config: &serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        spec: model.spec().clone(),
        iteration,
        config: config.clone(),
        tensors: TensorId::ALL
            .iter()
            .map(|&id| TensorEntry {
                name: id,
                len: model.tensor(id).len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let body: usize = header.tensors.iter().map(|t| 8 + 8 * t.len).sum();
    let mut buf = Vec::with_capacity(8 + 4 + 8 + json.len() + body);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for id in TensorId::ALL {
        let t = model.tensor(id);
        buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(
                self.path,
                format!("truncated while reading {what} ({n} bytes needed at offset {})", self.pos),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format(path, "not a voxelstyle checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = r.u64("header length")?;
    let header_len = usize::try_from(header_len).map_err(|_| Error::format(path, "header length overflows"))?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    header.spec.validate()?;
    let mut model = RadianceModel::zeros(header.spec.clone())?;
    if header.tensors.len() != TensorId::ALL.len() {
        return Err(Error::format(path, "tensor table must list every parameter tensor"));
    }
    for (entry, id) in header.tensors.iter().zip(TensorId::ALL) {
        let expected = model.tensor(id).len();
        if entry.name != id || entry.len != expected {
            return Err(Error::format(
                path,
                format!("tensor table entry {:?}[{}] does not match {:?}[{expected}]", entry.name, entry.len, id),
            ));
        }
        let len = r.u64("tensor length")?;
        if len != expected as u64 {
            return Err(Error::format(path, format!("tensor {id:?} has length {len}, expected {expected}")));
        }
        let raw = r.take(expected * 8, "tensor data")?;
        let dst = model.tensor_mut(id);
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        if dst.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("tensor {id:?} holds non-finite values")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        model,
        iteration: header.iteration,
        config: header.config,
    })
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn save_checkpoint(path: &Path, model: &RadianceModel, iteration: usize, config: &serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(model, iteration, config)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_spec;

    fn sample() -> (RadianceModel, Vec<u8>) {
        let m = RadianceModel::new(tiny_spec(), 21).unwrap();
        let cfg = serde_json::json!({"lr": 0.1, "note": "x"});
        let bytes = encode_checkpoint(&m, 17, &cfg).unwrap();
        (m, bytes)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (m, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        save_checkpoint(&p, &m, 17, &serde_json::json!({"seed": 3})).unwrap();
        let c = load_checkpoint(&p).unwrap();
        assert_eq!(c.iteration, 17);
        assert_eq!(c.config["seed"], 3);
        assert_eq!(c.model.spec(), m.spec());
        for id in TensorId::ALL {
            let (a, b) = (m.tensor(id), c.model.tensor(id));
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "{id:?}");
        }
    }

    #[test]
    fn truncation_is_reported() {
        let (_, bytes) = sample();
        let p = Path::new("t.ckpt");
        for cut in [0, 5, 12, 30, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut], p), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra, p).is_err());
    }

    #[test]
    fn corrupted_length_is_reported() {
        let (_, mut bytes) = sample();
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let first = 20 + header_len;
        bytes[first] ^= 0x01;
        assert!(matches!(decode_checkpoint(&bytes, Path::new("c")), Err(Error::Format { .. })));
    }

    #[test]
    fn version_is_checked() {
        let (_, mut bytes) = sample();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes, Path::new("v")),
            Err(Error::VersionMismatch { found: 99, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes, Path::new("v")), Err(Error::Format { .. })));
    }
}
