//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `TINYLMCK`, `u32` version, `u64` length and
//! UTF-8 bytes of the config record, `u64` tensor count, then per tensor a
//! `u32`-prefixed name, `u32` rank, `u64` dims and `f64` values. A UTF-8
//! `key = value` sidecar at `<path>.meta` carries run metadata.

use std::path::{Path, PathBuf};

use super::{LanguageModel, ModelConfig, Params};
use crate::autodiff::{Float, Tensor};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::kv::KeyValues;

const MAGIC: &[u8; 8] = b"TINYLMCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub dataset: String,
    pub seed: u64,
    pub best_val_loss: f64,
    pub epoch: usize,
}

impl CheckpointMeta {
    pub fn to_kv(&self) -> String {
        format!(
            "dataset = {}\nseed = {}\nbest_val_loss = {}\nepoch = {}\n",
            self.dataset, self.seed, self.best_val_loss, self.epoch
        )
    }

    pub fn from_kv(text: &str, source: &str) -> Result<Self> {
        let kv = KeyValues::parse(text, source)?;
        Ok(CheckpointMeta {
            dataset: kv.require("dataset")?,
            seed: kv.require("seed")?,
            best_val_loss: kv.require("best_val_loss")?,
            epoch: kv.require("epoch")?,
        })
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn encode_checkpoint<T: Float>(model: &LanguageModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = model.config().to_kv();
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for (name, t) in model.params().iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {n}")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("non UTF-8 text".into()))
    }
}

pub fn decode_checkpoint<T: Float>(bytes: &[u8]) -> Result<LanguageModel<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.len()?;
    let config = ModelConfig::from_kv(&r.string(n)?)?;
    let count = r.len()?;
    let mut params = Params::default();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = r.string(n)?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let total: usize = shape.iter().product();
        let raw = r.take(total.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        params.push(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    LanguageModel::from_params(config, params)
}

pub fn save_checkpoint<T: Float>(
    path: &Path,
    model: &LanguageModel<T>,
    meta: &CheckpointMeta,
) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model))?;
    write_atomic(&meta_path(path), meta.to_kv().as_bytes())
}

/// Loads a model; the metadata is `None` when the sidecar is absent.
pub fn load_checkpoint<T: Float>(path: &Path) -> Result<(LanguageModel<T>, Option<CheckpointMeta>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = decode_checkpoint(&bytes)?;
    let mp = meta_path(path);
    let meta = match std::fs::read_to_string(&mp) {
        Ok(text) => Some(CheckpointMeta::from_kv(&text, &mp.display().to_string())?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(&mp, e)),
    };
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig::standard(Family::Lstm, 2, 30)
            .unwrap()
            .with_width(8, 16, 1)
            .unwrap();
        let m = LanguageModel::<f64>::build(cfg, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let meta = CheckpointMeta {
            dataset: "toy".into(),
            seed: 4,
            best_val_loss: 2.5,
            epoch: 3,
        };
        save_checkpoint(&path, &m, &meta).unwrap();
        let (back, got) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params().flatten(), m.params().flatten());
        assert_eq!(got, Some(meta));
    }

    #[test]
    fn corrupt_files_rejected() {
        let cfg = ModelConfig::standard(Family::Lstm, 1, 10)
            .unwrap()
            .with_width(4, 8, 1)
            .unwrap();
        let bytes = encode_checkpoint(&LanguageModel::<f64>::build(cfg, 0).unwrap());
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_checkpoint::<f64>(b"NOTACKPTxxxx").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint::<f64>(&extra).is_err());
    }
}
