//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CRNT" | u32 version | u8 kind | u64 seed
//! u32 len | config text (key = value lines, UTF-8)
//! u32 count | count × record
//! u32 CRC-32 of every preceding byte
//!
//! record: u16 len | name | 4 × u32 shape | u8 precision (0 = f64, 1 = f32)
//!         | u8 trainable | data
//! ```

use std::fs;
use std::path::Path;

use crate::autodiff::{ParamStore, Parameter};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::models::{Model, ModelConfig, ModelKind};
use crate::tensor::{Shape, Tensor4};

const MAGIC: &[u8; 4] = b"CRNT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    /// Halves the file; values are rounded to `f32` on save.
    F32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    /// Model configuration plus whatever else the writer recorded
    /// (training settings, epoch).
    pub config: KvMap,
    pub seed: u64,
    pub tensors: Vec<Parameter>,
    pub precision: Precision,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Snapshot of `model`; `extra` keys are stored after the model's own.
    pub fn from_model(model: &Model, extra: &KvMap, seed: u64, precision: Precision) -> Self {
        let mut config = model.config.to_kv();
        for (k, v) in extra.iter() {
            if config.get(k).is_none() {
                config.set(k, v);
            }
        }
        Checkpoint {
            kind: model.kind(),
            config,
            seed,
            tensors: model.params.iter().cloned().collect(),
            precision,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let config = ModelConfig::from_kv(&self.config)?;
        if config.kind() != self.kind {
            return Err(bad(format!(
                "header says {} but config says {}",
                self.kind,
                config.kind()
            )));
        }
        let mut params = ParamStore::new();
        for p in &self.tensors {
            params.insert_param(p.clone());
        }
        Model::from_parts(config, params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.push(match self.kind {
            ModelKind::CrnetA => 0,
            ModelKind::CrnetB => 1,
        });
        b.extend_from_slice(&self.seed.to_le_bytes());
        let text = self.config.to_string();
        b.extend_from_slice(&len_u32(text.len())?.to_le_bytes());
        b.extend_from_slice(text.as_bytes());
        b.extend_from_slice(&len_u32(self.tensors.len())?.to_le_bytes());
        for p in &self.tensors {
            let name = p.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| bad(format!("name '{}' too long", p.name)))?;
            b.extend_from_slice(&name_len.to_le_bytes());
            b.extend_from_slice(name);
            for d in p.tensor.shape().dims() {
                b.extend_from_slice(&len_u32(d)?.to_le_bytes());
            }
            b.push(match self.precision {
                Precision::F64 => 0,
                Precision::F32 => 1,
            });
            b.push(u8::from(p.trainable));
            for &v in p.tensor.data() {
                match self.precision {
                    Precision::F64 => b.extend_from_slice(&v.to_le_bytes()),
                    Precision::F32 => b.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 1 + 8 + 4 + 4 + 4 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(bad("checksum mismatch: file is corrupt"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let kind = match r.u8()? {
            0 => ModelKind::CrnetA,
            1 => ModelKind::CrnetB,
            k => return Err(bad(format!("unknown model kind {k}"))),
        };
        let seed = r.u64()?;
        let text_len = r.u32()? as usize;
        let text =
            std::str::from_utf8(r.take(text_len)?).map_err(|_| bad("config is not UTF-8"))?;
        let config = KvMap::parse(text)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        let mut precision = Precision::F64;
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            precision = match r.u8()? {
                0 => Precision::F64,
                1 => Precision::F32,
                p => return Err(bad(format!("unknown precision flag {p}"))),
            };
            let trainable = r.u8()? != 0;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad("tensor size overflow"))?;
            let data: Vec<f64> = match precision {
                Precision::F64 => r
                    .take(
                        n.checked_mul(8)
                            .ok_or_else(|| bad("tensor size overflow"))?,
                    )?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                Precision::F32 => r
                    .take(
                        n.checked_mul(4)
                            .ok_or_else(|| bad("tensor size overflow"))?,
                    )?
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
            };
            let tensor =
                Tensor4::from_vec(shape, data).map_err(|e| bad(format!("tensor '{name}': {e}")))?;
            tensors.push(Parameter {
                name,
                tensor,
                trainable,
            });
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(Checkpoint {
            kind,
            config,
            seed,
            tensors,
            precision,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| bad(format!("length {n} does not fit the format")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CrnetAConfig, CrnetBConfig};

    fn model_a() -> Model {
        Model::init(CrnetAConfig::tiny(2, 3, 2).into(), 77).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut extra = KvMap::new();
        extra.set("epoch", 3);
        let mut m = model_a();
        m.params.set_trainable("F0", false).unwrap();
        let ck = Checkpoint::from_model(&m, &extra, 1234, Precision::F64);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.config.get("epoch"), Some("3"));
        assert_eq!(back.seed, 1234);
        assert_eq!(back.to_model().unwrap(), m);

        let b = Model::init(
            CrnetBConfig {
                c: 3,
                n0: 2,
                m0: 2,
                s: 3,
                k: 1,
                scales: vec![2, 4],
            }
            .into(),
            5,
        )
        .unwrap();
        let ck = Checkpoint::from_model(&b, &KvMap::new(), 5, Precision::F64);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/b.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap().to_model().unwrap(), b);
    }

    #[test]
    fn f32_round_trip() {
        let m = model_a();
        let ck = Checkpoint::from_model(&m, &KvMap::new(), 0, Precision::F32);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.precision, Precision::F32);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let restored = back.to_model().unwrap();
        for p in m.params.iter() {
            let q = restored.params.tensor(&p.name).unwrap();
            assert!(p.tensor.max_abs_diff(q).unwrap() < 1e-6);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = Checkpoint::from_model(&model_a(), &KvMap::new(), 0, Precision::F64)
            .to_bytes()
            .unwrap();
        for pos in [5, 40, bytes.len() / 2, bytes.len() - 1] {
            let mut c = bytes.clone();
            c[pos] ^= 0x10;
            let err = Checkpoint::from_bytes(&c).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
