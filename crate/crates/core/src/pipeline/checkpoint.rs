//! Binary checkpoints with a plain-text config sidecar.
//!
//! Layout, little-endian: magic `STSG`, version `u32`, then records until
//! end of file, each `{name_len u32, name bytes, rank u8, dims u32 × rank,
//! f32 × product(dims)}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowParams};
use crate::params::{join, Parameters};
use crate::scalar::Scalar;
use crate::stego::StegoParams;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"STSG";
pub const VERSION: u32 = 1;

/// Every trainable tensor of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub flow: FlowParams<T>,
    pub stego: Option<StegoParams<T>>,
}

impl<T: Scalar> Parameters<T> for Model<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.flow.collect(&join(prefix, "flow"), out);
        if let Some(s) = &self.stego {
            s.collect(&join(prefix, "stego"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.flow.collect_mut(&join(prefix, "flow"), out);
        if let Some(s) = &mut self.stego {
            s.collect_mut(&join(prefix, "stego"), out);
        }
    }

    fn validate(&self) -> Result<()> {
        self.flow.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model<f32>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

pub fn encode_records<T: Scalar>(entries: &[(String, &Tensor<T>)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(4);
        for d in t.dims() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Named `f32` tensors in file order.
pub fn decode_records(buf: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let mut out = Vec::new();
    while r.pos < buf.len() {
        let start = r.pos as u64;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format {
                offset: start + 4,
                msg: "name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        if rank > 4 {
            return Err(Error::Format {
                offset: r.pos as u64 - 1,
                msg: format!("rank {rank} exceeds 4"),
            });
        }
        let mut dims = [1usize; 4];
        for k in 0..rank {
            dims[4 - rank + k] = r.u32("dims")? as usize;
        }
        let count: usize = dims.iter().product();
        let data = r
            .take(count * 4, "payload")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Format {
            offset: start,
            msg: format!("{name}: {e}"),
        })?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, config: &TrainConfig, model: &Model<T>) -> Result<()> {
    std::fs::write(path, encode_records(&model.named_params()))?;
    std::fs::write(sidecar_path(path), config.to_text())?;
    Ok(())
}

/// A model with the shapes implied by `config`, ready to be overwritten.
fn skeleton(config: &TrainConfig, with_stego: bool) -> Result<Model<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let flow = FlowParams::new(config.flow.clone(), &mut rng)?;
    let stego = with_stego.then(|| StegoParams::new(config.enc_width, config.dec_width, &mut rng));
    Ok(Model { flow, stego })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let config = TrainConfig::from_file(&sidecar_path(path))?;
    let records = decode_records(&std::fs::read(path)?)?;
    let with_stego = records.iter().any(|(n, _)| n.starts_with("stego."));
    let mut model = skeleton(&config, with_stego)?;
    let mut by_name: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for (name, t) in records {
        if by_name.insert(name.clone(), t).is_some() {
            return Err(Error::CheckpointMismatch(format!("duplicate tensor {name}")));
        }
    }
    for (name, slot) in model.named_params_mut() {
        let t = by_name
            .remove(&name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name}")))?;
        if t.dims() != slot.dims() {
            return Err(Error::CheckpointMismatch(format!(
                "{name}: stored {:?}, configuration needs {:?}",
                t.dims(),
                slot.dims()
            )));
        }
        *slot = t;
    }
    if let Some(name) = by_name.keys().next() {
        return Err(Error::CheckpointMismatch(format!("unknown tensor {name}")));
    }
    model.flow.mark_initialized();
    model.flow.validate()?;
    Ok(Checkpoint { config, model })
}

/// [`load_checkpoint`], failing unless the stored flow matches `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &FlowConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if &ck.config.flow != expected {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint flow {:?} differs from requested {:?}",
            ck.config.flow, expected
        )));
    }
    Ok(ck)
}
