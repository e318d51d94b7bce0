//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `b"PNNCKPT\0"`, `u32` version, `u32` metadata length, metadata UTF-8 bytes,
//! `u32` tensor count, then per tensor `u32` name length, name bytes, `u32`
//! rank, `u64` per dim, `f64` values row-major. A trailing `u8` flags an Adam
//! section: `u64` step, four `f64` hyper-parameters, then the first and
//! second moments of every tensor in order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::optim::{Adam, AdamConfig};
use crate::param::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PNNCKPT\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form model description, typically JSON.
    pub metadata: String,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerSnapshot>,
}

impl Checkpoint {
    pub fn from_store(metadata: impl Into<String>, store: &ParamStore, adam: Option<&Adam>) -> Self {
        Checkpoint {
            metadata: metadata.into(),
            tensors: store
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
            optimizer: adam.map(|a| OptimizerSnapshot {
                config: a.config,
                step: a.step,
                first_moment: a.first_moment.clone(),
                second_moment: a.second_moment.clone(),
            }),
        }
    }

    /// Copies every tensor into `store` by name. All store entries must be present.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(NnError::Format(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (name, t) in &self.tensors {
            store.set_value(name, t.clone())?;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_bytes(&mut w, self.metadata.as_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_bytes(&mut w, name.as_bytes())?;
            write_tensor(&mut w, t)?;
        }
        match &self.optimizer {
            None => w.write_all(&[0])?,
            Some(opt) => {
                w.write_all(&[1])?;
                w.write_all(&opt.step.to_le_bytes())?;
                let c = opt.config;
                for v in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
                    w.write_all(&v.to_le_bytes())?;
                }
                for t in opt.first_moment.iter().chain(&opt.second_moment) {
                    write_tensor(&mut w, t)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(NnError::Format(format!("unsupported checkpoint version {version}")));
        }
        let metadata = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| NnError::Format("metadata is not UTF-8".into()))?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(&mut r)?)
                .map_err(|_| NnError::Format("tensor name is not UTF-8".into()))?;
            tensors.push((name, read_tensor(&mut r)?));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let optimizer = match flag[0] {
            0 => None,
            1 => {
                let step = read_u64(&mut r)?;
                let mut hp = [0.0; 4];
                for v in &mut hp {
                    *v = read_f64(&mut r)?;
                }
                let mut moments = Vec::with_capacity(2 * count);
                for _ in 0..2 * count {
                    moments.push(read_tensor(&mut r)?);
                }
                let second_moment = moments.split_off(count);
                Some(OptimizerSnapshot {
                    config: AdamConfig {
                        learning_rate: hp[0],
                        beta1: hp[1],
                        beta2: hp[2],
                        epsilon: hp[3],
                    },
                    step,
                    first_moment: moments,
                    second_moment,
                })
            }
            other => return Err(NnError::Format(format!("bad optimizer flag {other}"))),
        };
        Ok(Checkpoint {
            metadata,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(&(t.dims().len() as u32).to_le_bytes())?;
    for d in t.dims() {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    if n > 1 << 28 {
        return Err(NnError::Format(format!("implausible field length {n}")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(NnError::Format(format!("implausible tensor rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u64(r)? as usize);
    }
    let n: usize = dims.iter().product();
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(dims, data)
}
