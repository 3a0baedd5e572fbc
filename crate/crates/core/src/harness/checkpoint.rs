//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "DFRSNCKP" | version u32 | header_len u32 | header (JSON)
//! n_params u32 | per param: name_len u32, name, ndim u32, dims u64…, f32 data
//! has_optimizer u8 | [step u64 | lr,beta1,beta2,eps,wd f64 | m f32… | v f32…]
//! sha256 of everything above (32 bytes)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::fsutil::write_atomic;
use super::HarnessError;
use crate::denoiser::{check_layout, Denoiser, DenoiserConfig};
use crate::tensor::{AdamWConfig, AdamWState, ParameterSet, Tensor};

const MAGIC: &[u8; 8] = b"DFRSNCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `sl` or `rl`.
    pub stage: String,
    pub epoch: usize,
    pub task: crate::puzzles::Task,
    pub size: usize,
    /// Echo of the run configuration that produced the checkpoint.
    pub config: serde_json::Value,
    /// Best selection metric so far and the epoch it was reached at.
    #[serde(default)]
    pub best: Option<(f64, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    denoiser: DenoiserConfig,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub net: Denoiser<f32>,
    pub optimizer: Option<AdamWState<f32>>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarnessError> {
        if self.buf.len() - self.at < n {
            return Err(HarnessError::Checkpoint("truncated file".into()));
        }
        self.at += n;
        Ok(&self.buf[self.at - n..self.at])
    }

    fn u8(&mut self) -> Result<u8, HarnessError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, HarnessError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, HarnessError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, HarnessError> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| HarnessError::Checkpoint("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, HarnessError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let header = serde_json::to_vec(&Header {
            denoiser: self.net.config.clone(),
            meta: self.meta.clone(),
        })?;
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(&header);
        put_u32(&mut out, self.net.params.len() as u32);
        for (name, t) in self.net.params.iter() {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len() as u32);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f32s(&mut out, t.data());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                let c = opt.config;
                for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for m in &opt.m {
                    put_f32s(&mut out, m.data());
                }
                for v in &opt.v {
                    put_f32s(&mut out, v.data());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(HarnessError::Checkpoint("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(HarnessError::Checkpoint("digest mismatch".into()));
        }
        let mut r = Reader { buf: body, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(HarnessError::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(HarnessError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        let n = r.u32()? as usize;
        let mut params = ParameterSet::new();
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| HarnessError::Checkpoint("parameter name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let dims = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let data = r.f32s(dims.iter().product())?;
            params.insert(name, Tensor::new(&dims, data)?)?;
        }
        check_layout(&header.denoiser, &params)?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut c = [0.0; 5];
                for v in &mut c {
                    *v = r.f64()?;
                }
                let config = AdamWConfig {
                    lr: c[0],
                    beta1: c[1],
                    beta2: c[2],
                    eps: c[3],
                    weight_decay: c[4],
                };
                let mut read_all = || -> Result<Vec<Tensor<f32>>, HarnessError> {
                    params
                        .iter()
                        .map(|(_, t)| Ok(Tensor::new(t.shape(), r.f32s(t.numel())?)?))
                        .collect()
                };
                let m = read_all()?;
                let v = read_all()?;
                Some(AdamWState { config, step, m, v })
            }
            f => return Err(HarnessError::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.at != body.len() {
            return Err(HarnessError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            meta: header.meta,
            net: Denoiser::from_params(header.denoiser, params)?,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        write_atomic(path, &self.to_bytes()?).map_err(HarnessError::io(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let bytes = std::fs::read(path).map_err(HarnessError::io(path))?;
        Self::from_bytes(&bytes)
    }
}
