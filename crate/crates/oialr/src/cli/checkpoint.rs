//! Binary checkpoint container.
//!
//! Layout: 8-byte magic `OIALR1\0\0`, format version, tensor count, then
//! per tensor a length-prefixed UTF-8 name, a role tag, the dimension
//! list, and the payload. All integers and the f64 payload are
//! little-endian; a CRC32 of every preceding byte closes the file. Tensors
//! are written in a canonical order (layers ascending, then optimizer
//! state sorted by parameter name) so save -> load -> save is
//! byte-identical.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::factorization::LowRankWeight;
use crate::linalg::Matrix;
use crate::nn::{LayerMode, SequentialModel};
use crate::optim::AdamW;

pub const MAGIC: [u8; 8] = *b"OIALR1\0\0";
pub const FORMAT_VERSION: u32 = 1;

pub const ROLE_WEIGHT: u8 = 0;
pub const ROLE_U: u8 = 1;
pub const ROLE_SIGMA: u8 = 2;
pub const ROLE_V: u8 = 3;
pub const ROLE_BIAS: u8 = 4;
pub const ROLE_OPT_M: u8 = 5;
pub const ROLE_OPT_V: u8 = 6;

pub fn role_name(role: u8) -> &'static str {
    match role {
        ROLE_WEIGHT => "weight",
        ROLE_U => "basis-u",
        ROLE_SIGMA => "sigma",
        ROLE_V => "basis-v",
        ROLE_BIAS => "bias",
        ROLE_OPT_M => "opt-m",
        ROLE_OPT_V => "opt-v",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub role: u8,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn elems(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub tensors: Vec<TensorRecord>,
}

/// A dense layer's weight recovered from checkpoint tensors.
#[derive(Debug)]
pub enum LayerWeight {
    Full(Matrix),
    Factored(LowRankWeight),
}

impl Checkpoint {
    /// Canonical snapshot of a model, optionally with optimizer moments.
    /// The optimizer step count rides along as a one-element role-5
    /// tensor named `{param}.opt_t`.
    pub fn from_model(model: &SequentialModel, optimizer: Option<&AdamW>) -> Self {
        let mut tensors = Vec::new();
        for layer in model.dense_layers() {
            let id = layer.layer_id;
            match &layer.mode {
                LayerMode::Full(w) => tensors.push(TensorRecord {
                    name: format!("layer{id}.weight"),
                    role: ROLE_WEIGHT,
                    dims: vec![w.rows() as u64, w.cols() as u64],
                    data: w.data().to_vec(),
                }),
                LayerMode::LowRank(w) => {
                    tensors.push(TensorRecord {
                        name: format!("layer{id}.u"),
                        role: ROLE_U,
                        dims: vec![w.u().rows() as u64, w.u().cols() as u64],
                        data: w.u().data().to_vec(),
                    });
                    tensors.push(TensorRecord {
                        name: format!("layer{id}.sigma"),
                        role: ROLE_SIGMA,
                        dims: vec![w.sigma().rows() as u64, w.sigma().cols() as u64],
                        data: w.sigma().data().to_vec(),
                    });
                    tensors.push(TensorRecord {
                        name: format!("layer{id}.v"),
                        role: ROLE_V,
                        dims: vec![w.v().rows() as u64, w.v().cols() as u64],
                        data: w.v().data().to_vec(),
                    });
                }
            }
            tensors.push(TensorRecord {
                name: format!("layer{id}.bias"),
                role: ROLE_BIAS,
                dims: vec![layer.bias.len() as u64],
                data: layer.bias.clone(),
            });
        }
        if let Some(opt) = optimizer {
            // Only states bound to live tensors; conversion leaves stale
            // full-weight entries behind that no longer mean anything.
            let mut live: Vec<String> = Vec::new();
            for layer in model.dense_layers() {
                let id = layer.layer_id;
                live.push(match &layer.mode {
                    LayerMode::Full(_) => format!("layer{id}.weight"),
                    LayerMode::LowRank(_) => format!("layer{id}.sigma"),
                });
                live.push(format!("layer{id}.bias"));
            }
            live.sort();
            for name in live {
                let Some(state) = opt.state(&name) else {
                    continue;
                };
                tensors.push(TensorRecord {
                    name: format!("{name}.opt_m"),
                    role: ROLE_OPT_M,
                    dims: vec![state.m.len() as u64],
                    data: state.m.clone(),
                });
                tensors.push(TensorRecord {
                    name: format!("{name}.opt_t"),
                    role: ROLE_OPT_M,
                    dims: vec![1],
                    data: vec![state.t as f64],
                });
                tensors.push(TensorRecord {
                    name: format!("{name}.opt_v"),
                    role: ROLE_OPT_V,
                    dims: vec![state.v.len() as u64],
                    data: state.v.clone(),
                });
            }
        }
        Checkpoint {
            version: FORMAT_VERSION,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.role);
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < MAGIC.len() + 4 + 4 + 4 {
            return Err(corrupt("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32(body);
        if stored != computed {
            return Err(Error::Checkpoint(format!(
                "crc mismatch (stored {stored:#010x}, computed {computed:#010x})"
            )));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let role = r.u8()?;
            let ndim = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                dims.push(r.u64()?);
            }
            let elems = dims
                .iter()
                .try_fold(1u64, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt("tensor dimensions overflow"))? as usize;
            let payload = r.take(elems * 8)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(TensorRecord {
                name,
                role,
                dims,
                data,
            });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after last tensor"));
        }
        Ok(Checkpoint { version, tensors })
    }

    /// Write via a temp file and rename so a crash never leaves a torn
    /// checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io_err = |e: std::io::Error| Error::Io {
            path: path.display().to_string(),
            source: e,
        };
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!(
            "cannot read {}: {e}",
            path.display()
        )))?;
        Self::from_bytes(&bytes)
    }

    pub fn find(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Per-layer weights in layer order, rebuilt from the weight tensors.
    /// Factored layers need all of u, sigma, v present.
    pub fn layer_weights(&self) -> Result<Vec<(usize, LayerWeight)>> {
        let matrix = |t: &TensorRecord| -> Result<Matrix> {
            if t.dims.len() != 2 {
                return Err(Error::Checkpoint(format!(
                    "tensor {} is not a matrix",
                    t.name
                )));
            }
            Matrix::from_vec(t.dims[0] as usize, t.dims[1] as usize, t.data.clone())
        };
        let mut ids: Vec<usize> = Vec::new();
        for t in &self.tensors {
            if let Some(id) = layer_id_of(&t.name) {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        ids.sort_unstable();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            if let Some(t) = self.find(&format!("layer{id}.weight")) {
                out.push((id, LayerWeight::Full(matrix(t)?)));
                continue;
            }
            let part = |suffix: &str| -> Result<Matrix> {
                let name = format!("layer{id}.{suffix}");
                let t = self
                    .find(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                matrix(t)
            };
            let u = part("u")?;
            let sigma = part("sigma")?;
            let v = part("v")?;
            out.push((id, LayerWeight::Factored(LowRankWeight::from_parts(u, sigma, v)?)));
        }
        Ok(out)
    }
}

/// Layer index from names like `layer3.sigma`.
fn layer_id_of(name: &str) -> Option<usize> {
    let rest = name.strip_prefix("layer")?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    let tail = &rest[digits.len()..];
    if digits.is_empty() || !tail.starts_with('.') {
        return None;
    }
    // Optimizer entries carry a second suffix; only weight tensors count.
    match tail {
        ".weight" | ".u" | ".sigma" | ".v" | ".bias" => digits.parse().ok(),
        _ => None,
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// CRC32, IEEE reflected polynomial.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}
