//! Binary checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "DSCK"
//! version      u32      1
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON (CheckpointHeader)
//! count        u32      number of tensor records
//! record*      name_len u16, name bytes, ndim u8, dims u32 × ndim,
//!              payload f32 × prod(dims)
//! ```
//!
//! Records are written in lexicographic name order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Result, TensorError};
use crate::params::{ParamRole, ParamSet};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON header: training step, optimizer settings and free-form metadata.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub step: u64,
    #[serde(default)]
    pub optimizers: BTreeMap<String, OptimizerHeader>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Adds every parameter of `set` under `prefix/`.
    pub fn put_params(&mut self, prefix: &str, set: &ParamSet) {
        for (name, t) in set.iter() {
            self.tensors.insert(format!("{prefix}/{name}"), t.clone());
        }
    }

    /// Collects the tensors under `prefix/` into a parameter set.
    pub fn params(&self, prefix: &str, role: ParamRole) -> Result<ParamSet> {
        let lead = format!("{prefix}/");
        let mut set = ParamSet::new(role);
        for (name, t) in &self.tensors {
            if let Some(rest) = name.strip_prefix(&lead) {
                set.insert(rest, t.clone())?;
            }
        }
        if set.is_empty() {
            return Err(TensorError::Format(format!("no parameters under {prefix}")));
        }
        Ok(set)
    }

    /// Stores an optimizer: moments as `prefix.m/…`, `prefix.v/…` records.
    pub fn put_adam(&mut self, prefix: &str, state: &AdamState) {
        self.header.optimizers.insert(
            prefix.to_string(),
            OptimizerHeader {
                config: state.config,
                step: state.step,
            },
        );
        for (kind, buffers) in [("m", &state.m), ("v", &state.v)] {
            for (name, buf) in buffers {
                let t = Tensor::new([buf.len()], buf.clone()).expect("1-d buffer");
                self.tensors.insert(format!("{prefix}.{kind}/{name}"), t);
            }
        }
    }

    pub fn adam(&self, prefix: &str) -> Result<AdamState> {
        let head = self
            .header
            .optimizers
            .get(prefix)
            .ok_or_else(|| TensorError::Format(format!("no optimizer {prefix}")))?;
        let collect = |kind: &str| -> BTreeMap<String, Vec<f32>> {
            let lead = format!("{prefix}.{kind}/");
            self.tensors
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(&lead).map(|r| (r.to_string(), t.data().to_vec())))
                .collect()
        };
        let config: AdamConfig = head.config;
        Ok(AdamState {
            config,
            step: head.step,
            m: collect("m"),
            v: collect("v"),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| TensorError::Format(format!("header encode: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            let nlen = u16::try_from(nb.len())
                .map_err(|_| TensorError::Format(format!("name too long: {name}")))?;
            out.extend_from_slice(&nlen.to_le_bytes());
            out.extend_from_slice(nb);
            let ndim = u8::try_from(t.shape().len())
                .map_err(|_| TensorError::Format(format!("rank too large: {name}")))?;
            out.push(ndim);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let magic = take(&mut r, 4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(TensorError::Format("bad magic".into()));
        }
        let version = u32_le(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(TensorError::Format(format!("unsupported version {version}")));
        }
        let hlen = u32_le(&mut r)? as usize;
        let header: CheckpointHeader = serde_json::from_slice(take(&mut r, hlen)?)
            .map_err(|e| TensorError::Format(format!("header decode: {e}")))?;
        let count = u32_le(&mut r)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nlen = u16::from_le_bytes(take(&mut r, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut r, nlen)?.to_vec())
                .map_err(|_| TensorError::Format("record name is not UTF-8".into()))?;
            let ndim = take(&mut r, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32_le(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = take(&mut r, numel * 4)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if !r.is_empty() {
            return Err(TensorError::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(Checkpoint { header, tensors })
    }

    /// Writes to a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(TensorError::Format("truncated checkpoint".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn u32_le(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r, 4)?.try_into().unwrap()))
}
