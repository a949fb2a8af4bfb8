//! Checkpoint container: a tar archive with `manifest.json` and one
//! little-endian f32 blob holding every tensor contiguously.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::data::{write_atomic, NormStats};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ReactionMamba};
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "tensors.bin";

/// Enough to rebuild a ChaCha8 stream exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Stream position in 32-bit words (decimal string: exceeds u64).
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: ParamStore<f32>,
    pub adam: AdamState,
    pub norm: NormStats,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn model(&self) -> Result<ReactionMamba> {
        ReactionMamba::from_params(self.model_config.clone(), self.params.clone())
    }

    /// Exact equality including bit patterns of every tensor.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let moments = |a: &BTreeMap<String, Vec<f32>>, b: &BTreeMap<String, Vec<f32>>| {
            a.len() == b.len()
                && a.iter().zip(b).all(|((na, va), (nb, vb))| {
                    na == nb && va.len() == vb.len() && va.iter().zip(vb).all(|(x, y)| x.to_bits() == y.to_bits())
                })
        };
        self.model_config == other.model_config
            && self.train_config == other.train_config
            && self.params.bit_eq(&other.params)
            && moments(&self.adam.m, &other.adam.m)
            && moments(&self.adam.v, &other.adam.v)
            && self.adam.step == other.adam.step
            && self.norm == other.norm
            && self.rng == other.rng
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    bytes: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dtype: String,
    model_config: ModelConfig,
    train_config: TrainConfig,
    norm_stats: NormStats,
    rng: RngState,
    adam_step: u64,
    tensors: Vec<TensorEntry>,
}

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

fn append(tar: &mut tar::Builder<Vec<u8>>, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    let mut h = tar::Header::new_gnu();
    h.set_size(bytes.len() as u64);
    h.set_mode(0o644);
    h.set_mtime(0);
    h.set_cksum();
    tar.append_data(&mut h, name, bytes)
}

pub fn checkpoint_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut blob: Vec<u8> = Vec::new();
    let mut entries = Vec::new();
    let mut push = |name: String, shape: &[usize], data: &[f32]| {
        let offset = blob.len();
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name,
            shape: shape.to_vec(),
            offset,
            bytes: blob.len() - offset,
        });
    };
    for (n, t) in ck.params.iter() {
        push(format!("{PARAM}{n}"), t.shape(), t.data());
    }
    for (prefix, moments) in [(ADAM_M, &ck.adam.m), (ADAM_V, &ck.adam.v)] {
        for (n, v) in moments {
            let shape = ck.params.get(n).map(|t| t.shape().to_vec()).unwrap_or_else(|_| vec![v.len()]);
            push(format!("{prefix}{n}"), &shape, v);
        }
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        dtype: "f32-le".into(),
        model_config: ck.model_config.clone(),
        train_config: ck.train_config.clone(),
        norm_stats: ck.norm.clone(),
        rng: ck.rng,
        adam_step: ck.adam.step,
        tensors: entries,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialization is infallible");
    let mut tar = tar::Builder::new(Vec::new());
    let io = |e| Error::io("<checkpoint buffer>", e);
    append(&mut tar, MANIFEST, &json).map_err(io)?;
    append(&mut tar, BLOB, &blob).map_err(io)?;
    tar.into_inner().map_err(io)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    write_atomic(path.as_ref(), &checkpoint_bytes(ck)?)
}

pub fn checkpoint_from_bytes(bytes: &[u8], path: &str) -> Result<Checkpoint> {
    let perr = |msg: String| Error::parse(path, msg);
    let mut manifest_raw = None;
    let mut blob = None;
    let mut archive = tar::Archive::new(bytes);
    let entries = archive.entries().map_err(|e| perr(format!("not a checkpoint archive: {e}")))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| perr(format!("corrupt archive entry: {e}")))?;
        let name = entry.path().map_err(|e| perr(e.to_string()))?.display().to_string();
        let mut buf = Vec::new();
        entry
            .read_to_end(&mut buf)
            .map_err(|e| perr(format!("truncated archive entry {name}: {e}")))?;
        match name.as_str() {
            MANIFEST => manifest_raw = Some(buf),
            BLOB => blob = Some(buf),
            _ => {}
        }
    }
    let manifest_raw = manifest_raw.ok_or_else(|| perr(format!("missing {MANIFEST}")))?;
    let blob = blob.ok_or_else(|| perr(format!("missing {BLOB}")))?;
    let m: Manifest = serde_json::from_slice(&manifest_raw).map_err(|e| perr(format!("bad manifest: {e}")))?;
    if m.format_version != CHECKPOINT_VERSION {
        return Err(perr(format!(
            "checkpoint format_version {} is not supported (expected {CHECKPOINT_VERSION})",
            m.format_version
        )));
    }
    if m.dtype != "f32-le" {
        return Err(perr(format!("unsupported dtype {}", m.dtype)));
    }
    let expected: usize = m.tensors.iter().map(|t| t.bytes).sum();
    if expected != blob.len() {
        return Err(perr(format!("tensor blob has {} bytes, manifest describes {expected}", blob.len())));
    }
    let mut params = ParamStore::new();
    let mut adam = AdamState {
        step: m.adam_step,
        ..Default::default()
    };
    for t in &m.tensors {
        let n: usize = t.shape.iter().product();
        if t.bytes != 4 * n || t.offset + t.bytes > blob.len() {
            return Err(perr(format!(
                "tensor {}: {} bytes at offset {} do not fit shape {:?}",
                t.name, t.bytes, t.offset, t.shape
            )));
        }
        let data: Vec<f32> = blob[t.offset..t.offset + t.bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(name) = t.name.strip_prefix(PARAM) {
            params.insert(name, Tensor::new(&t.shape, data)?)?;
        } else if let Some(name) = t.name.strip_prefix(ADAM_M) {
            adam.m.insert(name.to_string(), data);
        } else if let Some(name) = t.name.strip_prefix(ADAM_V) {
            adam.v.insert(name.to_string(), data);
        } else {
            return Err(perr(format!("unknown tensor {}", t.name)));
        }
    }
    // shape check against the declared architecture, naming the tensor
    ReactionMamba::from_params(m.model_config.clone(), params.clone())
        .map_err(|e| perr(format!("parameters do not match the model config: {e}")))?;
    for (name, mv) in adam.m.iter().chain(&adam.v) {
        let want = params.get(name).map_err(|_| perr(format!("optimizer state for unknown tensor {name}")))?.len();
        if mv.len() != want {
            return Err(perr(format!("optimizer state for {name} has {} values, expected {want}", mv.len())));
        }
    }
    Ok(Checkpoint {
        model_config: m.model_config,
        train_config: m.train_config,
        params,
        adam,
        norm: m.norm_stats,
        rng: m.rng,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, &path.display().to_string())
}
