//! JSON interchange for motions, pairs and dataset manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::InteractionPair;
use crate::error::{Error, Result};
use crate::model::MotionSequence;
use crate::numerics::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MotionFile {
    format_version: u32,
    fps: u32,
    joint_count: usize,
    skeleton_id: String,
    frames: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct PairFile {
    format_version: u32,
    pair_id: String,
    class_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_offset: Option<usize>,
    actor: MotionFile,
    reactor: MotionFile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub split: Split,
}

fn to_file(seq: &MotionSequence) -> MotionFile {
    MotionFile {
        format_version: FORMAT_VERSION,
        fps: seq.fps,
        joint_count: seq.joint_count(),
        skeleton_id: seq.skeleton_id.clone(),
        frames: (0..seq.len()).map(|t| seq.frame(t).to_vec()).collect(),
    }
}

fn from_file(f: MotionFile, path: &str, what: &str) -> Result<MotionSequence> {
    if f.format_version != FORMAT_VERSION {
        return Err(Error::parse(
            path,
            format!("{what}: format_version {} is not supported (expected {FORMAT_VERSION})", f.format_version),
        ));
    }
    if f.joint_count == 0 || f.frames.is_empty() {
        return Err(Error::parse(path, format!("{what}: needs joint_count > 0 and at least one frame")));
    }
    let d = 3 * f.joint_count;
    for (i, row) in f.frames.iter().enumerate() {
        if row.len() != d {
            return Err(Error::parse(
                path,
                format!(
                    "{what}: frame {i} has width {}, but joint_count {} implies {d}",
                    row.len(),
                    f.joint_count
                ),
            ));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(path, format!("{what}: non-finite value at frame {i}, column {j}")));
        }
    }
    let t = f.frames.len();
    let data = f.frames.into_iter().flatten().collect();
    MotionSequence::new(Tensor::new(&[t, d], data)?, f.joint_count, f.fps, f.skeleton_id)
        .map_err(|e| Error::parse(path, e.to_string()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::parse(
        path.display().to_string(),
        format!("{e} (line {}, column {})", e.line(), e.column()),
    )
}

/// Writes via a temporary file in the same directory and renames it into
/// place; readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn motion_to_json(seq: &MotionSequence) -> String {
    serde_json::to_string(&to_file(seq)).expect("motion serialization is infallible")
}

pub fn motion_from_json(text: &str, path: &str) -> Result<MotionSequence> {
    let f: MotionFile = serde_json::from_str(text).map_err(|e| json_error(Path::new(path), e))?;
    from_file(f, path, "motion")
}

pub fn save_motion(path: impl AsRef<Path>, seq: &MotionSequence) -> Result<()> {
    write_atomic(path.as_ref(), motion_to_json(seq).as_bytes())
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    motion_from_json(&read(path)?, &path.display().to_string())
}

pub fn save_pair(path: impl AsRef<Path>, pair: &InteractionPair) -> Result<()> {
    let f = PairFile {
        format_version: FORMAT_VERSION,
        pair_id: pair.pair_id.clone(),
        class_label: pair.class_label.clone(),
        source_offset: pair.source_offset,
        actor: to_file(&pair.actor),
        reactor: to_file(&pair.reactor),
    };
    let text = serde_json::to_string(&f).expect("pair serialization is infallible");
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn load_pair(path: impl AsRef<Path>) -> Result<InteractionPair> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let f: PairFile = serde_json::from_str(&read(path)?).map_err(|e| json_error(path, e))?;
    if f.format_version != FORMAT_VERSION {
        return Err(Error::parse(&name, format!("pair format_version {} is not supported", f.format_version)));
    }
    let actor = from_file(f.actor, &name, "actor")?;
    let reactor = from_file(f.reactor, &name, "reactor")?;
    let mut pair =
        InteractionPair::new(actor, reactor, f.class_label, f.pair_id).map_err(|e| Error::parse(&name, e.to_string()))?;
    pair.source_offset = f.source_offset;
    Ok(pair)
}

/// Train and test splits of a dataset directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<InteractionPair>,
    pub test: Vec<InteractionPair>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[InteractionPair] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes `pairs/NNNNNN.json` files and `manifest.json` under `dir`.
pub fn save_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let pairs_dir = dir.join("pairs");
    fs::create_dir_all(&pairs_dir).map_err(|e| Error::io(&pairs_dir, e))?;
    let mut entries = Vec::new();
    let all = data
        .train
        .iter()
        .map(|p| (p, Split::Train))
        .chain(data.test.iter().map(|p| (p, Split::Test)));
    for (i, (pair, split)) in all.enumerate() {
        let rel = format!("pairs/{i:06}.json");
        save_pair(dir.join(&rel), pair)?;
        entries.push(ManifestEntry { path: rel, split });
    }
    let manifest = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&entries).expect("manifest serialization is infallible");
    write_atomic(&manifest, text.as_bytes())?;
    Ok(manifest)
}

/// Loads a dataset from its manifest file or the directory holding it.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let manifest = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries: Vec<ManifestEntry> = serde_json::from_str(&read(&manifest)?).map_err(|e| json_error(&manifest, e))?;
    let mut data = Dataset {
        train: Vec::new(),
        test: Vec::new(),
    };
    for e in entries {
        let pair = load_pair(base.join(&e.path))?;
        match e.split {
            Split::Train => data.train.push(pair),
            Split::Test => data.test.push(pair),
        }
    }
    Ok(data)
}
