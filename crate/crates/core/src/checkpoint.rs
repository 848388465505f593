//! On-disk checkpoints.
//!
//! A checkpoint is a directory holding two files:
//!
//! * `manifest.txt`, plain UTF-8 text:
//!
//!   ```text
//!   iert-checkpoint 1
//!   [header]
//!   key=value            (sorted by key)
//!   [tensors]
//!   name<TAB>d0,d1,...<TAB>byte_offset   (registration order; empty dims = scalar)
//!   [blob]
//!   bytes=<total blob length>
//!   sha256=<lowercase hex digest of tensors.bin>
//!   ```
//!
//! * `tensors.bin`, every tensor's values back to back as little-endian
//!   IEEE-754 `f64`, in manifest order.
//!
//! Loading verifies the blob length and digest before any tensor is built, so
//! a damaged checkpoint is rejected as a whole.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::params::ParameterStore;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "tensors.bin";
const MAGIC: &str = "iert-checkpoint 1";
const ADAM_FIRST: &str = "adam.m/";
const ADAM_SECOND: &str = "adam.v/";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn from_store(store: &ParameterStore) -> Self {
        Checkpoint {
            header: BTreeMap::new(),
            tensors: store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    /// Adds optimizer moments as extra tensors so a run can resume exactly.
    pub fn with_optimizer(mut self, store: &ParameterStore, adam: &AdamState) -> Self {
        self.header.insert("adam.step".into(), adam.step.to_string());
        self.header.insert("adam.learning_rate".into(), format!("{:e}", adam.learning_rate));
        for (id, name, _) in store.iter() {
            if let (Some(m), Some(v)) = (adam.first.get(id.index()), adam.second.get(id.index())) {
                self.tensors.push((format!("{ADAM_FIRST}{name}"), m.clone()));
                self.tensors.push((format!("{ADAM_SECOND}{name}"), v.clone()));
            }
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Model parameters only (optimizer moments excluded), in saved order.
    pub fn to_store(&self) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        for (name, t) in &self.tensors {
            if !name.starts_with(ADAM_FIRST) && !name.starts_with(ADAM_SECOND) {
                store.register(name.clone(), t.clone())?;
            }
        }
        Ok(store)
    }

    /// Optimizer state aligned with `store`; parameters without saved moments
    /// start from zero.
    pub fn adam_state(&self, store: &ParameterStore, learning_rate: f64) -> Result<AdamState> {
        let step = match self.header.get("adam.step") {
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("bad adam.step `{s}` in checkpoint")))?,
            None => 0,
        };
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (_, name, value) in store.iter() {
            let m = self.get(&format!("{ADAM_FIRST}{name}")).cloned();
            let v = self.get(&format!("{ADAM_SECOND}{name}")).cloned();
            first.push(m.unwrap_or_else(|| Tensor::zeros(value.shape())));
            second.push(v.unwrap_or_else(|| Tensor::zeros(value.shape())));
        }
        Ok(AdamState::new(learning_rate).with_moments(step, first, second))
    }

    pub fn manifest_text(&self) -> (String, Vec<u8>) {
        let mut blob = Vec::new();
        let mut text = String::new();
        text.push_str(MAGIC);
        text.push('\n');
        text.push_str("[header]\n");
        for (k, v) in &self.header {
            text.push_str(&format!("{k}={v}\n"));
        }
        text.push_str("[tensors]\n");
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            text.push_str(&format!("{name}\t{}\t{}\n", dims.join(","), blob.len()));
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        text.push_str("[blob]\n");
        text.push_str(&format!("bytes={}\n", blob.len()));
        text.push_str(&format!("sha256={}\n", hex::encode(Sha256::digest(&blob))));
        (text, blob)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (text, blob) = self.manifest_text();
        let blob_path = dir.join(BLOB_FILE);
        fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
        let manifest = dir.join(MANIFEST_FILE);
        fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let blob_path = dir.join(BLOB_FILE);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        Self::parse(&text, &blob, dir)
    }

    pub(crate) fn parse(text: &str, blob: &[u8], origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(corrupt(origin, "missing manifest magic line"));
        }
        let mut section = "";
        let mut header = BTreeMap::new();
        let mut entries: Vec<(String, Vec<usize>, usize)> = Vec::new();
        let mut bytes = None;
        let mut digest = None;
        for line in lines {
            if line.starts_with('[') {
                section = line;
                continue;
            }
            match section {
                "[header]" => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| corrupt(origin, format!("bad header line `{line}`")))?;
                    header.insert(k.to_string(), v.to_string());
                }
                "[tensors]" => {
                    let mut parts = line.split('\t');
                    let (Some(name), Some(dims), Some(offset), None) =
                        (parts.next(), parts.next(), parts.next(), parts.next())
                    else {
                        return Err(corrupt(origin, format!("bad tensor line `{line}`")));
                    };
                    let dims = if dims.is_empty() {
                        Vec::new()
                    } else {
                        dims.split(',')
                            .map(|d| d.parse::<usize>())
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(|_| corrupt(origin, format!("bad shape in `{line}`")))?
                    };
                    let offset = offset
                        .parse()
                        .map_err(|_| corrupt(origin, format!("bad offset in `{line}`")))?;
                    entries.push((name.to_string(), dims, offset));
                }
                "[blob]" => {
                    if let Some(v) = line.strip_prefix("bytes=") {
                        bytes = v.parse::<usize>().ok();
                    } else if let Some(v) = line.strip_prefix("sha256=") {
                        digest = Some(v.to_string());
                    }
                }
                _ => return Err(corrupt(origin, format!("line outside any section: `{line}`"))),
            }
        }
        let bytes = bytes.ok_or_else(|| corrupt(origin, "manifest lacks blob size"))?;
        let digest = digest.ok_or_else(|| corrupt(origin, "manifest lacks blob digest"))?;
        if blob.len() != bytes {
            return Err(corrupt(origin, format!("blob has {} bytes, manifest says {bytes}", blob.len())));
        }
        if hex::encode(Sha256::digest(blob)) != digest {
            return Err(corrupt(origin, "blob digest mismatch"));
        }
        let mut tensors = Vec::with_capacity(entries.len());
        let mut expected_offset = 0;
        for (name, dims, offset) in entries {
            let n: usize = dims.iter().product();
            if offset != expected_offset || offset + 8 * n > blob.len() {
                return Err(corrupt(origin, format!("tensor `{name}` has inconsistent offset {offset}")));
            }
            let data = blob[offset..offset + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, Tensor::new(dims, data)?));
            expected_offset = offset + 8 * n;
        }
        if expected_offset != blob.len() {
            return Err(corrupt(origin, "blob has trailing bytes not described by the manifest"));
        }
        Ok(Checkpoint { header, tensors })
    }
}

/// Per-tensor comparison of two stores.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StoreDiff {
    pub identical: Vec<String>,
    pub changed: Vec<String>,
    pub only_left: Vec<String>,
    pub only_right: Vec<String>,
}

impl StoreDiff {
    pub fn is_identical(&self) -> bool {
        self.changed.is_empty() && self.only_left.is_empty() && self.only_right.is_empty()
    }
}

/// Bitwise comparison of every tensor, matched by name.
pub fn diff_stores(left: &ParameterStore, right: &ParameterStore) -> StoreDiff {
    let mut diff = StoreDiff::default();
    for (_, name, t) in left.iter() {
        match right.id(name) {
            Ok(id) => {
                let other = right.value(id);
                let same = t.shape() == other.shape()
                    && t.data().iter().zip(other.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                if same {
                    diff.identical.push(name.to_string());
                } else {
                    diff.changed.push(name.to_string());
                }
            }
            Err(_) => diff.only_left.push(name.to_string()),
        }
    }
    for (_, name, _) in right.iter() {
        if !left.contains(name) {
            diff.only_right.push(name.to_string());
        }
    }
    diff
}

/// Saves `store` to `dir`, reloads it and reports any difference.
pub fn checkpoint_roundtrip(store: &ParameterStore, dir: impl AsRef<Path>) -> Result<StoreDiff> {
    Checkpoint::from_store(store).save(&dir)?;
    let loaded = Checkpoint::load(&dir)?.to_store()?;
    Ok(diff_stores(store, &loaded))
}
