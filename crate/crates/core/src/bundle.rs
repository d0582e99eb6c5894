//! On-disk bundle format and the in-memory tables it loads into.
//!
//! A bundle is one dataset split as seen by a trained model:
//!
//! ```text
//! <dir>/manifest.json     UTF-8 JSON object
//! <dir>/embeddings.bin    n_instances x embedding_dim f32, little-endian, row-major
//! <dir>/labels.bin        n_instances u32, little-endian
//! <dir>/predictions.bin   n_instances u32, little-endian
//! <dir>/saliency.bin      optional, see `chroma`
//! ```
//!
//! Every table is validated at load time. Non-finite embeddings are rejected,
//! never repaired.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Relative paths of the payload files, keyed by role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMap {
    pub embeddings: String,
    pub labels: String,
    pub predictions: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency: Option<String>,
}

impl Default for FileMap {
    fn default() -> Self {
        FileMap {
            embeddings: "embeddings.bin".into(),
            labels: "labels.bin".into(),
            predictions: "predictions.bin".into(),
            saliency: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub split_name: String,
    pub n_instances: usize,
    pub embedding_dim: usize,
    pub class_names: Vec<String>,
    pub files: FileMap,
}

impl Manifest {
    pub fn new(split_name: impl Into<String>, n_instances: usize, embedding_dim: usize, class_names: Vec<String>) -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            split_name: split_name.into(),
            n_instances,
            embedding_dim,
            class_names,
            files: FileMap::default(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_id(&self, name: &str) -> Result<u32> {
        self.class_names
            .iter()
            .position(|c| c == name)
            .map(|i| i as u32)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            reason,
        };
        if self.version != MANIFEST_VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        if self.class_names.is_empty() {
            return Err(bad("class_names is empty".into()));
        }
        let mut seen = HashSet::new();
        for name in &self.class_names {
            if !seen.insert(name.as_str()) {
                return Err(bad(format!("duplicate class name {name:?}")));
            }
        }
        if self.class_names.len() > u32::MAX as usize {
            return Err(bad("too many classes".into()));
        }
        if self.n_instances == 0 {
            return Err(bad("n_instances must be >= 1".into()));
        }
        if self.embedding_dim == 0 {
            return Err(bad("embedding_dim must be >= 1".into()));
        }
        let mut roles = vec![&self.files.embeddings, &self.files.labels, &self.files.predictions];
        roles.extend(self.files.saliency.as_ref());
        for rel in roles {
            if Path::new(rel).is_absolute() {
                return Err(bad(format!("file path {rel:?} must be relative")));
            }
        }
        Ok(())
    }
}

/// Row-major matrix of finite f32 activations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dim must be >= 1"));
        }
        if values.len() != rows * dim {
            return Err(Error::LengthMismatch {
                what: "embedding values",
                expected: rows * dim,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite embedding value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(EmbeddingTable { rows, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::LengthMismatch {
                what: "embedding row",
                expected: dim,
                actual: r.len(),
            });
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.dim)
    }

    /// Returns a copy with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(self.rows, self.dim, self.values.iter().map(|v| v * factor).collect())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Sequence of class indices. Used for both ground-truth labels and model predictions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassIds(Vec<u32>);

pub type LabelVector = ClassIds;
pub type PredictionVector = ClassIds;

impl ClassIds {
    pub fn new(ids: Vec<u32>) -> Self {
        ClassIds(ids)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u32 {
        self.0[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }

    pub fn check_range(&self, class_count: usize) -> Result<()> {
        match self.0.iter().position(|&id| id as usize >= class_count) {
            Some(i) => Err(Error::invalid(format!(
                "class id out of range at index {i}: {} >= {class_count}",
                self.0[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

impl From<Vec<u32>> for ClassIds {
    fn from(v: Vec<u32>) -> Self {
        ClassIds(v)
    }
}

/// Location of a bundle's saliency stream. The stream is read lazily.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaliencyStreamHandle {
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub manifest: Manifest,
    pub embeddings: EmbeddingTable,
    pub labels: LabelVector,
    pub predictions: PredictionVector,
    pub saliency: Option<SaliencyStreamHandle>,
}

impl DatasetBundle {
    /// Assembles an in-memory bundle, enforcing the same invariants as `load_bundle`.
    pub fn new(
        mut manifest: Manifest,
        embeddings: EmbeddingTable,
        labels: LabelVector,
        predictions: PredictionVector,
    ) -> Result<Self> {
        manifest.files.saliency = None;
        manifest.validate(Path::new(MANIFEST_FILE))?;
        if embeddings.rows() != manifest.n_instances {
            return Err(Error::LengthMismatch {
                what: "embedding rows",
                expected: manifest.n_instances,
                actual: embeddings.rows(),
            });
        }
        if embeddings.dim() != manifest.embedding_dim {
            return Err(Error::LengthMismatch {
                what: "embedding dim",
                expected: manifest.embedding_dim,
                actual: embeddings.dim(),
            });
        }
        for (what, ids) in [("labels", &labels), ("predictions", &predictions)] {
            if ids.len() != manifest.n_instances {
                return Err(Error::LengthMismatch {
                    what,
                    expected: manifest.n_instances,
                    actual: ids.len(),
                });
            }
            ids.check_range(manifest.class_count())?;
        }
        Ok(DatasetBundle {
            manifest,
            embeddings,
            labels,
            predictions,
            saliency: None,
        })
    }

    pub fn class_count(&self) -> usize {
        self.manifest.class_count()
    }

    pub fn class_names(&self) -> &[String] {
        &self.manifest.class_names
    }

    pub fn len(&self) -> usize {
        self.manifest.n_instances
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.n_instances == 0
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_size(path: &Path, bytes: &[u8], expected: u64) -> Result<()> {
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

fn parse_class_ids(path: &Path, n: usize, class_count: usize) -> Result<ClassIds> {
    let bytes = read_file(path)?;
    check_size(path, &bytes, n as u64 * 4)?;
    let mut ids = Vec::with_capacity(n);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let id = u32::from_le_bytes(chunk.try_into().unwrap());
        if id as usize >= class_count {
            return Err(Error::ClassIdOutOfRange {
                path: path.to_path_buf(),
                offset: i as u64 * 4,
                id,
                class_count,
            });
        }
        ids.push(id);
    }
    Ok(ClassIds(ids))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    manifest.validate(&path)?;
    Ok(manifest)
}

/// Loads and validates the bundle rooted at `root`.
pub fn load_bundle(root: impl AsRef<Path>) -> Result<DatasetBundle> {
    let root = root.as_ref();
    let manifest = read_manifest(root)?;
    let n = manifest.n_instances;
    let dim = manifest.embedding_dim;

    let emb_path = root.join(&manifest.files.embeddings);
    let bytes = read_file(&emb_path)?;
    check_size(&emb_path, &bytes, (n * dim) as u64 * 4)?;
    let mut values = Vec::with_capacity(n * dim);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                path: emb_path,
                offset: i as u64 * 4,
            });
        }
        values.push(v);
    }
    let embeddings = EmbeddingTable { rows: n, dim, values };

    let labels = parse_class_ids(&root.join(&manifest.files.labels), n, manifest.class_count())?;
    let predictions = parse_class_ids(&root.join(&manifest.files.predictions), n, manifest.class_count())?;

    let saliency = match &manifest.files.saliency {
        Some(rel) => {
            let path = root.join(rel);
            if !path.is_file() {
                return Err(Error::MissingFile { path });
            }
            Some(SaliencyStreamHandle { path })
        }
        None => None,
    };

    Ok(DatasetBundle {
        manifest,
        embeddings,
        labels,
        predictions,
        saliency,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_file(&root.join(MANIFEST_FILE), text.as_bytes())
}

/// Writes `bundle` under `root`, creating the directory if needed.
///
/// A saliency stream attached to the bundle is copied next to the other
/// payloads unless it already lives at the destination.
pub fn write_bundle(bundle: &DatasetBundle, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = bundle.manifest.clone();
    let files = &manifest.files;
    write_file(&root.join(&files.embeddings), &bundle.embeddings.to_le_bytes())?;
    write_file(&root.join(&files.labels), &bundle.labels.to_le_bytes())?;
    write_file(&root.join(&files.predictions), &bundle.predictions.to_le_bytes())?;
    match &bundle.saliency {
        Some(handle) => {
            let rel = manifest
                .files
                .saliency
                .get_or_insert_with(|| "saliency.bin".to_string())
                .clone();
            let dest = root.join(rel);
            let same = match (fs::canonicalize(&handle.path), fs::canonicalize(&dest)) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            };
            if !same {
                fs::copy(&handle.path, &dest).map_err(|e| Error::io(&handle.path, e))?;
            }
        }
        None => manifest.files.saliency = None,
    }
    write_manifest(root, &manifest)
}

/// Per-class accuracy and imbalance for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub class_id: u32,
    pub instance_count: u64,
    pub correct_count: u64,
    /// `None` for a class with no instances.
    pub accuracy: Option<f64>,
    /// Class count over the largest class count; `None` for an empty class.
    pub imbalance_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub classes: Vec<ClassStat>,
    pub n_instances: u64,
    pub overall_accuracy: f64,
}

impl ClassStats {
    pub fn empty_classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.iter().filter(|c| c.instance_count == 0).map(|c| c.class_id)
    }
}

pub fn class_stats(bundle: &DatasetBundle) -> ClassStats {
    class_stats_from(&bundle.labels, &bundle.predictions, bundle.class_count())
        .expect("bundle invariants guarantee aligned, in-range ids")
}

pub fn class_stats_from(labels: &LabelVector, predictions: &PredictionVector, class_count: usize) -> Result<ClassStats> {
    if labels.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    labels.check_range(class_count)?;
    predictions.check_range(class_count)?;
    let mut counts = vec![0u64; class_count];
    let mut correct = vec![0u64; class_count];
    for (y, p) in labels.iter().zip(predictions.iter()) {
        counts[y as usize] += 1;
        if y == p {
            correct[y as usize] += 1;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let classes = (0..class_count)
        .map(|c| {
            let n = counts[c];
            ClassStat {
                class_id: c as u32,
                instance_count: n,
                correct_count: correct[c],
                accuracy: (n > 0).then(|| correct[c] as f64 / n as f64),
                imbalance_ratio: (n > 0).then(|| n as f64 / max as f64),
            }
        })
        .collect();
    let total: u64 = counts.iter().sum();
    let total_correct: u64 = correct.iter().sum();
    Ok(ClassStats {
        classes,
        n_instances: total,
        overall_accuracy: if total > 0 { total_correct as f64 / total as f64 } else { 0.0 },
    })
}
