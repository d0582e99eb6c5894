//! Seeded synthetic bundles: Gaussian clusters standing in for feature
//! embeddings, predictions from a nearest-centroid classifier fit on the
//! training split, and an optional saliency stream.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bundle::{write_bundle, write_manifest, ClassIds, DatasetBundle, EmbeddingTable, Manifest};
use crate::chroma::{write_saliency_file, SaliencyRecord, ANCHORS, BIN_COUNT};
use crate::error::{Error, Result};
use crate::neighbors::squared_distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub n_train: usize,
    pub n_val: usize,
    /// Isotropic standard deviation of the cluster.
    pub std: f64,
    /// Color bin most of this class's salient pixels are drawn around.
    #[serde(default)]
    pub palette: usize,
}

/// Places class `b`'s center at `distance` from class `a`'s center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapPair {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    /// Distance of each class center from the common baseline along its own axis.
    pub separation: f64,
    /// Value every center takes on the axes it does not own.
    #[serde(default)]
    pub baseline: f64,
    pub classes: Vec<ClassSpec>,
    #[serde(default)]
    pub overlap_pairs: Vec<OverlapPair>,
    /// Salient pixels written per instance; 0 disables the saliency stream.
    #[serde(default)]
    pub pixels_per_instance: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Four imbalanced classes in 16 dims: a minority class planted next to
    /// the majority class, a separate medium class and an isolated minority.
    pub fn planted(seed: u64) -> Self {
        let class = |name: &str, n_train, n_val, std, palette| ClassSpec {
            name: name.into(),
            n_train,
            n_val,
            std,
            palette,
        };
        SyntheticSpec {
            dim: 16,
            separation: 10.0,
            baseline: 2.0,
            classes: vec![
                class("truck", 60, 40, 1.5, 0),
                class("automobile", 300, 100, 0.8, 1),
                class("airplane", 150, 60, 1.0, 11),
                class("frog", 40, 20, 1.0, 8),
            ],
            overlap_pairs: vec![OverlapPair {
                a: 1,
                b: 0,
                distance: 2.0,
            }],
            pixels_per_instance: 103,
            seed,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("synthetic dim must be >= 1"));
        }
        if self.classes.is_empty() || self.classes.len() > self.dim {
            return Err(Error::invalid(format!(
                "synthetic spec needs 1..={} classes, got {}",
                self.dim,
                self.classes.len()
            )));
        }
        if !self.separation.is_finite() || !self.baseline.is_finite() {
            return Err(Error::invalid("separation and baseline must be finite"));
        }
        for c in &self.classes {
            if !(c.std.is_finite() && c.std > 0.0) {
                return Err(Error::invalid(format!(
                    "degenerate covariance for class {:?}: std must be positive and finite",
                    c.name
                )));
            }
            if c.n_train == 0 {
                return Err(Error::invalid(format!("class {:?} has no training instances", c.name)));
            }
            if c.palette >= BIN_COUNT {
                return Err(Error::invalid(format!("palette bin {} out of range", c.palette)));
            }
        }
        if self.classes.iter().map(|c| c.n_val).sum::<usize>() == 0 {
            return Err(Error::invalid("validation split is empty"));
        }
        for p in &self.overlap_pairs {
            let n = self.classes.len();
            if p.a >= n || p.b >= n || p.a == p.b || !(p.distance.is_finite() && p.distance >= 0.0) {
                return Err(Error::invalid(format!("invalid overlap pair {p:?}")));
            }
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        let mut centers: Vec<Vec<f64>> = (0..self.classes.len())
            .map(|c| {
                let mut m = vec![self.baseline; self.dim];
                m[c] += self.separation;
                m
            })
            .collect();
        for p in &self.overlap_pairs {
            let dir: Vec<f64> = (0..self.dim)
                .map(|d| f64::from(d == p.b) - f64::from(d == p.a))
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            centers[p.b] = centers[p.a]
                .iter()
                .zip(&dir)
                .map(|(c, u)| c + p.distance * u / norm)
                .collect();
        }
        centers
    }
}

/// Classifier assigning each row to the class with the nearest centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    centroids: Vec<Vec<f32>>,
}

impl NearestCentroid {
    pub fn fit(embeddings: &EmbeddingTable, labels: &ClassIds, class_count: usize) -> Result<Self> {
        let means = crate::features::class_means(embeddings, labels, class_count)?;
        Ok(NearestCentroid {
            centroids: means
                .into_iter()
                .map(|m| m.into_iter().map(|v| v as f32).collect())
                .collect(),
        })
    }

    /// Ties go to the lower class id.
    pub fn predict_row(&self, row: &[f32]) -> u32 {
        let mut best = (f64::INFINITY, 0u32);
        for (c, centroid) in self.centroids.iter().enumerate() {
            let d = squared_distance(row, centroid);
            if d < best.0 {
                best = (d, c as u32);
            }
        }
        best.1
    }

    pub fn predict(&self, embeddings: &EmbeddingTable) -> ClassIds {
        embeddings.iter_rows().map(|r| self.predict_row(r)).collect::<Vec<_>>().into()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSplit {
    pub bundle: DatasetBundle,
    pub saliency: Option<Vec<SaliencyRecord>>,
}

impl SyntheticSplit {
    pub fn write(&self, root: &Path) -> Result<()> {
        write_bundle(&self.bundle, root)?;
        if let Some(records) = &self.saliency {
            let mut manifest = self.bundle.manifest.clone();
            let rel = "saliency.bin".to_string();
            write_saliency_file(&root.join(&rel), records)?;
            manifest.files.saliency = Some(rel);
            write_manifest(root, &manifest)?;
        }
        Ok(())
    }
}

fn draw_split(
    spec: &SyntheticSpec,
    centers: &[Vec<f64>],
    counts: impl Fn(&ClassSpec) -> usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f32>, Vec<u32>) {
    let mut labels: Vec<u32> = spec
        .classes
        .iter()
        .enumerate()
        .flat_map(|(c, cs)| std::iter::repeat_n(c as u32, counts(cs)))
        .collect();
    labels.shuffle(rng);
    let mut values = Vec::with_capacity(labels.len() * spec.dim);
    for &y in &labels {
        let std = spec.classes[y as usize].std;
        for &m in &centers[y as usize] {
            let z: f64 = StandardNormal.sample(rng);
            values.push((m + std * z) as f32);
        }
    }
    (values, labels)
}

fn draw_saliency(spec: &SyntheticSpec, labels: &[u32], rng: &mut ChaCha8Rng) -> Vec<SaliencyRecord> {
    let jitter = Normal::new(0.0, 12.0).expect("valid normal");
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let anchor = ANCHORS[spec.classes[y as usize].palette].1;
            let pixels = (0..spec.pixels_per_instance)
                .map(|_| {
                    if rng.random_bool(0.7) {
                        anchor.map(|v| (v as f64 + jitter.sample(rng)).round().clamp(0.0, 255.0) as u8)
                    } else {
                        [rng.random(), rng.random(), rng.random()]
                    }
                })
                .collect();
            SaliencyRecord {
                instance_index: i as u32,
                pixels,
            }
        })
        .collect()
}

/// Generates the (train, validation) pair. Same spec, same bytes.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(SyntheticSplit, SyntheticSplit)> {
    spec.validate()?;
    let centers = spec.centers();
    let class_count = spec.classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (train_values, train_labels) = draw_split(spec, &centers, |c| c.n_train, &mut rng);
    let (val_values, val_labels) = draw_split(spec, &centers, |c| c.n_val, &mut rng);
    let n_train = train_labels.len();
    let n_val = val_labels.len();

    let train_emb = EmbeddingTable::new(n_train, spec.dim, train_values)?;
    let val_emb = EmbeddingTable::new(n_val, spec.dim, val_values)?;
    let train_labels = ClassIds::new(train_labels);
    let val_labels = ClassIds::new(val_labels);
    let clf = NearestCentroid::fit(&train_emb, &train_labels, class_count)?;
    let train_pred = clf.predict(&train_emb);
    let val_pred = clf.predict(&val_emb);

    let (train_sal, val_sal) = if spec.pixels_per_instance > 0 {
        (
            Some(draw_saliency(spec, train_labels.as_slice(), &mut rng)),
            Some(draw_saliency(spec, val_labels.as_slice(), &mut rng)),
        )
    } else {
        (None, None)
    };

    let names = spec.class_names();
    let train = DatasetBundle::new(
        Manifest::new("train", n_train, spec.dim, names.clone()),
        train_emb,
        train_labels,
        train_pred,
    )?;
    let val = DatasetBundle::new(Manifest::new("validation", n_val, spec.dim, names), val_emb, val_labels, val_pred)?;
    Ok((
        SyntheticSplit {
            bundle: train,
            saliency: train_sal,
        },
        SyntheticSplit {
            bundle: val,
            saliency: val_sal,
        },
    ))
}

/// Writes `<out>/train` and `<out>/val`.
pub fn write_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<()> {
    let (train, val) = generate_synthetic(spec)?;
    train.write(&out.join("train"))?;
    val.write(&out.join("val"))
}
