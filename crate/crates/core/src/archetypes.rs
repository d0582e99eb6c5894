//! Safe / border / rare / outlier archetypes from same-class neighbor counts,
//! plus one medoid prototype per (class, category).

use std::fmt;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{EmbeddingTable, LabelVector, PredictionVector};
use crate::error::{Error, Result};
use crate::neighbors::squared_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Safe,
    Border,
    Rare,
    Outlier,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Safe, Category::Border, Category::Rare, Category::Outlier];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Safe => "safe",
            Category::Border => "border",
            Category::Rare => "rare",
            Category::Outlier => "outlier",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// N_c ranges for each category. Must be disjoint and together cover `0..=k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Thresholds {
    pub k: u32,
    pub safe: RangeInclusive<u32>,
    pub border: RangeInclusive<u32>,
    pub rare: RangeInclusive<u32>,
    pub outlier: RangeInclusive<u32>,
}

impl Thresholds {
    /// The K=5 table: 4-5 safe, 2-3 border, 1 rare, 0 outlier.
    pub fn k5() -> Self {
        Thresholds {
            k: 5,
            safe: 4..=5,
            border: 2..=3,
            rare: 1..=1,
            outlier: 0..=0,
        }
    }

    /// Parses `"safe,border,rare,outlier"` ranges such as `"6-7,3-5,1-2,0"`.
    pub fn parse(k: u32, spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::invalid(format!(
                "expected 4 comma-separated ranges (safe,border,rare,outlier), got {spec:?}"
            )));
        }
        let range = |s: &str| -> Result<RangeInclusive<u32>> {
            let bad = || Error::invalid(format!("bad N_c range {s:?}"));
            let (lo, hi) = match s.split_once('-') {
                Some((lo, hi)) => (lo.trim(), hi.trim()),
                None => (s, s),
            };
            let lo: u32 = lo.parse().map_err(|_| bad())?;
            let hi: u32 = hi.parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(bad());
            }
            Ok(lo..=hi)
        };
        let t = Thresholds {
            k,
            safe: range(parts[0])?,
            border: range(parts[1])?,
            rare: range(parts[2])?,
            outlier: range(parts[3])?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for n in 0..=self.k {
            let hits = Category::ALL.iter().filter(|c| self.range(**c).contains(&n)).count();
            if hits != 1 {
                return Err(Error::invalid(format!(
                    "archetype thresholds must assign N_c={n} to exactly one category (got {hits})"
                )));
            }
        }
        if Category::ALL.iter().any(|c| *self.range(*c).end() > self.k) {
            return Err(Error::invalid("archetype threshold exceeds k"));
        }
        Ok(())
    }

    fn range(&self, c: Category) -> &RangeInclusive<u32> {
        match c {
            Category::Safe => &self.safe,
            Category::Border => &self.border,
            Category::Rare => &self.rare,
            Category::Outlier => &self.outlier,
        }
    }

    pub fn categorize(&self, n_same: u32) -> Option<Category> {
        Category::ALL.into_iter().find(|c| self.range(*c).contains(&n_same))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchetypeAssignment {
    pub categories: Vec<Category>,
    pub n_same: Vec<u32>,
}

impl ArchetypeAssignment {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// `[class][category]` instance counts.
    pub fn counts(&self, labels: &LabelVector, class_count: usize) -> Vec<[u64; 4]> {
        let mut out = vec![[0u64; 4]; class_count];
        for (y, c) in labels.iter().zip(&self.categories) {
            out[y as usize][c.index()] += 1;
        }
        out
    }
}

/// Maps each N_c onto a category. With `thresholds == None` only k = 5 is accepted.
pub fn assign_archetypes(n_same: &[u32], k: u32, thresholds: Option<&Thresholds>) -> Result<ArchetypeAssignment> {
    let default;
    let table = match thresholds {
        Some(t) => {
            if t.k != k {
                return Err(Error::invalid(format!("thresholds are for k={}, got k={k}", t.k)));
            }
            t.validate()?;
            t
        }
        None if k == 5 => {
            default = Thresholds::k5();
            &default
        }
        None => {
            return Err(Error::invalid(format!(
                "archetype mapping is defined for k=5 only; supply thresholds for k={k}"
            )))
        }
    };
    let categories = n_same
        .iter()
        .map(|&n| {
            table
                .categorize(n)
                .ok_or_else(|| Error::invalid(format!("same-class count {n} exceeds k={k}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ArchetypeAssignment {
        categories,
        n_same: n_same.to_vec(),
    })
}

/// Denominator used for the true-positive rate of a (class, category) group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TpNormalization {
    /// Correct count over the group's own size.
    #[default]
    WithinCategory,
    /// Correct count over the whole class size.
    WithinClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeTpRow {
    pub class_id: u32,
    pub category: Category,
    pub count: u64,
    pub correct: u64,
    /// Absent when the group is empty.
    pub tp_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeTpReport {
    pub normalization: TpNormalization,
    pub rows: Vec<ArchetypeTpRow>,
}

impl ArchetypeTpReport {
    pub fn get(&self, class_id: u32, category: Category) -> &ArchetypeTpRow {
        &self.rows[class_id as usize * 4 + category.index()]
    }
}

pub fn archetype_tp_report(
    assignment: &ArchetypeAssignment,
    labels: &LabelVector,
    predictions: &PredictionVector,
    class_count: usize,
    normalization: TpNormalization,
) -> Result<ArchetypeTpReport> {
    for (what, len) in [("labels", labels.len()), ("predictions", predictions.len())] {
        if len != assignment.len() {
            return Err(Error::LengthMismatch {
                what,
                expected: assignment.len(),
                actual: len,
            });
        }
    }
    labels.check_range(class_count)?;
    let mut count = vec![[0u64; 4]; class_count];
    let mut correct = vec![[0u64; 4]; class_count];
    for ((y, p), c) in labels.iter().zip(predictions.iter()).zip(&assignment.categories) {
        count[y as usize][c.index()] += 1;
        if y == p {
            correct[y as usize][c.index()] += 1;
        }
    }
    let mut rows = Vec::with_capacity(class_count * 4);
    for class in 0..class_count {
        let class_size: u64 = count[class].iter().sum();
        for cat in Category::ALL {
            let n = count[class][cat.index()];
            let hit = correct[class][cat.index()];
            let denom = match normalization {
                TpNormalization::WithinCategory => n,
                TpNormalization::WithinClass => class_size,
            };
            rows.push(ArchetypeTpRow {
                class_id: class as u32,
                category: cat,
                count: n,
                correct: hit,
                tp_rate: (n > 0).then(|| hit as f64 / denom as f64),
            });
        }
    }
    Ok(ArchetypeTpReport { normalization, rows })
}

/// Medoid instance index per `[class][category]`; `None` for empty groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrototypeSet {
    pub medoids: Vec<[Option<u32>; 4]>,
}

impl PrototypeSet {
    pub fn get(&self, class_id: u32, category: Category) -> Option<u32> {
        self.medoids[class_id as usize][category.index()]
    }
}

/// Index (into `members`) of the member minimizing the summed Euclidean
/// distance to all members; ties go to the lower instance index.
pub fn medoid(embeddings: &EmbeddingTable, members: &[u32]) -> Option<u32> {
    members
        .par_iter()
        .map(|&s| {
            let row = embeddings.row(s as usize);
            let total: f64 = members
                .iter()
                .map(|&t| squared_distance(row, embeddings.row(t as usize)).sqrt())
                .sum();
            (total, s)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, s)| s)
}

pub fn select_prototypes(
    embeddings: &EmbeddingTable,
    labels: &LabelVector,
    assignment: &ArchetypeAssignment,
    class_count: usize,
) -> Result<PrototypeSet> {
    if labels.len() != assignment.len() || embeddings.rows() != assignment.len() {
        return Err(Error::LengthMismatch {
            what: "labels/embeddings",
            expected: assignment.len(),
            actual: labels.len().min(embeddings.rows()),
        });
    }
    labels.check_range(class_count)?;
    let mut groups: Vec<[Vec<u32>; 4]> = vec![Default::default(); class_count];
    for (i, (y, c)) in labels.iter().zip(&assignment.categories).enumerate() {
        groups[y as usize][c.index()].push(i as u32);
    }
    let medoids = groups
        .iter()
        .map(|per_cat| {
            let mut out = [None; 4];
            for (slot, members) in out.iter_mut().zip(per_cat) {
                *slot = medoid(embeddings, members);
            }
            out
        })
        .collect();
    Ok(PrototypeSet { medoids })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k5_table() {
        let a = assign_archetypes(&[0, 1, 2, 3, 4, 5], 5, None).unwrap();
        use Category::*;
        assert_eq!(a.categories, vec![Outlier, Rare, Border, Border, Safe, Safe]);
    }

    #[test]
    fn other_k_needs_thresholds() {
        assert!(assign_archetypes(&[0, 1], 3, None).is_err());
        let t = Thresholds {
            k: 3,
            safe: 3..=3,
            border: 2..=2,
            rare: 1..=1,
            outlier: 0..=0,
        };
        let a = assign_archetypes(&[3, 0], 3, Some(&t)).unwrap();
        assert_eq!(a.categories, vec![Category::Safe, Category::Outlier]);
        let overlapping = Thresholds { border: 1..=2, ..t.clone() };
        assert!(assign_archetypes(&[0], 3, Some(&overlapping)).is_err());
        let gap = Thresholds { rare: 9..=9, ..t.clone() };
        assert!(assign_archetypes(&[0], 3, Some(&gap)).is_err());
        assert_eq!(Thresholds::parse(3, "3, 2, 1, 0").unwrap(), t);
        assert_eq!(Thresholds::parse(5, "4-5,2-3,1,0").unwrap(), Thresholds::k5());
        assert!(Thresholds::parse(5, "4-5,2-3,1").is_err());
        assert!(Thresholds::parse(5, "5-4,2-3,1,0").is_err());
        assert!(assign_archetypes(&[6], 5, None).is_err());
    }

    #[test]
    fn tp_rate_ratio_and_empty_groups() {
        let a = assign_archetypes(&[5, 5, 5, 5, 0], 5, None).unwrap();
        let labels: LabelVector = vec![0, 0, 0, 0, 1].into();
        let preds: PredictionVector = vec![0, 0, 0, 1, 1].into();
        let r = archetype_tp_report(&a, &labels, &preds, 2, TpNormalization::WithinCategory).unwrap();
        assert_eq!(r.get(0, Category::Safe).tp_rate, Some(0.75));
        assert_eq!(r.get(0, Category::Border).tp_rate, None);
        assert_eq!(r.get(1, Category::Outlier).tp_rate, Some(1.0));

        let all = archetype_tp_report(&a, &labels, &labels, 2, TpNormalization::WithinCategory).unwrap();
        assert!(all.rows.iter().all(|r| r.tp_rate.is_none_or(|t| t == 1.0)));
    }

    #[test]
    fn within_class_normalization() {
        let a = assign_archetypes(&[5, 5, 2, 2], 5, None).unwrap();
        let labels: LabelVector = vec![0, 0, 0, 0].into();
        let preds: PredictionVector = vec![0, 0, 0, 1].into();
        let r = archetype_tp_report(&a, &labels, &preds, 1, TpNormalization::WithinClass).unwrap();
        assert_eq!(r.get(0, Category::Safe).tp_rate, Some(0.5));
        assert_eq!(r.get(0, Category::Border).tp_rate, Some(0.25));
    }

    #[test]
    fn medoid_examples() {
        let e = EmbeddingTable::from_rows(&[vec![0.0], vec![1.0], vec![4.0]]).unwrap();
        assert_eq!(medoid(&e, &[0, 1, 2]), Some(1));
        assert_eq!(medoid(&e, &[2]), Some(2));
        assert_eq!(medoid(&e, &[2, 0]), Some(0));
        assert_eq!(medoid(&e, &[]), None);
    }

    #[test]
    fn prototypes_stay_in_their_group() {
        let e = EmbeddingTable::from_rows(&[vec![0.0], vec![1.0], vec![4.0], vec![9.0]]).unwrap();
        let a = assign_archetypes(&[5, 5, 5, 0], 5, None).unwrap();
        let labels: LabelVector = vec![0, 0, 0, 1].into();
        let p = select_prototypes(&e, &labels, &a, 2).unwrap();
        assert_eq!(p.get(0, Category::Safe), Some(1));
        assert_eq!(p.get(1, Category::Outlier), Some(3));
        assert_eq!(p.get(1, Category::Safe), None);
    }
}
