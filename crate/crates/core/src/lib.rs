//! Diagnostics for how a trained CNN organizes imbalanced data, computed from
//! its penultimate-layer feature embeddings.
//!
//! - [`bundle`]: on-disk embedding/label/prediction bundles and per-class accuracy
//! - [`neighbors`]: exact K-nearest-neighbor graph
//! - [`archetypes`]: safe / border / rare / outlier categories and medoid prototypes
//! - [`adversary`]: nearest-adversary and validation false-positive profiles, FDR, KLD
//! - [`features`]: top-K latent feature overlap and feature density
//! - [`chroma`]: streaming salient-color histograms
//! - [`synth`]: seeded synthetic bundles with a nearest-centroid classifier
//! - [`pipeline`], [`report`], [`svg`]: the end-to-end run and its outputs

pub mod adversary;
pub mod archetypes;
pub mod bundle;
pub mod chroma;
pub mod error;
pub mod features;
pub mod neighbors;
pub mod pipeline;
pub mod report;
pub mod svg;
pub mod synth;

pub use error::{Error, Result};
