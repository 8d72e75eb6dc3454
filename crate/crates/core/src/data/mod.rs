//! Embedding bundles on disk, few-shot episodes, and synthetic data.

pub mod emb1;

mod bundle;
mod episode;
mod synthetic;

pub use bundle::{read_bundle, write_bundle, EmbeddingBundle, LabeledMatrix, Manifest, MANIFEST_FILE};
pub use emb1::{Emb1Error, Matrix};
pub use episode::{sample_episode, sample_indices, EpisodeSpec, PROTOCOL_SHOTS};
pub use synthetic::{generate_synthetic, hierarchy_layout, HierarchyLayout, SyntheticParams};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Emb1 {
        path: String,
        #[source]
        source: Emb1Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("{split} label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange { split: String, row: usize, label: usize, classes: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimMismatch { what: String, expected: usize, got: usize },
    #[error("class {class:?} has {available} training samples, {requested} requested")]
    InsufficientSamples { class: String, available: usize, requested: usize },
    #[error("invalid bundle: {0}")]
    Validation(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}
