use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::emb1::{read_array, write_array, Matrix};
use super::DataError;
use crate::poincare::EmbeddingVector;
use crate::textbank::{aggregate, AggregateMode, PromptBank, TextBank};
use crate::Result;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BUNDLE_FORMAT: &str = "tdha-embedding-bundle";
pub const BUNDLE_VERSION: u32 = 1;

/// Training samples per class a full 1/2/4/8/16-shot protocol needs.
pub const PROTOCOL_MIN_TRAIN: usize = 16;

const SPLITS: [&str; 4] = ["train", "test", "text_positive", "text_negative"];

/// Feature rows with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledMatrix {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Self {
        Self { features, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn vectors(&self) -> Result<Vec<EmbeddingVector>> {
        self.features
            .iter_rows()
            .map(|r| Ok(EmbeddingVector::from_f32(r)?))
            .collect()
    }

    pub fn count_per_class(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in &self.labels {
            if l < classes {
                counts[l] += 1;
            }
        }
        counts
    }
}

/// Train/test image embeddings and raw prompt embeddings for one dataset.
///
/// The text splits hold one row per prompt; rows are grouped into classes by
/// their labels and ensembled by [`EmbeddingBundle::text_bank`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    pub dim: usize,
    pub class_names: Vec<String>,
    pub train: LabeledMatrix,
    pub test: LabeledMatrix,
    pub text_positive: LabeledMatrix,
    pub text_negative: LabeledMatrix,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayRef {
    pub file: String,
    pub labels: Vec<usize>,
}

/// JSON side of a bundle directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub arrays: BTreeMap<String, ArrayRef>,
}

impl EmbeddingBundle {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    fn splits(&self) -> [(&'static str, &LabeledMatrix); 4] {
        [
            (SPLITS[0], &self.train),
            (SPLITS[1], &self.test),
            (SPLITS[2], &self.text_positive),
            (SPLITS[3], &self.text_negative),
        ]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let k = self.class_count();
        if k == 0 {
            return Err(DataError::Validation("bundle has no classes".into()));
        }
        if self.dim == 0 {
            return Err(DataError::Validation("bundle dim must be at least 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &self.class_names {
            if !seen.insert(name) {
                return Err(DataError::Validation(format!("duplicate class name {name:?}")));
            }
        }
        for (split, m) in self.splits() {
            if m.features.dim() != self.dim {
                return Err(DataError::DimMismatch {
                    what: format!("{split} features"),
                    expected: self.dim,
                    got: m.features.dim(),
                });
            }
            if m.features.rows() != m.labels.len() {
                return Err(DataError::Validation(format!(
                    "{split}: {} feature rows but {} labels",
                    m.features.rows(),
                    m.labels.len()
                )));
            }
            if let Some((row, &label)) = m.labels.iter().enumerate().find(|(_, &l)| l >= k) {
                return Err(DataError::LabelOutOfRange { split: split.into(), row, label, classes: k });
            }
            if let Some(bad) = m.features.data().iter().position(|x| !x.is_finite()) {
                return Err(DataError::Validation(format!(
                    "{split}: non-finite value at row {}",
                    bad / self.dim
                )));
            }
        }
        for (split, m) in [(SPLITS[2], &self.text_positive), (SPLITS[3], &self.text_negative)] {
            if let Some(c) = m.count_per_class(k).iter().position(|&n| n == 0) {
                return Err(DataError::Validation(format!(
                    "{split}: class {:?} has no prompt features",
                    self.class_names[c]
                )));
            }
        }
        Ok(())
    }

    /// Non-fatal issues, such as classes too small for the 16-shot protocol.
    pub fn warnings(&self) -> Vec<String> {
        self.train
            .count_per_class(self.class_count())
            .iter()
            .enumerate()
            .filter(|(_, &n)| n < PROTOCOL_MIN_TRAIN)
            .map(|(c, n)| {
                format!(
                    "class {:?} has {n} training samples (< {PROTOCOL_MIN_TRAIN}); some shot counts are infeasible",
                    self.class_names[c]
                )
            })
            .collect()
    }

    pub fn prompt_bank(&self) -> Result<PromptBank> {
        let k = self.class_count();
        let group = |m: &LabeledMatrix| -> Result<Vec<Vec<EmbeddingVector>>> {
            let mut out = vec![Vec::new(); k];
            for (row, &l) in m.features.iter_rows().zip(&m.labels) {
                out[l].push(EmbeddingVector::from_f32(row)?);
            }
            Ok(out)
        };
        Ok(PromptBank {
            class_names: self.class_names.clone(),
            positive: group(&self.text_positive)?,
            negative: group(&self.text_negative)?,
        })
    }

    pub fn text_bank(&self, mode: AggregateMode) -> Result<TextBank> {
        aggregate(&self.prompt_bank()?, mode)
    }

    pub fn manifest(&self) -> Manifest {
        let arrays = self
            .splits()
            .into_iter()
            .map(|(name, m)| (name.to_string(), ArrayRef { file: format!("{name}.emb1"), labels: m.labels.clone() }))
            .collect();
        Manifest {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            dim: self.dim,
            class_names: self.class_names.clone(),
            metadata: self.metadata.clone(),
            arrays,
        }
    }
}

/// Writes `manifest.json` plus one EMB1 file per split into `dir`.
pub fn write_bundle(bundle: &EmbeddingBundle, dir: &Path) -> Result<(), DataError> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let manifest = bundle.manifest();
    for (name, m) in bundle.splits() {
        write_array(&dir.join(&manifest.arrays[name].file), &m.features)?;
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json + "\n").map_err(|e| DataError::io(&path, e))
}

/// Reads and validates a bundle directory.
pub fn read_bundle(dir: &Path) -> Result<EmbeddingBundle, DataError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(DataError::Manifest(format!("unknown format {:?}", manifest.format)));
    }
    if manifest.version != BUNDLE_VERSION {
        return Err(DataError::Manifest(format!("unsupported manifest version {}", manifest.version)));
    }
    let load = |name: &str| -> Result<LabeledMatrix, DataError> {
        let entry = manifest
            .arrays
            .get(name)
            .ok_or_else(|| DataError::Manifest(format!("missing array entry {name:?}")))?;
        if entry.file.contains(['/', '\\']) || entry.file == ".." {
            return Err(DataError::Manifest(format!("array file {:?} must be a plain file name", entry.file)));
        }
        let features = read_array(&dir.join(&entry.file))?;
        Ok(LabeledMatrix::new(features, entry.labels.clone()))
    };
    let bundle = EmbeddingBundle {
        dim: manifest.dim,
        class_names: manifest.class_names.clone(),
        train: load("train")?,
        test: load("test")?,
        text_positive: load("text_positive")?,
        text_negative: load("text_negative")?,
        metadata: manifest.metadata.clone(),
    };
    if let Some(extra) = manifest.arrays.keys().find(|k| !SPLITS.contains(&k.as_str())) {
        return Err(DataError::Manifest(format!("unknown array entry {extra:?}")));
    }
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Emb1Error;

    pub(crate) fn toy() -> EmbeddingBundle {
        let m = |rows: &[[f32; 4]]| Matrix::from_rows(4, &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        EmbeddingBundle {
            dim: 4,
            class_names: vec!["cat".into(), "dog".into()],
            train: LabeledMatrix::new(
                m(&[[1.0, 0.0, 0.0, 0.0], [0.9, 0.1, 0.0, 0.0], [0.0, 1.0, 0.0, -0.0], [0.1, 0.9, 1e-40, 0.0]]),
                vec![0, 0, 1, 1],
            ),
            test: LabeledMatrix::new(m(&[[0.8, 0.2, 0.0, 0.0], [0.2, 0.8, 0.0, 0.0]]), vec![0, 1]),
            text_positive: LabeledMatrix::new(m(&[[1.0, 0.0, 0.1, 0.0], [0.0, 1.0, 0.1, 0.0]]), vec![0, 1]),
            text_negative: LabeledMatrix::new(m(&[[0.0, 1.0, 0.0, 0.1], [1.0, 0.0, 0.0, 0.1]]), vec![0, 1]),
            metadata: BTreeMap::from([("source".to_string(), "unit-test".to_string())]),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let b = toy();
        write_bundle(&b, dir.path()).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        for ((_, x), (_, y)) in b.splits().into_iter().zip(back.splits()) {
            assert!(x.features.bits_eq(&y.features));
            assert_eq!(x.labels, y.labels);
        }
        assert_eq!(back.metadata, b.metadata);
        assert_eq!(back.class_names, b.class_names);
    }

    #[test]
    fn short_text_bank_rejected_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = toy();
        b.text_negative = LabeledMatrix::new(Matrix::from_rows(4, &[vec![1.0, 0.0, 0.0, 0.0]]).unwrap(), vec![0]);
        assert!(matches!(write_bundle(&b, dir.path()), Err(DataError::Validation(_))));
        assert!(!dir.path().join(MANIFEST_FILE).exists());

        let mut b = toy();
        b.test.features = Matrix::from_rows(3, &[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert!(matches!(write_bundle(&b, dir.path()), Err(DataError::DimMismatch { .. })));
    }

    #[test]
    fn corrupted_files_yield_named_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&toy(), dir.path()).unwrap();

        let train = dir.path().join("train.emb1");
        let good = fs::read(&train).unwrap();
        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"EMB2");
        fs::write(&train, &bad).unwrap();
        assert!(matches!(
            read_bundle(dir.path()),
            Err(DataError::Emb1 { source: Emb1Error::BadMagic { .. }, .. })
        ));

        fs::write(&train, &good[..good.len() - 4]).unwrap();
        assert!(matches!(
            read_bundle(dir.path()),
            Err(DataError::Emb1 { source: Emb1Error::Truncated { .. }, .. })
        ));
        fs::write(&train, &good).unwrap();

        let mpath = dir.path().join(MANIFEST_FILE);
        let mut manifest: Manifest = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
        manifest.arrays.get_mut("test").unwrap().labels[1] = 2;
        fs::write(&mpath, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(matches!(
            read_bundle(dir.path()),
            Err(DataError::LabelOutOfRange { label: 2, classes: 2, .. })
        ));

        fs::write(&mpath, "{not json").unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(DataError::Manifest(_))));
    }

    #[test]
    fn text_bank_groups_prompts_by_label() {
        let mut b = toy();
        b.text_positive = LabeledMatrix::new(
            Matrix::from_rows(4, &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]).unwrap(),
            vec![1, 0, 1],
        );
        b.validate().unwrap();
        let bank = b.text_bank(AggregateMode::Normalized).unwrap();
        assert_eq!(bank.positive()[0], vec![0.0, 1.0, 0.0, 0.0]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((bank.positive()[1][0] - h).abs() < 1e-15 && (bank.positive()[1][2] - h).abs() < 1e-15);
    }

    #[test]
    fn warns_about_small_classes() {
        assert_eq!(toy().warnings().len(), 2);
    }
}
