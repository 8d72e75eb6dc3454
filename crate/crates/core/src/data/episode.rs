use serde::{Deserialize, Serialize};

use super::{DataError, EmbeddingBundle};
use crate::prototype::SupportSet;
use crate::seed::{self, hash_str};
use crate::Result;

/// Shot counts of the standard few-shot protocol.
pub const PROTOCOL_SHOTS: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub shots: usize,
    pub seed: u64,
    pub episode_index: u64,
}

/// Training-row indices drawn for each class, sorted ascending.
///
/// Class `k` uses its own stream keyed by `(seed, episode_index, name_k)`, so
/// draws do not depend on class order or on which other classes exist.
pub fn sample_indices(bundle: &EmbeddingBundle, spec: &EpisodeSpec) -> Result<Vec<Vec<usize>>, DataError> {
    if spec.shots == 0 {
        return Err(DataError::Validation("shots must be at least 1".into()));
    }
    let k = bundle.class_count();
    let mut pools = vec![Vec::new(); k];
    for (row, &label) in bundle.train.labels.iter().enumerate() {
        pools[label].push(row);
    }
    pools
        .iter()
        .zip(&bundle.class_names)
        .map(|(pool, name)| {
            if pool.len() < spec.shots {
                return Err(DataError::InsufficientSamples {
                    class: name.clone(),
                    available: pool.len(),
                    requested: spec.shots,
                });
            }
            let mut rng = seed::rng_for(spec.seed, &[seed::tag::EPISODE, spec.episode_index, hash_str(name)]);
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), spec.shots)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            picked.sort_unstable();
            Ok(picked)
        })
        .collect()
}

/// Draws an N-shot support set from the bundle's training split.
pub fn sample_episode(bundle: &EmbeddingBundle, spec: &EpisodeSpec) -> Result<SupportSet> {
    let picks = sample_indices(bundle, spec)?;
    let mut features = Vec::with_capacity(picks.len() * spec.shots);
    let mut labels = Vec::with_capacity(features.capacity());
    for (class, rows) in picks.iter().enumerate() {
        for &r in rows {
            features.push(crate::EmbeddingVector::from_f32(bundle.train.features.row(r))?);
            labels.push(class);
        }
    }
    SupportSet::new(features, labels, bundle.class_names.clone())
}
