//! Two-level hierarchical synthetic embeddings.
//!
//! Superclass directions are uniform on the unit sphere. Each subclass mean
//! is its superclass direction plus a random offset of half the smallest gap
//! between superclass directions, renormalised, so siblings stay closer to
//! each other than to other branches. Image features are noisy copies of the
//! subclass mean; positive text features are copies displaced by an
//! independent "modality gap" draw; the negative text feature of a class is
//! the mean of every other class's positive text feature.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, EmbeddingBundle, LabeledMatrix, Matrix};
use crate::seed::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub super_count: usize,
    pub classes_per_super: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation of image noise.
    pub noise_sigma: f64,
    /// Per-coordinate standard deviation of the text offset.
    pub modality_gap: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl SyntheticParams {
    /// The 4x4, d=32 hierarchy used by the directional checks.
    pub fn standard() -> Self {
        Self {
            super_count: 4,
            classes_per_super: 4,
            dim: 32,
            noise_sigma: 0.35,
            modality_gap: 0.15,
            train_per_class: 64,
            test_per_class: 100,
            seed: 0,
        }
    }

    pub fn class_count(&self) -> usize {
        self.super_count * self.classes_per_super
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.dim < 2 {
            return Err(DataError::Validation(format!("synthetic dim must be at least 2, got {}", self.dim)));
        }
        if self.super_count == 0 || self.classes_per_super == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(DataError::Validation("synthetic counts must all be at least 1".into()));
        }
        for (name, v) in [("noise_sigma", self.noise_sigma), ("modality_gap", self.modality_gap)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DataError::Validation(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Superclass directions and subclass means, all unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyLayout {
    pub super_directions: Vec<Vec<f64>>,
    /// Indexed by class; class `k` belongs to superclass `k / classes_per_super`.
    pub class_means: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let g = gaussian(rng, dim);
        if g.iter().any(|x| *x != 0.0) {
            return normalized(g);
        }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn hierarchy_layout(p: &SyntheticParams) -> Result<HierarchyLayout, DataError> {
    p.validate()?;
    let mut rng = seed::rng_for(p.seed, &[tag::SYNTH, 0]);
    let super_directions: Vec<Vec<f64>> = (0..p.super_count).map(|_| random_unit(&mut rng, p.dim)).collect();

    let mut separation = std::f64::consts::SQRT_2;
    for i in 0..p.super_count {
        for j in i + 1..p.super_count {
            separation = separation.min(euclid(&super_directions[i], &super_directions[j]));
        }
    }
    let spread = 0.5 * separation;

    let class_means = (0..p.class_count())
        .map(|k| {
            let dir = &super_directions[k / p.classes_per_super];
            let offset = random_unit(&mut rng, p.dim);
            normalized(dir.iter().zip(&offset).map(|(d, o)| d + spread * o).collect())
        })
        .collect();
    Ok(HierarchyLayout { super_directions, class_means })
}

fn noisy_unit(rng: &mut impl Rng, mean: &[f64], sigma: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = mean.iter().map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return normalized(v);
        }
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn generate_synthetic(p: &SyntheticParams) -> Result<EmbeddingBundle, DataError> {
    let layout = hierarchy_layout(p)?;
    let k = p.class_count();

    let split = |tag_id: u64, per_class: usize| -> Result<LabeledMatrix, DataError> {
        let mut data = Vec::with_capacity(k * per_class * p.dim);
        let mut labels = Vec::with_capacity(k * per_class);
        for (c, mean) in layout.class_means.iter().enumerate() {
            let mut rng = seed::rng_for(p.seed, &[tag::SYNTH, tag_id, c as u64]);
            for _ in 0..per_class {
                data.extend(to_f32(&noisy_unit(&mut rng, mean, p.noise_sigma)));
                labels.push(c);
            }
        }
        Ok(LabeledMatrix::new(Matrix::new(k * per_class, p.dim, data)?, labels))
    };
    let train = split(2, p.train_per_class)?;
    let test = split(3, p.test_per_class)?;

    let text_pos: Vec<Vec<f64>> = layout
        .class_means
        .iter()
        .enumerate()
        .map(|(c, mean)| {
            let mut rng = seed::rng_for(p.seed, &[tag::SYNTH, 1, c as u64]);
            noisy_unit(&mut rng, mean, p.modality_gap)
        })
        .collect();
    let text_neg: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            if k == 1 {
                return text_pos[0].iter().map(|x| -x).collect();
            }
            let mut acc = vec![0.0; p.dim];
            for (_, t) in text_pos.iter().enumerate().filter(|(j, _)| *j != c) {
                acc.iter_mut().zip(t).for_each(|(a, x)| *a += x);
            }
            normalized(acc)
        })
        .collect();
    let text_matrix = |rows: &[Vec<f64>]| -> Result<LabeledMatrix, DataError> {
        let data = rows.iter().flat_map(|r| to_f32(r)).collect();
        Ok(LabeledMatrix::new(Matrix::new(k, p.dim, data)?, (0..k).collect()))
    };

    let class_names = (0..k)
        .map(|c| format!("super{}/sub{}", c / p.classes_per_super, c % p.classes_per_super))
        .collect();
    let metadata = BTreeMap::from([
        ("source".to_string(), "synthetic-hierarchical".to_string()),
        ("super_count".to_string(), p.super_count.to_string()),
        ("classes_per_super".to_string(), p.classes_per_super.to_string()),
        ("dim".to_string(), p.dim.to_string()),
        ("noise_sigma".to_string(), p.noise_sigma.to_string()),
        ("modality_gap".to_string(), p.modality_gap.to_string()),
        ("train_per_class".to_string(), p.train_per_class.to_string()),
        ("test_per_class".to_string(), p.test_per_class.to_string()),
        ("seed".to_string(), p.seed.to_string()),
        ("prompts_per_class".to_string(), "1".to_string()),
    ]);

    let bundle = EmbeddingBundle {
        dim: p.dim,
        class_names,
        train,
        test,
        text_positive: text_matrix(&text_pos)?,
        text_negative: text_matrix(&text_neg)?,
        metadata,
    };
    bundle.validate()?;
    Ok(bundle)
}
