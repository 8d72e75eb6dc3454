//! Positive and negative class prototypes from an N-shot support set.
//!
//! The positive prototype of class `k` is the exponential map of the mean of
//! its support features. The negative prototype averages one randomly drawn
//! support feature from every other class, after mapping each into the ball.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::poincare::{
    ambient_mean, check_dims, exp_map_slice, norm, tangent_mean, BallPoint, EmbeddingVector,
};
use crate::seed::{self, hash_str};
use crate::{Error, Result};

pub const DEFAULT_SCALE: f64 = 0.5;

/// How the K−1 mapped negatives of a class are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanMode {
    /// Coordinate-wise mean of the ball points.
    #[default]
    Ambient,
    /// `exp_0` of the mean of `log_0` of the ball points.
    Tangent,
}

impl FromStr for MeanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ambient" => Ok(Self::Ambient),
            "tangent" => Ok(Self::Tangent),
            other => Err(Error::invalid(format!("unknown mean mode {other:?} (expected ambient or tangent)"))),
        }
    }
}

impl fmt::Display for MeanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ambient => "ambient",
            Self::Tangent => "tangent",
        })
    }
}

/// `N` labelled support features for each of `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    features: Vec<EmbeddingVector>,
    labels: Vec<usize>,
    shots: usize,
    class_names: Vec<String>,
    /// `by_class[k]` lists indices into `features`, in input order.
    by_class: Vec<Vec<usize>>,
}

impl SupportSet {
    pub fn new(
        features: Vec<EmbeddingVector>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let k = class_names.len();
        if k == 0 {
            return Err(Error::invalid("support set needs at least one class"));
        }
        if features.len() != labels.len() {
            return Err(Error::Shape { expected: features.len(), got: labels.len() });
        }
        let dim = features
            .first()
            .map(EmbeddingVector::dim)
            .ok_or_else(|| Error::invalid("empty support set"))?;
        let mut by_class = vec![Vec::new(); k];
        for (i, (f, &l)) in features.iter().zip(&labels).enumerate() {
            check_dims(dim, f.dim())?;
            if l >= k {
                return Err(Error::invalid(format!("support label {l} out of range for {k} classes")));
            }
            by_class[l].push(i);
        }
        let shots = by_class[0].len();
        for (c, idx) in by_class.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::invalid(format!("class {:?} has no support samples", class_names[c])));
            }
            if idx.len() != shots {
                return Err(Error::invalid(format!(
                    "class {:?} has {} support samples, expected {shots}",
                    class_names[c],
                    idx.len()
                )));
            }
        }
        Ok(Self { features, labels, shots, class_names, by_class })
    }

    /// Support set with classes named `class_0 .. class_{K-1}`.
    pub fn with_default_names(
        features: Vec<EmbeddingVector>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let names = (0..class_count).map(|k| format!("class_{k}")).collect();
        Self::new(features, labels, names)
    }

    pub fn features(&self) -> &[EmbeddingVector] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn dim(&self) -> usize {
        self.features[0].dim()
    }

    pub fn class_features(&self, k: usize) -> impl Iterator<Item = &EmbeddingVector> {
        self.by_class[k].iter().map(move |&i| &self.features[i])
    }

    /// Copy with every feature passed through [`preprocess_feature`].
    pub fn preprocessed(&self, scale: f64) -> Result<Self> {
        let features = self
            .features
            .iter()
            .map(|f| preprocess_feature(f, scale))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { features, ..self.clone() })
    }
}

/// L2-normalise, then rescale to norm `scale`.
pub fn preprocess_feature(v: &EmbeddingVector, scale: f64) -> Result<EmbeddingVector> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    Ok(EmbeddingVector::new(preprocess_slice(v.as_slice(), scale)?)?)
}

pub(crate) fn preprocess_slice(v: &[f64], scale: f64) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::Degenerate("cannot normalise a zero feature vector".into()));
    }
    let s = scale / n;
    Ok(v.iter().map(|x| x * s).collect())
}

fn mean_of<'a>(vectors: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for v in vectors {
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
        count += 1;
    }
    let n = count as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Class means of the (already preprocessed) support features.
pub fn euclidean_class_means(support: &SupportSet) -> Vec<Vec<f64>> {
    (0..support.class_count())
        .map(|k| mean_of(support.class_features(k).map(EmbeddingVector::as_slice), support.dim()))
        .collect()
}

/// Positive hyperbolic prototypes: `exp_0` of each class mean.
pub fn build_positive(support: &SupportSet) -> Vec<BallPoint> {
    euclidean_class_means(support).iter().map(|m| exp_map_slice(m)).collect()
}

/// Index into class `other`'s support samples drawn for the negative of `owner`.
///
/// Keyed by both class names so relabelling or reordering classes leaves
/// every draw unchanged.
fn negative_draw(seed: u64, owner: &str, other: &str, shots: usize) -> usize {
    let mut rng = seed::rng_for(seed, &[seed::tag::NEGATIVE, hash_str(owner), hash_str(other)]);
    rng.random_range(0..shots)
}

/// For each class, the support features drawn from every other class.
fn negative_samples(support: &SupportSet, seed: u64) -> Result<Vec<Vec<&EmbeddingVector>>> {
    Ok(negative_draws(support, seed)?
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| &support.features[i]).collect())
        .collect())
}

/// Indices into `support.features()` drawn for each class's negative
/// prototype, one per other class, in class order.
pub fn negative_draws(support: &SupportSet, seed: u64) -> Result<Vec<Vec<usize>>> {
    if support.class_count() < 2 {
        return Err(Error::invalid("negative prototypes need at least two classes"));
    }
    let names = support.class_names();
    let k = support.class_count();
    Ok((0..k)
        .map(|owner| {
            (0..k)
                .filter(|&other| other != owner)
                .map(|other| support.by_class[other][negative_draw(seed, &names[owner], &names[other], support.shots())])
                .collect()
        })
        .collect())
}

/// Negative hyperbolic prototypes.
pub fn build_negative(support: &SupportSet, seed: u64, mode: MeanMode) -> Result<Vec<BallPoint>> {
    negative_samples(support, seed)?
        .into_iter()
        .map(|drawn| {
            let mapped: Vec<BallPoint> = drawn.iter().map(|f| exp_map_slice(f.as_slice())).collect();
            let mean = match mode {
                MeanMode::Ambient => ambient_mean(&mapped)?,
                MeanMode::Tangent => tangent_mean(&mapped)?,
            };
            Ok(mean)
        })
        .collect()
}

/// Positive and negative prototypes for every class.
///
/// The Euclidean class means and negative means are kept alongside the ball
/// points so the cosine-similarity variant of the image streams can be run on
/// exactly the same draws.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub positive: Vec<BallPoint>,
    pub negative: Vec<BallPoint>,
    pub positive_euclidean: Vec<Vec<f64>>,
    pub negative_euclidean: Vec<Vec<f64>>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrototypeConfig {
    pub scale: f64,
    pub seed: u64,
    pub mean_mode: MeanMode,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        Self { scale: DEFAULT_SCALE, seed: 0, mean_mode: MeanMode::Ambient }
    }
}

impl PrototypeSet {
    /// Preprocesses `support` and builds both prototype families.
    pub fn build(support: &SupportSet, config: &PrototypeConfig) -> Result<Self> {
        let support = support.preprocessed(config.scale)?;
        Self::from_preprocessed(&support, config.seed, config.mean_mode)
    }

    pub fn from_preprocessed(support: &SupportSet, seed: u64, mode: MeanMode) -> Result<Self> {
        let positive_euclidean = euclidean_class_means(support);
        let positive: Vec<BallPoint> = positive_euclidean.iter().map(|m| exp_map_slice(m)).collect();
        let negative = build_negative(support, seed, mode)?;
        let negative_euclidean = negative_samples(support, seed)?
            .into_iter()
            .map(|drawn| mean_of(drawn.into_iter().map(EmbeddingVector::as_slice), support.dim()))
            .collect();

        let diagnostics = positive
            .iter()
            .zip(&negative)
            .enumerate()
            .filter(|(_, (p, n))| p == n)
            .map(|(k, _)| {
                format!(
                    "class {:?}: negative prototype coincides with positive prototype",
                    support.class_names()[k]
                )
            })
            .collect();

        Ok(Self { positive, negative, positive_euclidean, negative_euclidean, diagnostics })
    }

    pub fn class_count(&self) -> usize {
        self.positive.len()
    }

    pub fn dim(&self) -> usize {
        self.positive[0].dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ev(c: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(c.to_vec()).unwrap()
    }

    const TANH_POINT_THREE: f64 = 0.2913126124515905;

    #[test]
    fn preprocess_examples() {
        let v = preprocess_feature(&ev(&[3.0, 4.0]), 0.5).unwrap();
        assert_relative_eq!(v.as_slice()[0], 0.3, max_relative = 1e-15);
        assert_relative_eq!(v.as_slice()[1], 0.4, max_relative = 1e-15);
        assert_eq!(preprocess_feature(&ev(&[0.5, 0.0]), 1.0).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(matches!(preprocess_feature(&ev(&[0.0, 0.0]), 0.5), Err(Error::Degenerate(_))));
        assert!(preprocess_feature(&ev(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn positive_prototype_examples() {
        let s = SupportSet::with_default_names(vec![ev(&[0.2, 0.0]), ev(&[0.4, 0.0])], vec![0, 0], 1)
            .unwrap();
        let p = build_positive(&s);
        assert_relative_eq!(p[0].coords()[0], TANH_POINT_THREE, max_relative = 1e-14);
        assert_relative_eq!(p[0].coords()[0], 0.29131, epsilon = 5e-6);
        assert_eq!(p[0].coords()[1], 0.0);

        let f = [0.1, -0.2, 0.05];
        let s = SupportSet::with_default_names(vec![ev(&f), ev(&f), ev(&f)], vec![0; 3], 1).unwrap();
        assert_eq!(build_positive(&s)[0], exp_map_slice(&f));

        let s = SupportSet::with_default_names(vec![ev(&f)], vec![0], 1).unwrap();
        assert_eq!(build_positive(&s)[0], exp_map_slice(&f));
    }

    #[test]
    fn unequal_or_missing_shots_rejected() {
        let r = SupportSet::with_default_names(vec![ev(&[1.0]), ev(&[2.0]), ev(&[3.0])], vec![0, 0, 1], 2);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
        let r = SupportSet::with_default_names(vec![ev(&[1.0]), ev(&[2.0])], vec![0, 0], 2);
        assert!(matches!(r, Err(Error::InvalidInput(m)) if m.contains("no support")));
        let r = SupportSet::with_default_names(vec![ev(&[1.0])], vec![3], 2);
        assert!(r.is_err());
    }

    #[test]
    fn negative_for_cat_is_mean_of_dog_and_bird() {
        let names = vec!["cat".to_string(), "dog".to_string(), "bird".to_string()];
        let s = SupportSet::new(
            vec![ev(&[0.3, 0.0]), ev(&[0.0, 0.3]), ev(&[-0.2, -0.2])],
            vec![0, 1, 2],
            names,
        )
        .unwrap();
        let neg = build_negative(&s, 11, MeanMode::Ambient).unwrap();
        let h_dog = exp_map_slice(&[0.0, 0.3]);
        let h_bird = exp_map_slice(&[-0.2, -0.2]);
        let expected = ambient_mean(&[h_dog, h_bird]).unwrap();
        assert_eq!(neg[0], expected);
    }

    #[test]
    fn two_class_negative_is_the_other_class_sample() {
        let s = SupportSet::with_default_names(
            vec![ev(&[0.3, 0.0]), ev(&[0.1, 0.1]), ev(&[0.0, 0.3]), ev(&[-0.1, 0.2])],
            vec![0, 0, 1, 1],
            2,
        )
        .unwrap();
        for seed in 0..10 {
            for mode in [MeanMode::Ambient, MeanMode::Tangent] {
                let neg = build_negative(&s, seed, mode).unwrap();
                let i = negative_draw(seed, "class_0", "class_1", 2);
                let drawn = s.class_features(1).nth(i).unwrap();
                let mapped = exp_map_slice(drawn.as_slice());
                for (a, b) in neg[0].coords().iter().zip(mapped.coords()) {
                    assert_relative_eq!(*a, *b, max_relative = 1e-14);
                }
            }
        }
    }

    #[test]
    fn negatives_need_two_classes() {
        let s = SupportSet::with_default_names(vec![ev(&[0.3, 0.0])], vec![0], 1).unwrap();
        assert!(matches!(build_negative(&s, 0, MeanMode::Ambient), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let feats: Vec<_> = (0..12).map(|i| ev(&[(i as f64).sin(), (i as f64).cos(), 0.5])).collect();
        let labels: Vec<_> = (0..12).map(|i| i % 3).collect();
        let s = SupportSet::with_default_names(feats, labels, 3).unwrap();
        let cfg = PrototypeConfig { seed: 99, ..Default::default() };
        let a = PrototypeSet::build(&s, &cfg).unwrap();
        let b = PrototypeSet::build(&s, &cfg).unwrap();
        for (x, y) in a.negative.iter().zip(&b.negative) {
            let xb: Vec<u64> = x.coords().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.coords().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn coinciding_prototypes_are_flagged() {
        // Two classes with identical single samples: negative of each equals positive.
        let s = SupportSet::with_default_names(vec![ev(&[0.3, 0.1]), ev(&[0.3, 0.1])], vec![0, 1], 2)
            .unwrap();
        let set = PrototypeSet::build(&s, &PrototypeConfig::default()).unwrap();
        assert_eq!(set.diagnostics.len(), 2);
    }

    #[test]
    fn mean_mode_parses() {
        assert_eq!("tangent".parse::<MeanMode>().unwrap(), MeanMode::Tangent);
        assert!("median".parse::<MeanMode>().is_err());
    }
}
