//! The four prediction streams and their fusion.
//!
//! ```text
//! P_II = softmax(-eps * d(h, P+))  +  softmax(eps * d(h, N-))
//! P_IT = softmax(cos(v, t+) / tau) +  softmax(-cos(v, t-) / tau)
//! P    = alpha * P_II + P_IT
//! ```
//!
//! Streams that are switched off in [`Components`] are skipped; a sum with a
//! single operand passes it through unchanged, and the final fusion with only
//! one branch present is `alpha * P_II` or `P_IT` alone.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::poincare::{check_dims, distance_unchecked, dot, exp_map_slice, norm, BallPoint, EmbeddingVector};
use crate::prototype::{preprocess_slice, PrototypeSet};
use crate::textbank::TextBank;
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 1.2;
pub const DEFAULT_EPSILON: f64 = 5.0;
pub const DEFAULT_TAU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    IipPos,
    IipNeg,
    ItpPos,
    ItpNeg,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::IipPos, Component::IipNeg, Component::ItpPos, Component::ItpNeg];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::IipPos => "iip+",
            Self::IipNeg => "iip-",
            Self::ItpPos => "itp+",
            Self::ItpNeg => "itp-",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "iip+" => Ok(Self::IipPos),
            "iip-" => Ok(Self::IipNeg),
            "itp+" => Ok(Self::ItpPos),
            "itp-" => Ok(Self::ItpNeg),
            other => Err(Error::invalid(format!(
                "unknown component {other:?} (expected iip+, iip-, itp+ or itp-)"
            ))),
        }
    }
}

/// Non-empty set of enabled streams.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Components(u8);

impl Components {
    pub const FULL: Components = Components(0b1111);

    pub fn new(items: &[Component]) -> Result<Self> {
        let bits = items.iter().fold(0u8, |acc, c| acc | c.bit());
        if bits == 0 {
            return Err(Error::invalid("at least one component must be enabled"));
        }
        Ok(Self(bits))
    }

    pub fn contains(self, c: Component) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Component> {
        Component::ALL.into_iter().filter(move |c| self.contains(c.to_owned()))
    }

    pub fn uses_images(self) -> bool {
        self.contains(Component::IipPos) || self.contains(Component::IipNeg)
    }

    pub fn uses_text(self) -> bool {
        self.contains(Component::ItpPos) || self.contains(Component::ItpNeg)
    }
}

impl FromStr for Components {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let items = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Component>>>()?;
        Self::new(&items)
    }
}

impl fmt::Display for Components {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.iter().map(Component::as_str).collect();
        f.write_str(&parts.join(","))
    }
}

impl fmt::Debug for Components {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Components({self})")
    }
}

impl Serialize for Components {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter().map(Component::as_str))
    }
}

impl<'de> Deserialize<'de> for Components {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let items: Vec<String> = Vec::deserialize(d)?;
        Components::from_str(&items.join(",")).map_err(serde::de::Error::custom)
    }
}

/// Similarity used by the image-image streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Poincaré distance between ball points.
    #[default]
    Hd,
    /// Negative cosine similarity between the un-mapped Euclidean vectors.
    Ecs,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hd" => Ok(Self::Hd),
            "ecs" => Ok(Self::Ecs),
            other => Err(Error::invalid(format!("unknown metric {other:?} (expected hd or ecs)"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hd => "hd",
            Self::Ecs => "ecs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Weight of the image-image branch in the final sum.
    pub alpha: f64,
    /// Temperature applied to hyperbolic distances.
    pub epsilon: f64,
    /// Softmax temperature of the text streams.
    pub tau: f64,
    pub components: Components,
    pub metric: Metric,
    /// Divide the final scores by their sum. Reporting only; argmax is unaffected.
    pub renormalize: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            epsilon: DEFAULT_EPSILON,
            tau: DEFAULT_TAU,
            components: Components::FULL,
            metric: Metric::Hd,
            renormalize: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector {
    pub scores: Vec<f64>,
    /// True for single-stream softmax outputs, false for fused sums.
    pub normalized: bool,
}

impl PredictionVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Index of the largest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.scores)
    }

    pub fn renormalized(&self) -> Self {
        let total: f64 = self.scores.iter().sum();
        Self { scores: self.scores.iter().map(|s| s / total).collect(), normalized: true }
    }
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> PredictionVector {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    PredictionVector { scores: exps.into_iter().map(|e| e / total).collect(), normalized: true }
}

fn nonempty(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("need at least one class"));
    }
    Ok(())
}

fn ball_distances(h: &BallPoint, points: &[BallPoint]) -> Result<Vec<f64>> {
    nonempty(points.len())?;
    points
        .iter()
        .map(|p| {
            check_dims(h.dim(), p.dim())?;
            Ok(distance_unchecked(h.coords(), p.coords()))
        })
        .collect()
}

/// `softmax(-eps * d(h, P_k))`.
pub fn predict_hyperbolic_positive(h: &BallPoint, prototypes: &[BallPoint], epsilon: f64) -> Result<PredictionVector> {
    let d = ball_distances(h, prototypes)?;
    Ok(softmax(&d.iter().map(|x| -epsilon * x).collect::<Vec<_>>()))
}

/// `softmax(eps * d(h, N_k))`: the farther from a class's negative prototype,
/// the likelier the class.
pub fn predict_hyperbolic_negative(h: &BallPoint, negatives: &[BallPoint], epsilon: f64) -> Result<PredictionVector> {
    let d = ball_distances(h, negatives)?;
    Ok(softmax(&d.iter().map(|x| epsilon * x).collect::<Vec<_>>()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn cosines(v: &[f64], bank: &[Vec<f64>]) -> Result<Vec<f64>> {
    nonempty(bank.len())?;
    if norm(v) == 0.0 {
        return Err(Error::Degenerate("zero test feature vector".into()));
    }
    bank.iter()
        .map(|t| {
            check_dims(v.len(), t.len())?;
            Ok(cosine(v, t))
        })
        .collect()
}

/// `softmax(±cos(v, t_k) / tau)`, sign given by `polarity`.
pub fn predict_text(v: &EmbeddingVector, bank: &[Vec<f64>], tau: f64, polarity: Polarity) -> Result<PredictionVector> {
    let sims = cosines(v.as_slice(), bank)?;
    let sign = match polarity {
        Polarity::Positive => 1.0,
        Polarity::Negative => -1.0,
    };
    Ok(softmax(&sims.iter().map(|s| sign * s / tau).collect::<Vec<_>>()))
}

fn add(a: &PredictionVector, b: &PredictionVector) -> Result<PredictionVector> {
    if a.len() != b.len() {
        return Err(Error::Shape { expected: a.len(), got: b.len() });
    }
    Ok(PredictionVector {
        scores: a.scores.iter().zip(&b.scores).map(|(x, y)| x + y).collect(),
        normalized: false,
    })
}

/// `P_II = P_h+ + P_h-`.
pub fn fuse_image_image(p_pos: &PredictionVector, p_neg: &PredictionVector) -> Result<PredictionVector> {
    add(p_pos, p_neg)
}

/// `P_IT = P_t+ + P_t-`.
pub fn fuse_image_text(p_pos: &PredictionVector, p_neg: &PredictionVector) -> Result<PredictionVector> {
    add(p_pos, p_neg)
}

/// Sum of whichever operands are present; `None` when both are absent.
pub fn fuse_optional(a: Option<PredictionVector>, b: Option<PredictionVector>) -> Result<Option<PredictionVector>> {
    match (a, b) {
        (Some(a), Some(b)) => add(&a, &b).map(Some),
        (a, b) => Ok(a.or(b)),
    }
}

/// `alpha * P_II + P_IT`.
pub fn fuse_final(p_ii: &PredictionVector, p_it: &PredictionVector, alpha: f64) -> Result<PredictionVector> {
    if p_ii.len() != p_it.len() {
        return Err(Error::Shape { expected: p_ii.len(), got: p_it.len() });
    }
    Ok(PredictionVector {
        scores: p_ii.scores.iter().zip(&p_it.scores).map(|(ii, it)| alpha * ii + it).collect(),
        normalized: false,
    })
}

fn fuse_branches(p_ii: Option<PredictionVector>, p_it: Option<PredictionVector>, alpha: f64) -> Result<PredictionVector> {
    match (p_ii, p_it) {
        (Some(ii), Some(it)) => fuse_final(&ii, &it, alpha),
        (Some(ii), None) => Ok(PredictionVector {
            scores: ii.scores.iter().map(|s| alpha * s).collect(),
            normalized: false,
        }),
        (None, Some(it)) => Ok(it),
        (None, None) => Err(Error::invalid("no prediction stream enabled")),
    }
}

fn check_consistency(prototypes: &PrototypeSet, bank: &TextBank, config: &FusionConfig) -> Result<()> {
    config.validate()?;
    if config.components.uses_images() && config.components.uses_text() && prototypes.class_count() != bank.class_count() {
        return Err(Error::Shape { expected: bank.class_count(), got: prototypes.class_count() });
    }
    Ok(())
}

/// Scores one test embedding.
pub fn classify_one(
    v: &EmbeddingVector,
    prototypes: &PrototypeSet,
    bank: &TextBank,
    config: &FusionConfig,
    scale: f64,
) -> Result<(usize, PredictionVector)> {
    let comps = config.components;
    let eps = config.epsilon;

    let (iip_pos, iip_neg) = if comps.uses_images() {
        check_dims(prototypes.dim(), v.dim())?;
        let u = preprocess_slice(v.as_slice(), scale)?;
        match config.metric {
            Metric::Hd => {
                let h = exp_map_slice(&u);
                let pos = comps
                    .contains(Component::IipPos)
                    .then(|| predict_hyperbolic_positive(&h, &prototypes.positive, eps))
                    .transpose()?;
                let neg = comps
                    .contains(Component::IipNeg)
                    .then(|| predict_hyperbolic_negative(&h, &prototypes.negative, eps))
                    .transpose()?;
                (pos, neg)
            }
            Metric::Ecs => {
                // d replaced by -cos: softmax(eps * cos) and softmax(-eps * cos).
                let pos = comps
                    .contains(Component::IipPos)
                    .then(|| -> Result<_> {
                        let c = cosines(&u, &prototypes.positive_euclidean)?;
                        Ok(softmax(&c.iter().map(|x| eps * x).collect::<Vec<_>>()))
                    })
                    .transpose()?;
                let neg = comps
                    .contains(Component::IipNeg)
                    .then(|| -> Result<_> {
                        let c = cosines(&u, &prototypes.negative_euclidean)?;
                        Ok(softmax(&c.iter().map(|x| -eps * x).collect::<Vec<_>>()))
                    })
                    .transpose()?;
                (pos, neg)
            }
        }
    } else {
        (None, None)
    };

    let itp_pos = comps
        .contains(Component::ItpPos)
        .then(|| predict_text(v, bank.positive(), config.tau, Polarity::Positive))
        .transpose()?;
    let itp_neg = comps
        .contains(Component::ItpNeg)
        .then(|| predict_text(v, bank.negative(), config.tau, Polarity::Negative))
        .transpose()?;

    let p_ii = fuse_optional(iip_pos, iip_neg)?;
    let p_it = fuse_optional(itp_pos, itp_neg)?;
    let mut p = fuse_branches(p_ii, p_it, config.alpha)?;
    let class = p.argmax();
    if config.renormalize {
        p = p.renormalized();
    }
    Ok((class, p))
}

/// Scores every test embedding, in parallel, preserving input order.
pub fn classify_batch(
    test_features: &[EmbeddingVector],
    prototypes: &PrototypeSet,
    bank: &TextBank,
    config: &FusionConfig,
    scale: f64,
) -> Result<Vec<(usize, PredictionVector)>> {
    check_consistency(prototypes, bank, config)?;
    test_features
        .par_iter()
        .map(|v| classify_one(v, prototypes, bank, config, scale))
        .collect()
}
