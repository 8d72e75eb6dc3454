//! Poincaré ball geometry at curvature −1.
//!
//! Only the pieces the classifier needs: the exponential and logarithmic maps
//! at the origin, the closed-form geodesic distance, and two cheap means.
//! [`frechet_mean_oracle`] is a slow iterative minimiser kept for validating
//! the cheap means; nothing on the inference path calls it.
//!
//! All arithmetic is `f64` regardless of how the embeddings were stored.

mod frechet;

pub use frechet::{frechet_mean_oracle, FrechetOptions};

use thiserror::Error;

/// Largest norm any [`BallPoint`] is allowed to have.
pub const MAX_NORM: f64 = 1.0 - 1e-6;

/// Below this argument `arcosh(1 + x)` switches to its series expansion.
const ARCOSH_SERIES_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("point with norm {norm} lies on or outside the unit ball")]
    OutsideBall { norm: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Fréchet mean did not converge after {iterations} iterations (last update norm {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

/// A Euclidean feature or tangent vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.is_empty() {
            return Err(GeometryError::InvalidInput("empty vector".into()));
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, GeometryError> {
        Self::new(values.iter().map(|&x| f64::from(x)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A point strictly inside the unit ball.
///
/// Construction rejects non-finite coordinates and norms `>= 1`, and pulls
/// anything beyond [`MAX_NORM`] back onto that radius.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint(Vec<f64>);

impl BallPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.is_empty() {
            return Err(GeometryError::InvalidInput("empty point".into()));
        }
        check_finite(&coords)?;
        let n = norm(&coords);
        if n >= 1.0 {
            return Err(GeometryError::OutsideBall { norm: n });
        }
        Ok(Self::clamped(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Caller guarantees finiteness and norm < 1 (up to rounding).
    fn clamped(mut coords: Vec<f64>) -> Self {
        let n = norm(&coords);
        if n > MAX_NORM {
            let s = MAX_NORM / n;
            coords.iter_mut().for_each(|x| *x *= s);
        }
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for BallPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<(), GeometryError> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(GeometryError::InvalidInput(format!(
            "non-finite entry {} at index {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<(), GeometryError> {
    if expected != got {
        return Err(GeometryError::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `tanh(|w|) * w / |w|`, with the origin mapping to itself.
pub fn exp_map_origin(w: &EmbeddingVector) -> BallPoint {
    exp_map_slice(w.as_slice())
}

pub(crate) fn exp_map_slice(w: &[f64]) -> BallPoint {
    let n = norm(w);
    if n == 0.0 {
        return BallPoint::origin(w.len());
    }
    let s = n.tanh() / n;
    BallPoint::clamped(w.iter().map(|x| x * s).collect())
}

/// `artanh(|y|) * y / |y|`, inverse of [`exp_map_origin`].
pub fn log_map_origin(y: &BallPoint) -> EmbeddingVector {
    EmbeddingVector(log_map_slice(y.coords()))
}

fn log_map_slice(y: &[f64]) -> Vec<f64> {
    let n = norm(y);
    if n == 0.0 {
        return vec![0.0; y.len()];
    }
    let s = n.atanh() / n;
    y.iter().map(|x| x * s).collect()
}

/// `arcosh(1 + x)` for `x >= 0` without cancellation near zero.
pub(crate) fn arcosh1p(x: f64) -> f64 {
    if x < ARCOSH_SERIES_CUTOFF {
        // arcosh(1+x) = sqrt(2x) (1 - x/12 + O(x^2))
        (2.0 * x).sqrt() * (1.0 - x / 12.0)
    } else {
        (x + (x * x + 2.0 * x).sqrt()).ln_1p()
    }
}

/// Argument `x` of `arcosh(1 + x)` in the closed-form distance.
pub(crate) fn distance_arg(a: &[f64], b: &[f64]) -> f64 {
    let diff_sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let da = 1.0 - norm_sq(a);
    let db = 1.0 - norm_sq(b);
    2.0 * diff_sq / (da * db)
}

/// Geodesic distance `arcosh(1 + 2|a-b|^2 / ((1-|a|^2)(1-|b|^2)))`.
pub fn distance(a: &BallPoint, b: &BallPoint) -> Result<f64, GeometryError> {
    check_dims(a.dim(), b.dim())?;
    Ok(distance_unchecked(a.coords(), b.coords()))
}

pub(crate) fn distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    arcosh1p(distance_arg(a, b))
}

/// `(1 - |a|^2)^-1` for raw coordinates.
///
/// This is half the factor of the metric that [`distance`] is derived from;
/// it is reported as a standalone quantity and used nowhere else. Takes raw
/// coordinates rather than a [`BallPoint`] so that values between
/// [`MAX_NORM`] and the sphere are not clamped away.
pub fn conformal_factor(a: &[f64]) -> Result<f64, GeometryError> {
    check_finite(a)?;
    let r2 = norm_sq(a);
    if r2 >= 1.0 {
        return Err(GeometryError::OutsideBall { norm: r2.sqrt() });
    }
    Ok(1.0 / (1.0 - r2))
}

fn common_dim(points: &[BallPoint]) -> Result<usize, GeometryError> {
    let first = points
        .first()
        .ok_or_else(|| GeometryError::InvalidInput("mean of an empty point set".into()))?;
    let d = first.dim();
    for p in &points[1..] {
        check_dims(d, p.dim())?;
    }
    Ok(d)
}

/// Coordinate-wise arithmetic mean. Stays in the ball by convexity.
pub fn ambient_mean(points: &[BallPoint]) -> Result<BallPoint, GeometryError> {
    let d = common_dim(points)?;
    let mut acc = vec![0.0; d];
    for p in points {
        acc.iter_mut().zip(p.coords()).for_each(|(a, x)| *a += x);
    }
    let n = points.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(BallPoint::clamped(acc))
}

/// `exp_0(mean_i log_0(x_i))`: first-order approximation of the Fréchet mean.
pub fn tangent_mean(points: &[BallPoint]) -> Result<BallPoint, GeometryError> {
    let d = common_dim(points)?;
    let mut acc = vec![0.0; d];
    for p in points {
        let v = log_map_slice(p.coords());
        acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
    }
    let n = points.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(exp_map_slice(&acc))
}
