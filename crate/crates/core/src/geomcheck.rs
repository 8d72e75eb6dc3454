//! Self-check of the ball geometry against closed forms and metric axioms.
//!
//! The distance under test is a parameter so a deliberately broken variant
//! can be fed through the same suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::poincare::{
    self, ambient_mean, exp_map_origin, frechet_mean_oracle, log_map_origin, tangent_mean, BallPoint,
    EmbeddingVector, FrechetOptions, MAX_NORM,
};
use crate::seed;

pub type DistanceFn = fn(&BallPoint, &BallPoint) -> f64;

pub fn reference_distance(a: &BallPoint, b: &BallPoint) -> f64 {
    poincare::distance(a, b).expect("matching dimensions")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub samples: usize,
    /// Worst violation observed, in the units of `tolerance`.
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
}

impl GeometryReport {
    pub fn property(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for p in &self.properties {
            s.push_str(&format!(
                "{} {:<24} max_error {:.3e} (tol {:.0e}, n={})\n",
                if p.passed { "PASS" } else { "FAIL" },
                p.name,
                p.max_error,
                p.tolerance,
                p.samples
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckSizes {
    pub radial: usize,
    pub round_trip: usize,
    pub triples: usize,
    pub dims: &'static [usize],
    pub frechet_clouds: usize,
}

impl Default for CheckSizes {
    fn default() -> Self {
        Self { radial: 1000, round_trip: 1000, triples: 1000, dims: &[2, 8, 512], frechet_clouds: 100 }
    }
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    samples: usize,
    max_error: f64,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self { name, tolerance, samples: 0, max_error: 0.0 }
    }

    fn record(&mut self, err: f64) {
        self.samples += 1;
        // NaN must register as a failure.
        if err.is_nan() {
            self.max_error = f64::INFINITY;
        } else if err > self.max_error {
            self.max_error = err;
        }
    }

    fn finish(self) -> PropertyResult {
        PropertyResult {
            name: self.name.into(),
            samples: self.samples,
            max_error: self.max_error,
            tolerance: self.tolerance,
            passed: self.max_error <= self.tolerance,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let g = gaussian(rng, dim);
    let n = poincare::norm(&g);
    g.into_iter().map(|x| x / n).collect()
}

/// Uniform direction with a radius spread over `[0, max_radius)`.
pub fn random_ball_point(rng: &mut ChaCha8Rng, dim: usize, max_radius: f64) -> BallPoint {
    let r = max_radius * rng.random::<f64>();
    BallPoint::new(random_direction(rng, dim).into_iter().map(|x| x * r).collect()).expect("inside ball")
}

/// Product of four random Householder reflections, applied to `x`.
fn rotate(reflectors: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for u in reflectors {
        let p = 2.0 * poincare::dot(u, &y);
        y.iter_mut().zip(u).for_each(|(yi, ui)| *yi -= p * ui);
    }
    y
}

/// Runs the whole suite with the given distance.
pub fn run_checks(distance: DistanceFn, sizes: &CheckSizes, seed_value: u64) -> GeometryReport {
    let mut rng = seed::rng_for(seed_value, &[0x4745_4f4d]);
    let mut props = Vec::new();

    let mut radial = Tracker::new("radial_closed_form", 1e-9);
    for i in 0..sizes.radial {
        // Deterministic coverage of the whole radius range, including both ends.
        let t = (i as f64 + 0.5) / sizes.radial as f64;
        let r = if i % 2 == 0 { t * MAX_NORM } else { MAX_NORM * (1.0 - 10f64.powf(-6.0 * t)) };
        let r = r.clamp(f64::MIN_POSITIVE, MAX_NORM);
        let mut c = vec![0.0; 3];
        c[0] = r;
        let d = distance(&BallPoint::origin(3), &BallPoint::new(c).expect("inside"));
        let exact = 2.0 * r.atanh();
        radial.record((d - exact).abs() / exact);
    }
    props.push(radial.finish());

    let mut round_trip = Tracker::new("exp_log_round_trip", 1e-9);
    for i in 0..sizes.round_trip {
        let dim = [2, 8, 64][i % 3];
        let len = 5.0 * rng.random::<f64>();
        let w: Vec<f64> = random_direction(&mut rng, dim).into_iter().map(|x| x * len).collect();
        let back = log_map_origin(&exp_map_origin(&EmbeddingVector::new(w.clone()).expect("finite")));
        let err = w.iter().zip(back.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        round_trip.record(err / (1.0 + len));
    }
    props.push(round_trip.finish());

    let mut symmetry = Tracker::new("symmetry", 1e-12);
    let mut triangle = Tracker::new("triangle_inequality", 1e-9);
    let mut identity = Tracker::new("identity", 0.0);
    let mut non_negative = Tracker::new("non_negativity", 0.0);
    let mut isometry = Tracker::new("rotation_isometry", 1e-9);
    for &dim in sizes.dims {
        for _ in 0..sizes.triples {
            let a = random_ball_point(&mut rng, dim, 0.99);
            let b = random_ball_point(&mut rng, dim, 0.99);
            let c = random_ball_point(&mut rng, dim, 0.99);
            let ab = distance(&a, &b);
            let ba = distance(&b, &a);
            let bc = distance(&b, &c);
            let ac = distance(&a, &c);
            symmetry.record((ab - ba).abs());
            triangle.record(ac - (ab + bc));
            identity.record(distance(&a, &a).abs());
            for d in [ab, bc, ac] {
                non_negative.record(-d);
            }

            let reflectors: Vec<Vec<f64>> = (0..4).map(|_| random_direction(&mut rng, dim)).collect();
            let ra = BallPoint::new(rotate(&reflectors, a.coords())).expect("norm preserved");
            let rb = BallPoint::new(rotate(&reflectors, b.coords())).expect("norm preserved");
            isometry.record((distance(&ra, &rb) - ab).abs() / (1.0 + ab));
        }
    }
    props.extend([symmetry.finish(), triangle.finish(), identity.finish(), non_negative.finish(), isometry.finish()]);

    let mut frechet = Tracker::new("frechet_first_order", 1e-3);
    for _ in 0..sizes.frechet_clouds {
        let n = rng.random_range(1..=10);
        let cloud: Vec<BallPoint> = (0..n).map(|_| random_ball_point(&mut rng, 8, 0.1)).collect();
        let approx = tangent_mean(&cloud).expect("non-empty");
        match frechet_mean_oracle(&cloud, &FrechetOptions::default()) {
            Ok(exact) => frechet.record(distance(&approx, &exact)),
            Err(_) => frechet.record(f64::INFINITY),
        }
    }
    props.push(frechet.finish());

    let mut small_means = Tracker::new("ambient_vs_tangent_mean", 1e-6);
    for _ in 0..sizes.frechet_clouds {
        let n = rng.random_range(1..=10);
        let cloud: Vec<BallPoint> = (0..n).map(|_| random_ball_point(&mut rng, 8, 0.01)).collect();
        let a = ambient_mean(&cloud).expect("non-empty");
        let t = tangent_mean(&cloud).expect("non-empty");
        small_means.record(distance(&a, &t));
    }
    props.push(small_means.finish());

    GeometryReport { passed: props.iter().all(|p| p.passed), properties: props }
}
