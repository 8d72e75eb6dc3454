use super::{arcosh1p, common_dim, distance_arg, norm_sq, BallPoint, GeometryError};

#[derive(Debug, Clone, Copy)]
pub struct FrechetOptions {
    /// Stop once the Euclidean length of a coordinate update drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FrechetOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 10_000 }
    }
}

/// Minimiser of `sum_i d(z, x_i)^2` by Riemannian gradient descent.
///
/// The Euclidean gradient of the objective is rescaled by the inverse metric
/// `(1 - |z|^2)^2 / 4` and applied as a coordinate step of size `1 / (2n)`,
/// which is the Newton step for the flat limit. Deterministic; starts at the
/// ambient mean. Slow, test-only.
pub fn frechet_mean_oracle(
    points: &[BallPoint],
    opts: &FrechetOptions,
) -> Result<BallPoint, GeometryError> {
    let d = common_dim(points)?;
    if points.len() == 1 {
        return Ok(points[0].clone());
    }
    let n = points.len() as f64;
    let step = 1.0 / (2.0 * n);

    let mut z = vec![0.0; d];
    for p in points {
        z.iter_mut().zip(p.coords()).for_each(|(a, x)| *a += x / n);
    }

    let mut grad = vec![0.0; d];
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for p in points {
            accumulate_sq_distance_grad(&z, p.coords(), &mut grad);
        }
        let inv_metric = (1.0 - norm_sq(&z)).powi(2) / 4.0;
        let mut update_sq = 0.0;
        for (zi, gi) in z.iter_mut().zip(&grad) {
            let u = step * inv_metric * gi;
            *zi -= u;
            update_sq += u * u;
        }
        if norm_sq(&z) >= 1.0 {
            return Err(GeometryError::InvalidInput(
                "gradient step left the unit ball".into(),
            ));
        }
        residual = update_sq.sqrt();
        if residual < opts.tolerance {
            return BallPoint::new(z);
        }
    }
    Err(GeometryError::NoConvergence { iterations: opts.max_iterations, residual })
}

/// Adds the Euclidean gradient of `d(z, x)^2` with respect to `z` into `out`.
fn accumulate_sq_distance_grad(z: &[f64], x: &[f64], out: &mut [f64]) {
    let delta = distance_arg(z, x);
    let dz = 1.0 - norm_sq(z);
    let dx = 1.0 - norm_sq(x);
    let diff_sq: f64 = z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();

    // d(d^2)/d(delta) = 2 d / sqrt(delta^2 + 2 delta), which tends to 2 at delta = 0.
    let ratio = if delta > 0.0 {
        arcosh1p(delta) / (delta * delta + 2.0 * delta).sqrt()
    } else {
        1.0
    };
    let outer = 2.0 * ratio;

    // d(delta)/dz = 4/dx * ((z - x)/dz + |z - x|^2 z / dz^2)
    let c1 = 4.0 / (dx * dz);
    let c2 = 4.0 * diff_sq / (dx * dz * dz);
    for i in 0..z.len() {
        out[i] += outer * (c1 * (z[i] - x[i]) + c2 * z[i]);
    }
}
