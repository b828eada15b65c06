//! Dual-route checks of the likelihood: the expansion identity and the
//! analytic gradient against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::likelihood::{log_cccl, log_cccl_by_expansion, log_cccl_gradient, Dataset};
use crate::model::LogitPoint;

pub const EXPANSION_TOL: f64 = 1e-10;
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-6;

/// Random interior points: free logits uniform on `[-3, 3]`.
pub fn random_points(dataset: &Dataset, count: usize, seed: u64) -> Vec<LogitPoint> {
    let spec = dataset.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let free: Vec<f64> = (0..spec.free_dim())
                .map(|_| rng.random_range(-3.0..=3.0))
                .collect();
            LogitPoint::from_free(spec, &free).expect("dimension matches spec")
        })
        .collect()
}

/// Largest `|log_cccl - log_cccl_by_expansion|` over `points`.
pub fn expansion_deviation(dataset: &Dataset, points: &[LogitPoint], cap: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in points {
        let direct = log_cccl(dataset, p)?;
        let expanded = log_cccl_by_expansion(dataset, p, cap)?;
        worst = worst.max((direct - expanded).abs());
    }
    Ok(worst)
}

/// Central differences of log-CCCL along every free coordinate.
pub fn finite_difference_gradient(
    dataset: &Dataset,
    point: &LogitPoint,
    step: f64,
) -> Result<Vec<f64>> {
    let spec = dataset.spec();
    let free = point.free_coords();
    let value = |x: &[f64]| -> Result<f64> { log_cccl(dataset, &LogitPoint::from_free(spec, x)?) };
    (0..free.len())
        .map(|k| {
            let mut up = free.clone();
            let mut down = free.clone();
            up[k] += step;
            down[k] -= step;
            Ok((value(&up)? - value(&down)?) / (2.0 * step))
        })
        .collect()
}

/// Largest per-coordinate gap between the analytic and finite-difference
/// gradients over `points`.
pub fn gradient_deviation(dataset: &Dataset, points: &[LogitPoint]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in points {
        let analytic = log_cccl_gradient(dataset, p)?.gradient;
        let numeric = finite_difference_gradient(dataset, p, FD_STEP)?;
        for (a, b) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}
