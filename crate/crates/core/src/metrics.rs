//! Sample-based comparison metrics.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::linalg::gaussian_vector;
use crate::{Matrix, Vector};

pub const DEFAULT_PROJECTIONS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub sliced_wasserstein: f64,
    pub mean_error: f64,
    pub cov_error: f64,
    pub cpsnr: f64,
    pub n_samples: usize,
    pub n_projections: usize,
}

fn check_samples(a: &[Vector], b: &[Vector]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("sample sets must be non-empty"));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != d) {
        return Err(invalid("sample sets have inconsistent dimensions"));
    }
    Ok(d)
}

/// `n` directions drawn uniformly on the unit sphere in `R^d`.
pub fn random_directions<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Vec<Vector> {
    (0..n)
        .map(|_| loop {
            let v = gaussian_vector(d, rng);
            let norm = v.norm();
            if norm > 0.0 {
                break v / norm;
            }
        })
        .collect()
}

/// Exact `W_2` between two empirical measures on the line.
///
/// Both quantile functions are step functions; the squared distance is
/// integrated exactly over the merged breakpoints `i/n` and `j/m`.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut level = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (next - level) * (a[i] - b[j]).powi(2);
        level = next;
        // integer comparison avoids drift between the two grids
        match ((i + 1) * m).cmp(&((j + 1) * n)) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    total.max(0.0).sqrt()
}

/// Mean over `directions` of the projected 1D `W_2`.
pub fn sliced_wasserstein_with(a: &[Vector], b: &[Vector], directions: &[Vector]) -> Result<f64> {
    let d = check_samples(a, b)?;
    if directions.is_empty() {
        return Err(invalid("at least one projection is required"));
    }
    if directions.iter().any(|v| v.len() != d) {
        return Err(invalid("projection directions have the wrong dimension"));
    }
    let total: f64 = directions
        .iter()
        .map(|theta| {
            let pa: Vec<f64> = a.iter().map(|x| x.dot(theta)).collect();
            let pb: Vec<f64> = b.iter().map(|x| x.dot(theta)).collect();
            wasserstein_1d(&pa, &pb)
        })
        .sum();
    Ok(total / directions.len() as f64)
}

pub fn sliced_wasserstein<R: Rng + ?Sized>(a: &[Vector], b: &[Vector], n_projections: usize, rng: &mut R) -> Result<f64> {
    let d = check_samples(a, b)?;
    sliced_wasserstein_with(a, b, &random_directions(d, n_projections, rng))
}

/// Sample mean and unbiased sample covariance.
pub fn empirical_moments(samples: &[Vector]) -> Result<(Vector, Matrix)> {
    if samples.len() < 2 {
        return Err(invalid("empirical moments need at least two samples"));
    }
    let d = samples[0].len();
    if samples.iter().any(|v| v.len() != d) {
        return Err(invalid("samples have inconsistent dimensions"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().fold(Vector::zeros(d), |acc, x| acc + x) / n;
    let mut cov = Matrix::zeros(d, d);
    for x in samples {
        let c = x - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    Ok((mean, cov / (n - 1.0)))
}

/// `(||mean - ref_mean||_2, ||cov - ref_cov||_F)`.
pub fn moment_errors(samples: &[Vector], reference_mean: &Vector, reference_cov: &Matrix) -> Result<(f64, f64)> {
    let (mean, cov) = empirical_moments(samples)?;
    if reference_mean.len() != mean.len() || reference_cov.shape() != cov.shape() {
        return Err(invalid("reference moments have the wrong dimension"));
    }
    Ok(((mean - reference_mean).norm(), (cov - reference_cov).norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut v = gaussian_vector(d, &mut rng);
                v[0] += shift;
                v
            })
            .collect()
    }

    #[test]
    fn identical_sets_are_at_distance_zero() {
        let a = cloud(300, 3, 0.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(sliced_wasserstein(&a, &a, 64, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn diracs_on_the_line() {
        let a = vec![Vector::from_vec(vec![0.0])];
        let b = vec![Vector::from_vec(vec![2.5]); 3];
        for n in [1, 7, 128] {
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            assert!((sliced_wasserstein(&a, &b, n, &mut rng).unwrap() - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn unequal_sizes_use_merged_quantiles() {
        // quantiles of {0, 1} against {0, 0, 3}: levels 1/3, 1/2, 2/3, 1
        let w = wasserstein_1d(&[0.0, 1.0], &[0.0, 0.0, 3.0]);
        let expected = (1.0 / 6.0 * 1.0 + 1.0 / 3.0 * 4.0f64).sqrt();
        assert!((w - expected).abs() < 1e-15);
    }

    #[test]
    fn shifted_gaussians_match_analytic_value() {
        let a = cloud(10_000, 2, 0.0, 10);
        let b = cloud(10_000, 2, 1.0, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let got = sliced_wasserstein(&a, &b, 128, &mut rng).unwrap();
        let analytic = 2.0 / std::f64::consts::PI;
        assert!((got - analytic).abs() < 0.1 * analytic, "{got} vs {analytic}");
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let a = cloud(100, 2, 0.0, 1);
        let b = cloud(80, 2, 0.5, 2);
        let run = || sliced_wasserstein(&a, &b, 32, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let a = cloud(10, 2, 0.0, 1);
        let b = cloud(10, 3, 0.0, 2);
        assert!(sliced_wasserstein(&a, &b, 8, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(sliced_wasserstein(&[], &b, 8, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn constant_samples_report_reference_covariance() {
        let samples = vec![Vector::from_vec(vec![1.0, 2.0]); 5];
        let cov = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (mean_err, cov_err) = moment_errors(&samples, &Vector::from_vec(vec![1.0, 2.0]), &cov).unwrap();
        assert_eq!(mean_err, 0.0);
        assert!((cov_err - cov.norm()).abs() < 1e-15);
    }

    #[test]
    fn exact_draws_fall_in_clt_band() {
        let n = 100_000;
        let samples = cloud(n, 3, 0.0, 31);
        let (mean_err, cov_err) = moment_errors(&samples, &Vector::zeros(3), &Matrix::identity(3, 3)).unwrap();
        let band = 4.0 / (n as f64).sqrt();
        assert!(mean_err < band * 3f64.sqrt());
        // var of each covariance entry is at most 2 for standard normals
        assert!(cov_err < band * 3.0 * 2f64.sqrt());
    }

    proptest! {
        #[test]
        fn symmetric_and_triangle(seed in 0u64..1000, sa in -2.0f64..2.0, sb in -2.0f64..2.0) {
            let a = cloud(40, 2, 0.0, seed);
            let b = cloud(55, 2, sa, seed + 1);
            let c = cloud(33, 2, sb, seed + 2);
            let dirs = random_directions(2, 16, &mut ChaCha8Rng::seed_from_u64(seed));
            let ab = sliced_wasserstein_with(&a, &b, &dirs).unwrap();
            let ba = sliced_wasserstein_with(&b, &a, &dirs).unwrap();
            let bc = sliced_wasserstein_with(&b, &c, &dirs).unwrap();
            let ac = sliced_wasserstein_with(&a, &c, &dirs).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
