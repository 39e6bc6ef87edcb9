//! Small dense linear-algebra helpers shared by the priors, the oracle and the metrics.

use std::f64::consts::PI;

use nalgebra::linalg::{Cholesky, SymmetricEigen};
use nalgebra::Dyn;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Vector of `d` i.i.d. standard normal draws.
pub fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)))
}

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

pub fn max_asymmetry(a: &Matrix) -> f64 {
    (a - a.transpose()).amax()
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone()).ok_or_else(|| Error::Internal("matrix is not positive definite".into()))
}

pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    Ok(symmetrize(&cholesky(a)?.inverse()))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    let mut values: Vec<f64> = SymmetricEigen::new(symmetrize(a)).eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Spectral norm of a symmetric matrix.
pub fn sym_op_norm(a: &Matrix) -> f64 {
    sym_eigenvalues(a).into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Spectral norm of an arbitrary matrix, through the eigenvalues of `A^T A`.
pub fn op_norm(a: &Matrix) -> f64 {
    sym_op_norm(&(a.transpose() * a)).sqrt()
}

/// Random SPD matrix `Q diag(lambda) Q^T` with eigenvalues uniform in `[lo, hi]`
/// and `Q` Haar-distributed.
pub fn random_spd<R: Rng + ?Sized>(d: usize, lo: f64, hi: f64, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let lambdas = Vector::from_iterator(d, (0..d).map(|_| rng.random_range(lo..=hi)));
    symmetrize(&(&q * Matrix::from_diagonal(&lambdas) * q.transpose()))
}

/// Sub-vector `v[idx]`.
pub fn gather(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Selection matrix `P` with `P x = x[idx]`.
pub fn selection_matrix(d: usize, idx: &[usize]) -> Matrix {
    let mut p = Matrix::zeros(idx.len(), d);
    for (row, &i) in idx.iter().enumerate() {
        p[(row, i)] = 1.0;
    }
    p
}

/// `log N(x; mean, L L^T)` given the lower Cholesky factor `L`.
pub fn log_gaussian_density(x: &Vector, mean: &Vector, chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = x.len() as f64;
    let l = chol.l_dirty();
    let diff = x - mean;
    let solved = l
        .solve_lower_triangular(&diff)
        .expect("cholesky factor has a positive diagonal");
    let log_det: f64 = (0..x.len()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (d * (2.0 * PI).ln() + log_det + solved.norm_squared())
}

/// `log(sum(exp(v)))` with the max-subtraction trick.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn is_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_spd_spectrum_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_spd(5, 0.5, 2.0, &mut rng);
            assert!(max_asymmetry(&a) == 0.0);
            let ev = sym_eigenvalues(&a);
            assert!(ev[0] > 0.5 - 1e-10 && ev[4] < 2.0 + 1e-10);
        }
    }

    #[test]
    fn log_density_matches_scalar_formula() {
        let cov = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 0.25]));
        let chol = cholesky(&cov).unwrap();
        let x = Vector::from_vec(vec![1.0, -0.5]);
        let m = Vector::zeros(2);
        let expected = -0.5 * (2.0 * (2.0 * PI).ln() + (4.0f64 * 0.25).ln() + 1.0 / 4.0 + 0.25 / 0.25);
        assert!((log_gaussian_density(&x, &m, &chol) - expected).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_handles_underflow() {
        let v = [-1000.0, -1001.0];
        let expected = -1000.0 + (1.0 + (-1.0f64).exp()).ln();
        assert!((log_sum_exp(&v) - expected).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn op_norm_of_rectangular() {
        let a = Matrix::from_row_slice(2, 3, &[3.0, 0.0, 0.0, 0.0, 4.0, 0.0]);
        assert!((op_norm(&a) - 4.0).abs() < 1e-12);
    }
}
