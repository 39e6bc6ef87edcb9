//! Closed-form transition moments for zero-mean Gaussian priors.
//!
//! Denoiser matrices here are built by a Cholesky solve against
//! `alpha^2 C + sigma^2 I`, independently of the eigendecomposition used by
//! [`crate::prior::GaussianPrior`], so the two can cross-check each other.

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, op_norm, selection_matrix, spd_inverse, sym_eigenvalues, symmetrize};
use crate::schedule::{eval_eta, EtaSchedule, NoiseSchedule};
use crate::task::InpaintingTask;
use crate::{Matrix, Vector};

/// Largest dimension the oracle accepts.
pub const MAX_ORACLE_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentsLabel {
    Dps,
    Ding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMoments {
    pub mean: Vector,
    pub cov: Matrix,
    pub label: MomentsLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasReport {
    /// `||mu_dps - mu_ding||`.
    pub mean_gap: f64,
    /// `||Sigma_dps - Sigma_ding||_op`.
    pub cov_gap: f64,
    pub eta: f64,
    pub epsilon_s: f64,
    pub epsilon_bound: f64,
}

fn check_cov(cov: &Matrix, task: &InpaintingTask) -> Result<usize> {
    let d = cov.nrows();
    if cov.ncols() != d || d == 0 {
        return Err(invalid("covariance must be a non-empty square matrix"));
    }
    if d > MAX_ORACLE_DIM {
        return Err(invalid(format!("oracle dimension {d} exceeds {MAX_ORACLE_DIM}")));
    }
    if task.dim() != d {
        return Err(invalid(format!("task dimension {} != covariance dimension {d}", task.dim())));
    }
    Ok(d)
}

/// `alpha C (alpha^2 C + sigma^2 I)^{-1}` by a Cholesky solve.
pub fn denoiser_matrix(cov: &Matrix, t: f64, ns: &NoiseSchedule) -> Result<Matrix> {
    let (alpha, sigma) = ns.coefficients(t);
    let d = cov.nrows();
    let noisy = cov * (alpha * alpha) + Matrix::identity(d, d) * (sigma * sigma);
    let solved = cholesky(&noisy)?.solve(cov);
    Ok(symmetrize(&(solved.transpose() * alpha)))
}

/// Diagonal observed-coordinate projector `M = P^T P`.
pub fn observed_projector(task: &InpaintingTask) -> Matrix {
    let p = selection_matrix(task.dim(), task.observed());
    p.tr_mul(&p)
}

/// DDIM mean `alpha_s x0 + sqrt(sigma_s^2 - eta^2) (x_t - alpha_t x0) / sigma_t` for the prior `N(0, C)`.
pub fn ddim_transition_mean(cov: &Matrix, x_t: &Vector, s: f64, t: f64, ns: &NoiseSchedule, eta: f64) -> Result<Vector> {
    let (alpha_s, sigma_s) = ns.coefficients(s);
    let (alpha_t, sigma_t) = ns.coefficients(t);
    if sigma_t <= 0.0 {
        return Err(Error::Domain(format!("transition mean needs sigma_t > 0 (t = {t})")));
    }
    let x0 = denoiser_matrix(cov, t, ns)? * x_t;
    let x1 = (x_t - &x0 * alpha_t) / sigma_t;
    Ok(&x0 * alpha_s + x1 * (sigma_s * sigma_s - eta * eta).max(0.0).sqrt())
}

fn positive_eta(eta: f64, sigma_s: f64) -> Result<()> {
    if !(eta.is_finite() && eta >= 0.0 && eta <= sigma_s + crate::schedule::SCHEDULE_TOL) {
        return Err(Error::ScheduleViolation { s: f64::NAN, eta, sigma: sigma_s });
    }
    Ok(())
}

/// DPS-twisted DDIM moments at an explicit `eta`.
pub fn dps_moments_at(
    cov: &Matrix,
    x_t: &Vector,
    task: &InpaintingTask,
    s: f64,
    t: f64,
    ns: &NoiseSchedule,
    eta: f64,
) -> Result<TransitionMoments> {
    let d = check_cov(cov, task)?;
    positive_eta(eta, ns.sigma(s))?;
    let mu = ddim_transition_mean(cov, x_t, s, t, ns, eta)?;
    if eta == 0.0 {
        return Ok(TransitionMoments { mean: mu, cov: Matrix::zeros(d, d), label: MomentsLabel::Dps });
    }
    let dmat = denoiser_matrix(cov, s, ns)?;
    let m = observed_projector(task);
    let inv_var_y = task.sigma_y().powi(-2);
    let precision = Matrix::identity(d, d) / (eta * eta) + &dmat * &m * &dmat * inv_var_y;
    let sigma = spd_inverse(&symmetrize(&precision))?;
    let y_full = selection_matrix(d, task.observed()).tr_mul(task.y());
    let rhs = &mu / (eta * eta) + &dmat * y_full * inv_var_y;
    Ok(TransitionMoments { mean: &sigma * rhs, cov: sigma, label: MomentsLabel::Dps })
}

/// DInG moments, marginalised over the proxy draw, at an explicit `eta`.
pub fn ding_moments_at(
    cov: &Matrix,
    x_t: &Vector,
    task: &InpaintingTask,
    s: f64,
    t: f64,
    ns: &NoiseSchedule,
    eta: f64,
) -> Result<TransitionMoments> {
    let d = check_cov(cov, task)?;
    positive_eta(eta, ns.sigma(s))?;
    let mu = ddim_transition_mean(cov, x_t, s, t, ns, eta)?;
    if eta == 0.0 {
        return Ok(TransitionMoments { mean: mu, cov: Matrix::zeros(d, d), label: MomentsLabel::Ding });
    }
    let alpha = ns.alpha(s);
    let dmat = denoiser_matrix(cov, s, ns)?;
    let m = observed_projector(task);
    let var_y = task.sigma_y().powi(2);
    let e2 = eta * eta;
    let tilde_precision = Matrix::identity(d, d) / e2 + &m / (alpha * alpha * var_y);
    let tilde = spd_inverse(&tilde_precision)?;
    let residual_map = Matrix::identity(d, d) - &dmat * alpha;
    let y_full = selection_matrix(d, task.observed()).tr_mul(task.y());
    let rhs = &mu / e2 + y_full / (var_y * alpha) + &m * (&residual_map * &mu) / (var_y * alpha * alpha);
    let mean = &tilde * rhs;
    let spread = &tilde * &m * &residual_map;
    let correction = &spread * spread.transpose() * (e2 / (var_y * var_y * alpha.powi(4)));
    let cov_out = symmetrize(&(&tilde + correction));
    Ok(TransitionMoments { mean, cov: cov_out, label: MomentsLabel::Ding })
}

pub fn dps_transition_moments(
    cov: &Matrix,
    x_t: &Vector,
    task: &InpaintingTask,
    s: f64,
    t: f64,
    ns: &NoiseSchedule,
    es: &EtaSchedule,
) -> Result<TransitionMoments> {
    dps_moments_at(cov, x_t, task, s, t, ns, eval_eta(es, s, t, ns)?)
}

pub fn ding_transition_moments(
    cov: &Matrix,
    x_t: &Vector,
    task: &InpaintingTask,
    s: f64,
    t: f64,
    ns: &NoiseSchedule,
    es: &EtaSchedule,
) -> Result<TransitionMoments> {
    ding_moments_at(cov, x_t, task, s, t, ns, eval_eta(es, s, t, ns)?)
}

/// `(||(D_s - alpha_s^{-1} I) M||_op, (sigma_s^2 / alpha_s) / (alpha_s^2 lambda_min + sigma_s^2))`.
pub fn epsilon_and_bound(cov: &Matrix, task: &InpaintingTask, s: f64, ns: &NoiseSchedule) -> Result<(f64, f64)> {
    let d = check_cov(cov, task)?;
    let (alpha, sigma) = ns.coefficients(s);
    if alpha <= 0.0 {
        return Err(Error::Domain(format!("epsilon_s needs alpha_s > 0 (s = {s})")));
    }
    if sigma == 0.0 {
        return Ok((0.0, 0.0));
    }
    let dmat = denoiser_matrix(cov, s, ns)?;
    let gap = (dmat - Matrix::identity(d, d) / alpha) * observed_projector(task);
    let lambda_min = sym_eigenvalues(cov)[0];
    let bound = (sigma * sigma / alpha) / (alpha * alpha * lambda_min + sigma * sigma);
    Ok((op_norm(&gap), bound))
}

/// DPS-vs-DInG gaps at each `eta`.
#[allow(clippy::too_many_arguments)]
pub fn bias_scan(
    cov: &Matrix,
    x_t: &Vector,
    task: &InpaintingTask,
    s: f64,
    t: f64,
    ns: &NoiseSchedule,
    etas: &[f64],
) -> Result<Vec<BiasReport>> {
    let (epsilon_s, epsilon_bound) = epsilon_and_bound(cov, task, s, ns)?;
    let sigma_s = ns.sigma(s);
    etas.iter()
        .map(|&eta| {
            if !(eta > 0.0 && eta <= sigma_s) {
                return Err(invalid(format!("scan eta {eta} must lie in (0, sigma_s = {sigma_s}]")));
            }
            let dps = dps_moments_at(cov, x_t, task, s, t, ns, eta)?;
            let ding = ding_moments_at(cov, x_t, task, s, t, ns, eta)?;
            let cov_gap = sym_eigenvalues(&symmetrize(&(&dps.cov - &ding.cov)))
                .into_iter()
                .fold(0.0, |m: f64, v| m.max(v.abs()));
            Ok(BiasReport {
                mean_gap: (dps.mean - ding.mean).norm(),
                cov_gap,
                eta,
                epsilon_s,
                epsilon_bound,
            })
        })
        .collect()
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_order(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid("fit_order needs equally many x and y values"));
    }
    if x.len() < 5 {
        return Err(invalid(format!("fit_order needs at least 5 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid("fit_order needs positive finite values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("fit_order needs at least two distinct x values"));
    }
    Ok(sxy / sxx)
}
