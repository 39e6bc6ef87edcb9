//! Reverse transitions `t -> s` for every sampler and the driver that chains them.
//!
//! All steps share one convention for randomness: the state noise `w'` (a full
//! `d`-vector) is drawn first, then any auxiliary draw. With an empty observed
//! set every guided step therefore consumes the same state noise as
//! [`ddim_step`] and, where the method reduces to DDIM, produces the same bits.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, gather, gaussian_vector, selection_matrix, symmetrize};
use crate::prior::{noise_from_denoised, AnalyticPrior, DenoiserOutput, GaussianPrior};
use crate::schedule::{eval_eta, EtaSchedule, NoiseSchedule, ScheduleKind, TimeGrid};
use crate::task::InpaintingTask;
use crate::{Matrix, Vector};

/// Default DiffPIR regularisation weight.
pub const DEFAULT_DIFFPIR_LAMBDA: f64 = 1.0;
/// Default PnP-Flow step size, as a multiple of `sigma_y^2`.
pub const DEFAULT_PNPFLOW_STEP_RATIO: f64 = 0.8;
/// PnP-Flow fidelity weights above this value overshoot the observation.
pub const PNPFLOW_DIVERGENCE_RATIO: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    Ddim,
    Ding,
    DingDelayed,
    Replacement,
    Mcgdiff,
    Pnpflow,
    Flowdps,
    Diffpir,
    Ddnm,
    DpsAnalytic,
}

impl MethodKind {
    pub const ALL: [MethodKind; 10] = [
        MethodKind::Ddim,
        MethodKind::Ding,
        MethodKind::DingDelayed,
        MethodKind::Replacement,
        MethodKind::Mcgdiff,
        MethodKind::Pnpflow,
        MethodKind::Flowdps,
        MethodKind::Diffpir,
        MethodKind::Ddnm,
        MethodKind::DpsAnalytic,
    ];

    /// Denoiser evaluations per reverse step.
    pub fn nfe_per_step(self) -> u64 {
        match self {
            MethodKind::Ding => 2,
            _ => 1,
        }
    }

    /// Total evaluations for a `K`-step grid, including the final denoise.
    pub fn total_nfe(self, k: usize) -> u64 {
        self.nfe_per_step() * (k as u64 - 1) + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Ddim => "ddim",
            MethodKind::Ding => "ding",
            MethodKind::DingDelayed => "ding-delayed",
            MethodKind::Replacement => "replacement",
            MethodKind::Mcgdiff => "mcgdiff",
            MethodKind::Pnpflow => "pnpflow",
            MethodKind::Flowdps => "flowdps",
            MethodKind::Diffpir => "diffpir",
            MethodKind::Ddnm => "ddnm",
            MethodKind::DpsAnalytic => "dps-analytic",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        MethodKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown method `{s}`")))
    }
}

/// How Delayed DInG forms its proxy noise prediction from the time-`t` evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DelayedProxy {
    /// `(x_t - sigma_s x1(x_t, t)) / alpha_s`.
    #[default]
    AsPrinted,
    /// `(x_t - alpha_s x0(x_t, t)) / sigma_s`.
    SigmaNormalised,
}

impl FromStr for DelayedProxy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "as-printed" => Ok(Self::AsPrinted),
            "sigma-normalised" | "sigma-normalized" => Ok(Self::SigmaNormalised),
            other => Err(invalid(format!("unknown delayed proxy rule `{other}`"))),
        }
    }
}

impl fmt::Display for DelayedProxy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AsPrinted => "as-printed",
            Self::SigmaNormalised => "sigma-normalised",
        })
    }
}

/// A method together with its scalar parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub kind: MethodKind,
    /// DiffPIR data weight `lambda`.
    pub diffpir_lambda: f64,
    /// PnP-Flow step size `gamma_n`; `None` means `0.8 sigma_y^2`.
    pub pnpflow_step: Option<f64>,
    pub delayed_proxy: DelayedProxy,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            diffpir_lambda: DEFAULT_DIFFPIR_LAMBDA,
            pnpflow_step: None,
            delayed_proxy: DelayedProxy::default(),
        }
    }

    pub fn pnpflow_step_for(&self, sigma_y: f64) -> f64 {
        self.pnpflow_step.unwrap_or(DEFAULT_PNPFLOW_STEP_RATIO * sigma_y * sigma_y)
    }

    pub fn validate(&self, prior: &AnalyticPrior) -> Result<()> {
        match self.kind {
            MethodKind::Diffpir if !(self.diffpir_lambda > 0.0 && self.diffpir_lambda.is_finite()) => {
                Err(invalid(format!("diffpir lambda must be positive, got {}", self.diffpir_lambda)))
            }
            MethodKind::Pnpflow => match self.pnpflow_step {
                Some(g) if !(g > 0.0 && g.is_finite()) => {
                    Err(invalid(format!("pnpflow step size must be positive, got {g}")))
                }
                _ => Ok(()),
            },
            MethodKind::DpsAnalytic if prior.as_gaussian().is_none() => {
                Err(Error::Unsupported("dps-analytic requires a Gaussian prior".into()))
            }
            _ => Ok(()),
        }
    }
}

impl From<MethodKind> for MethodSpec {
    fn from(kind: MethodKind) -> Self {
        Self::new(kind)
    }
}

/// Everything a step needs besides the chain state; counts denoiser calls.
#[derive(Debug)]
pub struct StepContext<'a> {
    pub prior: &'a AnalyticPrior,
    pub task: &'a InpaintingTask,
    pub ns: NoiseSchedule,
    pub es: EtaSchedule,
    calls: Cell<u64>,
}

impl<'a> StepContext<'a> {
    pub fn new(prior: &'a AnalyticPrior, task: &'a InpaintingTask, ns: NoiseSchedule, es: EtaSchedule) -> Result<Self> {
        if prior.dim() != task.dim() {
            return Err(invalid(format!("prior dimension {} != task dimension {}", prior.dim(), task.dim())));
        }
        Ok(Self { prior, task, ns, es, calls: Cell::new(0) })
    }

    /// One network evaluation.
    pub fn denoise(&self, x: &Vector, t: f64) -> DenoiserOutput {
        self.calls.set(self.calls.get() + 1);
        self.prior.denoise(x, t, &self.ns)
    }

    pub fn calls(&self) -> u64 {
        self.calls.get()
    }

    fn eta(&self, s: f64, t: f64) -> Result<f64> {
        eval_eta(&self.es, s, t, &self.ns)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x: Vector,
    /// Grid index of the time `x` lives at.
    pub k: usize,
    pub nfe: u64,
    /// Noise prediction from the most recent evaluation at the state.
    pub cached_noise_pred: Option<Vector>,
    /// Most recent denoiser output (PnP-Flow carries it between steps).
    pub x0_hat: Option<Vector>,
}

impl ChainState {
    pub fn new(x: Vector, k: usize) -> Self {
        Self { x, k, nfe: 0, cached_noise_pred: None, x0_hat: None }
    }
}

/// Conditions worth surfacing in a run report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepFlag {
    /// DInG with `eta_s = 0`: no guidance is applied.
    DeterministicGuidance,
    /// PnP-Flow fidelity weight `gamma_n / sigma_y^2` above 2.
    DivergentFidelity { ratio: f64 },
    /// MCGDiff at `s <= tau` fell back to replacement.
    BelowTau { tau: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub eta: f64,
    /// Convex weight on the observation side, when the method has one.
    pub gamma: Option<f64>,
    pub flag: Option<StepFlag>,
}

impl StepReport {
    fn plain(eta: f64) -> Self {
        Self { eta, gamma: None, flag: None }
    }
}

/// `alpha_s x0 + sqrt(sigma_s^2 - eta^2) x1`.
pub fn ddim_mean(x0: &Vector, x1: &Vector, alpha_s: f64, sigma_s: f64, eta: f64) -> Vector {
    let c = (sigma_s * sigma_s - eta * eta).max(0.0).sqrt();
    x0 * alpha_s + x1 * c
}

/// `mean + std * w` componentwise; `std` broadcast over the masked coordinates.
fn perturb(mean: &Vector, std: &Vector, w: &Vector) -> Vector {
    Vector::from_iterator(mean.len(), (0..mean.len()).map(|i| mean[i] + std[i] * w[i]))
}

/// `gamma = eta^2 / (eta^2 + alpha_s^2 sigma_y^2)`, zero when `eta = 0`.
pub fn ding_gamma(eta: f64, alpha_s: f64, sigma_y: f64) -> f64 {
    if eta == 0.0 {
        return 0.0;
    }
    let e2 = eta * eta;
    e2 / (e2 + alpha_s * alpha_s * sigma_y * sigma_y)
}

/// Mean and per-coordinate standard deviation of the DInG step given the proxy noise prediction.
pub fn ding_conditional(
    mu: &Vector,
    x1_proxy: &Vector,
    eta: f64,
    alpha_s: f64,
    sigma_s: f64,
    task: &InpaintingTask,
) -> (Vector, Vector, f64) {
    let gamma = ding_gamma(eta, alpha_s, task.sigma_y());
    let mut mean = mu.clone();
    let mut std = Vector::from_element(mu.len(), eta);
    let obs_std = alpha_s * task.sigma_y() * gamma.sqrt();
    for (j, &i) in task.observed().iter().enumerate() {
        let target = alpha_s * task.y()[j] + sigma_s * x1_proxy[i];
        mean[i] = (1.0 - gamma) * mu[i] + gamma * target;
        std[i] = obs_std;
    }
    (mean, std, gamma)
}

/// Time at which the clean-to-noisy ratio `sigma_tau / alpha_tau` equals `sigma_y`.
pub fn mcgdiff_tau(sigma_y: f64, ns: &NoiseSchedule) -> f64 {
    match ns.kind {
        ScheduleKind::Linear => sigma_y / (1.0 + sigma_y),
        ScheduleKind::VariancePreserving => sigma_y.atan() * 2.0 / std::f64::consts::PI,
    }
}

fn time_t_eval(state: &mut ChainState, t: f64, ctx: &StepContext<'_>) -> DenoiserOutput {
    let out = ctx.denoise(&state.x, t);
    state.cached_noise_pred = Some(out.x1_hat.clone());
    state.x0_hat = Some(out.x0_hat.clone());
    out
}

pub fn ddim_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    s: f64,
    t: f64,
    ctx: &StepContext<'_>,
    rng: &mut R,
) -> Result<StepReport> {
    let eta = ctx.eta(s, t)?;
    let (alpha_s, sigma_s) = ctx.ns.coefficients(s);
    let w = gaussian_vector(state.x.len(), rng);
    let out = time_t_eval(state, t, ctx);
    let mu = ddim_mean(&out.x0_hat, &out.x1_hat, alpha_s, sigma_s, eta);
    state.x = perturb(&mu, &Vector::from_element(mu.len(), eta), &w);
    Ok(StepReport::plain(eta))
}

fn guided_step_checks(s: f64, sigma_s: f64) -> Result<()> {
    if s > 0.0 && sigma_s <= 0.0 {
        return Err(Error::Internal(format!("sigma_s vanished at s = {s}")));
    }
    if s == 0.0 {
        return Err(invalid("guided steps end at t_1 > 0; the final denoise handles t = 0"));
    }
    Ok(())
}

fn ding_report(eta: f64, gamma: f64) -> StepReport {
    StepReport {
        eta,
        gamma: Some(gamma),
        flag: (eta == 0.0).then_some(StepFlag::DeterministicGuidance),
    }
}

/// Decoupled guidance: proxy `z` from the unconditional transition, noise prediction at `(z, s)`.
pub fn ding_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    s: f64,
    t: f64,
    ctx: &StepContext<'_>,
    rng: &mut R,
) -> Result<StepReport> {
    let eta = ctx.eta(s, t)?;
    let (alpha_s, sigma_s) = ctx.ns.coefficients(s);
    guided_step_checks(s, sigma_s)?;
    let d = state.x.len();
    let w_state = gaussian_vector(d, rng);
    let w_proxy = gaussian_vector(d, rng);
    let out = time_t_eval(state, t, ctx);
    let mu = ddim_mean(&out.x0_hat, &out.x1_hat, alpha_s, sigma_s, eta);
    let z = &mu + &w_proxy * eta;
    let proxy = ctx.denoise(&z, s);
    let x1_proxy = noise_from_denoised(&z, &proxy.x0_hat, alpha_s, sigma_s);
    let (mean, std, gamma) = ding_conditional(&mu, &x1_proxy, eta, alpha_s, sigma_s, ctx.task);
    state.x = perturb(&mean, &std, &w_state);
    Ok(ding_report(eta, gamma))
}

/// DInG with the proxy noise prediction taken from the time-`t` evaluation (one call per step).
pub fn ding_delayed_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    s: f64,
    t: f64,
    rule: DelayedProxy,
    ctx: &StepContext<'_>,
    rng: &mut R,
) -> Result<StepReport> {
    let eta = ctx.eta(s, t)?;
    let (alpha_s, sigma_s) = ctx.ns.coefficients(s);
    guided_step_checks(s, sigma_s)?;
    let w_state = gaussian_vector(state.x.len(), rng);
    let x_t = state.x.clone();
    let out = time_t_eval(state, t, ctx);
    let mu = ddim_mean(&out.x0_hat, &out.x1_hat, alpha_s, sigma_s, eta);
    let x1_proxy = match rule {
        DelayedProxy::AsPrinted => (&x_t - &out.x1_hat * sigma_s) / alpha_s,
        DelayedProxy::SigmaNormalised => noise_from_denoised(&x_t, &out.x0_hat, alpha_s, sigma_s),
    };
    let (mean, std, gamma) = ding_conditional(&mu, &x1_proxy, eta, alpha_s, sigma_s, ctx.task);
    state.x = perturb(&mean, &std, &w_state);
    Ok(ding_report(eta, gamma))
}

pub fn replacement_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    s: f64,
    t: f64,
    ctx: &StepContext<'_>,
    rng: &mut R,
) -> Result<StepReport> {
    let eta = ctx.eta(s, t)?;
    let (alpha_s, sigma_s) = ctx.ns.coefficients(s);
    let w = gaussian_vector(state.x.len(), rng);
    let out = time_t_eval(state, t, ctx);
    let mu = ddim_mean(&out.x0_hat, &out.x1_hat, alpha_s, sigma_s, eta);
    let mut mean = mu;
    let mut std = Vector::from_element(mean.len(), eta);
    for (j, &i) in ctx.task.observed().iter().enumerate() {
        mean[i] = alpha_s * ctx.task.y()[j];
        std[i] = sigma_s;
    }
    state.x = perturb(&mean, &std, &w);
    Ok(StepReport::plain(eta))
}

/// Single-particle MCGDiff transition; replacement below `tau`.
pub fn mcgdiff_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    s: f64,
    t: f64,
    ctx: &StepContext<'_>,
    rng: &mut R,
) -> Result<StepReport> {
    let tau = mcgdiff_tau(ctx.task.sigma_y(), &ctx.ns);
    if s <= tau {
        let mut report = replacement_step(state, s, t, ctx, rng)?;
        report.flag = Some(StepFlag::BelowTau { tau });
        return Ok(report);
    }
    let eta = ctx.eta(s, t)?;
    let (alpha_s, sigma_s) = ctx.ns.coefficients(s);
    let (alpha_t, sigma_t) = ctx.ns.coefficients(t);
    let (alpha_tau, sigma_tau) = ctx.ns.coefficients(tau);
    let w = gaussian_vector(state.x.len(), rng);
    let out = time_t_eval(state, t, ctx);
    let mu = ddim_mean(&out.x0_hat, &out.x1_hat, alpha_s, sigma_s, eta);
    let ratio = alpha_t / alpha_tau;
    let var_t_tau = (sigma_t * sigma_t - ratio * ratio * sigma_tau * sigma_tau).max(0.0);
    let gamma = if eta == 0.0 { 0.0 } else { eta * eta / (eta * eta + var_t_tau) };
    let obs_std = (var_t_tau * gamma).sqrt();
    let mut mean = mu.clone();
    let mut std = Vector::from_element(mu.len(), eta);
    for (j, &i) in ctx.task.observed().iter().enumerate() {
        mean[i] = (1.0 - gamma) * mu[i] + gamma * alpha_s * ctx.task.y()[j];
        std[i] = obs_std;
    }
    state.x = perturb(&mean, &std, &w);
    Ok(StepReport { eta, gamma: Some(gamma), flag: None })
}

/// PnP-Flow, rotated so that each step starts with the denoiser call at `(x_t, t)`.
pub fn pnpflow_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    s: f64,
    t: f64,
    step_size: f64,
    ctx: &StepContext<'_>,
    rng: &mut R,
) -> Result<StepReport> {
    if !(0.0 <= s && s < t && t <= 1.0) {
        return Err(invalid(format!("step requires 0 <= s < t <= 1, got s = {s}, t = {t}")));
    }
    let (alpha_s, sigma_s) = ctx.ns.coefficients(s);
    let w = gaussian_vector(state.x.len(), rng);
    let out = time_t_eval(state, t, ctx);
    let ratio = step_size / (ctx.task.sigma_y() * ctx.task.sigma_y());
    let mut x0 = out.x0_hat;
    for (j, &i) in ctx.task.observed().iter().enumerate() {
        x0[i] = (1.0 - ratio) * x0[i] + ratio * ctx.task.y()[j];
    }
    state.x = perturb(&(&x0 * alpha_s), &Vector::from_element(x0.len(), sigma_s), &w);
    Ok(StepReport {
        eta: sigma_s,
        gamma: Some(ratio),
        flag: (ratio > PNPFLOW_DIVERGENCE_RATIO).then_some(StepFlag::DivergentFidelity { ratio }),
    })
}

pub fn flowdps_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    s: f64,
    t: f64,
    ctx: &StepContext<'_>,
    rng: &mut R,
) -> Result<StepReport> {
    let eta = ctx.eta(s, t)?;
    let (alpha_s, sigma_s) = ctx.ns.coefficients(s);
    let w = gaussian_vector(state.x.len(), rng);
    let out = time_t_eval(state, t, ctx);
    let mut x0 = out.x0_hat;
    for (j, &i) in ctx.task.observed().iter().enumerate() {
        x0[i] = alpha_s * x0[i] + sigma_s * ctx.task.y()[j];
    }
    let mu = ddim_mean(&x0, &out.x1_hat, alpha_s, sigma_s, eta);
    state.x = perturb(&mu, &Vector::from_element(mu.len(), eta), &w);
    Ok(StepReport::plain(eta))
}

/// DiffPIR with data weight `lambda`; `noiseless` gives DDNM (`x0[m-bar] = y`).
pub fn diffpir_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    s: f64,
    t: f64,
    lambda: f64,
    noiseless: bool,
    ctx: &StepContext<'_>,
    rng: &mut R,
) -> Result<StepReport> {
    let eta = ctx.eta(s, t)?;
    let (alpha_s, sigma_s) = ctx.ns.coefficients(s);
    let (alpha_t, sigma_t) = ctx.ns.coefficients(t);
    let w = gaussian_vector(state.x.len(), rng);
    let x_t = state.x.clone();
    let out = time_t_eval(state, t, ctx);
    let mut x0 = out.x0_hat;
    let prior_weight = if noiseless { 0.0 } else { lambda * ctx.task.sigma_y().powi(2) * alpha_t * alpha_t };
    let denom = sigma_t * sigma_t + prior_weight;
    for (j, &i) in ctx.task.observed().iter().enumerate() {
        let y = ctx.task.y()[j];
        x0[i] = if noiseless { y } else { (sigma_t * sigma_t * y + prior_weight * x0[i]) / denom };
    }
    let x1 = noise_from_denoised(&x_t, &x0, alpha_t, sigma_t);
    let mu = ddim_mean(&x0, &x1, alpha_s, sigma_s, eta);
    state.x = perturb(&mu, &Vector::from_element(mu.len(), eta), &w);
    let gamma = if noiseless { 1.0 } else { sigma_t * sigma_t / denom };
    Ok(StepReport { eta, gamma: Some(gamma), flag: None })
}

/// Exact draw from the DPS-twisted DDIM transition of a Gaussian prior.
pub fn dps_analytic_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    s: f64,
    t: f64,
    ctx: &StepContext<'_>,
    rng: &mut R,
) -> Result<StepReport> {
    let prior = ctx
        .prior
        .as_gaussian()
        .ok_or_else(|| Error::Unsupported("dps-analytic requires a Gaussian prior".into()))?;
    let eta = ctx.eta(s, t)?;
    let (alpha_s, sigma_s) = ctx.ns.coefficients(s);
    let w = gaussian_vector(state.x.len(), rng);
    let out = time_t_eval(state, t, ctx);
    let mu = ddim_mean(&out.x0_hat, &out.x1_hat, alpha_s, sigma_s, eta);
    let (mean, cov) = dps_gaussian_moments(prior, &mu, eta, s, ctx)?;
    state.x = match cov {
        None => mean,
        Some(cov) => &mean + cholesky(&cov)?.l() * w,
    };
    Ok(StepReport::plain(eta))
}

/// `(mean, cov)` of `N(mu, eta^2 I)` reweighted by `N(y; P x0(x_s), sigma_y^2 I)`; `cov = None` when `eta = 0`.
fn dps_gaussian_moments(
    prior: &GaussianPrior,
    mu: &Vector,
    eta: f64,
    s: f64,
    ctx: &StepContext<'_>,
) -> Result<(Vector, Option<Matrix>)> {
    if eta == 0.0 {
        return Ok((mu.clone(), None));
    }
    let d = mu.len();
    let task = ctx.task;
    let alpha_s = ctx.ns.alpha(s);
    let dmat = prior.denoiser_matrix(s, &ctx.ns);
    let p = selection_matrix(d, task.observed());
    let offset = (Matrix::identity(d, d) - &dmat * alpha_s) * prior.mean();
    let y_eff = task.y() - gather(&offset, task.observed());
    let pd = &p * &dmat;
    let inv_var_y = task.sigma_y().powi(-2);
    let e2 = eta * eta;
    let precision_scaled = Matrix::identity(d, d) + pd.tr_mul(&pd) * (e2 * inv_var_y);
    let chol = cholesky(&symmetrize(&precision_scaled))?;
    let cov = symmetrize(&(chol.inverse() * e2));
    let rhs = mu / e2 + pd.tr_mul(&y_eff) * inv_var_y;
    Ok((&cov * rhs, Some(cov)))
}

/// Runs one reverse step of `method` from `t` to `s`, updating the NFE count.
pub fn step<R: Rng + ?Sized>(
    method: &MethodSpec,
    state: &mut ChainState,
    s: f64,
    t: f64,
    ctx: &StepContext<'_>,
    rng: &mut R,
) -> Result<StepReport> {
    let before = ctx.calls();
    let report = match method.kind {
        MethodKind::Ddim => ddim_step(state, s, t, ctx, rng),
        MethodKind::Ding => ding_step(state, s, t, ctx, rng),
        MethodKind::DingDelayed => ding_delayed_step(state, s, t, method.delayed_proxy, ctx, rng),
        MethodKind::Replacement => replacement_step(state, s, t, ctx, rng),
        MethodKind::Mcgdiff => mcgdiff_step(state, s, t, ctx, rng),
        MethodKind::Pnpflow => {
            pnpflow_step(state, s, t, method.pnpflow_step_for(ctx.task.sigma_y()), ctx, rng)
        }
        MethodKind::Flowdps => flowdps_step(state, s, t, ctx, rng),
        MethodKind::Diffpir => diffpir_step(state, s, t, method.diffpir_lambda, false, ctx, rng),
        MethodKind::Ddnm => diffpir_step(state, s, t, method.diffpir_lambda, true, ctx, rng),
        MethodKind::DpsAnalytic => dps_analytic_step(state, s, t, ctx, rng),
    }?;
    state.nfe += ctx.calls() - before;
    Ok(report)
}

/// One row of the per-step trajectory summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub time: f64,
    pub eta: f64,
    pub gamma: Option<f64>,
    /// `||x_s[m-bar] - alpha_s y||`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOutput {
    pub sample: Vector,
    pub nfe: u64,
    pub trajectory: Vec<TrajectoryRow>,
    pub flags: Vec<(usize, StepFlag)>,
}

fn observed_residual(x: &Vector, alpha: f64, task: &InpaintingTask) -> f64 {
    task.observed()
        .iter()
        .enumerate()
        .map(|(j, &i)| (x[i] - alpha * task.y()[j]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Draws `x ~ N(0, I)` at `t_K = 1`, runs steps `k = K-1 .. 1`, and returns `x0(x, t_1)`.
#[allow(clippy::too_many_arguments)]
pub fn run_sampler<R: Rng + ?Sized>(
    method: &MethodSpec,
    prior: &AnalyticPrior,
    task: &InpaintingTask,
    grid: &TimeGrid,
    ns: &NoiseSchedule,
    es: &EtaSchedule,
    rng: &mut R,
) -> Result<SamplerOutput> {
    method.validate(prior)?;
    let ctx = StepContext::new(prior, task, *ns, *es)?;
    let k_max = grid.steps();
    let mut state = ChainState::new(gaussian_vector(prior.dim(), rng), k_max);
    let mut trajectory = Vec::with_capacity(k_max);
    let mut flags = Vec::new();
    for (k, s, t) in grid.reverse_pairs() {
        let report = step(method, &mut state, s, t, &ctx, rng)?;
        state.k = k;
        if let Some(flag) = report.flag {
            flags.push((k, flag));
        }
        trajectory.push(TrajectoryRow {
            k,
            time: s,
            eta: report.eta,
            gamma: report.gamma,
            residual: observed_residual(&state.x, ns.alpha(s), task),
        });
    }
    let sample = ctx.denoise(&state.x, grid.t(1)).x0_hat;
    state.nfe += 1;
    debug_assert_eq!(state.nfe, ctx.calls());
    Ok(SamplerOutput { sample, nfe: ctx.calls(), trajectory, flags })
}
