//! Interpolation schedules, time grids and DDIM standard-deviation schedules.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Absolute tolerance used for the schedule identities.
pub const SCHEDULE_TOL: f64 = 1e-12;

/// Default rescaling constant of the `ddpm-scaled` eta schedule.
pub const DEFAULT_DDPM_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    /// `alpha_t = 1 - t`, `sigma_t = t`.
    Linear,
    /// `alpha_t = cos(pi t / 2)`, `sigma_t = sin(pi t / 2)`.
    VariancePreserving,
}

/// Deterministic interpolation `X_t = alpha_t X_0 + sigma_t X_1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
}

impl NoiseSchedule {
    pub const fn linear() -> Self {
        Self { kind: ScheduleKind::Linear }
    }

    pub const fn variance_preserving() -> Self {
        Self { kind: ScheduleKind::VariancePreserving }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => 1.0 - t,
            ScheduleKind::VariancePreserving => {
                // cos(pi/2) is not exactly zero in floating point.
                if t >= 1.0 {
                    0.0
                } else if t <= 0.0 {
                    1.0
                } else {
                    (FRAC_PI_2 * t).cos()
                }
            }
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => t,
            ScheduleKind::VariancePreserving => {
                if t >= 1.0 {
                    1.0
                } else if t <= 0.0 {
                    0.0
                } else {
                    (FRAC_PI_2 * t).sin()
                }
            }
        }
    }

    /// `(alpha_t, sigma_t)`.
    pub fn coefficients(&self, t: f64) -> (f64, f64) {
        (self.alpha(t), self.sigma(t))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear()
    }
}

impl FromStr for NoiseSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(Self::linear()),
            "vp" | "variance-preserving" => Ok(Self::variance_preserving()),
            other => Err(invalid(format!("unknown schedule kind `{other}`"))),
        }
    }
}

impl fmt::Display for NoiseSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ScheduleKind::Linear => f.write_str("linear"),
            ScheduleKind::VariancePreserving => f.write_str("variance-preserving"),
        }
    }
}

/// Signature of a user-supplied eta rule `(s, t, schedule) -> eta_s`.
pub type EtaRule = fn(f64, f64, &NoiseSchedule) -> f64;

/// DDIM standard-deviation schedule `eta_s`, evaluated for a step `t -> s`.
#[derive(Debug, Clone, Copy, Default)]
pub enum EtaSchedule {
    /// `sigma_s (1 - alpha_s)`.
    #[default]
    Default,
    /// The ancestral (DDPM) choice `sigma_s sqrt(sigma_t^2 - (alpha_t/alpha_s)^2 sigma_s^2) / sigma_t`.
    Ddpm,
    /// `c` times [`EtaSchedule::Ddpm`].
    DdpmScaled(f64),
    /// `sigma_s`, the largest admissible value.
    Max,
    /// `sigma_s sqrt(1 - alpha_s)`.
    Sqrt,
    /// Deterministic DDIM.
    Zero,
    /// Arbitrary rule, checked for admissibility at evaluation time.
    Custom { name: &'static str, rule: EtaRule },
}

impl PartialEq for EtaSchedule {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::DdpmScaled(a), Self::DdpmScaled(b)) => a == b,
            (Self::Custom { name: a, .. }, Self::Custom { name: b, .. }) => a == b,
            _ => std::mem::discriminant(self) == std::mem::discriminant(other),
        }
    }
}

impl EtaSchedule {
    /// Unchecked value of `eta_s` for the step `t -> s`.
    pub fn raw(&self, s: f64, t: f64, ns: &NoiseSchedule) -> Result<f64> {
        let (alpha_s, sigma_s) = ns.coefficients(s);
        let value = match *self {
            EtaSchedule::Default => sigma_s * (1.0 - alpha_s),
            EtaSchedule::Max => sigma_s,
            EtaSchedule::Sqrt => sigma_s * (1.0 - alpha_s).max(0.0).sqrt(),
            EtaSchedule::Zero => 0.0,
            EtaSchedule::Ddpm => ddpm_eta(s, t, ns)?,
            EtaSchedule::DdpmScaled(c) => c * ddpm_eta(s, t, ns)?,
            EtaSchedule::Custom { rule, .. } => rule(s, t, ns),
        };
        Ok(value)
    }

    /// Short name used in CSV output.
    pub fn name(&self) -> String {
        self.to_string()
    }
}

fn ddpm_eta(s: f64, t: f64, ns: &NoiseSchedule) -> Result<f64> {
    let (alpha_s, sigma_s) = ns.coefficients(s);
    let (alpha_t, sigma_t) = ns.coefficients(t);
    if sigma_t <= 0.0 {
        return Err(Error::Domain(format!("ddpm eta requires sigma_t > 0 (t = {t})")));
    }
    if alpha_s <= 0.0 {
        return Err(Error::Domain(format!("ddpm eta requires alpha_s > 0 (s = {s})")));
    }
    let ratio = alpha_t / alpha_s;
    let inner = (sigma_t * sigma_t - ratio * ratio * sigma_s * sigma_s).max(0.0);
    Ok(sigma_s * inner.sqrt() / sigma_t)
}

/// Evaluates `eta_s` for the step `t -> s` and checks `0 <= eta_s <= sigma_s`.
pub fn eval_eta(es: &EtaSchedule, s: f64, t: f64, ns: &NoiseSchedule) -> Result<f64> {
    if !(0.0 <= s && s < t && t <= 1.0) {
        return Err(invalid(format!("eta requires 0 <= s < t <= 1, got s = {s}, t = {t}")));
    }
    let eta = es.raw(s, t, ns)?;
    let sigma = ns.sigma(s);
    if !eta.is_finite() || eta < 0.0 || eta > sigma + SCHEDULE_TOL {
        return Err(Error::ScheduleViolation { s, eta, sigma });
    }
    Ok(eta.min(sigma))
}

impl fmt::Display for EtaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EtaSchedule::Default => f.write_str("default"),
            EtaSchedule::Ddpm => f.write_str("ddpm"),
            EtaSchedule::DdpmScaled(c) => write!(f, "ddpm-scaled({c})"),
            EtaSchedule::Max => f.write_str("max"),
            EtaSchedule::Sqrt => f.write_str("sqrt"),
            EtaSchedule::Zero => f.write_str("zero"),
            EtaSchedule::Custom { name, .. } => f.write_str(name),
        }
    }
}

impl FromStr for EtaSchedule {
    type Err = Error;

    /// Accepts `default`, `ddpm`, `ddpm-scaled`, `ddpm-scaled(c)`, `max`, `sqrt`, `zero`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "default" => return Ok(Self::Default),
            "ddpm" => return Ok(Self::Ddpm),
            "ddpm-scaled" => return Ok(Self::DdpmScaled(DEFAULT_DDPM_SCALE)),
            "max" => return Ok(Self::Max),
            "sqrt" => return Ok(Self::Sqrt),
            "zero" => return Ok(Self::Zero),
            _ => {}
        }
        if let Some(arg) = s.strip_prefix("ddpm-scaled(").and_then(|r| r.strip_suffix(')')) {
            let c: f64 = arg
                .trim()
                .parse()
                .map_err(|_| invalid(format!("bad ddpm-scaled constant `{arg}`")))?;
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid(format!("ddpm-scaled constant must be positive, got {c}")));
            }
            return Ok(Self::DdpmScaled(c));
        }
        Err(invalid(format!("unknown eta kind `{s}`")))
    }
}

/// Strictly decreasing time points `t_K = 1 > ... > t_0 = 0`, stored from `t_K` down.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 3 {
            return Err(invalid(format!("a grid needs K >= 2 (got {} points)", points.len())));
        }
        if points[0] != 1.0 || *points.last().unwrap() != 0.0 {
            return Err(invalid("grid endpoints must be exactly 1 and 0"));
        }
        if points.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(invalid("grid must be strictly decreasing"));
        }
        Ok(Self { points })
    }

    /// Number of intervals `K`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// Points from `t_K = 1` down to `t_0 = 0`.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// `t_k`.
    pub fn t(&self, k: usize) -> f64 {
        self.points[self.steps() - k]
    }

    /// The sampler's reverse moves `(k, s = t_k, t = t_{k+1})` for `k = K-1, ..., 1`.
    pub fn reverse_pairs(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (1..self.steps()).rev().map(move |k| (k, self.t(k), self.t(k + 1)))
    }

    /// Every consecutive pair `(s = t_k, t = t_{k+1})` for `k = K-1, ..., 0`.
    pub fn all_pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.windows(2).map(|w| (w[1], w[0]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Spacing {
    #[default]
    Uniform,
}

/// Uniform grid `t_k = k / K`.
pub fn make_grid(k: usize, spacing: Spacing) -> Result<TimeGrid> {
    if k < 2 {
        return Err(invalid(format!("grid step count must be >= 2, got {k}")));
    }
    match spacing {
        Spacing::Uniform => {
            let mut points: Vec<f64> = (0..=k).rev().map(|i| i as f64 / k as f64).collect();
            points[0] = 1.0;
            points[k] = 0.0;
            TimeGrid::new(points)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    Boundary,
    AlphaIncreasing,
    SigmaDecreasing,
    VarianceNotPreserved,
    NegativeEta,
    EtaAboveSigma,
    EtaUndefined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub time: f64,
    pub detail: String,
}

/// Outcome of [`validate_schedule`]; empty when every invariant holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, time: f64, detail: String) {
        self.violations.push(Violation { kind, time, detail });
    }
}

/// Checks boundary values, monotonicity, the VP identity and eta admissibility on `grid`.
pub fn validate_schedule(ns: &NoiseSchedule, es: &EtaSchedule, grid: &TimeGrid) -> ValidationReport {
    let mut report = ValidationReport::default();
    let boundaries = [(0.0, 1.0, 0.0), (1.0, 0.0, 1.0)];
    for (t, a, s) in boundaries {
        let (alpha, sigma) = ns.coefficients(t);
        if alpha != a || sigma != s {
            report.push(
                ViolationKind::Boundary,
                t,
                format!("(alpha, sigma)({t}) = ({alpha}, {sigma}), expected ({a}, {s})"),
            );
        }
    }

    // points run from t = 1 down to t = 0, so alpha must not decrease along them
    for w in grid.points().windows(2) {
        let (hi, lo) = (w[0], w[1]);
        if ns.alpha(lo) + SCHEDULE_TOL < ns.alpha(hi) {
            report.push(ViolationKind::AlphaIncreasing, lo, format!("alpha({lo}) < alpha({hi})"));
        }
        if ns.sigma(lo) > ns.sigma(hi) + SCHEDULE_TOL {
            report.push(ViolationKind::SigmaDecreasing, lo, format!("sigma({lo}) > sigma({hi})"));
        }
    }

    if ns.kind == ScheduleKind::VariancePreserving {
        for &t in grid.points() {
            let (a, s) = ns.coefficients(t);
            let err = (a * a + s * s - 1.0).abs();
            if err > SCHEDULE_TOL {
                report.push(ViolationKind::VarianceNotPreserved, t, format!("|alpha^2 + sigma^2 - 1| = {err:e}"));
            }
        }
    }

    for (s, t) in grid.all_pairs() {
        match es.raw(s, t, ns) {
            Ok(eta) => {
                let sigma = ns.sigma(s);
                if !(eta >= 0.0) {
                    report.push(ViolationKind::NegativeEta, s, format!("eta = {eta}"));
                } else if eta > sigma + SCHEDULE_TOL {
                    report.push(ViolationKind::EtaAboveSigma, s, format!("eta = {eta} > sigma = {sigma}"));
                }
            }
            Err(e) => report.push(ViolationKind::EtaUndefined, s, e.to_string()),
        }
    }
    report
}
