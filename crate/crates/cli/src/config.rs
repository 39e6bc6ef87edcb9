//! Experiment configuration.
//!
//! Configs are TOML documents. Dotted keys (`method.kind = "ding"`) and
//! section headers (`[method]`) are interchangeable. Unknown keys are rejected.
//!
//! ```toml
//! [experiment]
//! seed = 7                 # master seed
//! seeds = [0, 1, 2]        # replicate seeds, one CSV row each per method
//! steps = 25               # K
//! samples = 2000           # chains per (method, seed)
//!
//! [prior]
//! preset = "correlated-2d" # or kind = "gaussian" | "gmm" with explicit/random parameters
//!
//! [task]
//! sigma_y = 0.01
//!
//! [method]
//! kinds = ["ding", "replacement"]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use ding_core::guidance::{DelayedProxy, MethodKind, MethodSpec};
use ding_core::task::DownsampleMode;
use ding_core::{EtaSchedule, NoiseSchedule};

/// A configuration problem, anchored to a line of the source when possible.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = self.path.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "<config>".into());
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{path}:{l}:{c}: {}", self.message),
            (Some(l), None) => write!(f, "{path}:{l}: {}", self.message),
            _ => write!(f, "{path}: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_samples")]
    pub reference_samples: usize,
    #[serde(default = "default_projections")]
    pub projections: usize,
    pub workers: Option<usize>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_steps() -> usize {
    25
}
fn default_samples() -> usize {
    2000
}
fn default_projections() -> usize {
    ding_core::metrics::DEFAULT_PROJECTIONS
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: default_seeds(),
            steps: default_steps(),
            samples: default_samples(),
            reference_samples: default_samples(),
            projections: default_projections(),
            workers: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    /// `correlated-2d` or `gmm-2d`.
    pub preset: Option<String>,
    /// `gaussian` or `gmm`.
    pub kind: Option<String>,
    pub d: Option<usize>,
    pub eig_range: Option<[f64; 2]>,
    pub components: Option<usize>,
    pub mean_scale: Option<f64>,
    pub mean: Option<Vec<f64>>,
    pub cov: Option<Vec<Vec<f64>>>,
    pub weights: Option<Vec<f64>>,
    pub means: Option<Vec<Vec<f64>>>,
    pub covs: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub masked: Option<Vec<usize>>,
    pub mask_pgm: Option<PathBuf>,
    pub downsample_factor: Option<usize>,
    pub downsample_mode: Option<String>,
    pub threshold: Option<f64>,
    pub sigma_y: Option<f64>,
    pub x_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: Option<String>,
    pub eta: Option<String>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub kind: Option<String>,
    pub kinds: Option<Vec<String>>,
    pub lambda: Option<f64>,
    pub gamma_n: Option<f64>,
    pub delayed_proxy: Option<String>,
    /// Per-method `K` overrides, e.g. `steps.ding-delayed = 49`.
    #[serde(default)]
    pub steps: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    #[serde(default)]
    pub eta_kinds: Vec<String>,
    pub method: Option<String>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BiasScanSection {
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_scan_d")]
    pub d: usize,
    #[serde(default = "default_scan_s")]
    pub s: f64,
    #[serde(default = "default_scan_t")]
    pub t: f64,
    #[serde(default = "default_scan_sigma_y")]
    pub sigma_y: f64,
    #[serde(default = "default_eta_min")]
    pub eta_min: f64,
    #[serde(default = "default_eta_max")]
    pub eta_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_scan_eig")]
    pub eig_range: [f64; 2],
}

fn default_instances() -> usize {
    10
}
fn default_scan_d() -> usize {
    3
}
fn default_scan_s() -> f64 {
    0.5
}
fn default_scan_t() -> f64 {
    0.6
}
fn default_scan_sigma_y() -> f64 {
    1.0
}
fn default_eta_min() -> f64 {
    1e-3
}
fn default_eta_max() -> f64 {
    1e-1
}
fn default_points() -> usize {
    11
}
fn default_scan_eig() -> [f64; 2] {
    [0.2, 3.0]
}

impl Default for BiasScanSection {
    fn default() -> Self {
        Self {
            instances: default_instances(),
            d: default_scan_d(),
            s: default_scan_s(),
            t: default_scan_t(),
            sigma_y: default_scan_sigma_y(),
            eta_min: default_eta_min(),
            eta_max: default_eta_max(),
            points: default_points(),
            eig_range: default_scan_eig(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub dump_pgm: bool,
    /// Latent grid `[width, height]` for image dumps when no PGM mask is configured.
    pub grid: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub method: MethodSection,
    #[serde(default)]
    pub ablation: AblationSection,
    #[serde(default)]
    pub bias_scan: BiasScanSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A parsed and checked configuration, plus the hash of its canonical form.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub source_path: Option<PathBuf>,
    pub hash: String,
    pub schedule: NoiseSchedule,
    pub eta: EtaSchedule,
    pub methods: Vec<MethodSpec>,
    pub ablation_etas: Vec<EtaSchedule>,
    pub downsample_mode: DownsampleMode,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            column: None,
            message: format!("cannot read config: {e}"),
        })?;
        let mut cfg = Self::from_str_with_path(&text, Some(path))?;
        if let Some(pgm) = cfg.raw.task.mask_pgm.clone() {
            let resolved = if pgm.is_relative() {
                path.parent().map(|p| p.join(&pgm)).unwrap_or(pgm)
            } else {
                pgm
            };
            if !resolved.exists() {
                return Err(anchored(&text, Some(path), "task", "mask_pgm", format!("mask file {} does not exist", resolved.display())));
            }
            cfg.raw.task.mask_pgm = Some(resolved);
        }
        Ok(cfg)
    }

    pub fn from_str_with_path(text: &str, path: Option<&Path>) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|span| line_col(text, span.start)).unzip();
            ConfigError {
                path: path.map(Path::to_path_buf),
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })?;
        let hash = canonical_hash(text).map_err(|message| ConfigError { path: path.map(Path::to_path_buf), line: None, column: None, message })?;
        let err = |section: &str, key: &str, message: String| anchored(text, path, section, key, message);

        let exp = &raw.experiment;
        if exp.steps < 2 {
            return Err(err("experiment", "steps", format!("K must be at least 2, got {}", exp.steps)));
        }
        if exp.seeds.is_empty() {
            return Err(err("experiment", "seeds", "at least one seed is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = exp.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(err("experiment", "seeds", format!("seed {dup} is listed twice")));
        }
        if exp.samples < 2 || exp.reference_samples < 2 {
            return Err(err("experiment", "samples", "sample counts must be at least 2".into()));
        }
        if exp.projections == 0 {
            return Err(err("experiment", "projections", "at least one projection is required".into()));
        }
        if exp.workers == Some(0) {
            return Err(err("experiment", "workers", "worker count must be positive".into()));
        }

        let schedule: NoiseSchedule = match &raw.schedule.kind {
            Some(k) => k.parse().map_err(|e| err("schedule", "kind", format!("{e}")))?,
            None => NoiseSchedule::linear(),
        };
        let eta: EtaSchedule = match &raw.schedule.eta {
            Some(k) => k.parse().map_err(|e| err("schedule", "eta", format!("{e}")))?,
            None => EtaSchedule::Default,
        };

        let m = &raw.method;
        let names: Vec<String> = match (&m.kind, &m.kinds) {
            (Some(_), Some(_)) => return Err(err("method", "kinds", "set either method.kind or method.kinds, not both".into())),
            (Some(k), None) => vec![k.clone()],
            (None, Some(ks)) => ks.clone(),
            (None, None) => vec!["ding".into()],
        };
        let delayed_proxy: DelayedProxy = match &m.delayed_proxy {
            Some(p) => p.parse().map_err(|e| err("method", "delayed_proxy", format!("{e}")))?,
            None => DelayedProxy::default(),
        };
        if let Some(l) = m.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(err("method", "lambda", format!("lambda must be positive, got {l}")));
            }
        }
        if let Some(g) = m.gamma_n {
            if !(g > 0.0 && g.is_finite()) {
                return Err(err("method", "gamma_n", format!("gamma_n must be positive, got {g}")));
            }
        }
        let mut methods = Vec::with_capacity(names.len());
        for name in &names {
            let kind: MethodKind = name.parse().map_err(|e| err("method", "kind", format!("{e}")))?;
            if methods.iter().any(|s: &MethodSpec| s.kind == kind) {
                return Err(err("method", "kinds", format!("method {kind} is listed twice")));
            }
            let mut spec = MethodSpec::new(kind);
            if let Some(l) = m.lambda {
                spec.diffpir_lambda = l;
            }
            spec.pnpflow_step = m.gamma_n;
            spec.delayed_proxy = delayed_proxy;
            methods.push(spec);
        }
        for (name, &k) in &m.steps {
            name.parse::<MethodKind>().map_err(|e| err("method", name, format!("{e}")))?;
            if k < 2 {
                return Err(err("method", name, format!("K must be at least 2, got {k}")));
            }
        }

        let ablation_etas = raw
            .ablation
            .eta_kinds
            .iter()
            .map(|k| k.parse::<EtaSchedule>().map_err(|e| err("ablation", "eta_kinds", format!("{e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(method) = &raw.ablation.method {
            method.parse::<MethodKind>().map_err(|e| err("ablation", "method", format!("{e}")))?;
        }

        let downsample_mode = match &raw.task.downsample_mode {
            Some(mode) => mode.parse().map_err(|e| err("task", "downsample_mode", format!("{e}")))?,
            None => DownsampleMode::default(),
        };
        if let Some(s) = raw.task.sigma_y {
            if !(s > 0.0 && s.is_finite()) {
                return Err(err("task", "sigma_y", format!("sigma_y must be positive, got {s}")));
            }
        }
        if raw.task.masked.is_some() && raw.task.mask_pgm.is_some() {
            return Err(err("task", "mask_pgm", "set either task.masked or task.mask_pgm, not both".into()));
        }
        if raw.prior.preset.is_some() && raw.prior.kind.is_some() {
            return Err(err("prior", "kind", "set either prior.preset or prior.kind, not both".into()));
        }
        if raw.prior.preset.is_none() && raw.prior.kind.is_none() {
            return Err(err("prior", "kind", "the prior needs a kind or a preset".into()));
        }

        let b = &raw.bias_scan;
        if !(0.0 < b.s && b.s < b.t && b.t <= 1.0) {
            return Err(err("bias_scan", "s", format!("bias scan needs 0 < s < t <= 1, got s = {}, t = {}", b.s, b.t)));
        }
        if !(b.eta_min > 0.0 && b.eta_max >= b.eta_min) || b.points == 0 {
            return Err(err("bias_scan", "eta_min", "bias scan needs 0 < eta_min <= eta_max and points >= 1".into()));
        }

        Ok(Self {
            raw,
            source_path: path.map(Path::to_path_buf),
            hash,
            schedule,
            eta,
            methods,
            ablation_etas,
            downsample_mode,
        })
    }

    pub fn steps_for(&self, kind: MethodKind) -> usize {
        self.raw.method.steps.get(kind.name()).copied().unwrap_or(self.raw.experiment.steps)
    }

    pub fn ablation_method(&self) -> MethodSpec {
        let kind = self
            .raw
            .ablation
            .method
            .as_deref()
            .and_then(|m| m.parse().ok())
            .unwrap_or(MethodKind::Ding);
        self.methods.iter().find(|s| s.kind == kind).copied().unwrap_or_else(|| MethodSpec::new(kind))
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Best-effort line of `section.key`, via `[section]` + `key =` or a dotted `section.key =`.
fn find_key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (n, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = header.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs: String = lhs.split('.').map(|p| p.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
        let full = if current.is_empty() { lhs } else { format!("{current}.{lhs}") };
        if full == format!("{section}.{key}") || full.starts_with(&format!("{section}.{key}.")) {
            return Some(n + 1);
        }
    }
    None
}

fn anchored(text: &str, path: Option<&Path>, section: &str, key: &str, message: String) -> ConfigError {
    ConfigError {
        path: path.map(Path::to_path_buf),
        line: find_key_line(text, section, key),
        column: None,
        message: format!("{section}.{key}: {message}"),
    }
}

/// SHA-256 of the document re-serialised as JSON with sorted keys.
pub fn canonical_hash(text: &str) -> Result<String, String> {
    let value: toml::Table = toml::from_str(text).map_err(|e| e.message().to_string())?;
    let json = serde_json::to_value(&value).map_err(|e| e.to_string())?;
    let canonical = serde_json::to_string(&json).map_err(|e| e.to_string())?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}
