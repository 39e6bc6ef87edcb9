//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rand::Rng;

use ding_core::linalg::{gaussian_vector, random_spd};
use ding_core::oracle::{bias_scan, fit_order, log_space, BiasReport};
use ding_core::schedule::{validate_schedule, Spacing};
use ding_core::task::build_task;
use ding_core::{make_grid, AnalyticPrior, EtaSchedule, Matrix, MethodSpec, Vector};

use crate::bench::{build_benchmark, Benchmark};
use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{
    fmt_f64, run_csv, timestamp, write_manifest, write_pgm, write_text, ChainSeeds, NfeTotal, RunManifest, BIAS_HEADER,
};
use crate::runner::{build_pool, reference_samples, run_cell, Cell, CellResult, RunSettings};
use crate::seeding::{describe, stream_rng, SETUP_REPLICATE};

pub const DEFAULT_OUT_DIR: &str = "results";
pub const RUN_CSV: &str = "results.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const BIAS_CSV: &str = "bias_scan.csv";
pub const MANIFEST: &str = "manifest.json";

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub timings: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ding_core::Error> for CliError {
    fn from(e: ding_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub results: Vec<CellResult>,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasInstance {
    pub d: usize,
    pub reports: Vec<BiasReport>,
    /// `(mean slope, cov slope)`; absent when the fit is underdetermined.
    pub slopes: Option<(f64, f64)>,
}

#[derive(Debug)]
pub struct BiasScanOutcome {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub instances: Vec<BiasInstance>,
    pub flags: Vec<String>,
}

#[derive(Debug)]
pub struct ValidateOutcome {
    pub problems: Vec<String>,
}

struct Session {
    cfg: ExperimentConfig,
    master: u64,
    out_dir: PathBuf,
    settings: RunSettings,
    pool: rayon::ThreadPool,
}

fn prepare(cfg: ExperimentConfig, ov: &Overrides) -> CliResult<Session> {
    let master = ov.seed.unwrap_or(cfg.raw.experiment.seed);
    let out_dir = ov
        .out
        .clone()
        .or_else(|| cfg.raw.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let exp = &cfg.raw.experiment;
    let settings = RunSettings {
        master,
        samples: exp.samples,
        reference_samples: exp.reference_samples,
        projections: exp.projections,
        timings: ov.timings,
    };
    if ov.workers == Some(0) {
        return Err(anyhow!("--workers must be positive").into());
    }
    let pool = build_pool(ov.workers.or(exp.workers))?;
    Ok(Session { cfg, master, out_dir, settings, pool })
}

fn manifest(ctx: &Session, command: &str, started_at: String) -> RunManifest {
    RunManifest {
        command: command.into(),
        config_hash: ctx.cfg.hash.clone(),
        config_path: ctx.cfg.source_path.clone(),
        tool_version: env!("CARGO_PKG_VERSION"),
        master_seed: ctx.master,
        rng: describe(),
        chains: ctx
            .cfg
            .raw
            .experiment
            .seeds
            .iter()
            .map(|&seed| ChainSeeds { replicate_seed: seed, chain_streams: format!("0..{}", ctx.settings.samples) })
            .collect(),
        started_at,
        finished_at: String::new(),
        nfe: BTreeMap::new(),
        flags: Vec::new(),
        artifacts: Vec::new(),
    }
}

fn record_cell(m: &mut RunManifest, key: String, r: &CellResult) {
    let entry = m.nfe.entry(key).or_insert(NfeTotal {
        per_chain: r.nfe_per_chain,
        expected_per_chain: r.cell.method.kind.total_nfe(r.cell.steps),
        total: 0,
        chains: 0,
    });
    entry.total += r.nfe_total;
    entry.chains += r.samples.len();
    for (flag, count) in &r.flags {
        m.flags.push(format!("{} seed {} [{}]: {flag} ({count} steps)", r.cell.method.kind, r.cell.seed, r.cell.eta));
    }
}

fn sample_mean(samples: &[Vector]) -> Vector {
    samples.iter().fold(Vector::zeros(samples[0].len()), |acc, x| acc + x) / samples.len() as f64
}

fn dump_images(ctx: &Session, bench: &Benchmark, results: &[CellResult], m: &mut RunManifest) -> anyhow::Result<()> {
    let Some((w, h)) = bench.grid else {
        m.flags.push("output.dump_pgm set but no 2D grid is configured; images skipped".into());
        return Ok(());
    };
    let dir = ctx.out_dir.join("images");
    let mut dump = |name: String, v: &Vector| -> anyhow::Result<()> {
        write_pgm(&dir.join(&name), v, w, h)?;
        m.artifacts.push(format!("images/{name}"));
        Ok(())
    };
    if let Some(x) = bench.task.x_star() {
        dump("x_star.pgm".into(), x)?;
    }
    if let Some(&seed) = ctx.cfg.raw.experiment.seeds.first() {
        dump("posterior_mean.pgm".into(), &sample_mean(&reference_samples(bench, &ctx.settings, seed)?))?;
    }
    for r in results {
        let stem = format!("{}_seed{}", r.cell.method.kind, r.cell.seed);
        dump(format!("{stem}_mean.pgm"), &sample_mean(&r.samples))?;
        dump(format!("{stem}_chain0.pgm"), &r.samples[0])?;
    }
    Ok(())
}

/// Runs every (method, seed) cell of the config and writes `results.csv` and `manifest.json`.
pub fn run_experiment(cfg: ExperimentConfig, ov: &Overrides) -> CliResult<RunOutcome> {
    let started_at = timestamp();
    let ctx = prepare(cfg, ov)?;
    let bench = build_benchmark(&ctx.cfg, ctx.master)?;
    for spec in &ctx.cfg.methods {
        spec.validate(&bench.prior)?;
    }
    let mut m = manifest(&ctx, "run", started_at);
    let mut results = Vec::new();
    for spec in &ctx.cfg.methods {
        for &seed in &ctx.cfg.raw.experiment.seeds {
            let cell = Cell { method: *spec, seed, steps: ctx.cfg.steps_for(spec.kind), eta: ctx.cfg.eta };
            let r = run_cell(&bench, cell, &ctx.cfg.schedule, &ctx.settings, &ctx.pool)?;
            record_cell(&mut m, spec.kind.to_string(), &r);
            results.push(r);
        }
    }
    finish_run(ctx, bench, results, m, RUN_CSV)
}

fn finish_run(ctx: Session, bench: Benchmark, results: Vec<CellResult>, mut m: RunManifest, csv: &str) -> CliResult<RunOutcome> {
    let csv_path = ctx.out_dir.join(csv);
    write_text(&csv_path, &run_csv(&results, bench.task.sigma_y()))?;
    m.artifacts.insert(0, csv.into());
    if ctx.cfg.raw.output.dump_pgm {
        dump_images(&ctx, &bench, &results, &mut m)?;
    }
    m.finished_at = timestamp();
    let manifest_path = ctx.out_dir.join(MANIFEST);
    write_manifest(&manifest_path, &m)?;
    Ok(RunOutcome { out_dir: ctx.out_dir, csv_path, manifest_path, results, manifest: m })
}

pub fn cmd_run(config: &Path, ov: &Overrides) -> CliResult<RunOutcome> {
    run_experiment(ExperimentConfig::from_path(config)?, ov)
}

/// Runs the ablation method once per (eta kind, seed) and writes `ablation.csv`.
pub fn run_ablation(cfg: ExperimentConfig, ov: &Overrides) -> CliResult<RunOutcome> {
    if cfg.ablation_etas.len() < 2 {
        return Err(ConfigError {
            path: cfg.source_path.clone(),
            line: None,
            column: None,
            message: format!("ablation.eta_kinds: at least two eta kinds are required, got {}", cfg.ablation_etas.len()),
        }
        .into());
    }
    let started_at = timestamp();
    let ctx = prepare(cfg, ov)?;
    let bench = build_benchmark(&ctx.cfg, ctx.master)?;
    let spec: MethodSpec = ctx.cfg.ablation_method();
    spec.validate(&bench.prior)?;
    let mut m = manifest(&ctx, "ablation", started_at);
    let mut results = Vec::new();
    for &eta in &ctx.cfg.ablation_etas {
        for &seed in &ctx.cfg.raw.experiment.seeds {
            let cell = Cell { method: spec, seed, steps: ctx.cfg.steps_for(spec.kind), eta };
            let r = run_cell(&bench, cell, &ctx.cfg.schedule, &ctx.settings, &ctx.pool)?;
            record_cell(&mut m, format!("{}/{}", spec.kind, eta), &r);
            results.push(r);
        }
    }
    finish_run(ctx, bench, results, m, ABLATION_CSV)
}

pub fn cmd_ablation(config: &Path, ov: &Overrides) -> CliResult<RunOutcome> {
    run_ablation(ExperimentConfig::from_path(config)?, ov)
}

/// Covariance source for the bias scan: a fixed Gaussian, or a fresh random SPD matrix per instance.
enum ScanCov {
    Fixed(Matrix),
    Random { d: usize, lo: f64, hi: f64 },
}

fn scan_cov(cfg: &ExperimentConfig, master: u64) -> CliResult<ScanCov> {
    let p = &cfg.raw.prior;
    let random_gaussian = p.kind.as_deref() == Some("gaussian") && p.cov.is_none();
    if random_gaussian {
        let [lo, hi] = p.eig_range.unwrap_or(cfg.raw.bias_scan.eig_range);
        return Ok(ScanCov::Random { d: p.d.unwrap_or(cfg.raw.bias_scan.d), lo, hi });
    }
    let bench = build_benchmark(cfg, master)?;
    match bench.prior {
        AnalyticPrior::Gaussian(g) => Ok(ScanCov::Fixed(g.cov().clone())),
        AnalyticPrior::Gmm(_) => Err(ding_core::Error::Unsupported("the bias scan needs a Gaussian prior".into()).into()),
    }
}

/// Compares DPS and DInG transition moments across a log-spaced eta range.
pub fn run_bias_scan(cfg: ExperimentConfig, ov: &Overrides) -> CliResult<BiasScanOutcome> {
    let started_at = timestamp();
    let ctx = prepare(cfg, ov)?;
    let source = scan_cov(&ctx.cfg, ctx.master)?;
    let b = ctx.cfg.raw.bias_scan.clone();
    let ns = ctx.cfg.schedule;
    let etas = log_space(b.eta_min, b.eta_max, b.points);
    let mut flags = Vec::new();
    let mut instances = Vec::with_capacity(b.instances);
    let mut csv = String::from(BIAS_HEADER);
    csv.push('\n');

    for i in 0..b.instances {
        let mut rng = stream_rng(ctx.master, SETUP_REPLICATE, 1 + i as u64);
        let cov = match &source {
            ScanCov::Fixed(c) => c.clone(),
            ScanCov::Random { d, lo, hi } => random_spd(*d, *lo, *hi, &mut rng),
        };
        let d = cov.nrows();
        let masked: Vec<usize> = match &ctx.cfg.raw.task.masked {
            Some(m) => m.clone(),
            None if d == 1 => vec![],
            None => (rng.random_range(1..d)..d).collect(),
        };
        let chol = cov.clone().cholesky().context("scan covariance is not SPD")?;
        let x_star = chol.l() * gaussian_vector(d, &mut rng);
        let task = build_task(&x_star, &masked, Some(b.sigma_y))?;
        let (alpha_t, sigma_t) = ns.coefficients(b.t);
        let x_t = chol.l() * gaussian_vector(d, &mut rng) * alpha_t + gaussian_vector(d, &mut rng) * sigma_t;
        let reports = bias_scan(&cov, &x_t, &task, b.s, b.t, &ns, &etas)?;

        for r in &reports {
            if r.epsilon_s > r.epsilon_bound + 1e-10 {
                flags.push(format!("instance {i}: epsilon {} exceeds its bound {}", r.epsilon_s, r.epsilon_bound));
            }
            csv.push_str(&format!(
                "{},{},{},{},{},{d},{i}\n",
                fmt_f64(r.eta),
                fmt_f64(r.mean_gap),
                fmt_f64(r.cov_gap),
                fmt_f64(r.epsilon_s),
                fmt_f64(r.epsilon_bound),
            ));
        }
        let mean_gaps: Vec<f64> = reports.iter().map(|r| r.mean_gap).collect();
        let cov_gaps: Vec<f64> = reports.iter().map(|r| r.cov_gap).collect();
        let slopes = match (fit_order(&etas, &mean_gaps), fit_order(&etas, &cov_gaps)) {
            (Ok(ms), Ok(cs)) => {
                csv.push_str(&format!("slope,{},{},,,{d},{i}\n", fmt_f64(ms), fmt_f64(cs)));
                Some((ms, cs))
            }
            (Err(e), _) | (_, Err(e)) => {
                flags.push(format!("instance {i}: slope rows omitted ({e})"));
                None
            }
        };
        instances.push(BiasInstance { d, reports, slopes });
    }

    let csv_path = ctx.out_dir.join(BIAS_CSV);
    write_text(&csv_path, &csv)?;
    let mut m = manifest(&ctx, "bias-scan", started_at);
    m.chains.clear();
    m.flags = flags.clone();
    m.artifacts.push(BIAS_CSV.into());
    m.finished_at = timestamp();
    let manifest_path = ctx.out_dir.join(MANIFEST);
    write_manifest(&manifest_path, &m)?;
    Ok(BiasScanOutcome { csv_path, manifest_path, instances, flags })
}

pub fn cmd_bias_scan(config: &Path, ov: &Overrides) -> CliResult<BiasScanOutcome> {
    run_bias_scan(ExperimentConfig::from_path(config)?, ov)
}

/// Lints the config: builds the benchmark and checks every schedule on every configured grid.
pub fn run_validate(cfg: &ExperimentConfig, ov: &Overrides) -> CliResult<ValidateOutcome> {
    let master = ov.seed.unwrap_or(cfg.raw.experiment.seed);
    let mut problems = Vec::new();
    match build_benchmark(cfg, master) {
        Ok(bench) => {
            for spec in &cfg.methods {
                if let Err(e) = spec.validate(&bench.prior) {
                    problems.push(format!("method {}: {e}", spec.kind));
                }
            }
        }
        Err(e) => problems.push(format!("benchmark: {e:#}")),
    }
    let mut etas: Vec<EtaSchedule> = vec![cfg.eta];
    etas.extend(cfg.ablation_etas.iter().copied().filter(|e| *e != cfg.eta));
    let mut steps: Vec<usize> = cfg.methods.iter().map(|s| cfg.steps_for(s.kind)).collect();
    steps.sort_unstable();
    steps.dedup();
    for k in steps {
        let grid = make_grid(k, Spacing::Uniform)?;
        for eta in &etas {
            for v in validate_schedule(&cfg.schedule, eta, &grid).violations {
                problems.push(format!("schedule {} / eta {eta} / K = {k}: {:?} at t = {}: {}", cfg.schedule, v.kind, v.time, v.detail));
            }
        }
    }
    Ok(ValidateOutcome { problems })
}

pub fn cmd_validate(config: &Path, ov: &Overrides) -> CliResult<ValidateOutcome> {
    run_validate(&ExperimentConfig::from_path(config)?, ov)
}
