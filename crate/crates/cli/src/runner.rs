//! Runs sampler chains for one (method, seed) cell and scores them against the exact posterior.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use ding_core::guidance::StepFlag;
use ding_core::metrics::{moment_errors, random_directions, sliced_wasserstein_with};
use ding_core::prior::exact_inpaint_posterior;
use ding_core::schedule::Spacing;
use ding_core::task::cpsnr;
use ding_core::{make_grid, run_sampler, EtaSchedule, MethodSpec, NoiseSchedule, Vector};

use crate::bench::Benchmark;
use crate::seeding::{stream_rng, PROJECTION_STREAM, REFERENCE_STREAM};

#[derive(Debug, Clone, Copy)]
pub struct RunSettings {
    pub master: u64,
    pub samples: usize,
    pub reference_samples: usize,
    pub projections: usize,
    pub timings: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: MethodSpec,
    pub seed: u64,
    pub steps: usize,
    pub eta: EtaSchedule,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub samples: Vec<Vector>,
    /// Evaluations per chain.
    pub nfe_per_chain: u64,
    /// Evaluations summed over chains.
    pub nfe_total: u64,
    pub sw: f64,
    pub mean_err: f64,
    pub cov_err: f64,
    pub cpsnr: Option<f64>,
    pub runtime_ms: Option<f64>,
    /// Flag description -> number of steps that raised it.
    pub flags: BTreeMap<String, usize>,
}

fn describe_flag(flag: &StepFlag) -> String {
    match flag {
        StepFlag::DeterministicGuidance => "zero eta: observation ignored".into(),
        StepFlag::DivergentFidelity { ratio } => format!("fidelity weight ratio {ratio:.3} above divergence threshold"),
        StepFlag::BelowTau { tau } => format!("replacement fallback below tau = {tau:.6}"),
    }
}

pub fn build_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    builder.build().context("starting the worker pool")
}

/// Exact-posterior reference draws for a replicate seed.
pub fn reference_samples(bench: &Benchmark, settings: &RunSettings, seed: u64) -> Result<Vec<Vector>> {
    let posterior = exact_inpaint_posterior(&bench.prior, &bench.task)?;
    let mut rng = stream_rng(settings.master, seed, REFERENCE_STREAM);
    Ok(posterior.sample(settings.reference_samples, &mut rng))
}

pub fn run_cell(
    bench: &Benchmark,
    cell: Cell,
    ns: &NoiseSchedule,
    settings: &RunSettings,
    pool: &rayon::ThreadPool,
) -> Result<CellResult> {
    let started = Instant::now();
    let grid = make_grid(cell.steps, Spacing::Uniform)?;
    let outputs = pool.install(|| {
        (0..settings.samples as u64)
            .into_par_iter()
            .map(|chain| {
                let mut rng = stream_rng(settings.master, cell.seed, chain);
                run_sampler(&cell.method, &bench.prior, &bench.task, &grid, ns, &cell.eta, &mut rng)
            })
            .collect::<ding_core::Result<Vec<_>>>()
    })
    .with_context(|| format!("running {} (seed {})", cell.method.kind, cell.seed))?;

    let nfe_per_chain = outputs[0].nfe;
    if outputs.iter().any(|o| o.nfe != nfe_per_chain) {
        bail!("chains of {} disagree on their evaluation count", cell.method.kind);
    }
    let nfe_total = outputs.iter().map(|o| o.nfe).sum();
    let mut flags = BTreeMap::new();
    for out in &outputs {
        for (_, flag) in &out.flags {
            *flags.entry(describe_flag(flag)).or_insert(0) += 1;
        }
    }
    let samples: Vec<Vector> = outputs.into_iter().map(|o| o.sample).collect();

    let posterior = exact_inpaint_posterior(&bench.prior, &bench.task)?;
    let reference = reference_samples(bench, settings, cell.seed)?;
    let directions = random_directions(
        bench.prior.dim(),
        settings.projections,
        &mut stream_rng(settings.master, cell.seed, PROJECTION_STREAM),
    );
    let sw = sliced_wasserstein_with(&samples, &reference, &directions)?;
    let (mean_err, cov_err) = moment_errors(&samples, &posterior.mean(), &posterior.cov())?;
    let cpsnr = if bench.task.observed().is_empty() || bench.task.x_star().is_none() {
        None
    } else {
        let total = samples.iter().map(|x| cpsnr(x, &bench.task, None)).sum::<ding_core::Result<f64>>()?;
        Some(total / samples.len() as f64)
    };
    let runtime_ms = settings.timings.then(|| started.elapsed().as_secs_f64() * 1e3);

    Ok(CellResult { cell, samples, nfe_per_chain, nfe_total, sw, mean_err, cov_err, cpsnr, runtime_ms, flags })
}
