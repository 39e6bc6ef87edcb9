//! CSV, manifest and image artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{GrayImage, ImageEncoder, Luma};
use serde::Serialize;

use ding_core::Vector;

use crate::runner::CellResult;
use crate::seeding::RngDescription;

pub const RUN_HEADER: &str = "method,seed,K,nfe,sigma_y,eta_kind,sw,mean_err,cov_err,cpsnr,runtime_ms";
pub const BIAS_HEADER: &str = "eta,mean_gap,cov_gap,epsilon_s,epsilon_bound,d,instance";

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn run_row(r: &CellResult, sigma_y: f64) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.cell.method.kind,
        r.cell.seed,
        r.cell.steps,
        r.nfe_per_chain,
        fmt_f64(sigma_y),
        r.cell.eta,
        fmt_f64(r.sw),
        fmt_f64(r.mean_err),
        fmt_f64(r.cov_err),
        fmt_opt(r.cpsnr),
        fmt_opt(r.runtime_ms),
    )
}

pub fn run_csv(results: &[CellResult], sigma_y: f64) -> String {
    let mut out = String::from(RUN_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&run_row(r, sigma_y));
        out.push('\n');
    }
    out
}

/// Parsed row of a run CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub steps: usize,
    pub nfe: u64,
    pub sigma_y: f64,
    pub eta_kind: String,
    pub sw: f64,
    pub mean_err: f64,
    pub cov_err: f64,
    pub cpsnr: Option<f64>,
}

pub fn parse_run_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    let header = lines.next().context("empty CSV")?;
    anyhow::ensure!(header == RUN_HEADER, "unexpected header `{header}`");
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            anyhow::ensure!(f.len() == 11, "row `{line}` has {} fields", f.len());
            let opt = |s: &str| -> Result<Option<f64>> { Ok(if s.is_empty() { None } else { Some(s.parse()?) }) };
            Ok(RunRecord {
                method: f[0].into(),
                seed: f[1].parse()?,
                steps: f[2].parse()?,
                nfe: f[3].parse()?,
                sigma_y: f[4].parse()?,
                eta_kind: f[5].into(),
                sw: f[6].parse()?,
                mean_err: f[7].parse()?,
                cov_err: f[8].parse()?,
                cpsnr: opt(f[9])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct NfeTotal {
    pub per_chain: u64,
    pub expected_per_chain: u64,
    pub total: u64,
    pub chains: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainSeeds {
    pub replicate_seed: u64,
    pub chain_streams: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config_path: Option<PathBuf>,
    pub tool_version: &'static str,
    pub master_seed: u64,
    pub rng: RngDescription,
    pub chains: Vec<ChainSeeds>,
    pub started_at: String,
    pub finished_at: String,
    /// Keyed by `method` or `method/eta_kind`.
    pub nfe: BTreeMap<String, NfeTotal>,
    pub flags: Vec<String>,
    pub artifacts: Vec<String>,
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes `values` as a `width x height` P5 image plus a `.range` sidecar with the mapped `(min, max)`.
pub fn write_pgm(path: &Path, values: &Vector, width: usize, height: usize) -> Result<()> {
    anyhow::ensure!(values.len() == width * height, "image has {} values for a {width}x{height} grid", values.len());
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let img = GrayImage::from_fn(width as u32, height as u32, |c, r| {
        let v = values[r as usize * width + c as usize];
        let level = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
        Luma([level.clamp(0.0, 255.0) as u8])
    });
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), width as u32, height as u32, image::ExtendedColorType::L8)
        .with_context(|| format!("encoding {}", path.display()))?;
    let mut sidecar = String::new();
    let _ = writeln!(sidecar, "min = {}", fmt_f64(lo));
    let _ = writeln!(sidecar, "max = {}", fmt_f64(hi));
    write_text(&path.with_extension("pgm.range"), &sidecar)
}
