//! Benchmark construction: priors, tasks and the built-in presets.

use anyhow::{bail, Context, Result};
use rand::Rng;

use ding_core::linalg::{gaussian_vector, random_spd};
use ding_core::task::{build_task, build_task_from_mask, downsample_mask, DEFAULT_SIGMA_Y};
use ding_core::{AnalyticPrior, GaussianPrior, GmmPrior, InpaintingTask, Matrix, PixelMask, Vector};

use crate::config::{ExperimentConfig, PriorSection};
use crate::seeding::setup_rng;

pub const PRESET_CORRELATED_2D: &str = "correlated-2d";
pub const PRESET_GMM_2D: &str = "gmm-2d";

const DEFAULT_EIG_RANGE: [f64; 2] = [0.2, 3.0];
const DEFAULT_GMM_COMPONENTS: usize = 3;
const DEFAULT_GMM_MEAN_SCALE: f64 = 2.0;

/// `N(0, [[1, 0.9], [0.9, 1]])`.
pub fn correlated_2d() -> GaussianPrior {
    GaussianPrior::new(Vector::zeros(2), Matrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]))
        .expect("preset covariance is SPD")
}

/// Three-component mixture whose posterior given `x[0] = 0.75` is bimodal in `x[1]`.
pub fn gmm_2d() -> GmmPrior {
    let cov = Matrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.3]);
    GmmPrior::from_parts(
        vec![0.3, 0.4, 0.3],
        vec![
            Vector::from_vec(vec![-1.5, -1.0]),
            Vector::from_vec(vec![0.0, 1.5]),
            Vector::from_vec(vec![1.5, -1.0]),
        ],
        vec![cov.clone(), cov.clone(), cov],
    )
    .expect("preset mixture is valid")
}

pub fn gmm_2d_x_star() -> Vector {
    Vector::from_vec(vec![0.75, 0.0])
}

/// A configured prior and inpainting task, plus the latent grid when the mask came from an image.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub prior: AnalyticPrior,
    pub task: InpaintingTask,
    pub grid: Option<(usize, usize)>,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        bail!("{what} must be a non-empty square matrix");
    }
    Ok(Matrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn build_prior<R: Rng + ?Sized>(p: &PriorSection, rng: &mut R) -> Result<AnalyticPrior> {
    if let Some(preset) = &p.preset {
        return match preset.as_str() {
            PRESET_CORRELATED_2D => Ok(correlated_2d().into()),
            PRESET_GMM_2D => Ok(gmm_2d().into()),
            other => bail!("unknown prior preset `{other}` (expected {PRESET_CORRELATED_2D} or {PRESET_GMM_2D})"),
        };
    }
    let [lo, hi] = p.eig_range.unwrap_or(DEFAULT_EIG_RANGE);
    if !(0.0 < lo && lo <= hi) {
        bail!("prior.eig_range must satisfy 0 < lo <= hi");
    }
    match p.kind.as_deref() {
        Some("gaussian") => {
            if let Some(cov) = &p.cov {
                let cov = to_matrix(cov, "prior.cov")?;
                let mean = p.mean.clone().map(Vector::from_vec).unwrap_or_else(|| Vector::zeros(cov.nrows()));
                return Ok(GaussianPrior::new(mean, cov)?.into());
            }
            let d = p.d.context("a random Gaussian prior needs prior.d")?;
            let mean = gaussian_vector(d, rng) * p.mean_scale.unwrap_or(0.0);
            let cov = random_spd(d, lo, hi, rng);
            Ok(GaussianPrior::new(mean, cov)?.into())
        }
        Some("gmm") => {
            if let Some(covs) = &p.covs {
                let means = p.means.as_ref().context("prior.means is required with prior.covs")?;
                let weights = p.weights.clone().unwrap_or_else(|| vec![1.0 / covs.len() as f64; covs.len()]);
                let covs = covs.iter().map(|c| to_matrix(c, "prior.covs")).collect::<Result<Vec<_>>>()?;
                let means = means.iter().cloned().map(Vector::from_vec).collect();
                return Ok(GmmPrior::from_parts(weights, means, covs)?.into());
            }
            let d = p.d.context("a random mixture prior needs prior.d")?;
            let n = p.components.unwrap_or(DEFAULT_GMM_COMPONENTS);
            let scale = p.mean_scale.unwrap_or(DEFAULT_GMM_MEAN_SCALE);
            let weights = p.weights.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
            let means = (0..n).map(|_| gaussian_vector(d, rng) * scale).collect();
            let covs = (0..n).map(|_| random_spd(d, lo, hi, rng)).collect();
            Ok(GmmPrior::from_parts(weights, means, covs)?.into())
        }
        Some(other) => bail!("unknown prior kind `{other}` (expected gaussian or gmm)"),
        None => bail!("the prior needs a kind or a preset"),
    }
}

/// Builds the configured benchmark. Random parts draw from the setup stream of the master seed.
pub fn build_benchmark(cfg: &ExperimentConfig, master: u64) -> Result<Benchmark> {
    let mut rng = setup_rng(master);
    let prior = build_prior(&cfg.raw.prior, &mut rng).context("building the prior")?;
    let d = prior.dim();
    let t = &cfg.raw.task;
    let sigma_y = Some(t.sigma_y.unwrap_or(DEFAULT_SIGMA_Y));
    let preset_x_star = (cfg.raw.prior.preset.as_deref() == Some(PRESET_GMM_2D)).then(gmm_2d_x_star);
    let x_star = match (&t.x_star, preset_x_star) {
        (Some(x), _) => {
            if x.len() != d {
                bail!("task.x_star has length {}, the prior has dimension {d}", x.len());
            }
            Vector::from_vec(x.clone())
        }
        (None, Some(x)) => x,
        (None, None) => prior.sample_one(&mut rng),
    };

    if let Some(path) = &t.mask_pgm {
        let pixels = PixelMask::from_pgm(path).with_context(|| format!("reading {}", path.display()))?;
        let latent = downsample_mask(
            &pixels,
            t.downsample_factor.unwrap_or(8),
            cfg.downsample_mode,
            t.threshold.unwrap_or(0.5),
        )?;
        if latent.width * latent.height != d {
            bail!(
                "the downsampled mask is {}x{} = {} cells, the prior has dimension {d}",
                latent.width,
                latent.height,
                latent.width * latent.height
            );
        }
        let task = build_task_from_mask(&x_star, &latent, sigma_y)?;
        return Ok(Benchmark { prior, task, grid: Some((latent.width, latent.height)) });
    }

    // default: observe coordinate 0
    let masked = t.masked.clone().unwrap_or_else(|| (1..d).collect());
    let task = build_task(&x_star, &masked, sigma_y)?;
    let grid = cfg.raw.output.grid.map(|[w, h]| (w, h));
    if let Some((w, h)) = grid {
        if w * h != d {
            bail!("output.grid is {w}x{h}, the prior has dimension {d}");
        }
    }
    Ok(Benchmark { prior, task, grid })
}
