//! Inpainting problems: index sets, observations, pixel-to-latent mask downsampling and cPSNR.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::linalg::gather;
use crate::Vector;

/// Observation noise used when none is specified.
pub const DEFAULT_SIGMA_Y: f64 = 0.01;

/// Value reported by [`cpsnr`] when the observed region is reproduced exactly.
pub const CPSNR_CAP_DB: f64 = 200.0;

/// Binary pixel-space mask, row-major, `true` = observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("mask dimensions must be positive"));
        }
        if bits.len() != width * height {
            return Err(invalid(format!(
                "mask has {} bits, expected {width} x {height}",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn filled(width: usize, height: usize, observed: bool) -> Result<Self> {
        Self::new(width, height, vec![observed; width * height])
    }

    /// Reads a binary (P5) or ASCII (P2) graymap; values `>= 128` are observed.
    pub fn from_pgm(path: &Path) -> Result<Self> {
        let img = image::ImageReader::open(path)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?
            .with_guessed_format()
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?
            .decode()
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = img.dimensions();
        let bits = img.pixels().map(|p| p.0[0] >= 128).collect();
        Self::new(w as usize, h as usize, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, observed: bool) {
        self.bits[row * self.width + col] = observed;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DownsampleMode {
    /// Fraction of observed pixels in each `factor x factor` block.
    #[default]
    AvgPool,
    /// Antialiased bilinear (triangle-filter) resampling.
    Bilinear,
}

impl FromStr for DownsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "avgpool" => Ok(Self::AvgPool),
            "bilinear" => Ok(Self::Bilinear),
            other => Err(invalid(format!("unknown downsample mode `{other}`"))),
        }
    }
}

/// Latent-resolution mask: per-cell observed fraction plus its thresholded value.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMask {
    pub width: usize,
    pub height: usize,
    pub fractions: Vec<f64>,
    pub observed: Vec<bool>,
}

impl LatentMask {
    /// Row-major indices of masked cells.
    pub fn masked_indices(&self) -> Vec<usize> {
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| !o)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Downsamples a pixel mask by `factor`; a cell is observed iff its fraction is `>= threshold`.
pub fn downsample_mask(
    pm: &PixelMask,
    factor: usize,
    mode: DownsampleMode,
    threshold: f64,
) -> Result<LatentMask> {
    if factor == 0 {
        return Err(invalid("downsampling factor must be positive"));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    let (width, height, fractions) = match mode {
        DownsampleMode::AvgPool => avg_pool(pm, factor)?,
        DownsampleMode::Bilinear => antialiased_bilinear(pm, factor),
    };
    let observed = fractions.iter().map(|&f| f >= threshold).collect();
    Ok(LatentMask { width, height, fractions, observed })
}

fn avg_pool(pm: &PixelMask, factor: usize) -> Result<(usize, usize, Vec<f64>)> {
    if !pm.width.is_multiple_of(factor) || !pm.height.is_multiple_of(factor) {
        return Err(invalid(format!(
            "avgpool needs dimensions divisible by {factor}, got {} x {}",
            pm.width, pm.height
        )));
    }
    let (w, h) = (pm.width / factor, pm.height / factor);
    let area = (factor * factor) as f64;
    let mut fractions = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut count = 0usize;
            for i in 0..factor {
                for j in 0..factor {
                    count += pm.get(r * factor + i, c * factor + j) as usize;
                }
            }
            fractions.push(count as f64 / area);
        }
    }
    Ok((w, h, fractions))
}

/// Normalised triangle-filter weights for one output coordinate.
fn triangle_weights(out_index: usize, scale: f64, in_len: usize) -> Vec<(usize, f64)> {
    let center = (out_index as f64 + 0.5) * scale;
    let support = scale.max(1.0);
    let lo = (center - support).floor().max(0.0) as usize;
    let hi = ((center + support).ceil() as usize).min(in_len);
    let mut weights: Vec<(usize, f64)> = (lo..hi)
        .map(|j| {
            let dist = (j as f64 + 0.5 - center).abs() / support;
            (j, (1.0 - dist).max(0.0))
        })
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let total: f64 = weights.iter().map(|&(_, w)| w).sum();
    for (_, w) in &mut weights {
        *w /= total;
    }
    weights
}

fn antialiased_bilinear(pm: &PixelMask, factor: usize) -> (usize, usize, Vec<f64>) {
    let w = (pm.width / factor).max(1);
    let h = (pm.height / factor).max(1);
    let col_w: Vec<_> = (0..w)
        .map(|c| triangle_weights(c, pm.width as f64 / w as f64, pm.width))
        .collect();
    let row_w: Vec<_> = (0..h)
        .map(|r| triangle_weights(r, pm.height as f64 / h as f64, pm.height))
        .collect();

    // separable: horizontal pass first
    let mut horizontal = vec![0.0; pm.height * w];
    for r in 0..pm.height {
        for (c, weights) in col_w.iter().enumerate() {
            horizontal[r * w + c] = weights
                .iter()
                .map(|&(j, wt)| wt * pm.get(r, j) as u8 as f64)
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for (r, weights) in row_w.iter().enumerate() {
        for c in 0..w {
            out[r * w + c] = weights.iter().map(|&(i, wt)| wt * horizontal[i * w + c]).sum();
        }
    }
    (w, h, out)
}

/// An inpainting problem on `R^d`: masked set `m`, observed set `m-bar`, observation `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintingTask {
    d: usize,
    masked: Vec<usize>,
    observed: Vec<usize>,
    y: Vector,
    sigma_y: f64,
    x_star: Option<Vector>,
}

impl InpaintingTask {
    /// Builds a task from its masked index set and an explicit observation vector.
    pub fn new(d: usize, masked: &[usize], y: Vector, sigma_y: f64, x_star: Option<Vector>) -> Result<Self> {
        if !(sigma_y > 0.0 && sigma_y.is_finite()) {
            return Err(invalid(format!("sigma_y must be positive, got {sigma_y}")));
        }
        let mut is_masked = vec![false; d];
        for &i in masked {
            if i >= d {
                return Err(invalid(format!("masked index {i} out of range for d = {d}")));
            }
            if is_masked[i] {
                return Err(invalid(format!("masked index {i} repeated")));
            }
            is_masked[i] = true;
        }
        let masked: Vec<usize> = (0..d).filter(|&i| is_masked[i]).collect();
        let observed: Vec<usize> = (0..d).filter(|&i| !is_masked[i]).collect();
        if y.len() != observed.len() {
            return Err(invalid(format!(
                "y has length {}, expected {} observed coordinates",
                y.len(),
                observed.len()
            )));
        }
        if let Some(x) = &x_star {
            if x.len() != d {
                return Err(invalid(format!("x_star has length {}, expected {d}", x.len())));
            }
            if gather(x, &observed) != y {
                return Err(invalid("y must equal x_star on the observed coordinates"));
            }
        }
        Ok(Self { d, masked, observed, y, sigma_y, x_star })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn y(&self) -> &Vector {
        &self.y
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }

    pub fn x_star(&self) -> Option<&Vector> {
        self.x_star.as_ref()
    }

    /// No observed coordinates: sampling reduces to unconditional generation.
    pub fn is_unconditional(&self) -> bool {
        self.observed.is_empty()
    }

    /// Same task with a different observation noise.
    pub fn with_sigma_y(&self, sigma_y: f64) -> Result<Self> {
        Self::new(self.d, &self.masked, self.y.clone(), sigma_y, self.x_star.clone())
    }

    /// Line-oriented `key = value` serialisation.
    pub fn to_text(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "d = {}", self.d);
        let _ = writeln!(out, "masked_indices = {}", join(&mut self.masked.iter().map(|i| i.to_string())));
        let _ = writeln!(out, "y = {}", join(&mut self.y.iter().map(|v| format!("{v:e}"))));
        let _ = writeln!(out, "sigma_y = {:e}", self.sigma_y);
        if let Some(x) = &self.x_star {
            let _ = writeln!(out, "x_star = {}", join(&mut x.iter().map(|v| format!("{v:e}"))));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut d = None;
        let mut masked = None;
        let mut y = None;
        let mut sigma_y = None;
        let mut x_star = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| invalid(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected `key = value`"))?;
            let value = value.trim();
            match key.trim() {
                "d" => d = Some(value.parse::<usize>().map_err(|_| bad("bad dimension"))?),
                "masked_indices" => masked = Some(parse_list::<usize>(value).map_err(|_| bad("bad index list"))?),
                "y" => y = Some(parse_list::<f64>(value).map_err(|_| bad("bad y values"))?),
                "sigma_y" => sigma_y = Some(value.parse::<f64>().map_err(|_| bad("bad sigma_y"))?),
                "x_star" => x_star = Some(parse_list::<f64>(value).map_err(|_| bad("bad x_star values"))?),
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        let d = d.ok_or_else(|| invalid("missing key `d`"))?;
        Self::new(
            d,
            &masked.unwrap_or_default(),
            Vector::from_vec(y.unwrap_or_default()),
            sigma_y.unwrap_or(DEFAULT_SIGMA_Y),
            x_star.map(Vector::from_vec),
        )
    }
}

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, T::Err> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// `y = x_star[m-bar]`; `sigma_y` defaults to [`DEFAULT_SIGMA_Y`].
pub fn build_task(x_star: &Vector, masked: &[usize], sigma_y: Option<f64>) -> Result<InpaintingTask> {
    let d = x_star.len();
    let is_masked: Vec<bool> = {
        let mut v = vec![false; d];
        for &i in masked {
            if i >= d {
                return Err(invalid(format!("masked index {i} out of range for d = {d}")));
            }
            v[i] = true;
        }
        v
    };
    let observed: Vec<usize> = (0..d).filter(|&i| !is_masked[i]).collect();
    let y = gather(x_star, &observed);
    InpaintingTask::new(d, masked, y, sigma_y.unwrap_or(DEFAULT_SIGMA_Y), Some(x_star.clone()))
}

/// Same as [`build_task`] with the masked set read off a row-major latent mask.
pub fn build_task_from_mask(x_star: &Vector, mask: &LatentMask, sigma_y: Option<f64>) -> Result<InpaintingTask> {
    if mask.width * mask.height != x_star.len() {
        return Err(invalid(format!(
            "latent mask is {} x {} but x_star has {} entries",
            mask.width,
            mask.height,
            x_star.len()
        )));
    }
    build_task(x_star, &mask.masked_indices(), sigma_y)
}

/// Context PSNR: PSNR restricted to the observed coordinates.
///
/// `peak` defaults to the range of `x_star` over the observed coordinates, or 1
/// when that range is zero. An exact match (or a value above the cap) returns
/// [`CPSNR_CAP_DB`].
pub fn cpsnr(x_hat: &Vector, task: &InpaintingTask, peak: Option<f64>) -> Result<f64> {
    if task.observed.is_empty() {
        return Err(Error::UndefinedMetric("cPSNR needs at least one observed coordinate".into()));
    }
    let x_star = task
        .x_star
        .as_ref()
        .ok_or_else(|| Error::UndefinedMetric("cPSNR needs the reference x_star".into()))?;
    if x_hat.len() != task.d {
        return Err(invalid(format!("x_hat has length {}, expected {}", x_hat.len(), task.d)));
    }
    let peak = match peak {
        Some(p) if p > 0.0 => p,
        Some(p) => return Err(invalid(format!("peak must be positive, got {p}"))),
        None => {
            let (lo, hi) = task
                .observed
                .iter()
                .map(|&i| x_star[i])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        }
    };
    let mse = task
        .observed
        .iter()
        .map(|&i| (x_hat[i] - x_star[i]).powi(2))
        .sum::<f64>()
        / task.observed.len() as f64;
    if mse == 0.0 {
        return Ok(CPSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(CPSNR_CAP_DB))
}
