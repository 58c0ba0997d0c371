//! Image-statistics metrics comparing a re-simulated envelope against ground
//! truth, plus Rayleigh goodness-of-fit.
//!
//! Every function accepts an optional evaluation mask; `None` means the whole
//! image.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{EnvelopeImage, Mask};
use crate::grid::Grid2D;

/// Two contrasting regions, e.g. an inclusion and its surroundings.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPair {
    pub region1: Mask,
    pub region2: Mask,
}

impl RegionPair {
    pub fn new(region1: Mask, region2: Mask) -> Result<Self> {
        if region1.dim() != region2.dim() {
            return Err(Error::invalid("region masks have different shapes"));
        }
        if region1.iter().zip(&region2).any(|(a, b)| *a && *b) {
            return Err(Error::invalid("regions overlap"));
        }
        if !region1.iter().any(|v| *v) || !region2.iter().any(|v| *v) {
            return Err(Error::invalid("regions must be nonempty"));
        }
        Ok(Self { region1, region2 })
    }

    /// Both regions restricted to `mask`.
    pub fn restricted(&self, mask: &Mask) -> Result<Self> {
        let and = |a: &Mask| Array2::from_shape_fn(a.dim(), |i| a[i] && mask[i]);
        Self::new(and(&self.region1), and(&self.region2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramConfig {
    pub bins: usize,
    pub epsilon: f64,
    /// Patch side in mm.
    pub patch_mm: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bins: 50,
            epsilon: 1e-10,
            patch_mm: 3.0,
        }
    }
}

impl HistogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 || !(self.epsilon > 0.0) || !(self.patch_mm > 0.0) {
            return Err(Error::invalid("histograms need >= 2 bins, epsilon > 0 and a positive patch size"));
        }
        Ok(())
    }
}

fn check_same(a: &Array2<f64>, b: &Array2<f64>, mask: Option<&Mask>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if let Some(m) = mask {
        if m.dim() != a.dim() {
            return Err(Error::ShapeMismatch {
                expected: a.dim(),
                actual: m.dim(),
            });
        }
    }
    Ok(())
}

fn masked<'a>(v: &'a Array2<f64>, mask: Option<&'a Mask>) -> Box<dyn Iterator<Item = f64> + 'a> {
    match mask {
        None => Box::new(v.iter().copied()),
        Some(m) => Box::new(v.iter().zip(m.iter()).filter(|(_, k)| **k).map(|(x, _)| *x)),
    }
}

/// Mean and (population) standard deviation.
pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        sum += v;
        sq += v * v;
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    (mean, (sq / n as f64 - mean * mean).max(0.0).sqrt(), n)
}

/// Scale `sim` so its sum over the mask equals that of `truth`.
pub fn brightness_equalize(sim: &Array2<f64>, truth: &Array2<f64>, mask: Option<&Mask>) -> Result<Array2<f64>> {
    check_same(sim, truth, mask)?;
    let ss: f64 = masked(sim, mask).sum();
    let st: f64 = masked(truth, mask).sum();
    if !(ss > 0.0) {
        return Err(Error::numeric("cannot equalise an image with zero intensity"));
    }
    Ok(sim * (st / ss))
}

/// Envelope-typed convenience wrapper around [`brightness_equalize`].
pub fn equalize_envelope(sim: &EnvelopeImage, truth: &EnvelopeImage) -> Result<EnvelopeImage> {
    EnvelopeImage::new(*sim.grid(), brightness_equalize(sim.values(), truth.values(), None)?)
}

/// `|It − Is| / It` with `I` the mean pixel value.
pub fn delta_intensity(truth: &Array2<f64>, sim: &Array2<f64>, mask: Option<&Mask>) -> Result<f64> {
    check_same(truth, sim, mask)?;
    let (it, _, _) = mean_std(masked(truth, mask));
    let (is, _, _) = mean_std(masked(sim, mask));
    if it == 0.0 {
        return Err(Error::numeric("ground truth has zero mean intensity"));
    }
    Ok((it - is).abs() / it)
}

/// `|SNRt − SNRs| / SNRt` with `SNR = μ/σ`, after brightness equalisation.
pub fn delta_snr(truth: &Array2<f64>, sim: &Array2<f64>, mask: Option<&Mask>) -> Result<f64> {
    let sim = brightness_equalize(sim, truth, mask)?;
    let snr = |v: &Array2<f64>| -> Result<f64> {
        let (mu, sd, _) = mean_std(masked(v, mask));
        if sd == 0.0 {
            return Err(Error::numeric("constant image has undefined SNR"));
        }
        Ok(mu / sd)
    };
    let t = snr(truth)?;
    let s = snr(&sim)?;
    Ok((t - s).abs() / t)
}

pub fn cnr(values: &Array2<f64>, regions: &RegionPair) -> f64 {
    let (m1, s1, _) = mean_std(masked(values, Some(&regions.region1)));
    let (m2, s2, _) = mean_std(masked(values, Some(&regions.region2)));
    let den = s1 + s2;
    if den == 0.0 {
        if m1 == m2 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (m1 - m2).abs() / den
    }
}

/// `|CNRt − CNRs| / CNRt` with `CNR = |μ1 − μ2| / (σ1 + σ2)`, after
/// brightness equalisation.
pub fn delta_cnr(truth: &Array2<f64>, sim: &Array2<f64>, regions: &RegionPair, mask: Option<&Mask>) -> Result<f64> {
    check_same(truth, sim, mask)?;
    if regions.region1.dim() != truth.dim() {
        return Err(Error::invalid("region masks do not match the image"));
    }
    let sim = brightness_equalize(sim, truth, mask)?;
    let ct = cnr(truth, regions);
    if ct == 0.0 || !ct.is_finite() {
        return Err(Error::numeric(format!("ground-truth CNR {ct} is degenerate")));
    }
    Ok((ct - cnr(&sim, regions)).abs() / ct)
}

/// Normalised, epsilon-smoothed histograms of two samples on shared bins
/// spanning their pooled range.
pub fn shared_histograms(a: &[f64], b: &[f64], bins: usize, epsilon: f64) -> (Vec<f64>, Vec<f64>) {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let hist = |v: &[f64]| {
        let mut h = vec![0.0; bins];
        for x in v {
            let i = if width > 0.0 {
                (((x - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            h[i] += 1.0;
        }
        for x in h.iter_mut() {
            *x += epsilon;
        }
        let total: f64 = h.iter().sum();
        h.iter().map(|x| x / total).collect::<Vec<_>>()
    };
    (hist(a), hist(b))
}

/// `Σ p log(p / q)`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(p, q)| if *p > 0.0 { p * (p / q).ln() } else { 0.0 })
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlReport {
    pub mean: f64,
    pub per_patch: Vec<f64>,
}

/// Mean KL divergence `KL(hs ‖ ht)` over non-overlapping square patches,
/// after brightness equalisation. Patches that are not entirely inside the
/// mask (or the image) are skipped.
pub fn kl_patchwise(truth: &Array2<f64>, sim: &Array2<f64>, grid: &Grid2D, cfg: &HistogramConfig, mask: Option<&Mask>) -> Result<KlReport> {
    cfg.validate()?;
    check_same(truth, sim, mask)?;
    let sim = brightness_equalize(sim, truth, mask)?;
    let pr = (cfg.patch_mm / grid.spacing_axial).round().max(1.0) as usize;
    let pc = (cfg.patch_mm / grid.spacing_lateral).round().max(1.0) as usize;
    let (rows, cols) = truth.dim();
    let mut per_patch = Vec::new();
    for r0 in (0..rows.saturating_sub(pr - 1)).step_by(pr) {
        for c0 in (0..cols.saturating_sub(pc - 1)).step_by(pc) {
            let win = s![r0..r0 + pr, c0..c0 + pc];
            if let Some(m) = mask {
                if !m.slice(win).iter().all(|v| *v) {
                    continue;
                }
            }
            let t: Vec<f64> = truth.slice(win).iter().copied().collect();
            let s: Vec<f64> = sim.slice(win).iter().copied().collect();
            let (ht, hs) = shared_histograms(&t, &s, cfg.bins, cfg.epsilon);
            per_patch.push(kl_divergence(&hs, &ht));
        }
    }
    if per_patch.is_empty() {
        return Err(Error::invalid(format!(
            "no complete {} mm patch fits in the evaluated region",
            cfg.patch_mm
        )));
    }
    Ok(KlReport {
        mean: per_patch.iter().sum::<f64>() / per_patch.len() as f64,
        per_patch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub delta_i: f64,
    pub delta_snr: f64,
    pub delta_cnr: f64,
    pub kl_mean: f64,
}

/// All four metrics for one comparison.
pub fn evaluate(truth: &Array2<f64>, sim: &Array2<f64>, grid: &Grid2D, regions: &RegionPair, mask: Option<&Mask>, hist: &HistogramConfig) -> Result<Metrics> {
    let regions = match mask {
        Some(m) => regions.restricted(m)?,
        None => regions.clone(),
    };
    Ok(Metrics {
        delta_i: delta_intensity(truth, sim, mask)?,
        delta_snr: delta_snr(truth, sim, mask)?,
        delta_cnr: delta_cnr(truth, sim, &regions, mask)?,
        kl_mean: kl_patchwise(truth, sim, grid, hist, mask)?.mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighFit {
    pub sigma: f64,
    pub ks: f64,
    pub n: usize,
}

/// Theoretical mean/std of any Rayleigh law, `sqrt(π / (4 − π))`.
pub fn rayleigh_snr() -> f64 {
    (std::f64::consts::PI / (4.0 - std::f64::consts::PI)).sqrt()
}

/// Maximum-likelihood Rayleigh scale and the Kolmogorov–Smirnov distance
/// between the sample and the fitted law.
pub fn rayleigh_fit(values: &[f64]) -> Result<RayleighFit> {
    let n = values.len();
    if n < 100 {
        return Err(Error::invalid(format!("Rayleigh fit needs at least 100 samples, got {n}")));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("Rayleigh fit requires positive finite samples"));
    }
    let sigma = (values.iter().map(|v| v * v).sum::<f64>() / (2.0 * n as f64)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let ks = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = 1.0 - (-x * x / (2.0 * sigma * sigma)).exp();
            (f - i as f64 / nf).abs().max(((i + 1) as f64 / nf - f).abs())
        })
        .fold(0.0, f64::max);
    Ok(RayleighFit { sigma, ks, n })
}
