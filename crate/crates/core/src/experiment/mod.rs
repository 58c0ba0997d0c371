//! Rotation and compression sweeps: estimate once on the untransformed
//! acquisition, transform every estimate, re-simulate and score it against a
//! re-simulation of the transformed true scatterers.

mod config;
mod report;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{s, Array1, Array2};
use rustfft::FftPlanner;

pub use config::{
    config_hash, EvaluationConfig, ExperimentConfig, ExperimentKind, GalleryConfig, PsfBankConfig, SweepConfig,
};
pub use report::{summarize, write_outputs, SummaryRow};

use crate::error::{Error, Result};
use crate::estimators::{sample_env, scat_param, scat_rec, wiener_trf, Method};
use crate::field::{EnvelopeImage, Mask, RfImage, ScattererMap, TrfMap};
use crate::forward::{add_noise, envelope, ConvOperator, DepthPsfBank};
use crate::geo::{transform_scatterers, transform_trf, valid_region, Transform};
use crate::grid::Grid2D;
use crate::metrics::{evaluate, Metrics, RegionPair};
use crate::neural::NetworkWeights;
use crate::phantoms::{make_inclusion_phantom, InclusionPhantom};
use crate::rng::SimRng;

/// What a method hands to the re-simulation stage.
#[derive(Debug, Clone)]
pub enum Estimate {
    /// Point scatterers; transformed as a point set.
    Points(ScattererMap),
    /// Dense reflectivity; transformed by resampling.
    Field(TrfMap),
}

impl Estimate {
    fn transformed(&self, t: &Transform) -> Result<Array2<f64>> {
        Ok(match self {
            Estimate::Points(sc) => transform_scatterers(sc, t)?.into_values(),
            Estimate::Field(trf) => transform_trf(trf, t)?.into_values(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub method: Method,
    pub value: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AliasingRow {
    pub value: f64,
    /// Fraction of axial spectral energy above the untransformed band edge.
    pub energy_above_band: f64,
    pub flagged: bool,
}

/// B-mode-ready envelopes kept for the gallery.
#[derive(Debug, Clone)]
pub struct GalleryEntry {
    pub value: f64,
    pub truth: EnvelopeImage,
    pub methods: Vec<(Method, EnvelopeImage)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub weights_hash: Option<String>,
    pub values: Vec<f64>,
    pub rows: Vec<MetricRow>,
    pub aliasing: Vec<AliasingRow>,
    pub rlad_trace: Vec<f64>,
    pub gallery: Vec<GalleryEntry>,
    /// Evaluated pixels per sweep point.
    pub mask_pixels: usize,
    pub seconds: f64,
}

impl ExperimentResult {
    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.rows)
    }
}

/// Shared state after the untransformed acquisition has been estimated.
struct Setup {
    grid: Grid2D,
    phantom: InclusionPhantom,
    op: ConvOperator,
    truth: ScattererMap,
    estimates: Vec<(Method, Estimate)>,
    mask: Mask,
    band_edge: Option<usize>,
    crop: (std::ops::Range<usize>, std::ops::Range<usize>),
}

fn transform_for(kind: ExperimentKind, value: f64, center: (f64, f64)) -> Result<Transform> {
    match kind {
        ExperimentKind::Rotation => Transform::rotation(value, center),
        ExperimentKind::Compression => Transform::compression(value, center),
    }
}

fn max_half_extent(bank: &DepthPsfBank) -> usize {
    bank.entries()
        .iter()
        .map(|e| {
            let (hl, ha) = e.kernel.half_extents();
            hl.max(ha)
        })
        .max()
        .unwrap_or(0)
}

fn bounding_box(mask: &Mask) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for ((r, c), &v) in mask.indexed_iter() {
        if v {
            r0 = r0.min(r);
            r1 = r1.max(r + 1);
            c0 = c0.min(c);
            c1 = c1.max(c + 1);
        }
    }
    (r0 < r1).then_some((r0..r1, c0..c1))
}

/// Hann-windowed axial power spectrum, summed over columns; bins `0..=n/2`.
pub fn axial_power_spectrum(values: &Array2<f64>) -> Array1<f64> {
    let (rows, cols) = values.dim();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(rows);
    let window: Vec<f64> = (0..rows)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / rows as f64).cos())
        .collect();
    let mut power = Array1::zeros(rows / 2 + 1);
    let mut buf = vec![num_complex::Complex64::default(); rows];
    for c in 0..cols {
        for (r, b) in buf.iter_mut().enumerate() {
            *b = (values[[r, c]] * window[r]).into();
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p += buf[k].norm_sqr();
        }
    }
    power
}

/// Smallest bin below which `fraction` of the spectral energy lies.
pub fn band_edge(power: &Array1<f64>, fraction: f64) -> usize {
    let total: f64 = power.sum();
    let mut acc = 0.0;
    for (k, p) in power.iter().enumerate() {
        acc += p;
        if acc >= fraction * total {
            return k;
        }
    }
    power.len() - 1
}

/// Share of spectral energy strictly above bin `edge`.
pub fn energy_above(power: &Array1<f64>, edge: usize) -> f64 {
    let total: f64 = power.sum();
    if total == 0.0 {
        return 0.0;
    }
    power.iter().skip(edge + 1).sum::<f64>() / total
}

fn regions_for(setup: &Setup, t: &Transform, gap: f64) -> Result<RegionPair> {
    let (c, r) = (setup.phantom.center, setup.phantom.radius);
    let dist = |row, col| {
        let (l, a) = t.invert(setup.grid.position(row, col));
        ((l - c.0).powi(2) + (a - c.1).powi(2)).sqrt()
    };
    let shape = setup.grid.shape();
    let inside = Array2::from_shape_fn(shape, |(row, col)| setup.mask[[row, col]] && dist(row, col) <= r - gap);
    let outside = Array2::from_shape_fn(shape, |(row, col)| setup.mask[[row, col]] && dist(row, col) >= r + gap);
    RegionPair::new(inside, outside)
}

fn resimulate(op: &ConvOperator, values: &Array2<f64>, noise: &crate::model::NoiseModel, rng: &mut SimRng) -> Result<EnvelopeImage> {
    let rf = RfImage::new(*op.grid(), op.apply(values.view())?)?;
    let rf = add_noise(&rf, noise, rng)?;
    envelope(&rf)
}

fn load_weights(cfg: &ExperimentConfig) -> Result<Option<(NetworkWeights, String)>> {
    if !cfg.methods.contains(&Method::ScatParam) {
        return Ok(None);
    }
    let path = cfg
        .weights
        .as_ref()
        .ok_or_else(|| Error::Config("scat-param needs a weights file".into()))?;
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    let weights = NetworkWeights::read_from(bytes.as_slice())?;
    Ok(Some((weights, config_hash(&bytes))))
}

struct PointOutput {
    rows: Vec<MetricRow>,
    aliasing: Option<AliasingRow>,
    gallery: Option<GalleryEntry>,
}

fn run_point(cfg: &ExperimentConfig, setup: &Setup, index: usize, value: f64, keep_images: bool) -> Result<PointOutput> {
    let t = transform_for(cfg.kind, value, setup.grid.center())?;
    let noise = cfg.noise_model()?;
    let root = SimRng::new(cfg.seed).derive(1000 + index as u64);
    let regions = regions_for(setup, &t, cfg.evaluation.region_gap_mm)?;

    let truth_sc = transform_scatterers(&setup.truth, &t)?;
    let truth = resimulate(&setup.op, truth_sc.values(), &noise, &mut root.derive(0))?;

    let mut rows = Vec::with_capacity(setup.estimates.len());
    let mut images = Vec::new();
    let mut aliasing = None;
    for (k, (method, estimate)) in setup.estimates.iter().enumerate() {
        let moved = estimate.transformed(&t)?;
        if let (Estimate::Field(_), Some(edge)) = (estimate, setup.band_edge) {
            let (rr, cc) = setup.crop.clone();
            let power = axial_power_spectrum(&moved.slice(s![rr, cc]).to_owned());
            let frac = energy_above(&power, edge);
            aliasing = Some(AliasingRow {
                value,
                energy_above_band: frac,
                flagged: frac > cfg.evaluation.aliasing_threshold,
            });
        }
        let sim = resimulate(&setup.op, &moved, &noise, &mut root.derive(1 + k as u64))?;
        let metrics = evaluate(
            truth.values(),
            sim.values(),
            &setup.grid,
            &regions,
            Some(&setup.mask),
            &cfg.evaluation.histogram,
        )?;
        for v in [metrics.delta_i, metrics.delta_snr, metrics.delta_cnr, metrics.kl_mean] {
            if !v.is_finite() {
                return Err(Error::numeric(format!("{method} at {value}: non-finite metric")));
            }
        }
        log::debug!("{method} @ {value}: {metrics:?}");
        rows.push(MetricRow {
            method: *method,
            value,
            metrics,
        });
        if keep_images {
            images.push((*method, sim));
        }
    }
    Ok(PointOutput {
        rows,
        aliasing,
        gallery: keep_images.then(|| GalleryEntry {
            value,
            truth,
            methods: images,
        }),
    })
}

fn gallery_indices(n: usize) -> Vec<usize> {
    let mut idx = vec![0, n / 2, n.saturating_sub(1)];
    idx.dedup();
    idx
}

/// Run a sweep experiment in memory. See [`write_outputs`] for the files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let values = cfg.sweep_values();
    let grid = cfg.scatterer_grid()?;
    let bank = cfg.psf_bank.build(&grid).map_err(|e| Error::Config(e.to_string()))?;
    let phantom = make_inclusion_phantom(&cfg.phantom, &grid).map_err(|e| Error::Config(e.to_string()))?;
    let weights = load_weights(cfg)?;
    let root = SimRng::new(cfg.seed);
    let noise = cfg.noise_model()?;

    // the acquisition: true scatterers, convolved once
    let truth = crate::forward::sample_scatterers(&phantom.map, &cfg.model, &grid, &mut root.derive(0))?;
    let op = ConvOperator::new(&grid, &bank)?;
    let rf = RfImage::new(grid, op.apply(truth.values().view())?)?;
    let rf = add_noise(&rf, &noise, &mut root.derive(1))?;
    let env = envelope(&rf)?;
    log::info!("acquired {}x{} image in {:.1}s", grid.n_axial, grid.n_lateral, start.elapsed().as_secs_f64());

    let mut estimates = Vec::new();
    let mut rlad_trace = Vec::new();
    for &method in &cfg.methods {
        let t0 = Instant::now();
        let est = match method {
            Method::SampleEnv => Estimate::Points(sample_env(&env, &cfg.model, &grid, &mut root.derive(2))?),
            Method::Trf => Estimate::Field(wiener_trf(&rf, bank.central_kernel(&grid), &cfg.wiener)?),
            Method::ScatRec => {
                let res = scat_rec(&rf, &bank, &grid, &cfg.rlad)?;
                rlad_trace = res.raw_trace.clone();
                Estimate::Points(res.map)
            }
            Method::ScatParam => {
                let (w, _) = weights.as_ref().expect("weights loaded for scat-param");
                let (_, sc) = scat_param(&env, w, &cfg.model, &mut root.derive(3))?;
                Estimate::Points(sc)
            }
        };
        log::info!("{method} estimate in {:.1}s", t0.elapsed().as_secs_f64());
        estimates.push((method, est));
    }

    let center = grid.center();
    let transforms = values
        .iter()
        .map(|&v| transform_for(cfg.kind, v, center))
        .collect::<Result<Vec<_>>>()?;
    let margin = max_half_extent(&bank) as f64 + cfg.evaluation.extra_margin_px;
    let mask = valid_region(&grid, &transforms, margin);
    let mask_pixels = mask.iter().filter(|v| **v).count();
    let crop = bounding_box(&mask).ok_or_else(|| {
        Error::Config(format!(
            "no pixel stays {margin} px inside the grid under every transform; enlarge the phantom"
        ))
    })?;

    let band_edge = estimates.iter().find_map(|(_, e)| match e {
        Estimate::Field(trf) => {
            let power = axial_power_spectrum(&trf.values().slice(s![crop.0.clone(), crop.1.clone()]).to_owned());
            Some(band_edge(&power, cfg.evaluation.band_fraction))
        }
        Estimate::Points(_) => None,
    });

    let setup = Setup {
        grid,
        phantom,
        op,
        truth,
        estimates,
        mask,
        band_edge,
        crop,
    };

    let keep = if cfg.gallery.enabled { gallery_indices(values.len()) } else { Vec::new() };
    let outputs = run_pool(cfg, &setup, &values, &keep)?;

    let mut rows = Vec::new();
    let mut aliasing = Vec::new();
    let mut gallery = Vec::new();
    for out in outputs {
        rows.extend(out.rows);
        aliasing.extend(out.aliasing);
        gallery.extend(out.gallery);
    }
    Ok(ExperimentResult {
        kind: cfg.kind,
        config_hash: cfg.hash(),
        weights_hash: weights.map(|(_, h)| h),
        values,
        rows,
        aliasing,
        rlad_trace,
        gallery,
        mask_pixels,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Evaluate sweep points, in order, on a small thread pool (or inline in
/// deterministic mode). Every point owns its RNG stream, so the results do
/// not depend on scheduling.
fn run_pool(cfg: &ExperimentConfig, setup: &Setup, values: &[f64], keep: &[usize]) -> Result<Vec<PointOutput>> {
    let n = values.len();
    let workers = if cfg.deterministic {
        1
    } else {
        std::thread::available_parallelism().map_or(1, |p| p.get()).min(n)
    };
    let job = |i: usize| {
        let t0 = Instant::now();
        let out = run_point(cfg, setup, i, values[i], keep.contains(&i));
        log::info!("sweep point {} ({}) in {:.1}s", i, values[i], t0.elapsed().as_secs_f64());
        out
    };
    if workers <= 1 {
        return (0..n).map(job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<PointOutput>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = job(i);
                slots.lock().expect("result slots")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|s| s.expect("every sweep point ran"))
        .collect()
}
