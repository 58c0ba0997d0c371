//! On-the-fly training data and the training loop.

use std::io::Write;
use std::path::Path;
use std::sync::mpsc::sync_channel;
use std::thread;

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::layers::Scalar;
use super::network::{build_network, output_shape, Network, DEFAULT_WIDTH};
use super::optim::{adam_step, loss_l1, AdamConfig, AdamState};
use super::weights::NetworkWeights;
use crate::error::{Error, Result};
use crate::field::ParameterMap;
use crate::forward::{analytic_magnitude, discretize_psf, sample_scatterers, sparse_convolve};
use crate::grid::Grid2D;
use crate::model::{Psf, ScattererModel};
use crate::phantoms::{generate_random_parameter_map, ShapeGenConfig};
use crate::rng::SimRng;

/// Distribution of synthetic training pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Patch size `(lateral, axial)` on the scatterer grid.
    pub patch: (usize, usize),
    #[serde(rename = "R")]
    pub axial_factor: usize,
    pub shapes: ShapeGenConfig,
    pub sigma_l2_range: (f64, f64),
    pub sigma_a2_range: (f64, f64),
    pub noise_range: (f64, f64),
    pub fc: f64,
    pub fs: f64,
    pub c: f64,
    pub rho_s: f64,
    pub sigma_s: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            patch: (32, 256),
            axial_factor: 4,
            shapes: ShapeGenConfig {
                coarse_dims: (4, 4),
                ..ShapeGenConfig::default()
            },
            sigma_l2_range: (0.2, 1.0),
            sigma_a2_range: (0.02, 0.05),
            noise_range: (0.02, 0.20),
            fc: 6.0,
            fs: 40.0,
            c: crate::grid::SPEED_OF_SOUND,
            rho_s: 0.05,
            sigma_s: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// Envelope patch, `(axial, lateral)`.
    pub envelope: Array2<f64>,
    /// Parameter map on the axially coarsened grid.
    pub target: Array2<f64>,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let (l, a) = self.patch;
        if l == 0 || a == 0 || a % 16 != 0 || a % self.axial_factor.max(1) != 0 {
            return Err(Error::invalid(format!(
                "patch {l}x{a} must have an axial size divisible by 16 and by R"
            )));
        }
        for (lo, hi) in [self.sigma_l2_range, self.sigma_a2_range, self.noise_range] {
            if !(lo <= hi) || lo < 0.0 {
                return Err(Error::invalid(format!("bad sampling range ({lo}, {hi})")));
            }
        }
        ScattererModel::new(self.rho_s, self.sigma_s, self.axial_factor)?;
        self.shapes.validate()
    }

    pub fn scatterer_grid(&self) -> Result<Grid2D> {
        Grid2D::scatterer(self.patch.0, self.patch.1, self.fs, self.c)
    }

    pub fn model(&self) -> ScattererModel {
        ScattererModel {
            rho_s: self.rho_s,
            sigma_s: self.sigma_s,
            axial_factor: self.axial_factor,
        }
    }

    /// Half extents (lateral, axial) of the widest PSF in the sampling ranges.
    fn max_half_extents(&self) -> (usize, usize) {
        let d = crate::grid::rf_sample_spacing(self.fs, self.c);
        (
            (3.0 * self.sigma_l2_range.1.sqrt() / d).ceil() as usize,
            (3.0 * self.sigma_a2_range.1.sqrt() / d).ceil() as usize,
        )
    }

    /// One training pair. Shapes are drawn over a field of view that extends
    /// the patch by the widest PSF half extents, so the patch is a window into
    /// a larger phantom and sees real scatterers on all sides; only the
    /// central patch of the envelope and of the map is kept.
    pub fn sample(&self, rng: &mut SimRng) -> Result<TrainingSample> {
        let r = self.axial_factor;
        let fine = self.scatterer_grid()?;
        let coarse = fine.coarsen_axial(r)?;
        let (cl, ca) = (coarse.n_lateral, coarse.n_axial);
        let (hl_max, ha_max) = self.max_half_extents();
        let pad_max = ha_max.div_ceil(r);
        let field = Grid2D::new(cl + 2 * hl_max, ca + 2 * pad_max, coarse.spacing_lateral, coarse.spacing_axial)?;
        let field_pm = generate_random_parameter_map(&self.shapes, &field, rng)?;

        let psf = Psf::new(
            self.fc,
            rng.uniform_in(self.sigma_l2_range.0, self.sigma_l2_range.1),
            rng.uniform_in(self.sigma_a2_range.0, self.sigma_a2_range.1),
            self.fs,
            self.c,
        )?;
        let level = rng.uniform_in(self.noise_range.0, self.noise_range.1);

        let d = fine.spacing_axial;
        let hl = ((3.0 * psf.sigma_l2.sqrt() / d).ceil() as usize).min(hl_max);
        let pad = ((3.0 * psf.sigma_a2.sqrt() / d).ceil() as usize).div_ceil(r).min(pad_max);
        let window = field_pm
            .mu()
            .slice(s![pad_max - pad..pad_max + ca + pad, hl_max - hl..hl_max + cl + hl])
            .to_owned();
        let window_grid = Grid2D::new(cl + 2 * hl, ca + 2 * pad, coarse.spacing_lateral, coarse.spacing_axial)?;
        let window_pm = ParameterMap::new(window_grid, window, r)?;
        let window_fine = window_pm.fine_grid()?;
        let kernel = discretize_psf(&psf, &window_fine)?;
        let sc = sample_scatterers(&window_pm, &self.model(), &window_fine, rng)?;

        let rows = window_fine.n_axial;
        let cols = hl..hl + fine.n_lateral;
        let mut rf = sparse_convolve(sc.values().view(), &[(0..rows, &kernel)], 0..rows, cols);

        let top = pad * r;
        let crop = top..top + fine.n_axial;
        let mean_abs = rf.slice(s![crop.clone(), ..]).mapv(f64::abs).mean().unwrap_or(0.0);
        let sigma = level * mean_abs;
        if sigma > 0.0 {
            rf.mapv_inplace(|v| v + sigma * rng.standard_normal());
        }
        let env = analytic_magnitude(&rf);
        let target = field_pm.mu().slice(s![pad_max..pad_max + ca, hl_max..hl_max + cl]).to_owned();
        Ok(TrainingSample {
            envelope: env.slice(s![crop, ..]).to_owned(),
            target,
        })
    }

    /// Batch for one training iteration, drawn from its own random stream so
    /// that batches do not depend on how they are scheduled.
    pub fn batch(&self, seed: u64, iteration: u64, size: usize) -> Result<Vec<TrainingSample>> {
        let mut rng = SimRng::new(seed).derive(iteration);
        (0..size).map(|_| self.sample(&mut rng)).collect()
    }

    /// Mean envelope value over `n` simulated patches.
    pub fn reference_mean(&self, seed: u64, n: usize) -> Result<f64> {
        let mut rng = SimRng::new(seed).derive(u64::MAX - 1);
        let mut total = 0.0;
        for _ in 0..n.max(1) {
            total += self.sample(&mut rng)?.envelope.mean().unwrap_or(0.0);
        }
        Ok(total / n.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub validation_every: usize,
    pub validation_size: usize,
    pub base_width: usize,
    /// Generate batches on the calling thread instead of a producer thread.
    pub deterministic: bool,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            iterations: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            validation_every: 100,
            validation_size: 64,
            base_width: DEFAULT_WIDTH,
            deterministic: false,
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::invalid("learning rate, batch size and iterations must be positive"));
        }
        if self.validation_every == 0 || self.validation_size == 0 || self.base_width == 0 {
            return Err(Error::invalid("validation settings and width must be positive"));
        }
        self.data.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub history: Vec<LossRecord>,
    /// Validation mean absolute error of the final weights (raw output).
    pub val_mae: f64,
    /// Validation error of the constant 0.5 predictor.
    pub baseline_mae: f64,
}

/// Network input: the envelope divided by the training reference mean.
pub fn network_input<T: Scalar>(env: &Array2<f64>, reference_mean: f64) -> Array3<T> {
    env.mapv(|v| T::from_f64(v / reference_mean)).insert_axis(Axis(0))
}

fn evaluate<T: Scalar>(net: &Network<T>, set: &[TrainingSample], reference_mean: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in set {
        let y = net.forward(&network_input::<T>(&s.envelope, reference_mean))?;
        let pred = y.index_axis(Axis(0), 0).mapv(|v| v.to_f64());
        total += loss_l1(&pred, &s.target)?.0;
    }
    Ok(total / set.len() as f64)
}

/// Mean absolute error of predicting 0.5 everywhere.
pub fn constant_baseline(set: &[TrainingSample]) -> f64 {
    set.iter()
        .map(|s| s.target.mapv(|t| (t - 0.5).abs()).mean().unwrap_or(0.0))
        .sum::<f64>()
        / set.len().max(1) as f64
}

pub fn validation_set(cfg: &TrainConfig) -> Result<Vec<TrainingSample>> {
    let mut rng = SimRng::new(cfg.seed).derive(u64::MAX);
    (0..cfg.validation_size).map(|_| cfg.data.sample(&mut rng)).collect()
}

/// Adam on the L1 loss with freshly simulated batches every iteration.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let specs = build_network(cfg.data.axial_factor, cfg.base_width)?;
    let (pl, pa) = cfg.data.patch;
    let out = output_shape(&specs, (pa, pl))?;
    if out != (pa / cfg.data.axial_factor, pl) {
        return Err(Error::invalid("network output does not match the parameter grid"));
    }
    let mut init_rng = SimRng::new(cfg.seed);
    let mut net = Network::<f32>::init(specs, &mut init_rng)?;
    let mut state = AdamState::new(&net);
    let adam = cfg.adam();
    let reference_mean = cfg.data.reference_mean(cfg.seed, 100)?;
    if !(reference_mean > 0.0) {
        return Err(Error::numeric("training envelopes have zero mean"));
    }
    let val = validation_set(cfg)?;
    let baseline = constant_baseline(&val);
    log::info!(
        "training: {} iterations, batch {}, reference mean {reference_mean:.5}, baseline MAE {baseline:.4}",
        cfg.iterations,
        cfg.batch_size
    );

    let mut history = Vec::with_capacity(cfg.iterations);
    let mut initial_loss = None;
    let mut step = |it: usize, batch: Vec<TrainingSample>, net: &mut Network<f32>| -> Result<()> {
        let n_total: usize = batch.iter().map(|s| s.target.len()).sum();
        let mut grads = net.zero_grads();
        let mut loss = 0.0;
        for s in &batch {
            let x = network_input::<f32>(&s.envelope, reference_mean);
            let cache = net.forward_cached(&x)?;
            let target = s.target.mapv(|v| v as f32).insert_axis(Axis(0));
            let (l, g) = loss_l1(cache.output(), &target)?;
            loss += l * s.target.len() as f64;
            // per-sample gradient is sign/N_sample; rescale to sign/N_total
            let g = g * (s.target.len() as f32 / n_total as f32);
            net.backward(&x, &cache, &g, &mut grads)?;
        }
        loss /= n_total as f64;
        let l0 = *initial_loss.get_or_insert(loss);
        if !loss.is_finite() || loss > 10.0 * l0 {
            return Err(Error::numeric(format!(
                "training diverged at iteration {it}: loss {loss:.4} vs initial {l0:.4}"
            )));
        }
        adam_step(net, &grads, &mut state, &adam)?;
        let val_loss = if (it + 1) % cfg.validation_every == 0 || it + 1 == cfg.iterations {
            let v = evaluate(net, &val, reference_mean)?;
            log::info!("iteration {:>6}: train {loss:.4}, validation {v:.4}", it + 1);
            Some(v)
        } else {
            None
        };
        history.push(LossRecord {
            iteration: it + 1,
            train_loss: loss,
            val_loss,
        });
        Ok(())
    };

    if cfg.deterministic {
        for it in 0..cfg.iterations {
            let batch = cfg.data.batch(cfg.seed, it as u64, cfg.batch_size)?;
            step(it, batch, &mut net)?;
        }
    } else {
        let (tx, rx) = sync_channel::<Result<Vec<TrainingSample>>>(4);
        let data = cfg.data.clone();
        let (seed, iterations, bs) = (cfg.seed, cfg.iterations, cfg.batch_size);
        let producer = thread::spawn(move || {
            for it in 0..iterations {
                if tx.send(data.batch(seed, it as u64, bs)).is_err() {
                    break;
                }
            }
        });
        let mut result = Ok(());
        for it in 0..cfg.iterations {
            let batch = match rx.recv() {
                Ok(b) => b,
                Err(_) => {
                    result = Err(Error::numeric("training data producer stopped"));
                    break;
                }
            };
            if let Err(e) = batch.and_then(|b| step(it, b, &mut net)) {
                result = Err(e);
                break;
            }
        }
        drop(rx);
        producer.join().map_err(|_| Error::numeric("training data producer panicked"))?;
        result?;
    }

    let val_mae = history
        .last()
        .and_then(|r| r.val_loss)
        .expect("final iteration is validated");
    let weights = NetworkWeights::new(net, cfg.data.axial_factor, cfg.base_width, reference_mean, cfg.seed, cfg.iterations);
    Ok(TrainOutcome {
        weights,
        history,
        val_mae,
        baseline_mae: baseline,
    })
}

pub fn write_history_csv(history: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("iteration,train_loss,val_loss\n");
    for r in history {
        let v = r.val_loss.map(|v| format!("{v:.8}")).unwrap_or_default();
        out.push_str(&format!("{},{:.8},{}\n", r.iteration, r.train_loss, v));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::file(path, e))?;
    Ok(())
}

/// Moving average of the training loss over `window` iterations.
pub fn smoothed_loss(history: &[LossRecord], window: usize) -> Vec<f64> {
    let w = window.max(1);
    history
        .windows(w)
        .map(|ws| ws.iter().map(|r| r.train_loss).sum::<f64>() / w as f64)
        .collect()
}
