//! Command-line front end. Every command resolves its TOML config (file plus
//! flag overrides), prints the seed and config hash, and writes a manifest
//! next to its outputs.

use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimators::{sample_env, scat_param, scat_rec, wiener_trf, write_trace_csv, Method, RladConfig, WienerConfig};
use crate::experiment::{config_hash, run_experiment, write_outputs, ExperimentConfig, ExperimentKind, PsfBankConfig};
use crate::field::{EnvelopeImage, ParameterMap, RfImage, ScattererMap, TrfMap};
use crate::forward::{bmode, envelope, render, simulate, write_pgm};
use crate::geo::{transform_scatterers, transform_trf, Transform};
use crate::grid::Grid2D;
use crate::metrics::{evaluate, HistogramConfig, RegionPair};
use crate::model::{NoiseModel, ScattererModel};
use crate::neural::{train, train::write_history_csv, NetworkWeights, TrainConfig};
use crate::phantoms::{disk_mask, generate_random_parameter_map, InclusionPhantomConfig, ShapeGenConfig};
use crate::rng::SimRng;
use crate::tensor_file::{Tensor, TensorData, TensorField};

#[derive(Debug, Parser)]
#[command(name = "scatsim", version, about = "Ultrasound speckle simulation and scatterer estimation")]
pub struct Cli {
    /// TOML configuration for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run single-threaded for bitwise reproducibility.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

fn method_parser() -> impl TypedValueParser<Value = Method> {
    PossibleValuesParser::new(Method::ALL.map(Method::name)).map(|s| s.parse::<Method>().expect("listed method"))
}

fn kind_parser() -> impl TypedValueParser<Value = ExperimentKind> {
    PossibleValuesParser::new(["rotation", "compression"]).map(|s| s.parse::<ExperimentKind>().expect("listed kind"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate random parameter maps (and optionally paired envelopes).
    GenData {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        envelopes: bool,
    },
    /// Train the parameter-map regressor.
    Train {
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Estimate a scatterer representation from an RF or envelope tensor.
    Estimate {
        #[arg(long, value_parser = method_parser())]
        method: Method,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Simulate RF, envelope and B-mode from a parameter or scatterer map.
    Simulate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Rotate or axially compress a map.
    Transform {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, conflicts_with = "compress", required_unless_present = "compress")]
        rotate: Option<f64>,
        #[arg(long, alias = "strain")]
        compress: Option<f64>,
    },
    /// Score a simulated envelope against a ground-truth envelope.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        #[arg(long, default_value = "sim")]
        label: String,
        #[arg(long, default_value_t = 0.0)]
        transform_value: f64,
    },
    /// Run a rotation or compression sweep.
    Experiment {
        #[arg(value_parser = kind_parser())]
        kind: ExperimentKind,
        /// 1° / 1% sweep steps instead of the coarse defaults.
        #[arg(long)]
        fine: bool,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Restrict to these methods (repeatable).
        #[arg(long, value_parser = method_parser())]
        method: Vec<Method>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataConfig {
    pub seed: u64,
    pub count: usize,
    /// Parameter-map size, lateral x axial (coarse) pixels.
    pub n_lateral: usize,
    pub n_axial: usize,
    pub axial_factor: usize,
    pub shapes: ShapeGenConfig,
    pub envelopes: bool,
    pub psf_bank: PsfBankConfig,
    pub model: ScattererModel,
    pub noise: f64,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 4000,
            n_lateral: 64,
            n_axial: 128,
            axial_factor: 4,
            shapes: ShapeGenConfig::default(),
            envelopes: false,
            psf_bank: PsfBankConfig {
                sigma_l2: vec![0.3],
                sigma_a2: vec![0.03],
                ..PsfBankConfig::default()
            },
            model: ScattererModel::default(),
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    pub seed: u64,
    pub weights: Option<PathBuf>,
    pub psf_bank: PsfBankConfig,
    pub model: ScattererModel,
    pub rlad: RladConfig,
    pub wiener: WienerConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            weights: None,
            psf_bank: PsfBankConfig::default(),
            model: ScattererModel::default(),
            rlad: RladConfig::default(),
            wiener: WienerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub seed: u64,
    pub psf_bank: PsfBankConfig,
    pub model: ScattererModel,
    pub noise: f64,
    pub dynamic_range_db: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            psf_bank: PsfBankConfig::default(),
            model: ScattererModel::default(),
            noise: 0.0,
            dynamic_range_db: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub phantom: InclusionPhantomConfig,
    pub histogram: HistogramConfig,
    pub region_gap_mm: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            phantom: InclusionPhantomConfig::default(),
            histogram: HistogramConfig::default(),
            region_gap_mm: 0.25,
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Canonical TOML text and its hash; prints both with the seed.
fn announce<T: Serialize>(command: &str, seed: u64, cfg: &T) -> Result<(String, String)> {
    let text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let hash = config_hash(&text);
    println!("{command}: seed={seed} config_hash={hash}");
    Ok((text, hash))
}

fn out_dir(cli_out: Option<&Path>, default: &str) -> Result<PathBuf> {
    let dir = cli_out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
    Ok(dir)
}

fn write_manifest(dir: &Path, config_text: &str, mut manifest: serde_json::Value) -> Result<()> {
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, config_text).map_err(|e| Error::file(&cfg_path, e))?;
    manifest["config_file"] = json!("config.toml");
    manifest["version"] = json!(env!("CARGO_PKG_VERSION"));
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::file(&path, e))
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Numeric(_) | Error::Config(_) | Error::File { .. } => e,
        other => Error::Config(other.to_string()),
    }
}

pub fn cmd_gen_data(cli: &Cli, count: Option<usize>, envelopes: bool) -> Result<PathBuf> {
    let mut cfg: GenDataConfig = load_config(cli.config.as_deref())?;
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    cfg.count = count.unwrap_or(cfg.count);
    cfg.envelopes |= envelopes;
    cfg.shapes.validate().map_err(config_err)?;
    cfg.model.validate().map_err(config_err)?;
    let noise = NoiseModel::new(cfg.noise).map_err(config_err)?;
    let (text, hash) = announce("gen-data", cfg.seed, &cfg)?;
    let dir = out_dir(cli.out.as_deref(), "dataset")?;

    let r = cfg.axial_factor;
    let fine = Grid2D::scatterer(cfg.n_lateral, cfg.n_axial * r, cfg.psf_bank.fs, cfg.psf_bank.c).map_err(config_err)?;
    let coarse = fine.coarsen_axial(r).map_err(config_err)?;
    let bank = if cfg.envelopes {
        Some(cfg.psf_bank.build(&fine).map_err(config_err)?)
    } else {
        None
    };
    let root = SimRng::new(cfg.seed);
    for i in 0..cfg.count {
        let mut rng = root.derive(i as u64);
        let pm = generate_random_parameter_map(&cfg.shapes, &coarse, &mut rng)?;
        let t = Tensor::new(
            TensorData::F32(pm.mu().mapv(|v| v as f32)),
            [coarse.spacing_axial, coarse.spacing_lateral],
            ParameterMap::ROLE,
        );
        t.save(dir.join(format!("map_{i:05}.tensor")))?;
        if let Some(bank) = &bank {
            let sim = simulate(&pm, &cfg.model, bank, &noise, &mut rng)?;
            let t = Tensor::new(
                TensorData::F32(sim.envelope.values().mapv(|v| v as f32)),
                [fine.spacing_axial, fine.spacing_lateral],
                EnvelopeImage::ROLE,
            );
            t.save(dir.join(format!("envelope_{i:05}.tensor")))?;
        }
    }
    write_manifest(
        &dir,
        &text,
        json!({
            "command": "gen-data",
            "seed": cfg.seed,
            "config_hash": hash,
            "count": cfg.count,
            "map_shape": [cfg.n_axial, cfg.n_lateral],
            "envelopes": cfg.envelopes,
            "dtype": "f32",
            "rng_stream": "map i uses stream i of the seed",
        }),
    )?;
    println!("wrote {} maps to {}", cfg.count, dir.display());
    Ok(dir)
}

pub fn cmd_train(cli: &Cli, iterations: Option<usize>) -> Result<PathBuf> {
    let mut cfg: TrainConfig = load_config(cli.config.as_deref())?;
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    cfg.deterministic |= cli.deterministic;
    cfg.iterations = iterations.unwrap_or(cfg.iterations);
    cfg.validate().map_err(config_err)?;
    let (text, hash) = announce("train", cfg.seed, &cfg)?;
    let dir = out_dir(cli.out.as_deref(), "training")?;
    let outcome = train(&cfg)?;
    outcome.weights.save(dir.join("weights.bin"))?;
    write_history_csv(&outcome.history, dir.join("loss.csv"))?;
    let weights_hash = config_hash(std::fs::read(dir.join("weights.bin"))?);
    write_manifest(
        &dir,
        &text,
        json!({
            "command": "train",
            "seed": cfg.seed,
            "deterministic": cfg.deterministic,
            "config_hash": hash,
            "iterations": cfg.iterations,
            "validation_mae": outcome.val_mae,
            "constant_baseline_mae": outcome.baseline_mae,
            "weights": "weights.bin",
            "weights_sha256": weights_hash,
        }),
    )?;
    println!(
        "validation MAE {:.4} (constant predictor {:.4}); weights in {}",
        outcome.val_mae,
        outcome.baseline_mae,
        dir.join("weights.bin").display()
    );
    Ok(dir)
}

fn load_rf_or_envelope(path: &Path) -> Result<(Option<RfImage>, EnvelopeImage)> {
    let t = Tensor::load(path)?;
    match t.header.role.as_str() {
        r if r == RfImage::ROLE => {
            let rf = RfImage::from_tensor(&t)?;
            let env = envelope(&rf)?;
            Ok((Some(rf), env))
        }
        r if r == EnvelopeImage::ROLE => Ok((None, EnvelopeImage::from_tensor(&t)?)),
        other => Err(Error::Config(format!(
            "{}: expected an rf or envelope tensor, found role '{other}'",
            path.display()
        ))),
    }
}

pub fn cmd_estimate(cli: &Cli, method: Method, input: &Path, weights: Option<&Path>) -> Result<PathBuf> {
    let mut cfg: EstimateConfig = load_config(cli.config.as_deref())?;
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    if let Some(w) = weights {
        cfg.weights = Some(w.to_path_buf());
    }
    cfg.model.validate().map_err(config_err)?;
    cfg.rlad.validate().map_err(config_err)?;
    let (text, hash) = announce("estimate", cfg.seed, &cfg)?;
    let dir = out_dir(cli.out.as_deref(), "estimate")?;
    let (rf, env) = load_rf_or_envelope(input)?;
    let grid = *env.grid();
    let rng = SimRng::new(cfg.seed);
    let need_rf = || {
        rf.as_ref()
            .ok_or_else(|| Error::Config(format!("{method} needs an rf tensor as input")))
    };
    let mut outputs = Vec::new();
    match method {
        Method::SampleEnv => {
            sample_env(&env, &cfg.model, &grid, &mut rng.derive(0))?.save(dir.join("scatterers.tensor"))?;
            outputs.push("scatterers.tensor");
        }
        Method::Trf => {
            let bank = cfg.psf_bank.build(&grid).map_err(config_err)?;
            wiener_trf(need_rf()?, bank.central_kernel(&grid), &cfg.wiener)?.save(dir.join("trf.tensor"))?;
            outputs.push("trf.tensor");
        }
        Method::ScatRec => {
            let bank = cfg.psf_bank.build(&grid).map_err(config_err)?;
            let res = scat_rec(need_rf()?, &bank, &grid, &cfg.rlad)?;
            res.map.save(dir.join("scatterers.tensor"))?;
            write_trace_csv(&res.raw_trace, dir.join("rlad_trace.csv"))?;
            println!("rlad: {} iterations, converged={}", res.iterations, res.converged);
            outputs.extend(["scatterers.tensor", "rlad_trace.csv"]);
        }
        Method::ScatParam => {
            let path = cfg
                .weights
                .as_ref()
                .ok_or_else(|| Error::Config("scat-param needs --weights or weights in the config".into()))?;
            let w = NetworkWeights::load(path)?;
            let (pm, sc) = scat_param(&env, &w, &cfg.model, &mut rng.derive(0))?;
            pm.save(dir.join("parameter_map.tensor"))?;
            sc.save(dir.join("scatterers.tensor"))?;
            outputs.extend(["parameter_map.tensor", "scatterers.tensor"]);
        }
    }
    write_manifest(
        &dir,
        &text,
        json!({
            "command": "estimate",
            "method": method,
            "seed": cfg.seed,
            "config_hash": hash,
            "input": input,
            "outputs": outputs,
        }),
    )?;
    Ok(dir)
}

pub fn cmd_simulate(cli: &Cli, input: &Path) -> Result<PathBuf> {
    let mut cfg: SimulateConfig = load_config(cli.config.as_deref())?;
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    cfg.model.validate().map_err(config_err)?;
    let noise = NoiseModel::new(cfg.noise).map_err(config_err)?;
    let (text, hash) = announce("simulate", cfg.seed, &cfg)?;
    let dir = out_dir(cli.out.as_deref(), "simulation")?;
    let t = Tensor::load(input)?;
    let mut rng = SimRng::new(cfg.seed);
    let (sc, rf, env) = match t.header.role.as_str() {
        r if r == ParameterMap::ROLE => {
            let pm = ParameterMap::from_tensor(&t)?;
            let bank = cfg.psf_bank.build(&pm.fine_grid()?).map_err(config_err)?;
            let sim = simulate(&pm, &cfg.model, &bank, &noise, &mut rng)?;
            (sim.scatterers, sim.rf, sim.envelope)
        }
        r if r == ScattererMap::ROLE => {
            let sc = ScattererMap::from_tensor(&t)?;
            let bank = cfg.psf_bank.build(sc.grid()).map_err(config_err)?;
            let (rf, env) = render(&sc, &bank, &noise, &mut rng)?;
            (sc, rf, env)
        }
        other => {
            return Err(Error::Config(format!(
                "{}: expected a parameter_map or scatterers tensor, found role '{other}'",
                input.display()
            )))
        }
    };
    sc.save(dir.join("scatterers.tensor"))?;
    rf.save(dir.join("rf.tensor"))?;
    env.save(dir.join("envelope.tensor"))?;
    let image = if env.values().iter().any(|v| *v > 0.0) {
        bmode(&env, cfg.dynamic_range_db)?
    } else {
        env.values().clone()
    };
    write_pgm(&image, dir.join("bmode.pgm"))?;
    write_manifest(
        &dir,
        &text,
        json!({
            "command": "simulate",
            "seed": cfg.seed,
            "config_hash": hash,
            "input": input,
            "outputs": ["scatterers.tensor", "rf.tensor", "envelope.tensor", "bmode.pgm"],
        }),
    )?;
    Ok(dir)
}

pub fn cmd_transform(cli: &Cli, input: &Path, rotate: Option<f64>, compress: Option<f64>) -> Result<PathBuf> {
    let seed = cli.seed.unwrap_or(0);
    let t = Tensor::load(input)?;
    let grid = t.grid()?;
    let transform = match (rotate, compress) {
        (Some(a), None) => Transform::rotation(a, grid.center()),
        (None, Some(e)) => Transform::compression(e, grid.center()),
        _ => Err(Error::Config("give exactly one of --rotate and --compress".into())),
    }
    .map_err(config_err)?;
    let (text, hash) = announce("transform", seed, &transform)?;
    let dir = out_dir(cli.out.as_deref(), "transformed")?;
    let out = dir.join("transformed.tensor");
    // point sets move as points; everything else is resampled as a field
    let mode = if t.header.role == ScattererMap::ROLE {
        transform_scatterers(&ScattererMap::from_tensor(&t)?, &transform)?.save(&out)?;
        "points"
    } else {
        let field = TrfMap::new(grid, t.data.to_f64())?;
        let moved = transform_trf(&field, &transform)?;
        Tensor::from_grid(&grid, moved.into_values(), t.header.role.clone()).save(&out)?;
        "field"
    };
    write_manifest(
        &dir,
        &text,
        json!({
            "command": "transform",
            "seed": seed,
            "config_hash": hash,
            "input": input,
            "mode": mode,
            "transform": transform,
            "outputs": ["transformed.tensor"],
        }),
    )?;
    Ok(dir)
}

/// Inclusion and background masks of the configured phantom on `grid`,
/// separated by the configured gap.
pub fn phantom_regions(cfg: &EvaluateConfig, grid: &Grid2D) -> Result<RegionPair> {
    let center = cfg.phantom.inclusion_center.unwrap_or_else(|| grid.center());
    let r = cfg.phantom.inclusion_radius;
    let inside = disk_mask(grid, center, r - cfg.region_gap_mm);
    let outside = disk_mask(grid, center, r + cfg.region_gap_mm).mapv(|v| !v);
    RegionPair::new(inside, outside).map_err(config_err)
}

pub fn cmd_evaluate(cli: &Cli, truth: &Path, sim: &Path, label: &str, value: f64) -> Result<PathBuf> {
    let cfg: EvaluateConfig = load_config(cli.config.as_deref())?;
    cfg.histogram.validate().map_err(config_err)?;
    let seed = cli.seed.unwrap_or(0);
    let (text, hash) = announce("evaluate", seed, &cfg)?;
    let dir = out_dir(cli.out.as_deref(), "evaluation")?;
    let t = EnvelopeImage::load(truth)?;
    let s = EnvelopeImage::load(sim)?;
    if t.grid() != s.grid() {
        return Err(Error::Config("truth and sim envelopes live on different grids".into()));
    }
    let regions = phantom_regions(&cfg, t.grid())?;
    let m = evaluate(t.values(), s.values(), t.grid(), &regions, None, &cfg.histogram)?;
    let csv = format!(
        "method,transform_value,delta_I,delta_SNR,delta_CNR,KL_mean\n{label},{value},{:.8},{:.8},{:.8},{:.8}\n",
        m.delta_i, m.delta_snr, m.delta_cnr, m.kl_mean
    );
    let path = dir.join("metrics.csv");
    std::fs::write(&path, &csv).map_err(|e| Error::file(&path, e))?;
    print!("{csv}");
    write_manifest(
        &dir,
        &text,
        json!({
            "command": "evaluate",
            "seed": seed,
            "config_hash": hash,
            "truth": truth,
            "sim": sim,
            "outputs": ["metrics.csv"],
        }),
    )?;
    Ok(dir)
}

pub fn cmd_experiment(
    cli: &Cli,
    kind: ExperimentKind,
    fine: bool,
    weights: Option<&Path>,
    methods: &[Method],
) -> Result<PathBuf> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.kind = kind;
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    cfg.deterministic |= cli.deterministic;
    cfg.sweep.fine |= fine;
    if let Some(w) = weights {
        cfg.weights = Some(w.to_path_buf());
    }
    if !methods.is_empty() {
        cfg.methods = methods.to_vec();
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("experiment-{}", if kind == ExperimentKind::Rotation { "rotation" } else { "compression" })));
    cfg.out_dir = None;
    cfg.validate()?;
    println!("experiment: seed={} config_hash={}", cfg.seed, cfg.hash());
    let result = run_experiment(&cfg)?;
    write_outputs(&result, &cfg, &dir)?;
    for row in result.summary() {
        println!(
            "{:<11} dI {:.4}  dSNR {:.4}  dCNR {:.4}  KL {:.4}",
            row.method.name(),
            row.mean.delta_i,
            row.mean.delta_snr,
            row.mean.delta_cnr,
            row.mean.kl_mean
        );
    }
    println!("wrote {} in {:.1}s", dir.display(), result.seconds);
    Ok(dir)
}

/// Dispatch a parsed command line.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    match &cli.command {
        Command::GenData { count, envelopes } => cmd_gen_data(cli, *count, *envelopes),
        Command::Train { iterations } => cmd_train(cli, *iterations),
        Command::Estimate { method, input, weights } => cmd_estimate(cli, *method, input, weights.as_deref()),
        Command::Simulate { input } => cmd_simulate(cli, input),
        Command::Transform { input, rotate, compress } => cmd_transform(cli, input, *rotate, *compress),
        Command::Evaluate {
            truth,
            sim,
            label,
            transform_value,
        } => cmd_evaluate(cli, truth, sim, label, *transform_value),
        Command::Experiment {
            kind,
            fine,
            weights,
            method,
        } => cmd_experiment(cli, *kind, *fine, weights.as_deref(), method),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "scatsim", "estimate", "--method", "scat-rec", "--input", "rf.tensor", "--seed", "4", "--out", "o",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(4));
        assert!(matches!(cli.command, Command::Estimate { method: Method::ScatRec, .. }));
        assert!(Cli::try_parse_from(["scatsim", "estimate", "--method", "wiener", "--input", "x"]).is_err());
        let cli = Cli::try_parse_from(["scatsim", "experiment", "compression", "--deterministic", "--method", "trf", "--method", "scat-rec"]).unwrap();
        assert!(cli.deterministic);
        match cli.command {
            Command::Experiment { kind, method, .. } => {
                assert_eq!(kind, ExperimentKind::Compression);
                assert_eq!(method, vec![Method::Trf, Method::ScatRec]);
            }
            _ => panic!(),
        }
        assert!(Cli::try_parse_from(["scatsim", "transform", "--input", "x", "--rotate", "3", "--compress", "0.1"]).is_err());
        assert!(Cli::try_parse_from(["scatsim", "transform", "--input", "x", "--strain", "0.1"]).is_ok());
    }

    #[test]
    fn configs_have_defaults() {
        for text in ["", "seed = 3"] {
            let g: GenDataConfig = toml::from_str(text).unwrap();
            assert_eq!((g.count, g.n_lateral, g.n_axial), (4000, 64, 128));
            let _: EstimateConfig = toml::from_str(text).unwrap();
            let _: SimulateConfig = toml::from_str(text).unwrap();
        }
        let e: EvaluateConfig = toml::from_str("region_gap_mm = 0.1").unwrap();
        assert_eq!(e.histogram.bins, 50);
    }
}
