use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{Method, RladConfig, WienerConfig};
use crate::forward::{discretize_psf, DepthPsfBank};
use crate::grid::{Grid2D, SPEED_OF_SOUND};
use crate::metrics::HistogramConfig;
use crate::model::{NoiseModel, Psf, ScattererModel};
use crate::phantoms::InclusionPhantomConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Rotation,
    Compression,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(Self::Rotation),
            "compression" => Ok(Self::Compression),
            _ => Err(Error::Config(format!("unknown experiment kind '{s}'"))),
        }
    }
}

/// Depth-dependent PSF bank: one kernel per entry, stacked evenly over depth
/// from shallow to deep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsfBankConfig {
    pub fc: f64,
    pub fs: f64,
    pub c: f64,
    pub sigma_l2: Vec<f64>,
    pub sigma_a2: Vec<f64>,
}

impl Default for PsfBankConfig {
    fn default() -> Self {
        Self {
            fc: 6.0,
            fs: 40.0,
            c: SPEED_OF_SOUND,
            sigma_l2: vec![0.2, 0.25, 0.3],
            sigma_a2: vec![0.03, 0.03, 0.03],
        }
    }
}

impl PsfBankConfig {
    pub fn psfs(&self) -> Result<Vec<Psf>> {
        if self.sigma_l2.is_empty() || self.sigma_l2.len() != self.sigma_a2.len() {
            return Err(Error::Config("psf bank needs matching, nonempty sigma_l2 and sigma_a2 lists".into()));
        }
        self.sigma_l2
            .iter()
            .zip(&self.sigma_a2)
            .map(|(&l, &a)| Psf::new(self.fc, l, a, self.fs, self.c))
            .collect()
    }

    pub fn build(&self, grid: &Grid2D) -> Result<DepthPsfBank> {
        let kernels = self
            .psfs()?
            .iter()
            .map(|p| discretize_psf(p, grid))
            .collect::<Result<Vec<_>>>()?;
        DepthPsfBank::evenly_over(grid, kernels)
    }
}

/// Sweep of transform values. Empty `values` selects the default range of
/// the experiment kind; `fine` switches that default to 1° / 1% steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub values: Vec<f64>,
    pub fine: bool,
}

impl SweepConfig {
    pub fn resolve(&self, kind: ExperimentKind) -> Vec<f64> {
        if !self.values.is_empty() {
            return self.values.clone();
        }
        match (kind, self.fine) {
            (ExperimentKind::Rotation, false) => (0..=9).map(|i| 5.0 * i as f64).collect(),
            (ExperimentKind::Rotation, true) => (0..=45).map(f64::from).collect(),
            (ExperimentKind::Compression, false) => (1..=5).map(|i| f64::from(i) / 10.0).collect(),
            (ExperimentKind::Compression, true) => (10..=50).map(|i| f64::from(i) / 100.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub histogram: HistogramConfig,
    /// Gap around the inclusion boundary excluded from both CNR regions, mm.
    pub region_gap_mm: f64,
    /// Extra border (pixels) beyond the PSF half extent excluded from the
    /// evaluation mask.
    pub extra_margin_px: f64,
    /// TRF aliasing flag threshold on the fraction of axial spectral energy
    /// above the pre-strain band edge.
    pub aliasing_threshold: f64,
    /// Cumulative energy fraction defining the pre-strain band edge.
    pub band_fraction: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            histogram: HistogramConfig::default(),
            region_gap_mm: 0.25,
            extra_margin_px: 0.0,
            aliasing_threshold: 0.25,
            band_fraction: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GalleryConfig {
    pub enabled: bool,
    pub dynamic_range_db: f64,
}

impl Default for GalleryConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            dynamic_range_db: 50.0,
        }
    }
}

/// Everything a sweep experiment needs. Loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub deterministic: bool,
    pub methods: Vec<Method>,
    /// Trained regressor, required when `scat-param` is listed.
    pub weights: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Relative RF noise level of the acquired and re-simulated images.
    pub noise: f64,
    pub phantom: InclusionPhantomConfig,
    pub model: ScattererModel,
    pub psf_bank: PsfBankConfig,
    pub sweep: SweepConfig,
    pub rlad: RladConfig,
    pub wiener: WienerConfig,
    pub evaluation: EvaluationConfig,
    pub gallery: GalleryConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Rotation,
            seed: 7,
            deterministic: false,
            methods: Method::ALL.to_vec(),
            weights: None,
            out_dir: None,
            noise: 0.0,
            phantom: InclusionPhantomConfig::default(),
            model: ScattererModel::default(),
            psf_bank: PsfBankConfig::default(),
            sweep: SweepConfig::default(),
            rlad: RladConfig {
                max_iters: 300,
                ..RladConfig::default()
            },
            wiener: WienerConfig::default(),
            evaluation: EvaluationConfig::default(),
            gallery: GalleryConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative weight paths are taken relative to the config file
        if let (Some(w), Some(dir)) = (&cfg.weights, path.parent()) {
            if w.is_relative() && !w.exists() {
                cfg.weights = Some(dir.join(w));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash(&self) -> String {
        config_hash(&self.to_toml())
    }

    pub fn sweep_values(&self) -> Vec<f64> {
        self.sweep.resolve(self.kind)
    }

    /// Isotropic scatterer grid covering the phantom; sides are rounded up
    /// to a multiple of 16 samples so the regressor can run on it.
    pub fn scatterer_grid(&self) -> Result<Grid2D> {
        let d = crate::grid::rf_sample_spacing(self.psf_bank.fs, self.psf_bank.c);
        let n = ((self.phantom.side / d).round() as usize).div_ceil(16) * 16;
        Grid2D::scatterer(n, n, self.psf_bank.fs, self.psf_bank.c)
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.noise)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        let values = self.sweep_values();
        if values.is_empty() {
            return Err(Error::Config("sweep is empty".into()));
        }
        for v in &values {
            let ok = match self.kind {
                ExperimentKind::Rotation => v.is_finite(),
                ExperimentKind::Compression => (0.0..0.9).contains(v),
            };
            if !ok {
                return Err(Error::Config(format!("sweep value {v} is invalid for {:?}", self.kind)));
            }
        }
        if self.methods.contains(&Method::ScatParam) {
            match &self.weights {
                None => return Err(Error::Config("scat-param needs a weights file".into())),
                Some(w) if !w.exists() => {
                    return Err(Error::Config(format!("weights file {} does not exist", w.display())))
                }
                _ => {}
            }
        }
        self.model.validate().map_err(cfg_err)?;
        self.psf_bank.psfs().map_err(cfg_err)?;
        self.rlad.validate().map_err(cfg_err)?;
        self.evaluation.histogram.validate().map_err(cfg_err)?;
        self.noise_model().map_err(cfg_err)?;
        Ok(())
    }
}

pub fn config_hash(text: impl AsRef<[u8]>) -> String {
    let digest = Sha256::digest(text.as_ref());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            kind = "compression"
            methods = ["trf", "scat-rec"]
            [psf_bank]
            sigma_l2 = [0.2]
            sigma_a2 = [0.02]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Compression);
        assert_eq!(cfg.sweep_values().len(), 5);
        assert_eq!(cfg.psf_bank.fc, 6.0);
        cfg.validate().unwrap();
        assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn sweeps() {
        let s = SweepConfig::default();
        assert_eq!(s.resolve(ExperimentKind::Rotation), vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0]);
        let fine = SweepConfig { fine: true, ..s };
        assert_eq!(fine.resolve(ExperimentKind::Rotation).len(), 46);
        assert_eq!(fine.resolve(ExperimentKind::Compression).len(), 41);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml_str("kind = \"shear\"").is_err());
        assert!(ExperimentConfig::from_toml_str("seed = \"x\"").is_err());
        let cfg = ExperimentConfig::default();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig {
            methods: vec![Method::Trf],
            kind: ExperimentKind::Compression,
            sweep: SweepConfig {
                values: vec![0.95],
                fine: false,
            },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn grid_is_regressor_compatible() {
        let g = ExperimentConfig::default().scatterer_grid().unwrap();
        assert_eq!(g.shape(), (784, 784));
    }
}
