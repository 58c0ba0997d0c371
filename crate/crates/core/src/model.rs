//! Physical and statistical model parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, SPEED_OF_SOUND};

/// Minimum scatterer concentration (per mm²) for fully developed speckle.
pub const RAYLEIGH_MIN_DENSITY: f64 = 100.0;

/// Parametric Gaussian-cosine point spread function.
///
/// `h(l, a) = exp(-l²/σl² - a²/σa²) · cos(2π fc a)`, with the axial phase
/// counted in RF samples (`fc / fs` cycles per axial pixel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psf {
    /// Centre frequency, MHz.
    pub fc: f64,
    /// Lateral variance parameter, mm².
    pub sigma_l2: f64,
    /// Axial variance parameter, mm².
    pub sigma_a2: f64,
    /// RF sampling frequency, MHz.
    #[serde(default = "default_fs")]
    pub fs: f64,
    /// Speed of sound, m/s.
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_fs() -> f64 {
    40.0
}

fn default_c() -> f64 {
    SPEED_OF_SOUND
}

impl Psf {
    pub fn new(fc: f64, sigma_l2: f64, sigma_a2: f64, fs: f64, c: f64) -> Result<Self> {
        let psf = Self {
            fc,
            sigma_l2,
            sigma_a2,
            fs,
            c,
        };
        psf.validate()?;
        Ok(psf)
    }

    /// 6 MHz probe sampled at 40 MHz, c = 1540 m/s.
    pub fn with_spread(sigma_l2: f64, sigma_a2: f64) -> Result<Self> {
        Self::new(6.0, sigma_l2, sigma_a2, 40.0, SPEED_OF_SOUND)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fc > 0.0
            && self.sigma_l2 > 0.0
            && self.sigma_a2 > 0.0
            && self.fs > 0.0
            && self.c > 0.0
            && self.fc < self.fs / 2.0
            && [self.fc, self.sigma_l2, self.sigma_a2, self.fs, self.c]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid PSF parameters {self:?}")))
        }
    }

    /// Axial modulation in cycles per RF sample.
    pub fn cycles_per_sample(&self) -> f64 {
        self.fc / self.fs
    }

    /// Unnormalised PSF value at physical offset `(l, a)` mm, where the axial
    /// offset corresponds to `k_a` RF samples.
    pub fn eval(&self, l: f64, a: f64, k_a: f64) -> f64 {
        (-(l * l) / self.sigma_l2 - (a * a) / self.sigma_a2).exp()
            * (2.0 * std::f64::consts::PI * self.cycles_per_sample() * k_a).cos()
    }
}

/// Scatterer distribution model: Bernoulli occupancy with Gaussian amplitudes.
/// The per-pixel mean lives in a [`crate::ParameterMap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScattererModel {
    /// Probability that a scatterer-grid pixel is occupied.
    pub rho_s: f64,
    /// Amplitude standard deviation.
    pub sigma_s: f64,
    /// Axial coarsening factor between parameter and scatterer grids.
    pub axial_factor: usize,
}

impl Default for ScattererModel {
    fn default() -> Self {
        Self {
            rho_s: 0.05,
            sigma_s: 0.05,
            axial_factor: 4,
        }
    }
}

impl ScattererModel {
    pub fn new(rho_s: f64, sigma_s: f64, axial_factor: usize) -> Result<Self> {
        let m = Self {
            rho_s,
            sigma_s,
            axial_factor,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho_s) {
            return Err(Error::invalid(format!("rho_s {} outside [0, 1]", self.rho_s)));
        }
        if !(self.sigma_s >= 0.0) || !self.sigma_s.is_finite() {
            return Err(Error::invalid(format!("sigma_s {} must be >= 0", self.sigma_s)));
        }
        if self.axial_factor == 0 {
            return Err(Error::invalid("axial factor must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityCheck {
    /// Scatterers per mm².
    pub density: f64,
    pub passes: bool,
}

/// Expected scatterer concentration of `model` on `grid` and whether it meets
/// the fully-developed-speckle minimum of 100 per mm².
pub fn check_rayleigh_density(model: &ScattererModel, grid: &Grid2D) -> Result<DensityCheck> {
    if !grid.is_isotropic() {
        return Err(Error::invalid(format!(
            "density check needs an isotropic grid, got spacings ({}, {})",
            grid.spacing_lateral, grid.spacing_axial
        )));
    }
    let density = model.rho_s / (grid.spacing_lateral * grid.spacing_axial);
    Ok(DensityCheck {
        density,
        passes: density >= RAYLEIGH_MIN_DENSITY,
    })
}

/// Additive Gaussian noise with standard deviation `level · mean(|rf|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub level: f64,
}

impl NoiseModel {
    pub fn new(level: f64) -> Result<Self> {
        if !(level >= 0.0) || !level.is_finite() {
            return Err(Error::invalid(format!("noise level {level} must be >= 0")));
        }
        Ok(Self { level })
    }

    pub fn none() -> Self {
        Self { level: 0.0 }
    }
}
