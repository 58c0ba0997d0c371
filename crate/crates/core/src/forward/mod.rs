//! Convolution-based speckle simulation: scatterer sampling, PSF kernels,
//! depth-dependent convolution, additive noise, envelope detection and
//! log compression.

mod convolve;
mod hilbert;
mod psf_kernel;

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

pub use convolve::{convolve, convolve_window, next_fast_len, ConvOperator};
pub(crate) use convolve::{sparse_convolve, Fft2};
pub use hilbert::envelope;
pub(crate) use hilbert::analytic_magnitude;
pub use psf_kernel::{discretize_psf, BankEntry, DepthPsfBank, PsfKernel};

use crate::error::{Error, Result};
use crate::field::{EnvelopeImage, ParameterMap, RfImage, ScattererMap};
use crate::grid::Grid2D;
use crate::model::{NoiseModel, ScattererModel};
use crate::rng::SimRng;

/// Draw a scatterer map: each pixel is occupied with probability `ρs`, and an
/// occupied pixel gets amplitude `max(0, N(μs, σs))`.
///
/// `pm` is replicated onto `grid` when it lives on a coarser grid. Exactly one
/// uniform draw per pixel (row-major), plus one normal draw per occupied pixel.
pub fn sample_scatterers(
    pm: &ParameterMap,
    model: &ScattererModel,
    grid: &Grid2D,
    rng: &mut SimRng,
) -> Result<ScattererMap> {
    model.validate()?;
    let mu = if pm.grid().same_sampling(grid) {
        pm.mu().clone()
    } else {
        pm.upsample(grid)?.into_values()
    };
    let values = mu.mapv(|m| {
        if rng.bernoulli(model.rho_s) {
            rng.normal(m, model.sigma_s).max(0.0)
        } else {
            0.0
        }
    });
    ScattererMap::new(*grid, values)
}

/// Add i.i.d. Gaussian noise with standard deviation `level · mean|rf|`.
/// An all-zero image receives no noise.
pub fn add_noise(rf: &RfImage, noise: &NoiseModel, rng: &mut SimRng) -> Result<RfImage> {
    let noise = NoiseModel::new(noise.level)?;
    if noise.level == 0.0 {
        return Ok(rf.clone());
    }
    let sigma = noise.level * rf.mean_abs();
    if sigma == 0.0 {
        return Ok(rf.clone());
    }
    let values = rf.values().mapv(|v| v + sigma * rng.standard_normal());
    RfImage::new(*rf.grid(), values)
}

/// Log compression for display: `20·log10(env/max)` clipped to
/// `[-dynamic_range_db, 0]` and mapped affinely onto `[0, 1]`.
pub fn bmode(env: &EnvelopeImage, dynamic_range_db: f64) -> Result<Array2<f64>> {
    if !(dynamic_range_db > 0.0) {
        return Err(Error::invalid("dynamic range must be positive"));
    }
    let max = env.values().iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Err(Error::invalid("B-mode of an all-zero envelope is undefined"));
    }
    Ok(env.values().mapv(|v| {
        let db = if v > 0.0 {
            20.0 * (v / max).log10()
        } else {
            f64::NEG_INFINITY
        };
        (db.max(-dynamic_range_db) + dynamic_range_db) / dynamic_range_db
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub scatterers: ScattererMap,
    pub rf: RfImage,
    pub envelope: EnvelopeImage,
}

/// Sample scatterers from `pm` on its fine grid, convolve, add noise and
/// detect the envelope.
pub fn simulate(
    pm: &ParameterMap,
    model: &ScattererModel,
    bank: &DepthPsfBank,
    noise: &NoiseModel,
    rng: &mut SimRng,
) -> Result<Simulation> {
    let grid = pm.fine_grid()?;
    let scatterers = sample_scatterers(pm, model, &grid, rng)?;
    let (rf, envelope) = render(&scatterers, bank, noise, rng)?;
    Ok(Simulation {
        scatterers,
        rf,
        envelope,
    })
}

/// Convolve an existing scatterer map, add noise and detect the envelope.
pub fn render(
    sc: &ScattererMap,
    bank: &DepthPsfBank,
    noise: &NoiseModel,
    rng: &mut SimRng,
) -> Result<(RfImage, EnvelopeImage)> {
    let rf = convolve(sc, bank)?;
    let rf = add_noise(&rf, noise, rng)?;
    let env = envelope(&rf)?;
    Ok((rf, env))
}

/// Keep every `pitch`-th lateral line, emulating a probe with coarser line
/// spacing than the scatterer grid.
pub fn decimate_lateral(rf: &RfImage, pitch: usize) -> Result<RfImage> {
    if pitch == 0 {
        return Err(Error::invalid("line pitch must be >= 1"));
    }
    let g = rf.grid();
    let n = g.n_lateral.div_ceil(pitch);
    let mut grid = Grid2D::new(n, g.n_axial, g.spacing_lateral * pitch as f64, g.spacing_axial)?;
    grid.origin = g.origin;
    let values = Array2::from_shape_fn(grid.shape(), |(r, c)| rf.values()[[r, c * pitch]]);
    RfImage::new(grid, values)
}

/// Write a `[0, 1]` image as an 8-bit binary portable graymap.
pub fn write_pgm(image: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = image.dim();
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    bytes.extend(
        image
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::file(path, e))?;
    Ok(())
}
