//! Scatterer-recovery methods: envelope sampling, Wiener TRF, sparse RLAD
//! reconstruction and learned parameter-map regression.

mod psf_fit;
mod rlad;
mod wiener;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use psf_fit::{fit_psf_params, nelder_mead, PsfFit};
pub use rlad::{objective, scat_rec, solve, write_trace_csv, RladConfig, RladOperator, RladResult};
pub use wiener::{circular_convolve, normal_equation_residual, wiener_trf, wrap_kernel, WienerConfig};

use crate::error::{Error, Result};
use crate::field::{EnvelopeImage, ParameterMap, ScattererMap};
use crate::forward::sample_scatterers;
use crate::geo::resample_bilinear;
use crate::grid::Grid2D;
use crate::model::ScattererModel;
use crate::neural::train::network_input;
use crate::neural::NetworkWeights;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SampleEnv,
    Trf,
    ScatRec,
    ScatParam,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SampleEnv, Method::Trf, Method::ScatRec, Method::ScatParam];

    pub fn name(self) -> &'static str {
        match self {
            Method::SampleEnv => "sample-env",
            Method::Trf => "trf",
            Method::ScatRec => "scat-rec",
            Method::ScatParam => "scat-param",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

/// Occupied positions drawn with probability `ρs`; each keeps the envelope
/// value at its position as a fixed amplitude. The envelope is bilinearly
/// resampled when `grid` differs from its own.
pub fn sample_env(env: &EnvelopeImage, model: &ScattererModel, grid: &Grid2D, rng: &mut SimRng) -> Result<ScattererMap> {
    model.validate()?;
    let values = if env.grid() == grid {
        env.values().clone()
    } else {
        resample_bilinear(env.values(), env.grid(), grid)
    };
    let out = values.mapv(|v| if rng.bernoulli(model.rho_s) { v } else { 0.0 });
    ScattererMap::new(*grid, out)
}

/// Rescale an envelope so its mean equals `reference_mean`.
pub fn calibrate_intensity(env: &EnvelopeImage, reference_mean: f64) -> Result<EnvelopeImage> {
    if !(reference_mean > 0.0) || !reference_mean.is_finite() {
        return Err(Error::invalid(format!("reference mean {reference_mean} must be > 0")));
    }
    let mean = env.mean();
    if !(mean > 0.0) {
        return Err(Error::numeric("cannot calibrate an envelope with zero mean"));
    }
    env.scaled(reference_mean / mean)
}

/// Raw (unclamped) network output on the axially coarsened grid.
pub fn predict_raw(env: &EnvelopeImage, weights: &NetworkWeights) -> Result<Array2<f64>> {
    let (rows, cols) = env.grid().shape();
    let r = weights.meta.axial_factor;
    if rows % 16 != 0 || rows % r != 0 {
        return Err(Error::invalid(format!(
            "envelope with {rows} axial samples is not divisible by 16 and R={r}"
        )));
    }
    let x = network_input::<f32>(env.values(), weights.meta.reference_mean);
    let y = weights.net.forward(&x)?;
    let out = y.index_axis(ndarray::Axis(0), 0).mapv(|v| v as f64);
    if out.dim() != (rows / r, cols) {
        return Err(Error::ShapeMismatch {
            expected: (rows / r, cols),
            actual: out.dim(),
        });
    }
    Ok(out)
}

/// Predict the parameter map (clamped to `[0, 1]`) and sample a scatterer map
/// from it on the envelope grid.
pub fn scat_param(
    env: &EnvelopeImage,
    weights: &NetworkWeights,
    model: &ScattererModel,
    rng: &mut SimRng,
) -> Result<(ParameterMap, ScattererMap)> {
    let r = weights.meta.axial_factor;
    if model.axial_factor != r {
        return Err(Error::invalid(format!(
            "scatterer model uses R={} but the network was trained with R={r}",
            model.axial_factor
        )));
    }
    let raw = predict_raw(env, weights)?;
    let coarse = env.grid().coarsen_axial(r)?;
    let pm = ParameterMap::from_raw_clamped(coarse, raw, r)?;
    let sc = sample_scatterers(&pm, model, env.grid(), rng)?;
    Ok((pm, sc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{build_network, Network};

    fn env(g: Grid2D, v: f64) -> EnvelopeImage {
        EnvelopeImage::new(g, Array2::from_elem(g.shape(), v)).unwrap()
    }

    #[test]
    fn sample_env_constant_and_empty() {
        let g = Grid2D::scatterer(40, 40, 40.0, 1540.0).unwrap();
        let model = ScattererModel::default();
        let sc = sample_env(&env(g, 0.7), &model, &g, &mut SimRng::new(1)).unwrap();
        assert!(sc.values().iter().all(|v| *v == 0.0 || *v == 0.7));
        let none = ScattererModel { rho_s: 0.0, ..model };
        assert_eq!(sample_env(&env(g, 0.7), &none, &g, &mut SimRng::new(1)).unwrap().nonzero_count(), 0);
    }

    #[test]
    fn sample_env_occupancy_is_binomial() {
        let g = Grid2D::scatterer(200, 200, 40.0, 1540.0).unwrap();
        let model = ScattererModel::default();
        let n = sample_env(&env(g, 1.0), &model, &g, &mut SimRng::new(2)).unwrap().nonzero_count() as f64;
        let (mean, sd) = (0.05 * 40000.0, (40000.0f64 * 0.05 * 0.95).sqrt());
        assert!((n - mean).abs() < 3.0 * sd);
    }

    #[test]
    fn sample_env_keeps_envelope_values() {
        let g = Grid2D::scatterer(30, 30, 40.0, 1540.0).unwrap();
        let vals = Array2::from_shape_fn(g.shape(), |(r, c)| (r * 30 + c) as f64 + 1.0);
        let e = EnvelopeImage::new(g, vals.clone()).unwrap();
        let sc = sample_env(&e, &ScattererModel { rho_s: 0.3, ..Default::default() }, &g, &mut SimRng::new(3)).unwrap();
        for ((idx, v), orig) in sc.values().indexed_iter().zip(vals.iter()) {
            assert!(*v == 0.0 || v == orig, "{idx:?}");
        }
    }

    #[test]
    fn sample_env_resamples_onto_other_grid() {
        let src = Grid2D::new(10, 10, 0.1, 0.1).unwrap();
        let dst = Grid2D::new(19, 19, 0.05, 0.05).unwrap();
        let sc = sample_env(&env(src, 0.25), &ScattererModel { rho_s: 1.0, ..Default::default() }, &dst, &mut SimRng::new(0)).unwrap();
        assert!(sc.values().iter().all(|v| (*v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn calibration() {
        let g = Grid2D::new(4, 4, 1.0, 1.0).unwrap();
        let e = EnvelopeImage::new(g, Array2::from_shape_fn((4, 4), |(r, c)| (r + c) as f64)).unwrap();
        let a = calibrate_intensity(&e, 0.2).unwrap();
        assert!((a.mean() - 0.2).abs() < 1e-12);
        let b = calibrate_intensity(&e.scaled(7.0).unwrap(), 0.2).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        let same = calibrate_intensity(&a, 0.2).unwrap();
        assert!(same.values().iter().zip(a.values()).all(|(x, y)| (x - y).abs() < 1e-15));
        assert!(calibrate_intensity(&env(g, 0.0), 0.2).is_err());
    }

    fn weights(bias: f32) -> NetworkWeights {
        let mut net = Network::<f32>::init(build_network(4, 2).unwrap(), &mut SimRng::new(1)).unwrap();
        let last = net.params_mut().last_mut().unwrap().as_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(bias);
        NetworkWeights::new(net, 4, 2, 0.15, 0, 0)
    }

    #[test]
    fn scat_param_clamps_and_is_deterministic() {
        let g = Grid2D::scatterer(16, 64, 40.0, 1540.0).unwrap();
        let e = env(g, 0.15);
        let model = ScattererModel::default();
        let (pm, _) = scat_param(&e, &weights(3.0), &model, &mut SimRng::new(1)).unwrap();
        assert!(pm.mu().iter().all(|v| *v == 1.0));
        assert_eq!(pm.grid().shape(), (16, 16));
        let (pm0, _) = scat_param(&e, &weights(-1.0), &model, &mut SimRng::new(1)).unwrap();
        assert!(pm0.mu().iter().all(|v| *v == 0.0));

        let w = NetworkWeights::new(
            Network::init(build_network(4, 2).unwrap(), &mut SimRng::new(5)).unwrap(),
            4,
            2,
            0.15,
            0,
            0,
        );
        let (a, _) = scat_param(&e, &w, &model, &mut SimRng::new(1)).unwrap();
        let (b, _) = scat_param(&e, &w, &model, &mut SimRng::new(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scat_param_rejects_bad_dims() {
        let g = Grid2D::scatterer(16, 60, 40.0, 1540.0).unwrap();
        assert!(scat_param(&env(g, 0.1), &weights(0.5), &ScattererModel::default(), &mut SimRng::new(0)).is_err());
        let g = Grid2D::scatterer(16, 64, 40.0, 1540.0).unwrap();
        let m = ScattererModel { axial_factor: 8, ..Default::default() };
        assert!(scat_param(&env(g, 0.1), &weights(0.5), &m, &mut SimRng::new(0)).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("foo".parse::<Method>().is_err());
    }
}
