//! Convolution-based ultrasound speckle simulation and scatterer estimation.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod field;
pub mod forward;
pub mod geo;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod phantoms;
pub mod rng;
pub mod tensor_file;

pub use error::{Error, Result};
pub use field::{EnvelopeImage, Mask, ParameterMap, RfImage, ScattererMap, TrfMap};
pub use grid::Grid2D;
pub use model::{NoiseModel, Psf, ScattererModel};
pub use rng::SimRng;
