//! Grid-attached 2D fields: scatterer maps, parameter maps, RF and envelope
//! images, and Wiener reflectivity estimates.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::Grid2D;

fn check_dims(grid: &Grid2D, values: &Array2<f64>) -> Result<()> {
    if values.dim() != grid.shape() {
        return Err(Error::ShapeMismatch {
            expected: grid.shape(),
            actual: values.dim(),
        });
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("non-finite value {v} in field")));
    }
    Ok(())
}

macro_rules! grid_field {
    ($(#[$meta:meta])* $name:ident, $role:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            grid: Grid2D,
            values: Array2<f64>,
        }

        impl $name {
            /// Role string stored in tensor files.
            pub const ROLE: &'static str = $role;

            pub fn grid(&self) -> &Grid2D {
                &self.grid
            }

            pub fn values(&self) -> &Array2<f64> {
                &self.values
            }

            pub fn into_values(self) -> Array2<f64> {
                self.values
            }

            pub fn zeros(grid: Grid2D) -> Self {
                Self {
                    values: Array2::zeros(grid.shape()),
                    grid,
                }
            }

            pub fn mean(&self) -> f64 {
                self.values.mean().unwrap_or(0.0)
            }
        }
    };
}

grid_field!(
    /// Fine-grid scatterer amplitudes (unitless reflectivity).
    ScattererMap,
    "scatterers"
);
grid_field!(
    /// Unconstrained (signed) Wiener deconvolution result on the image grid.
    TrfMap,
    "trf"
);
grid_field!(
    /// Radio-frequency image.
    RfImage,
    "rf"
);
grid_field!(
    /// Demodulated envelope, nonnegative.
    EnvelopeImage,
    "envelope"
);

impl ScattererMap {
    pub fn new(grid: Grid2D, values: Array2<f64>) -> Result<Self> {
        check_dims(&grid, &values)?;
        Ok(Self { grid, values })
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            values: &self.values * factor,
        }
    }
}

impl TrfMap {
    pub fn new(grid: Grid2D, values: Array2<f64>) -> Result<Self> {
        check_dims(&grid, &values)?;
        Ok(Self { grid, values })
    }
}

impl RfImage {
    pub fn new(grid: Grid2D, values: Array2<f64>) -> Result<Self> {
        check_dims(&grid, &values)?;
        Ok(Self { grid, values })
    }

    pub fn mean_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }
}

impl EnvelopeImage {
    pub fn new(grid: Grid2D, values: Array2<f64>) -> Result<Self> {
        check_dims(&grid, &values)?;
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::invalid(format!("negative envelope value {v}")));
        }
        Ok(Self { grid, values })
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.grid, &self.values * factor)
    }
}

/// Map of Gaussian-mean scattering strength on an axially coarsened grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMap {
    grid: Grid2D,
    mu: Array2<f64>,
    axial_factor: usize,
}

impl ParameterMap {
    pub const ROLE: &'static str = "parameter_map";

    /// `grid` is the (coarse) grid the values live on; `axial_factor` is the
    /// ratio between its axial spacing and the scatterer grid's.
    pub fn new(grid: Grid2D, mu: Array2<f64>, axial_factor: usize) -> Result<Self> {
        check_dims(&grid, &mu)?;
        if axial_factor == 0 {
            return Err(Error::invalid("axial coarsening factor must be >= 1"));
        }
        if let Some(v) = mu.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("parameter value {v} outside [0, 1]")));
        }
        Ok(Self {
            grid,
            mu,
            axial_factor,
        })
    }

    /// Build from raw (unclamped) values, clamping into `[0, 1]`.
    pub fn from_raw_clamped(grid: Grid2D, raw: Array2<f64>, axial_factor: usize) -> Result<Self> {
        Self::new(grid, raw.mapv(|v| v.clamp(0.0, 1.0)), axial_factor)
    }

    pub fn constant(grid: Grid2D, value: f64, axial_factor: usize) -> Result<Self> {
        Self::new(grid, Array2::from_elem(grid.shape(), value), axial_factor)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn mu(&self) -> &Array2<f64> {
        &self.mu
    }

    pub fn axial_factor(&self) -> usize {
        self.axial_factor
    }

    pub fn into_values(self) -> Array2<f64> {
        self.mu
    }

    /// Nearest-neighbour replication onto a finer grid. The target spacing must
    /// divide this map's spacing by an integer on both axes.
    pub fn upsample(&self, target: &Grid2D) -> Result<ParameterMap> {
        let rl = integer_ratio(self.grid.spacing_lateral, target.spacing_lateral)
            .ok_or_else(|| Error::invalid("lateral spacing ratio is not an integer"))?;
        let ra = integer_ratio(self.grid.spacing_axial, target.spacing_axial)
            .ok_or_else(|| Error::invalid("axial spacing ratio is not an integer"))?;
        if target.n_lateral != self.grid.n_lateral * rl || target.n_axial != self.grid.n_axial * ra
        {
            return Err(Error::GridMismatch(format!(
                "target {}x{} is not {}x{} times {}x{}",
                target.n_lateral, target.n_axial, rl, ra, self.grid.n_lateral, self.grid.n_axial
            )));
        }
        let mu = Array2::from_shape_fn(target.shape(), |(r, c)| self.mu[[r / ra, c / rl]]);
        let axial_factor = if self.axial_factor % ra == 0 {
            self.axial_factor / ra
        } else {
            1
        };
        Ok(ParameterMap {
            grid: *target,
            mu,
            axial_factor,
        })
    }

    /// Fine (scatterer-resolution) grid matching this coarse map.
    pub fn fine_grid(&self) -> Result<Grid2D> {
        self.grid.refine_axial(self.axial_factor)
    }

    /// Replicate onto the scatterer grid implied by the axial factor.
    pub fn to_fine(&self) -> Result<ParameterMap> {
        let fine = self.fine_grid()?;
        self.upsample(&fine)
    }
}

fn integer_ratio(coarse: f64, fine: f64) -> Option<usize> {
    let r = coarse / fine;
    let n = r.round();
    if n >= 1.0 && (r - n).abs() < 1e-6 {
        Some(n as usize)
    } else {
        None
    }
}

/// Boolean region mask on a grid.
pub type Mask = Array2<bool>;
