//! Regular 2D sampling grids in physical coordinates.
//!
//! Arrays laid out on a grid have shape `(n_axial, n_lateral)`: rows run along
//! depth (axial), columns across beam lines (lateral). Coordinates are in mm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default speed of sound in soft tissue, m/s.
pub const SPEED_OF_SOUND: f64 = 1540.0;

/// Axial distance covered by one RF sample in pulse-echo mode, in mm.
///
/// `fs` is in MHz and `c` in m/s.
pub fn rf_sample_spacing(fs_mhz: f64, c: f64) -> f64 {
    // (m/s) / (1/s) = m, * 1e3 -> mm
    c / (2.0 * fs_mhz * 1e6) * 1e3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub n_lateral: usize,
    pub n_axial: usize,
    pub spacing_lateral: f64,
    pub spacing_axial: f64,
    /// Physical position `(lateral, axial)` of pixel `[0, 0]`.
    pub origin: (f64, f64),
}

impl Grid2D {
    pub fn new(
        n_lateral: usize,
        n_axial: usize,
        spacing_lateral: f64,
        spacing_axial: f64,
    ) -> Result<Self> {
        if n_lateral == 0 || n_axial == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {n_lateral}x{n_axial}"
            )));
        }
        if !(spacing_lateral > 0.0 && spacing_axial > 0.0)
            || !spacing_lateral.is_finite()
            || !spacing_axial.is_finite()
        {
            return Err(Error::invalid(format!(
                "grid spacings must be positive, got ({spacing_lateral}, {spacing_axial})"
            )));
        }
        Ok(Self {
            n_lateral,
            n_axial,
            spacing_lateral,
            spacing_axial,
            origin: (0.0, 0.0),
        })
    }

    /// Isotropic scatterer grid at the native axial resolution of RF data
    /// sampled at `fs_mhz` with speed of sound `c` (m/s).
    pub fn scatterer(n_lateral: usize, n_axial: usize, fs_mhz: f64, c: f64) -> Result<Self> {
        if !(fs_mhz > 0.0) || !(c > 0.0) {
            return Err(Error::invalid(format!(
                "sampling frequency and speed of sound must be positive, got fs={fs_mhz}, c={c}"
            )));
        }
        let d = rf_sample_spacing(fs_mhz, c);
        Self::new(n_lateral, n_axial, d, d)
    }

    pub fn with_origin(mut self, lateral: f64, axial: f64) -> Self {
        self.origin = (lateral, axial);
        self
    }

    /// Array shape `(rows, cols) = (n_axial, n_lateral)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.n_axial, self.n_lateral)
    }

    pub fn len(&self) -> usize {
        self.n_axial * self.n_lateral
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_isotropic(&self) -> bool {
        (self.spacing_lateral - self.spacing_axial).abs()
            <= 1e-9 * self.spacing_lateral.max(self.spacing_axial)
    }

    /// Physical extent `(width, depth)` in mm, pixel-edge to pixel-edge.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.n_lateral as f64 * self.spacing_lateral,
            self.n_axial as f64 * self.spacing_axial,
        )
    }

    /// Physical position of the grid centre.
    pub fn center(&self) -> (f64, f64) {
        (
            self.origin.0 + 0.5 * (self.n_lateral as f64 - 1.0) * self.spacing_lateral,
            self.origin.1 + 0.5 * (self.n_axial as f64 - 1.0) * self.spacing_axial,
        )
    }

    /// Physical `(lateral, axial)` position of array element `[row, col]`.
    pub fn position(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + col as f64 * self.spacing_lateral,
            self.origin.1 + row as f64 * self.spacing_axial,
        )
    }

    /// Depth (axial position) of row `row`.
    pub fn depth(&self, row: usize) -> f64 {
        self.origin.1 + row as f64 * self.spacing_axial
    }

    /// Continuous `(row, col)` index of a physical position.
    pub fn fractional_index(&self, lateral: f64, axial: f64) -> (f64, f64) {
        (
            (axial - self.origin.1) / self.spacing_axial,
            (lateral - self.origin.0) / self.spacing_lateral,
        )
    }

    /// Nearest array element for a physical position, if it falls on the grid.
    pub fn nearest_index(&self, lateral: f64, axial: f64) -> Option<(usize, usize)> {
        let (r, c) = self.fractional_index(lateral, axial);
        let (r, c) = (r.round(), c.round());
        if r < 0.0 || c < 0.0 || r >= self.n_axial as f64 || c >= self.n_lateral as f64 {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    /// Grid with the axial sampling coarsened by an integer factor. Each coarse
    /// pixel covers `factor` consecutive fine rows and sits at their centre.
    pub fn coarsen_axial(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_axial % factor != 0 {
            return Err(Error::invalid(format!(
                "axial size {} is not divisible by factor {factor}",
                self.n_axial
            )));
        }
        let mut g = Self::new(
            self.n_lateral,
            self.n_axial / factor,
            self.spacing_lateral,
            self.spacing_axial * factor as f64,
        )?;
        g.origin = (
            self.origin.0,
            self.origin.1 + 0.5 * (factor as f64 - 1.0) * self.spacing_axial,
        );
        Ok(g)
    }

    /// Inverse of [`Grid2D::coarsen_axial`].
    pub fn refine_axial(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("refinement factor must be positive"));
        }
        let fine_spacing = self.spacing_axial / factor as f64;
        let mut g = Self::new(
            self.n_lateral,
            self.n_axial * factor,
            self.spacing_lateral,
            fine_spacing,
        )?;
        g.origin = (
            self.origin.0,
            self.origin.1 - 0.5 * (factor as f64 - 1.0) * fine_spacing,
        );
        Ok(g)
    }

    /// Same physical sampling, different size; the new grid is centred on the
    /// same point as `self`.
    pub fn resized_centered(&self, n_lateral: usize, n_axial: usize) -> Result<Self> {
        let mut g = Self::new(n_lateral, n_axial, self.spacing_lateral, self.spacing_axial)?;
        let (cl, ca) = self.center();
        g.origin = (
            cl - 0.5 * (n_lateral as f64 - 1.0) * self.spacing_lateral,
            ca - 0.5 * (n_axial as f64 - 1.0) * self.spacing_axial,
        );
        Ok(g)
    }

    pub fn same_sampling(&self, other: &Grid2D) -> bool {
        self.n_lateral == other.n_lateral
            && self.n_axial == other.n_axial
            && rel_eq(self.spacing_lateral, other.spacing_lateral)
            && rel_eq(self.spacing_axial, other.spacing_axial)
    }
}

fn rel_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scatterer_grid_spacing() {
        let g = Grid2D::scatterer(64, 512, 40.0, 1540.0).unwrap();
        assert!((g.spacing_axial - 0.01925).abs() < 1e-12);
        assert!((g.spacing_lateral - 0.01925).abs() < 1e-12);
        assert_eq!(g.shape(), (512, 64));

        let g = Grid2D::scatterer(1, 1, 40.0, 1540.0).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g.spacing_axial - 0.01925).abs() < 1e-12);

        let g = Grid2D::scatterer(64, 512, 20.0, 1540.0).unwrap();
        assert!((g.spacing_axial - 0.0385).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(Grid2D::scatterer(0, 4, 40.0, 1540.0).is_err());
        assert!(Grid2D::scatterer(4, 0, 40.0, 1540.0).is_err());
        assert!(Grid2D::scatterer(4, 4, 0.0, 1540.0).is_err());
        assert!(Grid2D::scatterer(4, 4, 40.0, -1.0).is_err());
        assert!(Grid2D::new(4, 4, 0.1, 0.0).is_err());
    }

    #[test]
    fn coarsen_refine_are_inverse() {
        let g = Grid2D::scatterer(8, 64, 40.0, 1540.0).unwrap().with_origin(-1.0, 2.0);
        let c = g.coarsen_axial(4).unwrap();
        assert_eq!(c.n_axial, 16);
        let f = c.refine_axial(4).unwrap();
        assert!(f.same_sampling(&g));
        assert!((f.origin.1 - g.origin.1).abs() < 1e-12);
        assert!(g.coarsen_axial(3).is_err());
    }

    proptest! {
        #[test]
        fn index_position_round_trip(
            nl in 1usize..300, na in 1usize..300,
            dl in 0.001f64..1.0, da in 0.001f64..1.0,
            ol in -50.0f64..50.0, oa in -50.0f64..50.0,
            fr in 0.0f64..1.0, fc in 0.0f64..1.0,
        ) {
            let g = Grid2D::new(nl, na, dl, da).unwrap().with_origin(ol, oa);
            let row = ((na as f64 - 1.0) * fr).round() as usize;
            let col = ((nl as f64 - 1.0) * fc).round() as usize;
            let (l, a) = g.position(row, col);
            prop_assert_eq!(g.nearest_index(l, a), Some((row, col)));
        }
    }
}
