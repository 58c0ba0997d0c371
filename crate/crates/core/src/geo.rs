//! Rotation and axial compression of scatterer maps (as point sets) and of
//! dense fields (by bilinear resampling).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScattererMap, TrfMap};
use crate::grid::Grid2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TransformKind {
    /// Counter-clockwise rotation in the (lateral, axial) plane, degrees.
    Rotation { angle_deg: f64 },
    /// Axial strain `e`: axial offsets from the centre shrink by `1 - e`.
    AxialCompression { strain: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub kind: TransformKind,
    /// Centre `(lateral, axial)`, mm.
    pub center: (f64, f64),
}

impl Transform {
    pub fn rotation(angle_deg: f64, center: (f64, f64)) -> Result<Self> {
        let t = Self {
            kind: TransformKind::Rotation { angle_deg },
            center,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn compression(strain: f64, center: (f64, f64)) -> Result<Self> {
        let t = Self {
            kind: TransformKind::AxialCompression { strain },
            center,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn identity(center: (f64, f64)) -> Self {
        Self {
            kind: TransformKind::Rotation { angle_deg: 0.0 },
            center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TransformKind::Rotation { angle_deg } if !angle_deg.is_finite() => {
                Err(Error::invalid("rotation angle must be finite"))
            }
            TransformKind::AxialCompression { strain } if !(0.0..0.9).contains(&strain) => {
                Err(Error::invalid(format!("strain {strain} outside [0, 0.9)")))
            }
            _ => Ok(()),
        }
    }

    /// Image of the point `(lateral, axial)`.
    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (cl, ca) = self.center;
        let (dl, da) = (p.0 - cl, p.1 - ca);
        match self.kind {
            TransformKind::Rotation { angle_deg } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                (cl + c * dl - s * da, ca + s * dl + c * da)
            }
            TransformKind::AxialCompression { strain } => (p.0, ca + da * (1.0 - strain)),
        }
    }

    /// Pre-image of the point `(lateral, axial)`.
    pub fn invert(&self, p: (f64, f64)) -> (f64, f64) {
        let (cl, ca) = self.center;
        let (dl, da) = (p.0 - cl, p.1 - ca);
        match self.kind {
            TransformKind::Rotation { angle_deg } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                (cl + c * dl + s * da, ca - s * dl + c * da)
            }
            TransformKind::AxialCompression { strain } => (p.0, ca + da / (1.0 - strain)),
        }
    }

    /// Scalar describing the transform (angle in degrees or strain fraction).
    pub fn value(&self) -> f64 {
        match self.kind {
            TransformKind::Rotation { angle_deg } => angle_deg,
            TransformKind::AxialCompression { strain } => strain,
        }
    }
}

/// Move every nonzero scatterer as a point and re-bin to the nearest pixel of
/// the same grid. Colliding amplitudes add; points leaving the grid are dropped.
pub fn transform_scatterers(sc: &ScattererMap, t: &Transform) -> Result<ScattererMap> {
    t.validate()?;
    let grid = *sc.grid();
    let mut out = Array2::zeros(grid.shape());
    for ((r, c), &v) in sc.values().indexed_iter() {
        if v == 0.0 {
            continue;
        }
        let (l, a) = t.apply(grid.position(r, c));
        if let Some(idx) = grid.nearest_index(l, a) {
            out[idx] += v;
        }
    }
    ScattererMap::new(grid, out)
}

/// Bilinear interpolation at the continuous index `(row, col)`. Samples
/// outside the array use `outside`, or the nearest edge value if `None`.
pub fn bilinear_at(values: &Array2<f64>, row: f64, col: f64, outside: Option<f64>) -> f64 {
    let (rows, cols) = values.dim();
    let (rmax, cmax) = ((rows - 1) as f64, (cols - 1) as f64);
    if let Some(fill) = outside {
        if row < 0.0 || col < 0.0 || row > rmax || col > cmax || row.is_nan() || col.is_nan() {
            return fill;
        }
    }
    let row = row.clamp(0.0, rmax);
    let col = col.clamp(0.0, cmax);
    let (r0, c0) = (row.floor() as usize, col.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(rows - 1), (c0 + 1).min(cols - 1));
    let (fr, fc) = (row - r0 as f64, col - c0 as f64);
    let top = values[[r0, c0]] * (1.0 - fc) + values[[r0, c1]] * fc;
    let bot = values[[r1, c0]] * (1.0 - fc) + values[[r1, c1]] * fc;
    top * (1.0 - fr) + bot * fr
}

/// Resample a field from `src` onto the pixel positions of `dst`, clamping at
/// the edges.
pub fn resample_bilinear(values: &Array2<f64>, src: &Grid2D, dst: &Grid2D) -> Array2<f64> {
    Array2::from_shape_fn(dst.shape(), |(r, c)| {
        let (l, a) = dst.position(r, c);
        let (fr, fc) = src.fractional_index(l, a);
        bilinear_at(values, fr, fc, None)
    })
}

/// Warp a dense field: each output pixel takes the bilinearly interpolated
/// value at its pre-image. Content from outside the input is zero.
pub fn transform_trf(trf: &TrfMap, t: &Transform) -> Result<TrfMap> {
    t.validate()?;
    let grid = *trf.grid();
    let out = warp(trf.values(), &grid, t);
    TrfMap::new(grid, out)
}

pub(crate) fn warp(values: &Array2<f64>, grid: &Grid2D, t: &Transform) -> Array2<f64> {
    Array2::from_shape_fn(grid.shape(), |(r, c)| {
        let (l, a) = t.invert(grid.position(r, c));
        let (fr, fc) = grid.fractional_index(l, a);
        bilinear_at(values, fr, fc, Some(0.0))
    })
}

/// Pixels whose pre-images under every transform in `ts` stay at least
/// `margin` pixels inside the grid.
pub fn valid_region(grid: &Grid2D, ts: &[Transform], margin: f64) -> Array2<bool> {
    let (rows, cols) = grid.shape();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        ts.iter().all(|t| {
            let (l, a) = t.invert(grid.position(r, c));
            let (fr, fc) = grid.fractional_index(l, a);
            fr >= margin && fc >= margin && fr <= rows as f64 - 1.0 - margin && fc <= cols as f64 - 1.0 - margin
        }) && {
            let (fr, fc) = (r as f64, c as f64);
            fr >= margin && fc >= margin && fr <= rows as f64 - 1.0 - margin && fc <= cols as f64 - 1.0 - margin
        }
    })
}
