//! Parameter-map phantoms: random piecewise-constant training maps and the
//! circular-inclusion test phantom.

use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Mask, ParameterMap};
use crate::grid::Grid2D;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeGenConfig {
    /// Size `(rows, cols)` of the coarse random pattern.
    pub coarse_dims: (usize, usize),
    /// Number of gray levels the coarse pattern is quantised to.
    pub n_levels: usize,
    /// Number of nested thresholds applied after interpolation.
    pub threshold_count: usize,
    pub mu_range: (f64, f64),
}

impl Default for ShapeGenConfig {
    fn default() -> Self {
        Self {
            coarse_dims: (8, 8),
            n_levels: 16,
            threshold_count: 3,
            mu_range: (0.0, 1.0),
        }
    }
}

impl ShapeGenConfig {
    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.coarse_dims;
        if r < 2 || c < 2 {
            return Err(Error::invalid(format!("coarse pattern {r}x{c} is smaller than 2x2")));
        }
        if self.n_levels == 0 {
            return Err(Error::invalid("n_levels must be >= 1"));
        }
        let (lo, hi) = self.mu_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("mu_range ({lo}, {hi}) is not inside [0, 1]")));
        }
        Ok(())
    }
}

/// Axial coarsening factor implied by a parameter grid whose lateral spacing
/// equals the scatterer spacing.
pub fn implied_axial_factor(grid: &Grid2D) -> usize {
    (grid.spacing_axial / grid.spacing_lateral).round().max(1.0) as usize
}

/// Random piecewise-constant map of "irregular shapes".
///
/// A coarse quantised noise pattern is bilinearly interpolated onto
/// `out_grid`, cut at `threshold_count` random quantiles, and split into
/// 4-connected regions; each region draws its own `μ ~ U(mu_range)`.
pub fn generate_random_parameter_map(
    cfg: &ShapeGenConfig,
    out_grid: &Grid2D,
    rng: &mut SimRng,
) -> Result<ParameterMap> {
    cfg.validate()?;
    let labels = random_regions(cfg, out_grid.shape(), rng);
    let n_regions = labels.iter().max().map_or(0, |m| m + 1);
    let (lo, hi) = cfg.mu_range;
    let means: Vec<f64> = (0..n_regions).map(|_| rng.uniform_in(lo, hi)).collect();
    let mu = labels.mapv(|l| means[l]);
    ParameterMap::new(*out_grid, mu, implied_axial_factor(out_grid))
}

/// Region labels `0..n` for a random shape pattern of the given shape.
pub fn random_regions(cfg: &ShapeGenConfig, shape: (usize, usize), rng: &mut SimRng) -> Array2<usize> {
    let (cr, cc) = cfg.coarse_dims;
    let levels = cfg.n_levels;
    let coarse = Array2::from_shape_fn((cr, cc), |_| {
        if levels == 1 {
            0.0
        } else {
            rng.index(levels) as f64 / (levels - 1) as f64
        }
    });
    let fine = bilinear_resize(&coarse, shape);

    let mut sorted: Vec<f64> = fine.iter().cloned().collect();
    sorted.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = (0..cfg.threshold_count)
        .map(|_| {
            let q = rng.uniform_in(0.1, 0.9);
            sorted[((sorted.len() - 1) as f64 * q).round() as usize]
        })
        .collect();
    thresholds.sort_by(f64::total_cmp);
    let classes = fine.mapv(|v| thresholds.iter().filter(|t| v > **t).count());
    connected_components(&classes)
}

/// Bilinear interpolation with pixel centres aligned on both grids.
pub fn bilinear_resize(src: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let (sr, sc) = src.dim();
    let (dr, dc) = shape;
    let map = |i: usize, n_dst: usize, n_src: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n_src - 1);
        (i0, i1, x - i0 as f64)
    };
    Array2::from_shape_fn((dr, dc), |(r, c)| {
        let (r0, r1, fr) = map(r, dr, sr);
        let (c0, c1, fc) = map(c, dc, sc);
        let top = src[[r0, c0]] * (1.0 - fc) + src[[r0, c1]] * fc;
        let bot = src[[r1, c0]] * (1.0 - fc) + src[[r1, c1]] * fc;
        top * (1.0 - fr) + bot * fr
    })
}

/// 4-connected component labelling of equal-valued pixels, labels in raster
/// order of first appearance.
pub fn connected_components(classes: &Array2<usize>) -> Array2<usize> {
    let (rows, cols) = classes.dim();
    let mut labels = Array2::from_elem((rows, cols), usize::MAX);
    let mut next = 0;
    let mut queue = VecDeque::new();
    for r in 0..rows {
        for c in 0..cols {
            if labels[[r, c]] != usize::MAX {
                continue;
            }
            let class = classes[[r, c]];
            labels[[r, c]] = next;
            queue.push_back((r, c));
            while let Some((y, x)) = queue.pop_front() {
                let neighbours = [
                    (y.wrapping_sub(1), x),
                    (y + 1, x),
                    (y, x.wrapping_sub(1)),
                    (y, x + 1),
                ];
                for (ny, nx) in neighbours {
                    if ny < rows && nx < cols && labels[[ny, nx]] == usize::MAX && classes[[ny, nx]] == class {
                        labels[[ny, nx]] = next;
                        queue.push_back((ny, nx));
                    }
                }
            }
            next += 1;
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InclusionPhantomConfig {
    /// Side length of the square phantom, mm.
    pub side: f64,
    pub inclusion_radius: f64,
    /// Inclusion centre `(lateral, axial)` in mm; `None` uses the grid centre.
    pub inclusion_center: Option<(f64, f64)>,
    pub mu_background: f64,
    pub mu_inclusion: f64,
}

impl Default for InclusionPhantomConfig {
    fn default() -> Self {
        Self {
            side: 15.0,
            inclusion_radius: 1.5,
            inclusion_center: None,
            mu_background: 0.35,
            mu_inclusion: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InclusionPhantom {
    pub map: ParameterMap,
    pub inclusion: Mask,
    pub background: Mask,
    /// Inclusion centre `(lateral, axial)`, mm.
    pub center: (f64, f64),
    pub radius: f64,
}

/// Pixels of `grid` whose centres lie within `radius` of `center`.
pub fn disk_mask(grid: &Grid2D, center: (f64, f64), radius: f64) -> Mask {
    Array2::from_shape_fn(grid.shape(), |(r, c)| {
        let (l, a) = grid.position(r, c);
        (l - center.0).powi(2) + (a - center.1).powi(2) <= radius * radius
    })
}

/// Two-valued phantom with a circular inclusion, plus its region masks.
pub fn make_inclusion_phantom(cfg: &InclusionPhantomConfig, grid: &Grid2D) -> Result<InclusionPhantom> {
    for mu in [cfg.mu_background, cfg.mu_inclusion] {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::invalid(format!("phantom mean {mu} outside [0, 1]")));
        }
    }
    if !(cfg.inclusion_radius > 0.0) || cfg.inclusion_radius * 2.0 > cfg.side {
        return Err(Error::invalid("inclusion must fit inside the phantom"));
    }
    let center = cfg.inclusion_center.unwrap_or_else(|| grid.center());
    let (w, h) = grid.extent();
    let lo = (grid.origin.0 - 0.5 * grid.spacing_lateral, grid.origin.1 - 0.5 * grid.spacing_axial);
    let r = cfg.inclusion_radius;
    let inside = center.0 - r >= lo.0 - 1e-9
        && center.0 + r <= lo.0 + w + 1e-9
        && center.1 - r >= lo.1 - 1e-9
        && center.1 + r <= lo.1 + h + 1e-9;
    if !inside {
        return Err(Error::invalid(format!(
            "inclusion at ({:.3}, {:.3}) mm with radius {r} mm leaves the grid",
            center.0, center.1
        )));
    }
    let inclusion = disk_mask(grid, center, r);
    let background = inclusion.mapv(|v| !v);
    let mu = inclusion.mapv(|v| if v { cfg.mu_inclusion } else { cfg.mu_background });
    let map = ParameterMap::new(*grid, mu, implied_axial_factor(grid))?;
    Ok(InclusionPhantom {
        map,
        inclusion,
        background,
        center,
        radius: r,
    })
}
