use std::ops::Range;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::model::Psf;

/// A PSF sampled on a scatterer grid, centred, with odd dimensions and unit
/// ℓ2 norm. `taps` has shape `(2·ha + 1, 2·hl + 1)` (axial rows, lateral cols).
#[derive(Debug, Clone, PartialEq)]
pub struct PsfKernel {
    psf: Option<Psf>,
    taps: Array2<f64>,
    /// `(lateral, axial)` half extents in pixels.
    half_extents: (usize, usize),
    spacing: f64,
    /// ℓ2 norm of the taps before normalisation.
    raw_norm: f64,
}

impl PsfKernel {
    /// Wrap arbitrary centred taps (e.g. a measured or synthetic kernel).
    /// The taps are used as given; no normalisation is applied.
    pub fn from_taps(taps: Array2<f64>, spacing: f64) -> Result<Self> {
        let (rows, cols) = taps.dim();
        if rows % 2 == 0 || cols % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel dimensions must be odd, got {rows}x{cols}"
            )));
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite kernel tap"));
        }
        let raw_norm = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self {
            psf: None,
            taps,
            half_extents: (cols / 2, rows / 2),
            spacing,
            raw_norm,
        })
    }

    pub fn psf(&self) -> Option<&Psf> {
        self.psf.as_ref()
    }

    pub fn taps(&self) -> &Array2<f64> {
        &self.taps
    }

    pub fn half_extents(&self) -> (usize, usize) {
        self.half_extents
    }

    /// Axial half extent in pixels.
    pub fn half_axial(&self) -> usize {
        self.half_extents.1
    }

    /// Lateral half extent in pixels.
    pub fn half_lateral(&self) -> usize {
        self.half_extents.0
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn raw_norm(&self) -> f64 {
        self.raw_norm
    }

    pub fn l2_norm(&self) -> f64 {
        self.taps.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn matches_grid(&self, grid: &Grid2D) -> bool {
        let tol = 1e-9 * self.spacing;
        (grid.spacing_axial - self.spacing).abs() <= tol
            && (grid.spacing_lateral - self.spacing).abs() <= tol
    }
}

/// Sample `psf` on the isotropic `grid`, covering ±3σ per axis, and normalise
/// to unit ℓ2 norm.
pub fn discretize_psf(psf: &Psf, grid: &Grid2D) -> Result<PsfKernel> {
    psf.validate()?;
    if !grid.is_isotropic() {
        return Err(Error::invalid("PSF discretisation needs an isotropic grid"));
    }
    let d = grid.spacing_axial;
    let hl = (3.0 * psf.sigma_l2.sqrt() / d).ceil() as usize;
    let ha = (3.0 * psf.sigma_a2.sqrt() / d).ceil() as usize;
    let (rows, cols) = (2 * ha + 1, 2 * hl + 1);
    if rows * cols > 4 * grid.len() {
        return Err(Error::invalid(format!(
            "PSF kernel of {cols}x{rows} taps exceeds four times the {}x{} image",
            grid.n_lateral, grid.n_axial
        )));
    }
    let mut taps = Array2::from_shape_fn((rows, cols), |(r, c)| {
        let ka = r as f64 - ha as f64;
        let kl = c as f64 - hl as f64;
        psf.eval(kl * d, ka * d, ka)
    });
    let raw_norm = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
    taps /= raw_norm;
    Ok(PsfKernel {
        psf: Some(*psf),
        taps,
        half_extents: (hl, ha),
        spacing: d,
        raw_norm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    /// Depth interval `[start, end)` in mm.
    pub depth_start: f64,
    pub depth_end: f64,
    pub kernel: PsfKernel,
}

/// Depth-dependent (patchwise invariant) PSFs: each image row is convolved
/// with the kernel of the depth interval containing it.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPsfBank {
    entries: Vec<BankEntry>,
}

impl DepthPsfBank {
    pub fn single(kernel: PsfKernel) -> Self {
        Self {
            entries: vec![BankEntry {
                depth_start: f64::NEG_INFINITY,
                depth_end: f64::INFINITY,
                kernel,
            }],
        }
    }

    /// Kernels ordered by depth, separated by `boundaries` (mm, increasing,
    /// one fewer than kernels). The outer intervals extend to ±∞.
    pub fn with_boundaries(kernels: Vec<PsfKernel>, boundaries: &[f64]) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::invalid("PSF bank needs at least one kernel"));
        }
        if boundaries.len() + 1 != kernels.len() {
            return Err(Error::invalid(format!(
                "{} kernels need {} boundaries, got {}",
                kernels.len(),
                kernels.len() - 1,
                boundaries.len()
            )));
        }
        if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("bank boundaries must be strictly increasing"));
        }
        let spacing = kernels[0].spacing();
        if kernels.iter().any(|k| (k.spacing() - spacing).abs() > 1e-9 * spacing) {
            return Err(Error::invalid("all bank kernels must share one grid spacing"));
        }
        let mut starts = vec![f64::NEG_INFINITY];
        starts.extend_from_slice(boundaries);
        let mut ends = boundaries.to_vec();
        ends.push(f64::INFINITY);
        let entries = kernels
            .into_iter()
            .zip(starts.into_iter().zip(ends))
            .map(|(kernel, (depth_start, depth_end))| BankEntry {
                depth_start,
                depth_end,
                kernel,
            })
            .collect();
        Ok(Self { entries })
    }

    /// Split the depth range of `grid` into equal intervals, one per kernel.
    pub fn evenly_over(grid: &Grid2D, kernels: Vec<PsfKernel>) -> Result<Self> {
        let n = kernels.len();
        if n == 0 {
            return Err(Error::invalid("PSF bank needs at least one kernel"));
        }
        let top = grid.depth(0) - 0.5 * grid.spacing_axial;
        let depth = grid.extent().1;
        let boundaries: Vec<f64> = (1..n).map(|i| top + depth * i as f64 / n as f64).collect();
        Self::with_boundaries(kernels, &boundaries)
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The kernel whose interval contains the centre of `grid`.
    pub fn central_kernel(&self, grid: &Grid2D) -> &PsfKernel {
        let depth = grid.center().1;
        self.entries
            .iter()
            .find(|e| depth >= e.depth_start && depth < e.depth_end)
            .map(|e| &e.kernel)
            .unwrap_or(&self.entries[0].kernel)
    }

    /// Partition of the grid rows into contiguous blocks with their kernels.
    /// Empty blocks are omitted.
    pub fn row_blocks(&self, grid: &Grid2D) -> Result<Vec<(Range<usize>, &PsfKernel)>> {
        if let Some(e) = self.entries.iter().find(|e| !e.kernel.matches_grid(grid)) {
            return Err(Error::GridMismatch(format!(
                "kernel spacing {} does not match grid spacing ({}, {})",
                e.kernel.spacing(),
                grid.spacing_lateral,
                grid.spacing_axial
            )));
        }
        let mut blocks = Vec::with_capacity(self.entries.len());
        let mut row = 0usize;
        for e in &self.entries {
            let start = row;
            while row < grid.n_axial && grid.depth(row) < e.depth_end {
                row += 1;
            }
            if row > start {
                blocks.push((start..row, &e.kernel));
            }
        }
        debug_assert_eq!(row, grid.n_axial);
        Ok(blocks)
    }
}
