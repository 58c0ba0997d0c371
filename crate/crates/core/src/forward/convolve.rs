//! Depth-dependent "same"-size 2D convolution with zero padding.
//!
//! Two exact evaluation routes are provided: FFT-based block convolution
//! ([`ConvOperator`], used for dense inputs and as the matrix-free forward
//! operator of the sparse reconstruction) and direct accumulation over the
//! nonzero inputs (fast for sparse scatterer maps).

use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::psf_kernel::{DepthPsfBank, PsfKernel};
use crate::error::{Error, Result};
use crate::field::{RfImage, ScattererMap};
use crate::grid::Grid2D;

/// Smallest `n' >= n` whose prime factors are all in {2, 3, 5, 7}.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5, 7] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// 2D complex FFT of fixed size. Spectra are kept in transposed (column-major)
/// layout, which is all the convolution code needs.
pub(crate) struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(planner: &mut FftPlanner<f64>, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.rows * self.cols
    }

    /// Zero-padded forward transform of a real block placed at the origin.
    pub(crate) fn forward_real(&self, block: ArrayView2<f64>) -> Vec<Complex64> {
        let (br, bc) = block.dim();
        debug_assert!(br <= self.rows && bc <= self.cols);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len()];
        for (r, row) in block.outer_iter().enumerate() {
            let dst = &mut buf[r * self.cols..r * self.cols + bc];
            for (d, v) in dst.iter_mut().zip(row.iter()) {
                d.re = *v;
            }
        }
        // only the first `br` rows are nonzero
        self.row_fwd.process(&mut buf[..br * self.cols]);
        let mut t = transpose(&buf, self.rows, self.cols);
        self.col_fwd.process(&mut t);
        t
    }

    /// Inverse transform of a transposed spectrum, returning the real part of
    /// the `out_rows x out_cols` block starting at `(r0, c0)`.
    pub(crate) fn inverse_real_block(
        &self,
        mut spec: Vec<Complex64>,
        r0: usize,
        c0: usize,
        out_rows: usize,
        out_cols: usize,
    ) -> Array2<f64> {
        self.col_inv.process(&mut spec);
        let mut buf = transpose(&spec, self.cols, self.rows);
        self.row_inv
            .process(&mut buf[r0 * self.cols..(r0 + out_rows) * self.cols]);
        let scale = 1.0 / self.len() as f64;
        Array2::from_shape_fn((out_rows, out_cols), |(r, c)| {
            buf[(r0 + r) * self.cols + c0 + c].re * scale
        })
    }
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut dst = vec![Complex64::new(0.0, 0.0); src.len()];
    const B: usize = 32;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    dst
}

/// Kernel taps cropped to the part that can touch a `rows x cols` image.
fn cropped_taps(kernel: &PsfKernel, rows: usize, cols: usize) -> (ArrayView2<'_, f64>, usize, usize) {
    let (hl, ha) = kernel.half_extents();
    let ha_c = ha.min(rows.saturating_sub(1));
    let hl_c = hl.min(cols.saturating_sub(1));
    let view = kernel
        .taps()
        .slice(s![ha - ha_c..=ha + ha_c, hl - hl_c..=hl + hl_c]);
    (view, hl_c, ha_c)
}

struct Block {
    rows: Range<usize>,
    slab: Range<usize>,
    half_axial: usize,
    half_lateral: usize,
    fft: Fft2,
    kernel_spec: Vec<Complex64>,
    flipped_spec: Vec<Complex64>,
}

/// Matrix-free depth-dependent convolution operator on a fixed grid.
///
/// `apply` computes the forward model (row-wise kernel selection, zero padding,
/// "same" output); `adjoint` is its exact transpose.
pub struct ConvOperator {
    grid: Grid2D,
    blocks: Vec<Block>,
}

impl ConvOperator {
    pub fn new(grid: &Grid2D, bank: &DepthPsfBank) -> Result<Self> {
        let (rows, cols) = grid.shape();
        let mut planner = FftPlanner::new();
        let mut blocks = Vec::new();
        for (range, kernel) in bank.row_blocks(grid)? {
            let (taps, hl, ha) = cropped_taps(kernel, rows, cols);
            let slab = range.start.saturating_sub(ha)..(range.end + ha).min(rows);
            let (kr, kc) = taps.dim();
            let fr = next_fast_len(slab.len() + kr - 1);
            let fc = next_fast_len(cols + kc - 1);
            let fft = Fft2::new(&mut planner, fr, fc);
            let kernel_spec = fft.forward_real(taps.view());
            let flipped = taps.slice(s![..;-1, ..;-1]).to_owned();
            let flipped_spec = fft.forward_real(flipped.view());
            blocks.push(Block {
                rows: range,
                slab,
                half_axial: ha,
                half_lateral: hl,
                fft,
                kernel_spec,
                flipped_spec,
            });
        }
        Ok(Self { grid: *grid, blocks })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.dim() != self.grid.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.grid.shape(),
                actual: x.dim(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        let (rows, cols) = self.grid.shape();
        let mut y = Array2::zeros((rows, cols));
        for b in &self.blocks {
            let input = x.slice(s![b.slab.clone(), ..]);
            let mut spec = b.fft.forward_real(input);
            for (s, k) in spec.iter_mut().zip(&b.kernel_spec) {
                *s *= k;
            }
            let r0 = b.rows.start - b.slab.start + b.half_axial;
            let out = b.fft.inverse_real_block(spec, r0, b.half_lateral, b.rows.len(), cols);
            y.slice_mut(s![b.rows.clone(), ..]).assign(&out);
        }
        Ok(y)
    }

    pub fn adjoint(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&y)?;
        let (rows, cols) = self.grid.shape();
        let mut x = Array2::zeros((rows, cols));
        for b in &self.blocks {
            let mut slab = Array2::zeros((b.slab.len(), cols));
            let off = b.rows.start - b.slab.start;
            slab.slice_mut(s![off..off + b.rows.len(), ..])
                .assign(&y.slice(s![b.rows.clone(), ..]));
            let mut spec = b.fft.forward_real(slab.view());
            for (s, k) in spec.iter_mut().zip(&b.flipped_spec) {
                *s *= k;
            }
            let out = b
                .fft
                .inverse_real_block(spec, b.half_axial, b.half_lateral, b.slab.len(), cols);
            let mut dst = x.slice_mut(s![b.slab.clone(), ..]);
            dst += &out;
        }
        Ok(x)
    }

    /// Largest singular value estimate by power iteration on `AᵀA`.
    pub fn norm_estimate(&self, iterations: usize) -> Result<f64> {
        let (rows, cols) = self.grid.shape();
        // deterministic, non-degenerate start vector
        let mut v = Array2::from_shape_fn((rows, cols), |(r, c)| {
            1.0 + 0.5 * ((r * 31 + c * 17) % 13) as f64 / 13.0
        });
        let mut norm = 0.0;
        for _ in 0..iterations.max(1) {
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nv == 0.0 {
                return Ok(0.0);
            }
            v /= nv;
            let w = self.adjoint(self.apply(v.view())?.view())?;
            norm = w.iter().map(|a| a * a).sum::<f64>().sqrt().sqrt();
            v = w;
        }
        Ok(norm)
    }
}

/// Direct accumulation of every nonzero input into the output window
/// `out_rows x out_cols` (indices in the input grid).
pub(crate) fn sparse_convolve(
    input: ArrayView2<f64>,
    blocks: &[(Range<usize>, &PsfKernel)],
    out_rows: Range<usize>,
    out_cols: Range<usize>,
) -> Array2<f64> {
    let (rows, cols) = input.dim();
    let mut out = Array2::<f64>::zeros((out_rows.len(), out_cols.len()));
    let ow = out_cols.len();
    let out_slice = out.as_slice_mut().expect("standard layout");
    for (block_rows, kernel) in blocks {
        let lo = block_rows.start.max(out_rows.start);
        let hi = block_rows.end.min(out_rows.end);
        if lo >= hi {
            continue;
        }
        let (hl, ha) = kernel.half_extents();
        let taps = kernel.taps();
        let kw = taps.ncols();
        let taps = taps.as_standard_layout();
        let taps = taps.as_slice().expect("standard layout");
        let src_lo = lo.saturating_sub(ha);
        let src_hi = (hi + ha).min(rows);
        let c_lo = out_cols.start.saturating_sub(hl);
        let c_hi = (out_cols.end + hl).min(cols);
        for r in src_lo..src_hi {
            for c in c_lo..c_hi {
                let v = input[[r, c]];
                if v == 0.0 {
                    continue;
                }
                let rr_lo = lo.max(r.saturating_sub(ha));
                let rr_hi = hi.min(r + ha + 1);
                let cc_lo = out_cols.start.max(c.saturating_sub(hl));
                let cc_hi = out_cols.end.min(c + hl + 1);
                if cc_lo >= cc_hi {
                    continue;
                }
                for rr in rr_lo..rr_hi {
                    let kr = rr + ha - r;
                    let krow = &taps[kr * kw + (cc_lo + hl - c)..kr * kw + (cc_hi + hl - c)];
                    let orow = (rr - out_rows.start) * ow;
                    let dst = &mut out_slice
                        [orow + cc_lo - out_cols.start..orow + cc_hi - out_cols.start];
                    for (d, k) in dst.iter_mut().zip(krow) {
                        *d += v * k;
                    }
                }
            }
        }
    }
    out
}

fn check_bank_grid(grid: &Grid2D, bank: &DepthPsfBank) -> Result<()> {
    bank.row_blocks(grid).map(|_| ())
}

/// Convolve a scatterer map with a depth-dependent PSF bank.
///
/// Picks direct accumulation for sparse maps and FFT block convolution
/// otherwise; both routes compute the same linear map.
pub fn convolve(sc: &ScattererMap, bank: &DepthPsfBank) -> Result<RfImage> {
    let grid = *sc.grid();
    check_bank_grid(&grid, bank)?;
    let values = sc.values();
    let nnz = values.iter().filter(|v| **v != 0.0).count();
    let (rows, cols) = grid.shape();
    let blocks = bank.row_blocks(&grid)?;
    let direct_cost: f64 = blocks
        .iter()
        .map(|(_, k)| {
            let (hl, ha) = k.half_extents();
            ((2 * ha + 1).min(rows) * (2 * hl + 1).min(cols)) as f64
        })
        .sum::<f64>()
        * nnz as f64
        / blocks.len() as f64;
    let fft_cost: f64 = blocks
        .iter()
        .map(|(r, k)| {
            let (hl, ha) = k.half_extents();
            let n = ((r.len() + 4 * ha.min(rows)) * (cols + 2 * hl.min(cols))) as f64;
            // forward + inverse transform, complex arithmetic
            12.0 * n * n.log2().max(1.0)
        })
        .sum();
    let out = if direct_cost <= fft_cost {
        sparse_convolve(values.view(), &blocks, 0..rows, 0..cols)
    } else {
        ConvOperator::new(&grid, bank)?.apply(values.view())?
    };
    RfImage::new(grid, out)
}

/// Convolution restricted to an output window; the result has the window's
/// shape and lives on the corresponding sub-grid.
pub fn convolve_window(
    sc: &ScattererMap,
    bank: &DepthPsfBank,
    rows: Range<usize>,
    cols: Range<usize>,
) -> Result<Array2<f64>> {
    let grid = *sc.grid();
    if rows.end > grid.n_axial || cols.end > grid.n_lateral || rows.is_empty() || cols.is_empty() {
        return Err(Error::invalid("output window outside the grid"));
    }
    let blocks = bank.row_blocks(&grid)?;
    Ok(sparse_convolve(sc.values().view(), &blocks, rows, cols))
}
