use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{RfImage, TrfMap};
use crate::forward::{Fft2, PsfKernel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WienerConfig {
    /// Regularisation ε added to `|H|²`. `None` uses `1e-2 · max|H|²`.
    pub nsr: Option<f64>,
}

impl WienerConfig {
    pub fn with_nsr(nsr: f64) -> Self {
        Self { nsr: Some(nsr) }
    }

    /// ε from a known relative noise level.
    pub fn from_noise_level(level: f64) -> Self {
        Self::with_nsr(level * level)
    }
}

/// Kernel taps wrapped onto a `rows x cols` torus with the kernel centre at
/// the origin. Taps beyond the image size fold back and add.
pub fn wrap_kernel(kernel: &PsfKernel, rows: usize, cols: usize) -> Array2<f64> {
    let (hl, ha) = kernel.half_extents();
    let mut out = Array2::zeros((rows, cols));
    for ((r, c), v) in kernel.taps().indexed_iter() {
        let rr = (r as isize - ha as isize).rem_euclid(rows as isize) as usize;
        let cc = (c as isize - hl as isize).rem_euclid(cols as isize) as usize;
        out[[rr, cc]] += v;
    }
    out
}

/// Spectrum of the wrapped kernel in the (transposed) layout of the 2D FFT.
fn kernel_spectrum(fft: &Fft2, kernel: &PsfKernel, rows: usize, cols: usize) -> Vec<Complex64> {
    fft.forward_real(wrap_kernel(kernel, rows, cols).view())
}

/// Circular Wiener deconvolution `X = conj(H) B / (|H|² + ε)` on the RF grid.
pub fn wiener_trf(rf: &RfImage, kernel: &PsfKernel, cfg: &WienerConfig) -> Result<TrfMap> {
    let grid = *rf.grid();
    if (kernel.spacing() - grid.spacing_axial).abs() > 1e-9 * grid.spacing_axial {
        return Err(Error::GridMismatch(format!(
            "kernel spacing {} differs from the RF axial spacing {}",
            kernel.spacing(),
            grid.spacing_axial
        )));
    }
    let (rows, cols) = grid.shape();
    let fft = Fft2::new(&mut FftPlanner::new(), rows, cols);
    let h = kernel_spectrum(&fft, kernel, rows, cols);
    let max_h2 = h.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    if max_h2 == 0.0 {
        return Err(Error::numeric("kernel has an all-zero spectrum"));
    }
    let eps = match cfg.nsr {
        None => 1e-2 * max_h2,
        Some(e) if e < 0.0 || !e.is_finite() => {
            return Err(Error::invalid(format!("Wiener regularisation {e} must be >= 0")));
        }
        Some(e) => e,
    };
    if eps == 0.0 {
        let min_h2 = h.iter().map(|v| v.norm_sqr()).fold(f64::INFINITY, f64::min);
        if min_h2 <= 1e-12 * max_h2 {
            return Err(Error::invalid(
                "unregularised Wiener filter: the kernel spectrum vanishes at some frequency",
            ));
        }
    }
    let mut spec = fft.forward_real(rf.values().view());
    for (b, h) in spec.iter_mut().zip(&h) {
        *b = h.conj() * *b / (h.norm_sqr() + eps);
    }
    let x = fft.inverse_real_block(spec, 0, 0, rows, cols);
    TrfMap::new(grid, x)
}

/// Circular convolution with the wrapped kernel (the model the Wiener filter
/// inverts).
pub fn circular_convolve(x: &Array2<f64>, kernel: &PsfKernel) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let fft = Fft2::new(&mut FftPlanner::new(), rows, cols);
    let h = kernel_spectrum(&fft, kernel, rows, cols);
    let mut spec = fft.forward_real(x.view());
    for (s, h) in spec.iter_mut().zip(&h) {
        *s *= h;
    }
    fft.inverse_real_block(spec, 0, 0, rows, cols)
}

/// Largest relative violation of `(|H|² + ε) X = conj(H) B` over frequencies.
pub fn normal_equation_residual(rf: &RfImage, kernel: &PsfKernel, eps: f64, trf: &TrfMap) -> f64 {
    let (rows, cols) = rf.grid().shape();
    let fft = Fft2::new(&mut FftPlanner::new(), rows, cols);
    let h = kernel_spectrum(&fft, kernel, rows, cols);
    let b = fft.forward_real(rf.values().view());
    let x = fft.forward_real(trf.values().view());
    let scale = b
        .iter()
        .zip(&h)
        .map(|(b, h)| (h.conj() * b).norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    h.iter()
        .zip(&b)
        .zip(&x)
        .map(|((h, b), x)| ((h.norm_sqr() + eps) * x - h.conj() * b).norm() / scale)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::discretize_psf;
    use crate::grid::Grid2D;
    use crate::model::Psf;
    use crate::rng::SimRng;

    fn grid(n: usize) -> Grid2D {
        Grid2D::scatterer(n, n, 40.0, 1540.0).unwrap()
    }

    fn small_kernel(g: &Grid2D) -> PsfKernel {
        discretize_psf(&Psf::with_spread(0.002, 0.002).unwrap(), g).unwrap()
    }

    fn noise_image(g: Grid2D, seed: u64) -> RfImage {
        let mut rng = SimRng::new(seed);
        RfImage::new(g, Array2::from_shape_fn(g.shape(), |_| rng.standard_normal())).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let g = grid(16);
        let delta = PsfKernel::from_taps(Array2::from_elem((1, 1), 1.0), g.spacing_axial).unwrap();
        let rf = noise_image(g, 1);
        let x = wiener_trf(&rf, &delta, &WienerConfig::with_nsr(0.0)).unwrap();
        for (a, b) in x.values().iter().zip(rf.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inverts_circular_blur() {
        let g = grid(32);
        let k = discretize_psf(&Psf::with_spread(0.0003, 0.0003).unwrap(), &g).unwrap();
        let truth = noise_image(g, 2).into_values();
        let rf = RfImage::new(g, circular_convolve(&truth, &k)).unwrap();
        let x = wiener_trf(&rf, &k, &WienerConfig::with_nsr(1e-14)).unwrap();
        let err = (x.values() - &truth).mapv(|v| v * v).sum().sqrt();
        let norm = truth.mapv(|v| v * v).sum().sqrt();
        assert!(err / norm < 1e-6, "{}", err / norm);
    }

    #[test]
    fn huge_regulariser_gives_zero() {
        let g = grid(16);
        let x = wiener_trf(&noise_image(g, 3), &small_kernel(&g), &WienerConfig::with_nsr(1e12)).unwrap();
        assert!(x.values().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn satisfies_normal_equations() {
        let g = grid(24);
        let k = small_kernel(&g);
        let rf = noise_image(g, 4);
        for eps in [1e-3, 0.1, 3.0] {
            let x = wiener_trf(&rf, &k, &WienerConfig::with_nsr(eps)).unwrap();
            assert!(normal_equation_residual(&rf, &k, eps, &x) < 1e-10);
        }
    }

    #[test]
    fn rejects_unregularised_vanishing_spectrum() {
        let g = grid(16);
        // [1, 1] has a zero at the Nyquist frequency
        let k = PsfKernel::from_taps(ndarray::arr2(&[[0.0, 1.0, 1.0]]), g.spacing_axial).unwrap();
        let err = wiener_trf(&noise_image(g, 5), &k, &WienerConfig::with_nsr(0.0)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(wiener_trf(&noise_image(g, 5), &k, &WienerConfig::default()).is_ok());
    }

    #[test]
    fn wrapping_preserves_mass() {
        let g = grid(16);
        let k = discretize_psf(&Psf::with_spread(0.004, 0.004).unwrap(), &g).unwrap();
        let w = wrap_kernel(&k, 8, 8);
        assert!((w.sum() - k.taps().sum()).abs() < 1e-12);
    }
}
