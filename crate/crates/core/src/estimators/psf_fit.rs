use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::model::Psf;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsfFit {
    pub psf: Psf,
    /// Best-fit scale of the parametric form.
    pub amplitude: f64,
    /// `‖measured − amplitude·model‖ / ‖measured‖`.
    pub relative_residual: f64,
}

struct Problem<'a> {
    taps: &'a Array2<f64>,
    lat: Array1<f64>,
    ax: Array1<f64>,
    k_ax: Array1<f64>,
    fs: f64,
    energy: f64,
}

impl Problem<'_> {
    fn axial_profile(&self, fc: f64, sa2: f64) -> Array1<f64> {
        let f = fc / self.fs;
        Array1::from_shape_fn(self.ax.len(), |i| {
            (-self.ax[i] * self.ax[i] / sa2).exp() * (2.0 * std::f64::consts::PI * f * self.k_ax[i]).cos()
        })
    }

    fn lateral_profile(&self, sl2: f64) -> Array1<f64> {
        self.lat.mapv(|l| (-l * l / sl2).exp())
    }

    /// Squared residual after the closed-form amplitude, and that amplitude.
    /// The model is separable, so `<M, g_a g_lᵀ> = g_aᵀ M g_l`.
    fn residual_with(&self, u: &Array1<f64>, ga2: f64, gl: &Array1<f64>) -> (f64, f64) {
        let num = u.dot(gl);
        let den = ga2 * gl.dot(gl);
        if den <= 0.0 {
            return (self.energy, 0.0);
        }
        let a = num / den;
        ((self.energy - num * num / den).max(0.0), a)
    }

    fn residual(&self, fc: f64, sl2: f64, sa2: f64) -> (f64, f64) {
        let ga = self.axial_profile(fc, sa2);
        let u = ga.dot(self.taps);
        self.residual_with(&u, ga.dot(&ga), &self.lateral_profile(sl2))
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Minimise `f` from `x0` with the Nelder–Mead simplex method.
pub fn nelder_mead<const N: usize>(f: impl Fn(&[f64; N]) -> f64, x0: [f64; N], step: f64, iters: usize, tol: f64) -> ([f64; N], f64) {
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((x0, f(&x0)));
    for i in 0..N {
        let mut x = x0;
        x[i] += step;
        simplex.push((x, f(&x)));
    }
    let lerp = |a: &[f64; N], b: &[f64; N], t: f64| -> [f64; N] { std::array::from_fn(|i| a[i] + t * (b[i] - a[i])) };
    for _ in 0..iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[N].1 - simplex[0].1).abs() <= tol * (simplex[0].1.abs() + tol) {
            break;
        }
        let centroid: [f64; N] = std::array::from_fn(|i| simplex[..N].iter().map(|p| p.0[i]).sum::<f64>() / N as f64);
        let worst = simplex[N].0;
        let reflected = lerp(&centroid, &worst, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = lerp(&centroid, &worst, -2.0);
            let fe = f(&expanded);
            simplex[N] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[N].1 {
                lerp(&centroid, &reflected, 0.5)
            } else {
                lerp(&centroid, &worst, 0.5)
            };
            let fc = f(&contracted);
            if fc < simplex[N].1.min(fr) {
                simplex[N] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for p in simplex.iter_mut().skip(1) {
                    p.0 = lerp(&best, &p.0, 0.5);
                    p.1 = f(&p.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Least-squares fit of the Gaussian-cosine PSF form to centred kernel taps
/// sampled on `grid`'s (isotropic) spacing. A coarse grid search is refined
/// by Nelder–Mead in log-parameter space.
pub fn fit_psf_params(measured: &Array2<f64>, grid: &Grid2D) -> Result<PsfFit> {
    let (rows, cols) = measured.dim();
    if rows == 0 || cols == 0 || rows % 2 == 0 || cols % 2 == 0 {
        return Err(Error::invalid(format!("kernel must have odd dimensions, got {rows}x{cols}")));
    }
    let energy: f64 = measured.iter().map(|v| v * v).sum();
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::invalid("cannot fit a PSF to an all-zero kernel"));
    }
    let d = grid.spacing_axial;
    let fs = crate::grid::SPEED_OF_SOUND / (2000.0 * d);
    let (ha, hl) = ((rows / 2) as f64, (cols / 2) as f64);
    let p = Problem {
        taps: measured,
        lat: Array1::from_shape_fn(cols, |c| (c as f64 - hl) * d),
        ax: Array1::from_shape_fn(rows, |r| (r as f64 - ha) * d),
        k_ax: Array1::from_shape_fn(rows, |r| r as f64 - ha),
        fs,
        energy,
    };

    // variance ranges: from a fraction of a pixel to the kernel half width
    let min_var = (0.2 * d).powi(2);
    let max_sl2 = (hl.max(1.0) * d).powi(2) * 2.0;
    let max_sa2 = (ha.max(1.0) * d).powi(2) * 2.0;
    let fcs: Vec<f64> = (1..40).map(|i| fs * 0.49 * i as f64 / 40.0).collect();
    let sl2s = log_space(min_var, max_sl2.max(min_var * 2.0), 30);
    let sa2s = log_space(min_var, max_sa2.max(min_var * 2.0), 30);
    let gls: Vec<Array1<f64>> = sl2s.iter().map(|&s| p.lateral_profile(s)).collect();
    let mut best = (f64::INFINITY, [fcs[0], sl2s[0], sa2s[0]]);
    for &fc in &fcs {
        for &sa2 in &sa2s {
            let ga = p.axial_profile(fc, sa2);
            let u = ga.dot(measured);
            let ga2 = ga.dot(&ga);
            for (gl, &sl2) in gls.iter().zip(&sl2s) {
                let (r, _) = p.residual_with(&u, ga2, gl);
                if r < best.0 {
                    best = (r, [fc, sl2, sa2]);
                }
            }
        }
    }

    let x0 = best.1.map(f64::ln);
    let cost = |x: &[f64; 3]| {
        let fc = x[0].exp();
        if fc >= fs / 2.0 {
            return f64::INFINITY;
        }
        p.residual(fc, x[1].exp(), x[2].exp()).0
    };
    let (mut x, mut _fx) = nelder_mead(cost, x0, 0.1, 2000, 1e-14);
    // restart once from the refined point to escape a collapsed simplex
    (x, _fx) = nelder_mead(cost, x, 0.02, 2000, 1e-14);
    let [fc, sl2, sa2] = x.map(f64::exp);
    let (res, amplitude) = p.residual(fc, sl2, sa2);
    let psf = Psf::new(fc, sl2, sa2, fs, crate::grid::SPEED_OF_SOUND)
        .map_err(|_| Error::numeric("PSF fit produced invalid parameters"))?;
    Ok(PsfFit {
        psf,
        amplitude,
        relative_residual: (res / energy).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::discretize_psf;
    use crate::rng::SimRng;

    fn grid() -> Grid2D {
        Grid2D::scatterer(256, 256, 40.0, 1540.0).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs()
    }

    #[test]
    fn round_trip() {
        for (fc, sl2, sa2) in [(6.0, 0.3, 0.03), (5.0, 0.1, 0.02), (7.5, 0.5, 0.045)] {
            let psf = Psf::new(fc, sl2, sa2, 40.0, 1540.0).unwrap();
            let k = discretize_psf(&psf, &grid()).unwrap();
            let fit = fit_psf_params(k.taps(), &grid()).unwrap();
            assert!(close(fit.psf.fc, fc, 0.01), "{fit:?}");
            assert!(close(fit.psf.sigma_l2, sl2, 0.01), "{fit:?}");
            assert!(close(fit.psf.sigma_a2, sa2, 0.01), "{fit:?}");
            assert!(fit.relative_residual < 1e-3);
        }
    }

    #[test]
    fn noisy_kernel() {
        let psf = Psf::new(6.0, 0.2, 0.03, 40.0, 1540.0).unwrap();
        let k = discretize_psf(&psf, &grid()).unwrap();
        let peak = k.taps().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut rng = SimRng::new(8);
        let noisy = k.taps().mapv(|v| v + 0.05 * peak * rng.standard_normal());
        let fit = fit_psf_params(&noisy, &grid()).unwrap();
        assert!(close(fit.psf.fc, 6.0, 0.1), "{fit:?}");
        assert!(close(fit.psf.sigma_l2, 0.2, 0.1), "{fit:?}");
        assert!(close(fit.psf.sigma_a2, 0.03, 0.1), "{fit:?}");
        assert!(fit.psf.sigma_l2 > 0.0 && fit.psf.sigma_a2 > 0.0);
    }

    #[test]
    fn rejects_zero_kernel() {
        assert!(fit_psf_params(&Array2::zeros((5, 5)), &grid()).is_err());
        assert!(fit_psf_params(&Array2::ones((4, 5)), &grid()).is_err());
    }

    #[test]
    fn nelder_mead_quadratic() {
        let (x, f) = nelder_mead(|x: &[f64; 2]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2), [0.0, 0.0], 0.5, 1000, 1e-16);
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] + 2.0).abs() < 1e-5 && f < 1e-9);
    }
}
