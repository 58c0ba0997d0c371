use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::field::{EnvelopeImage, RfImage};

/// Magnitude of the analytic signal of every lateral line, taken along the
/// axial axis with the one-sided spectrum construction.
pub fn envelope(rf: &RfImage) -> Result<EnvelopeImage> {
    let (rows, cols) = rf.grid().shape();
    if rows < 2 {
        return Err(Error::invalid("envelope needs at least two axial samples"));
    }
    let values = analytic_magnitude(rf.values());
    EnvelopeImage::new(*rf.grid(), values)
        .map_err(|e| Error::numeric(format!("envelope of {rows}x{cols} image: {e}")))
}

pub(crate) fn analytic_magnitude(rf: &Array2<f64>) -> Array2<f64> {
    let (n, cols) = rf.dim();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    // one-sided weights: DC and Nyquist kept, positive frequencies doubled
    let weights: Vec<f64> = (0..n)
        .map(|k| {
            if k == 0 || (n % 2 == 0 && k == n / 2) {
                1.0
            } else if k < n.div_ceil(2) {
                2.0
            } else {
                0.0
            }
        })
        .collect();
    let scale = 1.0 / n as f64;
    let mut out = Array2::zeros((n, cols));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..cols {
        for (b, v) in buf.iter_mut().zip(rf.column(c)) {
            *b = Complex64::new(*v, 0.0);
        }
        fwd.process(&mut buf);
        for (b, w) in buf.iter_mut().zip(&weights) {
            *b *= *w;
        }
        inv.process(&mut buf);
        for (o, b) in out.column_mut(c).iter_mut().zip(&buf) {
            *o = b.norm() * scale;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;

    fn rf_from(values: Array2<f64>) -> RfImage {
        let (r, c) = values.dim();
        RfImage::new(Grid2D::scatterer(c, r, 40.0, 1540.0).unwrap(), values).unwrap()
    }

    #[test]
    fn cosine_has_unit_envelope() {
        let n = 512;
        let f = 6.0 / 40.0;
        let v = Array2::from_shape_fn((n, 3), |(a, _)| (2.0 * std::f64::consts::PI * f * a as f64).cos());
        let env = envelope(&rf_from(v)).unwrap();
        for a in 40..n - 40 {
            for c in 0..3 {
                assert!((env.values()[[a, c]] - 1.0).abs() < 0.01, "{}", env.values()[[a, c]]);
            }
        }
    }

    #[test]
    fn zero_and_sign_symmetry() {
        let env = envelope(&rf_from(Array2::zeros((16, 4)))).unwrap();
        assert!(env.values().iter().all(|v| *v == 0.0));

        let v = Array2::from_shape_fn((33, 5), |(r, c)| ((r * 7 + c * 3) % 11) as f64 - 5.0);
        let a = envelope(&rf_from(v.clone())).unwrap();
        let b = envelope(&rf_from(-v)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn envelope_bounds_signal() {
        let v = Array2::from_shape_fn((64, 2), |(r, c)| ((r * 13 + c) % 7) as f64 - 3.0);
        let env = envelope(&rf_from(v.clone())).unwrap();
        for (e, x) in env.values().iter().zip(v.iter()) {
            assert!(*e >= x.abs() - 1e-9);
        }
    }

    #[test]
    fn single_row_rejected() {
        assert!(envelope(&rf_from(Array2::zeros((1, 4)))).is_err());
    }
}
