//! Layer primitives on single-sample feature maps of shape
//! `(channels, axial, lateral)`. Convolutions go through im2col + GEMM.

use std::fmt::Debug;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;

/// Floating-point element type of the network (`f32` for training, `f64` for
/// gradient checks).
pub trait Scalar:
    Float + LinalgScalar + ScalarOperand + Debug + Default + Send + Sync + std::ops::AddAssign + std::ops::SubAssign + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Geometry of a 2D convolution on `(axial, lateral)` maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeom {
    /// Output size of the forward convolution for an `(h, w)` input.
    pub fn out_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (ka, kl) = self.kernel;
        let (sa, sl) = self.stride;
        let (pa, pl) = self.pad;
        if h + 2 * pa < ka || w + 2 * pl < kl {
            return None;
        }
        Some(((h + 2 * pa - ka) / sa + 1, (w + 2 * pl - kl) / sl + 1))
    }

    fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }
}

/// Unfold `x` (`c x h x w`) into `(c·ka·kl) x (ho·wo)` patch columns.
pub fn im2col<T: Scalar>(x: ArrayView3<T>, g: &ConvGeom, out: (usize, usize)) -> Array2<T> {
    let (c, h, w) = x.dim();
    let (ka, kl) = g.kernel;
    let (sa, sl) = g.stride;
    let (pa, pl) = g.pad;
    let (ho, wo) = out;
    let mut col = Array2::<T>::zeros((c * ka * kl, ho * wo));
    for ci in 0..c {
        let plane = x.index_axis(Axis(0), ci);
        for i in 0..ka {
            for j in 0..kl {
                let mut row = col.row_mut((ci * ka + i) * kl + j);
                let row = row.as_slice_mut().expect("contiguous row");
                for oh in 0..ho {
                    let ih = (oh * sa + i) as isize - pa as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = plane.row(ih as usize);
                    let dst = &mut row[oh * wo..(oh + 1) * wo];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * sl + j) as isize - pl as isize;
                        if iw >= 0 && iw < w as isize {
                            *d = src[iw as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add patch columns back onto a `c x h x w` map.
pub fn col2im<T: Scalar>(col: ArrayView2<T>, g: &ConvGeom, shape: (usize, usize, usize), out: (usize, usize)) -> Array3<T> {
    let (c, h, w) = shape;
    let (ka, kl) = g.kernel;
    let (sa, sl) = g.stride;
    let (pa, pl) = g.pad;
    let (ho, wo) = out;
    let mut x = Array3::<T>::zeros((c, h, w));
    for ci in 0..c {
        let mut plane = x.index_axis_mut(Axis(0), ci);
        for i in 0..ka {
            for j in 0..kl {
                let row = col.row((ci * ka + i) * kl + j);
                for oh in 0..ho {
                    let ih = (oh * sa + i) as isize - pa as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let mut dst = plane.row_mut(ih as usize);
                    for ow in 0..wo {
                        let iw = (ow * sl + j) as isize - pl as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] = dst[iw as usize] + row[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
    x
}

fn as_matrix<T: Scalar>(x: &Array3<T>) -> ArrayView2<'_, T> {
    let (c, h, w) = x.dim();
    x.view().into_shape_with_order((c, h * w)).expect("standard layout")
}

fn to_map<T: Scalar>(m: Array2<T>, h: usize, w: usize) -> Array3<T> {
    let c = m.nrows();
    m.into_shape_with_order((c, h, w)).expect("standard layout")
}

/// Convolution. `weight` is `[c_out, c_in·ka·kl]`, `bias` is `[c_out]`.
pub fn conv_forward<T: Scalar>(x: &Array3<T>, weight: &Array2<T>, bias: &Array1<T>, g: &ConvGeom) -> (Array3<T>, Array2<T>) {
    let (_, h, w) = x.dim();
    let (ho, wo) = g.out_size(h, w).expect("input smaller than kernel");
    let col = im2col(x.view(), g, (ho, wo));
    let mut y = Array2::<T>::zeros((weight.nrows(), ho * wo));
    general_mat_mul(T::one(), weight, &col, T::zero(), &mut y);
    y += &bias.view().insert_axis(Axis(1));
    (to_map(y, ho, wo), col)
}

pub struct ParamGrads<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Backward pass of [`conv_forward`] given the cached `col` matrix.
pub fn conv_backward<T: Scalar>(
    dy: &Array3<T>,
    col: &Array2<T>,
    weight: &Array2<T>,
    g: &ConvGeom,
    in_shape: (usize, usize, usize),
) -> (Array3<T>, ParamGrads<T>) {
    let (_, ho, wo) = dy.dim();
    let dy2 = as_matrix(dy);
    let mut dw = Array2::<T>::zeros(weight.dim());
    general_mat_mul(T::one(), &dy2, &col.t(), T::zero(), &mut dw);
    let db = dy2.sum_axis(Axis(1));
    let mut dcol = Array2::<T>::zeros(col.dim());
    general_mat_mul(T::one(), &weight.t(), &dy2, T::zero(), &mut dcol);
    let dx = col2im(dcol.view(), g, in_shape, (ho, wo));
    (dx, ParamGrads { weight: dw, bias: db })
}

/// Transposed convolution (adjoint of a strided convolution from an
/// `out`-sized map). `weight` is `[c_in, c_out·ka·kl]`, `bias` is `[c_out]`.
pub fn tconv_forward<T: Scalar>(
    x: &Array3<T>,
    weight: &Array2<T>,
    bias: &Array1<T>,
    g: &ConvGeom,
    out: (usize, usize),
) -> Array3<T> {
    let (_, h, w) = x.dim();
    let c_out = bias.len();
    debug_assert_eq!(g.out_size(out.0, out.1), Some((h, w)));
    let mut col = Array2::<T>::zeros((c_out * g.taps(), h * w));
    general_mat_mul(T::one(), &weight.t(), &as_matrix(x), T::zero(), &mut col);
    let mut y = col2im(col.view(), g, (c_out, out.0, out.1), (h, w));
    for (mut plane, b) in y.outer_iter_mut().zip(bias.iter()) {
        plane.mapv_inplace(|v| v + *b);
    }
    y
}

pub fn tconv_backward<T: Scalar>(dy: &Array3<T>, x: &Array3<T>, weight: &Array2<T>, g: &ConvGeom) -> (Array3<T>, ParamGrads<T>) {
    let (_, h, w) = x.dim();
    let dcol = im2col(dy.view(), g, (h, w));
    let mut dx = Array2::<T>::zeros((weight.nrows(), h * w));
    general_mat_mul(T::one(), weight, &dcol, T::zero(), &mut dx);
    let mut dw = Array2::<T>::zeros(weight.dim());
    general_mat_mul(T::one(), &as_matrix(x), &dcol.t(), T::zero(), &mut dw);
    let db = dy.sum_axis(Axis(2)).sum_axis(Axis(1));
    (to_map(dx, h, w), ParamGrads { weight: dw, bias: db })
}

pub fn elu_forward<T: Scalar>(x: &Array3<T>) -> Array3<T> {
    x.mapv(|v| if v > T::zero() { v } else { v.exp() - T::one() })
}

/// ELU backward from the cached output `y`: `dy · (y > 0 ? 1 : y + 1)`.
pub fn elu_backward<T: Scalar>(dy: &Array3<T>, y: &Array3<T>) -> Array3<T> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &o| {
        if o <= T::zero() {
            *d = *d * (o + T::one());
        }
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;

    fn rand3(rng: &mut SimRng, s: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(s, |_| rng.normal(0.0, 1.0))
    }

    fn rand2(rng: &mut SimRng, s: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_fn(s, |_| rng.normal(0.0, 0.5))
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Direct strided convolution, one output at a time.
    fn naive_conv(x: &Array3<f64>, w: &Array2<f64>, b: &Array1<f64>, g: &ConvGeom) -> Array3<f64> {
        let (c, h, wd) = x.dim();
        let (ho, wo) = g.out_size(h, wd).unwrap();
        let (ka, kl) = g.kernel;
        Array3::from_shape_fn((w.nrows(), ho, wo), |(co, oh, ow)| {
            let mut acc = b[co];
            for ci in 0..c {
                for i in 0..ka {
                    for j in 0..kl {
                        let ih = (oh * g.stride.0 + i) as isize - g.pad.0 as isize;
                        let iw = (ow * g.stride.1 + j) as isize - g.pad.1 as isize;
                        if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                            acc += w[[co, (ci * ka + i) * kl + j]] * x[[ci, ih as usize, iw as usize]];
                        }
                    }
                }
            }
            acc
        })
    }

    fn geom() -> ConvGeom {
        ConvGeom {
            kernel: (7, 3),
            stride: (2, 1),
            pad: (3, 1),
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = SimRng::new(1);
        let x = rand3(&mut rng, (2, 12, 5));
        let w = rand2(&mut rng, (3, 2 * 21));
        let b = Array1::from_vec(vec![0.1, -0.2, 0.3]);
        let (y, _) = conv_forward(&x, &w, &b, &geom());
        let y0 = naive_conv(&x, &w, &b, &geom());
        assert_eq!(y.dim(), (3, 6, 5));
        for (a, b) in y.iter().zip(y0.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = SimRng::new(2);
        let g = geom();
        let x = rand3(&mut rng, (2, 10, 4));
        let out = g.out_size(10, 4).unwrap();
        let c = Array2::from_shape_fn((2 * 21, out.0 * out.1), |_| rng.normal(0.0, 1.0));
        let lhs = (&im2col(x.view(), &g, out) * &c).sum();
        let rhs = (&col2im(c.view(), &g, (2, 10, 4), out) * &x).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn tconv_is_adjoint_of_conv() {
        // <conv(x; W), y> = <x, tconv(y; W)> with zero bias
        let mut rng = SimRng::new(3);
        let g = geom();
        let w = rand2(&mut rng, (4, 2 * 21));
        let x = rand3(&mut rng, (2, 16, 6));
        let y = rand3(&mut rng, (4, 8, 6));
        let (cx, _) = conv_forward(&x, &w, &Array1::zeros(4), &g);
        let ty = tconv_forward(&y, &w, &Array1::zeros(2), &g, (16, 6));
        assert!(((&cx * &y).sum() - (&x * &ty).sum()).abs() < 1e-10);
    }

    fn finite_diff<F: Fn(f64) -> f64>(f: F) -> f64 {
        let h = 1e-5;
        (f(h) - f(-h)) / (2.0 * h)
    }

    #[test]
    fn conv_gradients() {
        let mut rng = SimRng::new(4);
        let g = geom();
        let x = rand3(&mut rng, (2, 8, 4));
        let w = rand2(&mut rng, (3, 42));
        let b = Array1::from_shape_fn(3, |_| rng.normal(0.0, 0.1));
        let r = rand3(&mut rng, (3, 4, 4));
        let loss = |x: &Array3<f64>, w: &Array2<f64>, b: &Array1<f64>| (&conv_forward(x, w, b, &g).0 * &r).sum();
        let (_, col) = conv_forward(&x, &w, &b, &g);
        let (dx, pg) = conv_backward(&r, &col, &w, &g, x.dim());
        for idx in [(0, 0, 0), (1, 3, 2), (0, 7, 3)] {
            let num = finite_diff(|h| {
                let mut xp = x.clone();
                xp[idx] += h;
                loss(&xp, &w, &b)
            });
            assert!(rel_err(num, dx[idx]) < 1e-4);
        }
        for idx in [(0, 0), (2, 41), (1, 17)] {
            let num = finite_diff(|h| {
                let mut wp = w.clone();
                wp[idx] += h;
                loss(&x, &wp, &b)
            });
            assert!(rel_err(num, pg.weight[idx]) < 1e-4);
        }
        for i in 0..3 {
            let num = finite_diff(|h| {
                let mut bp = b.clone();
                bp[i] += h;
                loss(&x, &w, &bp)
            });
            assert!(rel_err(num, pg.bias[i]) < 1e-4);
        }
    }

    #[test]
    fn tconv_gradients() {
        let mut rng = SimRng::new(5);
        let g = geom();
        let x = rand3(&mut rng, (3, 4, 4));
        let w = rand2(&mut rng, (3, 2 * 21));
        let b = Array1::from_shape_fn(2, |_| rng.normal(0.0, 0.1));
        let r = rand3(&mut rng, (2, 8, 4));
        let loss = |x: &Array3<f64>, w: &Array2<f64>, b: &Array1<f64>| (&tconv_forward(x, w, b, &g, (8, 4)) * &r).sum();
        let (dx, pg) = tconv_backward(&r, &x, &w, &g);
        for idx in [(0, 0, 0), (2, 3, 1), (1, 2, 3)] {
            let num = finite_diff(|h| {
                let mut xp = x.clone();
                xp[idx] += h;
                loss(&xp, &w, &b)
            });
            assert!(rel_err(num, dx[idx]) < 1e-4);
        }
        for idx in [(0, 0), (2, 41), (1, 20)] {
            let num = finite_diff(|h| {
                let mut wp = w.clone();
                wp[idx] += h;
                loss(&x, &wp, &b)
            });
            assert!(rel_err(num, pg.weight[idx]) < 1e-4);
        }
        for i in 0..2 {
            let num = finite_diff(|h| {
                let mut bp = b.clone();
                bp[i] += h;
                loss(&x, &w, &bp)
            });
            assert!(rel_err(num, pg.bias[i]) < 1e-4);
        }
    }

    #[test]
    fn elu_gradient() {
        let mut rng = SimRng::new(6);
        let x = rand3(&mut rng, (2, 3, 3));
        let r = rand3(&mut rng, (2, 3, 3));
        let y = elu_forward(&x);
        let dx = elu_backward(&r, &y);
        for idx in [(0, 0, 0), (1, 2, 2), (0, 1, 2), (1, 0, 1)] {
            let num = finite_diff(|h| {
                let mut xp = x.clone();
                xp[idx] += h;
                (&elu_forward(&xp) * &r).sum()
            });
            assert!(rel_err(num, dx[idx]) < 1e-4);
        }
    }
}
