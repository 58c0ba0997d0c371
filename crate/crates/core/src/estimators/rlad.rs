//! Sparse nonnegative deconvolution with an ℓ1 data term:
//! `min_x ‖Ax − b‖₁ + λ‖x‖₁` subject to `x ≥ 0`.
//!
//! Solved with the Chambolle–Pock primal-dual iteration. `A` is the
//! depth-dependent convolution on the output grid, optionally followed by
//! keeping every `pitch`-th lateral column (coarser RF line spacing).

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{RfImage, ScattererMap};
use crate::forward::{ConvOperator, DepthPsfBank};
use crate::grid::Grid2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RladConfig {
    /// λ relative to `‖Aᵀ sign(b)‖∞`, the smallest weight that makes `x = 0`
    /// optimal.
    pub lambda_rel: f64,
    pub max_iters: usize,
    /// Stop once the primal-dual gap falls below `tol` times the objective.
    pub tol: f64,
    /// Power iterations for the operator-norm estimate.
    pub power_iters: usize,
}

impl Default for RladConfig {
    fn default() -> Self {
        Self {
            lambda_rel: 0.1,
            max_iters: 500,
            tol: 1e-4,
            power_iters: 20,
        }
    }
}

impl RladConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_rel > 0.0) || !self.lambda_rel.is_finite() {
            return Err(Error::invalid(format!("lambda_rel {} must be > 0", self.lambda_rel)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RladResult {
    /// Best iterate found.
    pub map: ScattererMap,
    /// Best objective value up to each iteration (non-increasing).
    pub trace: Vec<f64>,
    /// Objective of each iterate as produced by the solver.
    pub raw_trace: Vec<f64>,
    pub converged: bool,
    pub lambda: f64,
    pub operator_norm: f64,
    pub iterations: usize,
}

/// Convolution on the output grid followed by lateral decimation.
pub struct RladOperator {
    conv: ConvOperator,
    pitch: usize,
    out_shape: (usize, usize),
}

impl RladOperator {
    pub fn new(out_grid: &Grid2D, bank: &DepthPsfBank, pitch: usize) -> Result<Self> {
        if pitch == 0 {
            return Err(Error::invalid("line pitch must be >= 1"));
        }
        for e in bank.entries() {
            if (e.kernel.spacing() - out_grid.spacing_axial).abs() > 1e-9 * out_grid.spacing_axial {
                return Err(Error::GridMismatch("PSF bank is not sampled on the output grid".into()));
            }
        }
        Ok(Self {
            conv: ConvOperator::new(out_grid, bank)?,
            pitch,
            out_shape: (out_grid.n_axial, out_grid.n_lateral.div_ceil(pitch)),
        })
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.conv.grid().shape()
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.out_shape
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let y = self.conv.apply(x)?;
        if self.pitch == 1 {
            return Ok(y);
        }
        Ok(y.slice(s![.., ..;self.pitch]).to_owned())
    }

    pub fn adjoint(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        if y.dim() != self.out_shape {
            return Err(Error::ShapeMismatch {
                expected: self.out_shape,
                actual: y.dim(),
            });
        }
        if self.pitch == 1 {
            return self.conv.adjoint(y);
        }
        let mut full = Array2::zeros(self.input_shape());
        full.slice_mut(s![.., ..;self.pitch]).assign(&y);
        self.conv.adjoint(full.view())
    }

    /// Largest singular value by power iteration on `AᵀA`.
    pub fn norm_estimate(&self, iterations: usize) -> Result<f64> {
        let (rows, cols) = self.input_shape();
        let mut v = Array2::from_shape_fn((rows, cols), |(r, c)| {
            1.0 + 0.5 * ((r * 31 + c * 17) % 13) as f64 / 13.0
        });
        let mut norm = 0.0;
        for _ in 0..iterations.max(1) {
            let nv = l2(&v);
            if nv == 0.0 {
                return Ok(0.0);
            }
            v /= nv;
            let w = self.adjoint(self.apply(v.view())?.view())?;
            norm = l2(&w).sqrt();
            v = w;
        }
        Ok(norm)
    }
}

fn l2(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn l1(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// `‖Ax − b‖₁ + λ‖x‖₁` given `Ax`.
pub fn objective(ax: &Array2<f64>, b: &Array2<f64>, x: &Array2<f64>, lambda: f64) -> f64 {
    let mut data = 0.0;
    Zip::from(ax).and(b).for_each(|a, b| data += (a - b).abs());
    data + lambda * l1(x)
}

/// Lateral decimation factor between `out_grid` and `rf_grid`.
fn line_pitch(rf: &Grid2D, out: &Grid2D) -> Result<usize> {
    if rf.n_axial != out.n_axial || (rf.spacing_axial - out.spacing_axial).abs() > 1e-9 * rf.spacing_axial {
        return Err(Error::GridMismatch(
            "reconstruction grid must share the RF axial sampling".into(),
        ));
    }
    let ratio = rf.spacing_lateral / out.spacing_lateral;
    let pitch = ratio.round();
    if pitch < 1.0 || (ratio - pitch).abs() > 1e-6 {
        return Err(Error::GridMismatch(format!(
            "RF line spacing is not an integer multiple of the output spacing (ratio {ratio})"
        )));
    }
    let pitch = pitch as usize;
    if out.n_lateral.div_ceil(pitch) != rf.n_lateral {
        return Err(Error::GridMismatch(format!(
            "{} output columns at pitch {pitch} do not give {} RF lines",
            out.n_lateral, rf.n_lateral
        )));
    }
    Ok(pitch)
}

/// Nonnegative sparse reconstruction of the scatterer map behind `rf`.
pub fn scat_rec(rf: &RfImage, bank: &DepthPsfBank, out_grid: &Grid2D, cfg: &RladConfig) -> Result<RladResult> {
    cfg.validate()?;
    let pitch = line_pitch(rf.grid(), out_grid)?;
    let op = RladOperator::new(out_grid, bank, pitch)?;
    let mut res = solve(&op, rf.values(), cfg)?;
    res.map = ScattererMap::new(*out_grid, res.map.into_values())?;
    Ok(res)
}

/// Chambolle–Pock on an explicit operator. The returned map lives on a
/// unit grid; [`scat_rec`] attaches the real one.
pub fn solve(op: &RladOperator, b: &Array2<f64>, cfg: &RladConfig) -> Result<RladResult> {
    cfg.validate()?;
    if b.dim() != op.output_shape() {
        return Err(Error::ShapeMismatch {
            expected: op.output_shape(),
            actual: b.dim(),
        });
    }
    let shape = op.input_shape();
    let unit_grid = Grid2D::new(shape.1, shape.0, 1.0, 1.0)?;
    let lambda = cfg.lambda_rel * op.adjoint(b.mapv(f64::signum).view())?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let norm = op.norm_estimate(cfg.power_iters)?;
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::numeric(format!("operator norm estimate {norm} is unusable")));
    }
    // σ τ ‖A‖² < 1; the power estimate approaches ‖A‖ from below
    let step = 0.95 / (norm * 1.02);

    let mut x = Array2::<f64>::zeros(shape);
    let mut ax = Array2::<f64>::zeros(b.dim());
    let mut ax_bar = ax.clone();
    let mut y = Array2::<f64>::zeros(b.dim());
    let mut best_x = x.clone();
    let mut best = objective(&ax, b, &x, lambda);
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut raw_trace = Vec::with_capacity(cfg.max_iters);
    let mut converged = best == 0.0;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        Zip::from(&mut y).and(&ax_bar).and(b).for_each(|y, &a, &b| {
            *y = (*y + step * (a - b)).clamp(-1.0, 1.0);
        });
        let aty = op.adjoint(y.view())?;
        let x_new = Zip::from(&x).and(&aty).map_collect(|&x, &g| (x - step * (g + lambda)).max(0.0));
        let ax_new = op.apply(x_new.view())?;
        Zip::from(&mut ax_bar).and(&ax_new).and(&ax).for_each(|bar, &n, &o| *bar = 2.0 * n - o);
        x = x_new;
        ax = ax_new;

        let obj = objective(&ax, b, &x, lambda);
        if !obj.is_finite() {
            return Err(Error::numeric(format!("objective became {obj} at iteration {iterations}")));
        }
        raw_trace.push(obj);
        if obj < best {
            best = obj;
            best_x.assign(&x);
        }
        trace.push(best);

        // dual value of y scaled into the feasible set {|y| ≤ 1, Aᵀy ≥ −λ}
        let worst = aty.iter().fold(0.0f64, |m, g| m.max(-g));
        let scale = if worst > lambda { lambda / worst } else { 1.0 };
        let dual = -scale * Zip::from(&y).and(b).fold(0.0, |acc, y, b| acc + y * b);
        if best - dual <= cfg.tol * best.abs().max(f64::MIN_POSITIVE) {
            converged = true;
        }
    }
    if !converged {
        log::warn!("sparse reconstruction stopped after {iterations} iterations without reaching the gap tolerance");
    }
    Ok(RladResult {
        map: ScattererMap::new(unit_grid, best_x)?,
        trace,
        raw_trace,
        converged,
        lambda,
        operator_norm: norm,
        iterations,
    })
}

pub fn write_trace_csv(trace: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("iteration,objective\n");
    for (i, v) in trace.iter().enumerate() {
        out.push_str(&format!("{},{v:.10e}\n", i + 1));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::file(path, e))
}
