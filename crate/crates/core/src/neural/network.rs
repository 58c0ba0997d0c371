use ndarray::{concatenate, s, Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{
    conv_backward, conv_forward, elu_backward, elu_forward, tconv_backward, tconv_forward, ConvGeom, Scalar,
};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    TransposedConv,
    Activation,
    SkipConcat,
    LinearOutput,
}

/// One node of the sequential graph. Kernel and stride are `(lateral, axial)`.
/// `skip_from` names the earlier layer whose output a skip-concat appends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_from: Option<usize>,
}

impl LayerSpec {
    fn conv(kind: LayerKind, cin: usize, cout: usize, kernel: (usize, usize), stride: (usize, usize)) -> Self {
        Self {
            kind,
            channels_in: cin,
            channels_out: cout,
            kernel,
            stride,
            skip_from: None,
        }
    }

    fn activation(c: usize) -> Self {
        Self::conv(LayerKind::Activation, c, c, (1, 1), (1, 1))
    }

    fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv | LayerKind::TransposedConv | LayerKind::LinearOutput)
    }

    pub(crate) fn geom(&self) -> ConvGeom {
        let (kl, ka) = self.kernel;
        let (sl, sa) = self.stride;
        ConvGeom {
            kernel: (ka, kl),
            stride: (sa, sl),
            pad: (ka / 2, kl / 2),
        }
    }

    fn weight_shape(&self) -> (usize, usize) {
        let taps = self.kernel.0 * self.kernel.1;
        match self.kind {
            LayerKind::TransposedConv => (self.channels_in, self.channels_out * taps),
            _ => (self.channels_out, self.channels_in * taps),
        }
    }
}

/// Lateral × axial kernel of every strided / transposed stage.
pub const KERNEL: (usize, usize) = (3, 7);
/// Number of stride-2 encoder stages (total axial downsampling 16).
pub const ENCODER_STAGES: usize = 4;
pub const DEFAULT_WIDTH: usize = 8;

/// Encoder of four axial-stride-2 convolutions (widths w, 2w, 4w, 8w, ELU
/// after each), then `4 - log2(R)` transposed-conv stages halving the width,
/// each followed by ELU and concatenation with the encoder map of matching
/// resolution, then a linear 1×1 output convolution.
pub fn build_network(r: usize, width: usize) -> Result<Vec<LayerSpec>> {
    if ![2, 4, 8].contains(&r) {
        return Err(Error::invalid(format!("axial factor R must be 2, 4 or 8, got {r}")));
    }
    if width == 0 {
        return Err(Error::invalid("network width must be positive"));
    }
    let mut specs = Vec::new();
    let mut enc_out = Vec::new();
    let mut c = 1;
    for stage in 0..ENCODER_STAGES {
        let cout = width << stage;
        specs.push(LayerSpec::conv(LayerKind::Conv, c, cout, KERNEL, (1, 2)));
        specs.push(LayerSpec::activation(cout));
        enc_out.push((specs.len() - 1, cout));
        c = cout;
    }
    let up_stages = ENCODER_STAGES - r.trailing_zeros() as usize;
    for k in 0..up_stages {
        let cout = width << (ENCODER_STAGES - 2 - k);
        specs.push(LayerSpec::conv(LayerKind::TransposedConv, c, cout, KERNEL, (1, 2)));
        specs.push(LayerSpec::activation(cout));
        let (src, skip_c) = enc_out[ENCODER_STAGES - 2 - k];
        specs.push(LayerSpec {
            skip_from: Some(src),
            ..LayerSpec::conv(LayerKind::SkipConcat, cout, cout + skip_c, (1, 1), (1, 1))
        });
        c = cout + skip_c;
    }
    specs.push(LayerSpec::conv(LayerKind::LinearOutput, c, 1, (1, 1), (1, 1)));
    Ok(specs)
}

/// SHA-256 of the canonical JSON form of the layer list.
pub fn architecture_hash(specs: &[LayerSpec]) -> String {
    let json = serde_json::to_vec(specs).expect("layer specs serialise");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parameter_count(specs: &[LayerSpec]) -> usize {
    specs
        .iter()
        .filter(|s| s.has_params())
        .map(|s| {
            let (a, b) = s.weight_shape();
            a * b + s.channels_out
        })
        .sum()
}

fn axial_downsampling(specs: &[LayerSpec]) -> usize {
    specs
        .iter()
        .filter(|s| s.kind == LayerKind::Conv)
        .map(|s| s.stride.1)
        .product()
}

/// Output `(axial, lateral)` size for an input of `(axial, lateral)`.
pub fn output_shape(specs: &[LayerSpec], input: (usize, usize)) -> Result<(usize, usize)> {
    let d = axial_downsampling(specs);
    if input.0 == 0 || input.0 % d != 0 {
        return Err(Error::ShapeMismatch {
            expected: (input.0.div_ceil(d).max(1) * d, input.1),
            actual: input,
        });
    }
    let mut sizes: Vec<(usize, usize)> = Vec::with_capacity(specs.len());
    let mut cur = input;
    for spec in specs {
        cur = match spec.kind {
            LayerKind::Conv | LayerKind::LinearOutput => spec
                .geom()
                .out_size(cur.0, cur.1)
                .ok_or_else(|| Error::invalid("input smaller than kernel"))?,
            LayerKind::TransposedConv => (cur.0 * spec.stride.1, cur.1 * spec.stride.0),
            LayerKind::Activation => cur,
            LayerKind::SkipConcat => {
                let src = sizes[spec.skip_from.expect("skip source")];
                if src != cur {
                    return Err(Error::invalid(format!("skip connection joins {src:?} and {cur:?}")));
                }
                cur
            }
        };
        sizes.push(cur);
    }
    Ok(cur)
}

/// Input `(axial, lateral)` size that produces the given output size.
pub fn input_shape_for(specs: &[LayerSpec], output: (usize, usize)) -> (usize, usize) {
    let up: usize = specs
        .iter()
        .filter(|s| s.kind == LayerKind::TransposedConv)
        .map(|s| s.stride.1)
        .product();
    let factor = axial_downsampling(specs) / up;
    (output.0 * factor, output.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Per-layer gradients, laid out like [`Network::params`].
pub type Grads<T> = Vec<Option<LayerParams<T>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    specs: Vec<LayerSpec>,
    params: Vec<Option<LayerParams<T>>>,
}

/// Intermediate values kept by [`Network::forward_cached`].
pub struct Cache<T> {
    input_shape: (usize, usize, usize),
    outputs: Vec<Array3<T>>,
    cols: Vec<Option<Array2<T>>>,
}

impl<T> Cache<T> {
    /// Network output of the cached pass.
    pub fn output(&self) -> &Array3<T> {
        self.outputs.last().expect("nonempty network")
    }
}

impl<T: Scalar> Network<T> {
    /// Fan-in scaled uniform initialisation; the output bias starts at 0.5,
    /// the centre of the target range.
    pub fn init(specs: Vec<LayerSpec>, rng: &mut SimRng) -> Result<Self> {
        validate_specs(&specs)?;
        let params = specs
            .iter()
            .map(|s| {
                s.has_params().then(|| {
                    let shape = s.weight_shape();
                    let taps = s.kernel.0 * s.kernel.1;
                    let fan_in = match s.kind {
                        LayerKind::TransposedConv => (s.channels_in * taps / s.stride.1).max(1),
                        _ => s.channels_in * taps,
                    };
                    let gain = if s.kind == LayerKind::LinearOutput { 3.0 } else { 6.0 };
                    let bound = (gain / fan_in as f64).sqrt();
                    let weight = Array2::from_shape_fn(shape, |_| T::from_f64(rng.uniform_in(-bound, bound)));
                    let b0 = if s.kind == LayerKind::LinearOutput { 0.5 } else { 0.0 };
                    LayerParams {
                        weight,
                        bias: Array1::from_elem(s.channels_out, T::from_f64(b0)),
                    }
                })
            })
            .collect();
        Ok(Self { specs, params })
    }

    pub fn from_params(specs: Vec<LayerSpec>, params: Vec<Option<LayerParams<T>>>) -> Result<Self> {
        validate_specs(&specs)?;
        if params.len() != specs.len() {
            return Err(Error::invalid("one parameter slot per layer is required"));
        }
        for (s, p) in specs.iter().zip(&params) {
            match (s.has_params(), p) {
                (true, Some(p)) => {
                    if p.weight.dim() != s.weight_shape() || p.bias.len() != s.channels_out {
                        return Err(Error::ShapeMismatch {
                            expected: s.weight_shape(),
                            actual: p.weight.dim(),
                        });
                    }
                    if p.weight.iter().chain(p.bias.iter()).any(|v| !v.is_finite()) {
                        return Err(Error::numeric("non-finite network weight"));
                    }
                }
                (false, None) => {}
                _ => return Err(Error::invalid("parameter slots do not match layer kinds")),
            }
        }
        Ok(Self { specs, params })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Option<LayerParams<T>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<LayerParams<T>>] {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            specs: self.specs.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: p.weight.mapv(|v| U::from_f64(v.to_f64())),
                        bias: p.bias.mapv(|v| U::from_f64(v.to_f64())),
                    })
                })
                .collect(),
        }
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params
            .iter()
            .map(|p| {
                p.as_ref().map(|p| LayerParams {
                    weight: Array2::zeros(p.weight.dim()),
                    bias: Array1::zeros(p.bias.len()),
                })
            })
            .collect()
    }

    /// Forward pass on a `(channels, axial, lateral)` map, keeping what the
    /// backward pass needs.
    pub fn forward_cached(&self, x: &Array3<T>) -> Result<Cache<T>> {
        let (c, h, w) = x.dim();
        if c != self.specs[0].channels_in {
            return Err(Error::invalid(format!(
                "network expects {} input channels, got {c}",
                self.specs[0].channels_in
            )));
        }
        output_shape(&self.specs, (h, w))?;
        let mut outputs: Vec<Array3<T>> = Vec::with_capacity(self.specs.len());
        let mut cols = Vec::with_capacity(self.specs.len());
        for (i, spec) in self.specs.iter().enumerate() {
            let input = if i == 0 { x } else { &outputs[i - 1] };
            let (out, col) = match spec.kind {
                LayerKind::Conv | LayerKind::LinearOutput => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let (y, col) = conv_forward(input, &p.weight, &p.bias, &spec.geom());
                    (y, Some(col))
                }
                LayerKind::TransposedConv => {
                    let p = self.params[i].as_ref().expect("tconv params");
                    let (_, hi, wi) = input.dim();
                    let out = (hi * spec.stride.1, wi * spec.stride.0);
                    (tconv_forward(input, &p.weight, &p.bias, &spec.geom(), out), None)
                }
                LayerKind::Activation => (elu_forward(input), None),
                LayerKind::SkipConcat => {
                    let src = &outputs[spec.skip_from.expect("skip source")];
                    (concatenate(Axis(0), &[input.view(), src.view()]).expect("matching shapes"), None)
                }
            };
            outputs.push(out);
            cols.push(col);
        }
        Ok(Cache {
            input_shape: x.dim(),
            outputs,
            cols,
        })
    }

    pub fn forward(&self, x: &Array3<T>) -> Result<Array3<T>> {
        let mut cache = self.forward_cached(x)?;
        Ok(cache.outputs.pop().expect("nonempty network"))
    }

    /// Single-channel map in, single-channel map out.
    pub fn predict(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        let x = image.mapv(T::from_f64).insert_axis(Axis(0));
        let y = self.forward(&x)?;
        Ok(y.index_axis(Axis(0), 0).mapv(|v| v.to_f64()))
    }

    /// Back-propagate `dout` (gradient w.r.t. the network output) and add the
    /// weight gradients into `grads`. Returns the gradient w.r.t. the input.
    pub fn backward(&self, x: &Array3<T>, cache: &Cache<T>, dout: &Array3<T>, grads: &mut Grads<T>) -> Result<Array3<T>> {
        let n = self.specs.len();
        if cache.outputs.len() != n {
            return Err(Error::invalid("forward cache does not belong to this network"));
        }
        if dout.dim() != cache.outputs[n - 1].dim() {
            let (_, h, w) = dout.dim();
            let (_, eh, ew) = cache.outputs[n - 1].dim();
            return Err(Error::ShapeMismatch {
                expected: (eh, ew),
                actual: (h, w),
            });
        }
        let mut pending: Vec<Option<Array3<T>>> = vec![None; n];
        pending[n - 1] = Some(dout.clone());
        let mut dinput = None;
        for i in (0..n).rev() {
            let dy = pending[i].take().expect("gradient reaches every layer");
            let spec = &self.specs[i];
            let input = if i == 0 { x } else { &cache.outputs[i - 1] };
            let dx = match spec.kind {
                LayerKind::Conv | LayerKind::LinearOutput => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let col = cache.cols[i].as_ref().expect("cached columns");
                    let (dx, g) = conv_backward(&dy, col, &p.weight, &spec.geom(), input.dim());
                    accumulate(&mut grads[i], g);
                    dx
                }
                LayerKind::TransposedConv => {
                    let p = self.params[i].as_ref().expect("tconv params");
                    let (dx, g) = tconv_backward(&dy, input, &p.weight, &spec.geom());
                    accumulate(&mut grads[i], g);
                    dx
                }
                LayerKind::Activation => elu_backward(&dy, &cache.outputs[i]),
                LayerKind::SkipConcat => {
                    let c = spec.channels_in;
                    let src = spec.skip_from.expect("skip source");
                    let dskip = dy.slice(s![c.., .., ..]).to_owned();
                    add_pending(&mut pending[src], dskip);
                    dy.slice(s![..c, .., ..]).to_owned()
                }
            };
            if i == 0 {
                dinput = Some(dx);
            } else {
                add_pending(&mut pending[i - 1], dx);
            }
        }
        debug_assert_eq!(dinput.as_ref().map(|d| d.dim()), Some(cache.input_shape));
        Ok(dinput.expect("input gradient"))
    }
}

fn add_pending<T: Scalar>(slot: &mut Option<Array3<T>>, g: Array3<T>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<LayerParams<T>>, g: super::layers::ParamGrads<T>) {
    let acc = slot.as_mut().expect("gradient slot for parametrised layer");
    acc.weight += &g.weight;
    acc.bias += &g.bias;
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::invalid("empty network"));
    }
    let mut channels: Vec<usize> = Vec::with_capacity(specs.len());
    for (i, s) in specs.iter().enumerate() {
        if s.kernel.0 % 2 == 0 || s.kernel.1 % 2 == 0 {
            return Err(Error::invalid(format!("layer {i}: kernel {:?} is not odd", s.kernel)));
        }
        if ![1, 2].contains(&s.stride.0) || ![1, 2].contains(&s.stride.1) {
            return Err(Error::invalid(format!("layer {i}: stride {:?} not in {{1, 2}}", s.stride)));
        }
        if i > 0 && s.channels_in != channels[i - 1] {
            return Err(Error::invalid(format!(
                "layer {i}: expects {} channels, previous layer gives {}",
                s.channels_in,
                channels[i - 1]
            )));
        }
        let out = match s.kind {
            LayerKind::SkipConcat => {
                let src = s
                    .skip_from
                    .filter(|src| *src < i)
                    .ok_or_else(|| Error::invalid(format!("layer {i}: skip source must precede it")))?;
                s.channels_in + channels[src]
            }
            LayerKind::Activation => s.channels_in,
            _ => s.channels_out,
        };
        if out != s.channels_out {
            return Err(Error::invalid(format!("layer {i}: output channel count mismatch")));
        }
        channels.push(out);
    }
    if specs.last().map(|s| s.kind) != Some(LayerKind::LinearOutput) {
        return Err(Error::invalid("network must end in a linear output layer"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shapes_for_each_factor() {
        for (r, out_rows) in [(2, 256), (4, 128), (8, 64)] {
            let specs = build_network(r, 16).unwrap();
            assert_eq!(output_shape(&specs, (512, 64)).unwrap(), (out_rows, 64));
            assert_eq!(input_shape_for(&specs, (out_rows, 64)), (512, 64));
        }
        assert!(build_network(3, 16).is_err());
        let specs = build_network(4, 16).unwrap();
        assert!(output_shape(&specs, (500, 64)).is_err());
    }

    #[test]
    fn parameter_budget() {
        let specs = build_network(4, 16).unwrap();
        let n = parameter_count(&specs);
        assert!(n < 1_000_000, "{n}");
        let net = Network::<f32>::init(specs, &mut SimRng::new(0)).unwrap();
        let counted: usize = net.params().iter().flatten().map(|p| p.weight.len() + p.bias.len()).sum();
        assert_eq!(counted, n);
    }

    #[test]
    fn paper_sized_input() {
        let specs = build_network(4, 4).unwrap();
        let net = Network::<f32>::init(specs, &mut SimRng::new(1)).unwrap();
        let x = Array2::from_shape_fn((512, 64), |(r, c)| ((r * 3 + c) % 17) as f64 / 17.0);
        let y = net.predict(&x).unwrap();
        assert_eq!(y.dim(), (128, 64));
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let specs = build_network(4, 4).unwrap();
        let mut net = Network::<f64>::init(specs, &mut SimRng::new(2)).unwrap();
        for p in net.params_mut().iter_mut().flatten() {
            p.weight.fill(0.0);
            p.bias.fill(0.0);
        }
        net.params_mut().last_mut().unwrap().as_mut().unwrap().bias[0] = 0.37;
        let y = net.predict(&Array2::from_elem((64, 8), 1.3)).unwrap();
        assert!(y.iter().all(|v| *v == 0.37));
    }

    #[test]
    fn lateral_locality() {
        // interior outputs do not depend on how far the image extends laterally
        let specs = build_network(4, 4).unwrap();
        let net = Network::<f64>::init(specs, &mut SimRng::new(3)).unwrap();
        let mut rng = SimRng::new(4);
        let wide = Array2::from_shape_fn((64, 48), |_| rng.uniform());
        let narrow = wide.slice(s![.., 12..36]).to_owned();
        let yw = net.predict(&wide).unwrap();
        let yn = net.predict(&narrow).unwrap();
        let halo = 10;
        for r in 0..yn.nrows() {
            for c in halo..24 - halo {
                assert!((yw[[r, c + 12]] - yn[[r, c]]).abs() < 1e-12);
            }
        }
        let double = ndarray::concatenate(Axis(1), &[wide.view(), wide.view()]).unwrap();
        assert_eq!(net.predict(&double).unwrap().ncols(), 2 * yw.ncols());
    }

    #[test]
    fn hash_depends_on_architecture() {
        let a = architecture_hash(&build_network(4, 8).unwrap());
        let b = architecture_hash(&build_network(4, 16).unwrap());
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn shape_algebra(k in 4usize..=64, w in 1usize..40, r_pow in 1u32..=3) {
            let r = 1usize << r_pow;
            let specs = build_network(r, 2).unwrap();
            let h = 16 * k;
            let out = output_shape(&specs, (h, w)).unwrap();
            prop_assert_eq!(out, (h / r, w));
            prop_assert_eq!(input_shape_for(&specs, out), (h, w));
        }
    }

    #[test]
    fn computed_shapes_match_forward() {
        let specs = build_network(4, 2).unwrap();
        let net = Network::<f32>::init(specs.clone(), &mut SimRng::new(5)).unwrap();
        for h in [64, 80, 176] {
            let y = net.predict(&Array2::zeros((h, 5))).unwrap();
            assert_eq!(y.dim(), output_shape(&specs, (h, 5)).unwrap());
        }
    }
}
