//! Central finite-difference verification of the analytic gradients.

use ndarray::{Array3, Zip};

use super::network::{LayerKind, LayerSpec, Network};
use crate::error::Result;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    /// Number of scalar derivatives compared.
    pub checked: usize,
    pub max_rel_error: f64,
}

fn spec(kind: LayerKind, cin: usize, cout: usize, kernel: (usize, usize), stride: (usize, usize)) -> LayerSpec {
    LayerSpec {
        kind,
        channels_in: cin,
        channels_out: cout,
        kernel,
        stride,
        skip_from: None,
    }
}

fn head(c: usize) -> LayerSpec {
    spec(LayerKind::LinearOutput, c, 1, (1, 1), (1, 1))
}

/// Smallest networks that isolate each layer kind (followed by the output
/// layer where the kind cannot end a network).
pub fn layer_networks() -> Vec<(&'static str, Vec<LayerSpec>)> {
    vec![
        ("conv", vec![spec(LayerKind::Conv, 1, 3, (3, 7), (1, 2)), head(3)]),
        ("transposed-conv", vec![spec(LayerKind::TransposedConv, 1, 3, (3, 7), (1, 2)), head(3)]),
        ("activation", vec![spec(LayerKind::Activation, 1, 1, (1, 1), (1, 1)), head(1)]),
        (
            "skip-concat",
            vec![
                spec(LayerKind::Conv, 1, 2, (3, 3), (1, 1)),
                spec(LayerKind::Activation, 2, 2, (1, 1), (1, 1)),
                LayerSpec {
                    skip_from: Some(0),
                    ..spec(LayerKind::SkipConcat, 2, 4, (1, 1), (1, 1))
                },
                head(4),
            ],
        ),
        ("linear-output", vec![head(1)]),
    ]
}

/// Two parametrised layers: a strided convolution with ELU, then the output.
pub fn micro_net() -> Vec<LayerSpec> {
    vec![
        spec(LayerKind::Conv, 1, 2, (3, 7), (1, 2)),
        spec(LayerKind::Activation, 2, 2, (1, 1), (1, 1)),
        head(2),
    ]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare analytic gradients of `L = Σ out·r` (fixed random `r`) against
/// central differences with step `h` for every weight, bias and input value.
pub fn check_network(name: &str, specs: Vec<LayerSpec>, input: (usize, usize), seed: u64, h: f64) -> Result<GradCheckReport> {
    let mut rng = SimRng::new(seed);
    let mut net = Network::<f64>::init(specs, &mut rng)?;
    // nonzero biases so every bias path is exercised
    for p in net.params_mut().iter_mut().flatten() {
        p.bias.mapv_inplace(|_| rng.normal(0.0, 0.3));
    }
    let x = Array3::from_shape_fn((1, input.0, input.1), |_| rng.normal(0.0, 1.0));
    let out_dim = net.forward(&x)?.dim();
    let r = Array3::from_shape_fn(out_dim, |_| rng.normal(0.0, 1.0));
    let loss = |net: &Network<f64>, x: &Array3<f64>| -> Result<f64> {
        let y = net.forward(x)?;
        let mut s = 0.0;
        Zip::from(&y).and(&r).for_each(|a, b| s += a * b);
        Ok(s)
    };

    let cache = net.forward_cached(&x)?;
    let mut grads = net.zero_grads();
    let dx = net.backward(&x, &cache, &r, &mut grads)?;

    let mut worst = 0.0f64;
    let mut checked = 0;
    for li in 0..net.params().len() {
        let Some(g) = grads[li].clone() else { continue };
        for (idx, analytic) in g.weight.indexed_iter() {
            let mut plus = net.clone();
            plus.params_mut()[li].as_mut().unwrap().weight[idx] += h;
            let mut minus = net.clone();
            minus.params_mut()[li].as_mut().unwrap().weight[idx] -= h;
            let num = (loss(&plus, &x)? - loss(&minus, &x)?) / (2.0 * h);
            worst = worst.max(rel(*analytic, num));
            checked += 1;
        }
        for (idx, analytic) in g.bias.indexed_iter() {
            let mut plus = net.clone();
            plus.params_mut()[li].as_mut().unwrap().bias[idx] += h;
            let mut minus = net.clone();
            minus.params_mut()[li].as_mut().unwrap().bias[idx] -= h;
            let num = (loss(&plus, &x)? - loss(&minus, &x)?) / (2.0 * h);
            worst = worst.max(rel(*analytic, num));
            checked += 1;
        }
    }
    for (idx, analytic) in dx.indexed_iter() {
        let mut xp = x.clone();
        xp[idx] += h;
        let mut xm = x.clone();
        xm[idx] -= h;
        let num = (loss(&net, &xp)? - loss(&net, &xm)?) / (2.0 * h);
        worst = worst.max(rel(*analytic, num));
        checked += 1;
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        checked,
        max_rel_error: worst,
    })
}

/// Finite-difference reports for every layer kind and the micro network.
pub fn run_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for (name, specs) in layer_networks() {
        reports.push(check_network(name, specs, (8, 4), seed, 1e-5)?);
    }
    reports.push(check_network("micro-net", micro_net(), (16, 5), seed, 1e-5)?);
    Ok(reports)
}
