#![allow(dead_code)]

use bcnn::layers::{softmax_xent, ConvLayerParams};
use bcnn::network::{backward, forward, forward_trace, init_params, LayerSpec, MapShape, NetworkSpec};
use bcnn::tensor::{Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape4, scale: f64) -> Tensor4 {
    let data = (0..shape.len()).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor4::from_vec(shape, data).unwrap()
}

pub fn random_layer(rng: &mut ChaCha8Rng, out: usize, cin: usize, k: usize, stride: usize) -> ConvLayerParams {
    let n = out * cin * k * k;
    ConvLayerParams::new(
        out,
        cin,
        k,
        k,
        stride,
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        (0..out).map(|_| rng.gen_range(-0.2..0.2)).collect(),
    )
    .unwrap()
}

/// conv 3/1/4 -> relu -> pool 2/2 -> fc 2 -> softmax on 2x6x6 inputs.
pub fn toy_spec() -> NetworkSpec {
    NetworkSpec::new(
        MapShape { c: 2, h: 6, w: 6 },
        vec![
            LayerSpec::Conv { size: 3, stride: 1, features: 4 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2, stride: 2 },
            LayerSpec::Fc { features: 2 },
            LayerSpec::SoftmaxXent,
        ],
    )
    .unwrap()
}

/// Max relative error with a floor on the denominator so near-zero
/// gradients are compared absolutely.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

const H: f64 = 1e-6;

/// Central difference of `f` with respect to every entry of `x`. Entries
/// where a half-width step disagrees (a kink lies inside the stencil) come
/// back as `None`.
pub fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<Option<f64>> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            let mut at = |d: f64, x: &mut [f64]| {
                x[i] = orig + d;
                let v = f(x);
                x[i] = orig;
                v
            };
            let full = (at(H, x) - at(-H, x)) / (2.0 * H);
            let half = (at(H / 2.0, x) - at(-H / 2.0, x)) / H;
            let smooth = (full - half).abs() <= 1e-4 * full.abs().max(1.0);
            smooth.then_some(full)
        })
        .collect()
}

/// Compares analytic against numeric entries, returning the max relative
/// error and the number of excluded (kinked) entries.
pub fn compare(analytic: &[f64], numeric: &[Option<f64>]) -> (f64, usize) {
    let (mut a, mut n, mut skipped) = (Vec::new(), Vec::new(), 0);
    for (x, y) in analytic.iter().zip(numeric) {
        match y {
            Some(y) => {
                a.push(*x);
                n.push(*y);
            }
            None => skipped += 1,
        }
    }
    (max_rel_err(&a, &n), skipped)
}

/// Full network gradient on a toy net: returns (max relative error over all
/// parameters and the input, number of excluded entries, total entries).
pub fn network_gradient_check(spec: &NetworkSpec, seed: u64) -> (f64, usize, usize) {
    let mut r = rng(seed);
    let params = init_params(spec, seed);
    let mut layers = params.layers().to_vec();
    // non-zero biases so relu kinks are not aligned
    for l in &mut layers {
        for b in l.biases_mut() {
            *b = rand::Rng::gen_range(&mut r, -0.1..0.1);
        }
    }
    let input = random_tensor(&mut r, spec.input().batch(3), 1.0);
    let labels = [0u8, 1, 1];
    let loss = |layers: &[ConvLayerParams], x: &Tensor4| softmax_xent(&forward(spec, layers, x).unwrap(), &labels).unwrap().0;

    let trace = forward_trace(spec, &layers, &input).unwrap();
    let (_, g) = softmax_xent(trace.logits(), &labels).unwrap();
    let (grads, gx) = backward(spec, &layers, &trace, &g).unwrap();

    let (mut worst, mut skipped, mut total) = (0.0f64, 0, 0);
    let mut tally = |analytic: &[f64], numeric: &[Option<f64>]| {
        let (e, s) = compare(analytic, numeric);
        worst = worst.max(e);
        skipped += s;
        total += analytic.len();
    };
    for li in 0..layers.len() {
        let mut w = layers[li].weights().to_vec();
        let num = numeric_grad(&mut w, |w| {
            let mut ls = layers.clone();
            ls[li] = ls[li].with_values(w.to_vec(), ls[li].biases().to_vec()).unwrap();
            loss(&ls, &input)
        });
        tally(&grads[li].weights, &num);
        let mut b = layers[li].biases().to_vec();
        let num = numeric_grad(&mut b, |b| {
            let mut ls = layers.clone();
            ls[li] = ls[li].with_values(ls[li].weights().to_vec(), b.to_vec()).unwrap();
            loss(&ls, &input)
        });
        tally(&grads[li].biases, &num);
    }
    let mut xs = input.data().to_vec();
    let num = numeric_grad(&mut xs, |xs| loss(&layers, &Tensor4::from_vec(input.shape(), xs.to_vec()).unwrap()));
    tally(gx.data(), &num);
    (worst, skipped, total)
}

