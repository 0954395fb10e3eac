mod common;

use bcnn::binarize::effective_layer;
use bcnn::dataset::InMemorySource;
use bcnn::network::{init_params, NetworkParams};
use bcnn::store::encode_float;
use bcnn::tensor::{Shape4, Tensor4};
use bcnn::train::{loss_and_gradients, train_loop, train_step, SgdState, TrainConfig, TrainMode};
use bcnn::Error;
use common::{random_tensor, rng, toy_spec};
use rand::Rng;

/// Separable toy data: positives carry a bright 2x2 patch.
fn toy_data(n: usize, seed: u64) -> InMemorySource {
    let mut r = rng(seed);
    let shape = toy_spec().input().batch(n);
    let mut x = random_tensor(&mut r, shape, 0.3);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            let (py, px) = (r.gen_range(0..5), r.gen_range(0..5));
            for c in 0..2 {
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let v = x.get(i, c, py + dy, px + dx);
                    x.set(i, c, py + dy, px + dx, v + 1.5);
                }
            }
        }
    }
    InMemorySource::new(x, labels).unwrap()
}

fn cfg(mode: TrainMode, iterations: u64) -> TrainConfig {
    TrainConfig {
        mode,
        iterations,
        batch_size: 8,
        learning_rate: 0.05,
        momentum: 0.9,
        seed: 3,
        checkpoint_every: 1000,
    }
}

fn sign_scaled(params: &NetworkParams) -> NetworkParams {
    let layers = params.layers().iter().map(|l| effective_layer(l).unwrap()).collect();
    NetworkParams::new(params.spec().clone(), layers).unwrap()
}

#[test]
fn straight_through_gradient_is_float_gradient_at_effective_weights() {
    let params = init_params(&toy_spec(), 9);
    let data = toy_data(6, 1);
    let (loss_b, g_b) = loss_and_gradients(&params, data.samples(), data.labels(), TrainMode::Binarized).unwrap();
    let (loss_f, g_f) = loss_and_gradients(&sign_scaled(&params), data.samples(), data.labels(), TrainMode::Float).unwrap();
    assert_eq!(loss_b, loss_f);
    assert_eq!(g_b, g_f);
}

#[test]
fn master_weights_move_by_the_effective_gradient() {
    let mut params = init_params(&toy_spec(), 9);
    let before = params.clone();
    let data = toy_data(6, 1);
    let c = TrainConfig { momentum: 0.0, ..cfg(TrainMode::Binarized, 1) };
    let (_, g) = loss_and_gradients(&before, data.samples(), data.labels(), TrainMode::Binarized).unwrap();
    train_step(&mut params, data.samples(), data.labels(), &c, &mut SgdState::new(&before)).unwrap();
    for ((new, old), g) in params.layers().iter().zip(before.layers()).zip(&g) {
        for ((w1, w0), gw) in new.weights().iter().zip(old.weights()).zip(&g.weights) {
            assert_eq!(*w1, w0 - c.learning_rate * gw);
        }
        for ((b1, b0), gb) in new.biases().iter().zip(old.biases()).zip(&g.biases) {
            assert_eq!(*b1, b0 - c.learning_rate * gb);
        }
    }
}

#[test]
fn bias_gradients_agree_when_weights_are_sign_scaled() {
    let params = sign_scaled(&init_params(&toy_spec(), 4));
    let data = toy_data(6, 2);
    let (_, gf) = loss_and_gradients(&params, data.samples(), data.labels(), TrainMode::Float).unwrap();
    let (_, gb) = loss_and_gradients(&params, data.samples(), data.labels(), TrainMode::Binarized).unwrap();
    for (a, b) in gf.iter().zip(&gb) {
        assert_eq!(a.biases, b.biases);
    }
}

#[test]
fn loss_decreases_in_both_modes() {
    let data = toy_data(64, 5);
    for mode in [TrainMode::Float, TrainMode::Binarized] {
        let out = train_loop(&toy_spec(), &data, &cfg(mode, 50), |_| Ok(())).unwrap();
        let first: f64 = out.losses[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = out.losses[40..].iter().sum::<f64>() / 10.0;
        assert!(last < first * 0.7, "{mode}: {first} -> {last}");
    }
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let data = toy_data(32, 6);
    for mode in [TrainMode::Float, TrainMode::Binarized] {
        let a = train_loop(&toy_spec(), &data, &cfg(mode, 20), |_| Ok(())).unwrap();
        let b = train_loop(&toy_spec(), &data, &cfg(mode, 20), |_| Ok(())).unwrap();
        assert_eq!(encode_float(a.final_params(), None), encode_float(b.final_params(), None));
        assert_eq!(a.losses, b.losses);
    }
}

#[test]
fn zero_learning_rate_keeps_initial_params() {
    let data = toy_data(16, 7);
    let c = TrainConfig { learning_rate: 0.0, ..cfg(TrainMode::Float, 5) };
    let out = train_loop(&toy_spec(), &data, &c, |_| Ok(())).unwrap();
    assert_eq!(out.final_params(), &init_params(&toy_spec(), c.seed));
}

#[test]
fn checkpoint_cadence() {
    let data = toy_data(16, 8);
    let c = TrainConfig { checkpoint_every: 10, ..cfg(TrainMode::Binarized, 25) };
    let mut seen = Vec::new();
    let out = train_loop(&toy_spec(), &data, &c, |ck| {
        seen.push(ck.iteration);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, [10, 20, 25]);
    assert_eq!(out.checkpoints.len(), 3);
    assert_eq!(out.checkpoints[2].config, c);
}

#[test]
fn divergence_reports_iteration() {
    let data = toy_data(16, 9);
    let c = TrainConfig { learning_rate: 1e30, ..cfg(TrainMode::Float, 50) };
    match train_loop(&toy_spec(), &data, &c, |_| Ok(())) {
        Err(Error::Divergence { iteration, .. }) => assert!((1..=50).contains(&iteration)),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn single_class_refused() {
    let x = Tensor4::zeros(Shape4::new(4, 2, 6, 6)).unwrap();
    let data = InMemorySource::new(x, vec![1; 4]).unwrap();
    let err = train_loop(&toy_spec(), &data, &cfg(TrainMode::Float, 1), |_| Ok(())).unwrap_err();
    assert!(err.to_string().contains("both classes"), "{err}");
}
