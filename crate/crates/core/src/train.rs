//! SGD training in float or binarized mode.
//!
//! In binarized mode the forward and backward passes use the effective
//! weights `Ŵ = α·sign(W)` computed from the floating-point master weights
//! `W` at every step; the gradient with respect to `Ŵ` is applied to `W`
//! unchanged (straight-through). Biases are never binarized.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binarize::effective_layer;
use crate::dataset::SampleSource;
use crate::error::{Error, Result};
use crate::layers::{softmax_xent, ConvLayerParams};
use crate::network::{backward, forward_trace, init_params, LayerGrads, NetworkParams, NetworkSpec};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Float,
    Binarized,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float" => Ok(TrainMode::Float),
            "binarized" => Ok(TrainMode::Binarized),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Float => "float",
            TrainMode::Binarized => "binarized",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Float,
            iterations: 90_000,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            checkpoint_every: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        // A zero rate is allowed: it leaves the parameters untouched.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }
}

/// Momentum buffers and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocity: Vec<LayerGrads>,
    steps: u64,
}

impl SgdState {
    pub fn new(params: &NetworkParams) -> Self {
        SgdState {
            velocity: params
                .layers()
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights().len()],
                    biases: vec![0.0; l.biases().len()],
                })
                .collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Weights the forward pass uses in `mode`.
pub fn forward_weights(params: &NetworkParams, mode: TrainMode) -> Result<Vec<ConvLayerParams>> {
    match mode {
        TrainMode::Float => Ok(params.layers().to_vec()),
        TrainMode::Binarized => params.layers().iter().map(effective_layer).collect(),
    }
}

/// Batch-mean loss and its gradient with respect to the weights actually
/// used in the forward pass (`W` in float mode, `Ŵ` in binarized mode).
pub fn loss_and_gradients(
    params: &NetworkParams,
    batch: &Tensor4,
    labels: &[u8],
    mode: TrainMode,
) -> Result<(f64, Vec<LayerGrads>)> {
    let weights = forward_weights(params, mode)?;
    let trace = forward_trace(params.spec(), &weights, batch)?;
    let (loss, grad) = softmax_xent(trace.logits(), labels)?;
    let (grads, _) = backward(params.spec(), &weights, &trace, &grad)?;
    Ok((loss, grads))
}

/// Batch-mean loss without a backward pass.
pub fn batch_loss(params: &NetworkParams, batch: &Tensor4, labels: &[u8], mode: TrainMode) -> Result<f64> {
    let weights = forward_weights(params, mode)?;
    let logits = crate::network::forward(params.spec(), &weights, batch)?;
    Ok(softmax_xent(&logits, labels)?.0)
}

/// One SGD-with-momentum update of the master weights: `v ← μv + g`,
/// `W ← W − lr·v`. Returns the batch loss before the update.
pub fn train_step(
    params: &mut NetworkParams,
    batch: &Tensor4,
    labels: &[u8],
    cfg: &TrainConfig,
    state: &mut SgdState,
) -> Result<f64> {
    let iteration = state.steps + 1;
    let diverged = |loss: f64| Error::Divergence { iteration, loss };
    let (loss, grads) = match loss_and_gradients(params, batch, labels, cfg.mode) {
        Ok(v) => v,
        Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
        Err(e) => return Err(e),
    };
    if !loss.is_finite() {
        return Err(diverged(loss));
    }
    let (lr, mu) = (cfg.learning_rate, cfg.momentum);
    for ((layer, g), v) in params.layers_mut().iter_mut().zip(&grads).zip(&mut state.velocity) {
        for ((w, &gw), vw) in layer.weights_mut().iter_mut().zip(&g.weights).zip(&mut v.weights) {
            *vw = mu * *vw + gw;
            *w -= lr * *vw;
        }
        for ((b, &gb), vb) in layer.biases_mut().iter_mut().zip(&g.biases).zip(&mut v.biases) {
            *vb = mu * *vb + gb;
            *b -= lr * *vb;
        }
    }
    if !params.is_finite() {
        return Err(diverged(loss));
    }
    state.steps = iteration;
    Ok(loss)
}

/// Seeded sampler: a fresh permutation of the training set every epoch;
/// batches run straight across epoch boundaries.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl EpochSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Separate stream from parameter initialisation, which uses stream 0.
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        EpochSampler {
            rng,
            order,
            cursor: 0,
            epoch: 0,
        }
    }

    /// Permutation used for the current epoch.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

/// Master weights plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub config: TrainConfig,
    pub params: NetworkParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    /// Batch loss at every iteration.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_params(&self) -> &NetworkParams {
        &self.checkpoints.last().expect("at least one checkpoint").params
    }
}

/// Trains from `init_params(spec, cfg.seed)`. See [`train_from`].
pub fn train_loop(
    spec: &NetworkSpec,
    source: &dyn SampleSource,
    cfg: &TrainConfig,
    on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    train_from(init_params(spec, cfg.seed), source, cfg, on_checkpoint)
}

/// Runs `cfg.iterations` steps, emitting a checkpoint every
/// `cfg.checkpoint_every` iterations and after the last one. Identical
/// inputs give bit-identical checkpoints.
pub fn train_from(
    mut params: NetworkParams,
    source: &dyn SampleSource,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let positives = (0..source.len()).filter(|&i| source.label(i) == 1).count();
    if positives == 0 || positives == source.len() {
        return Err(Error::InvalidArgument(
            "training set must contain both classes".into(),
        ));
    }
    let mut sampler = EpochSampler::new(source.len(), cfg.seed);
    let mut state = SgdState::new(&params);
    let mut checkpoints = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iterations as usize);
    for it in 1..=cfg.iterations {
        let idx = sampler.next_batch(cfg.batch_size);
        let (batch, labels) = source.load_batch(&idx)?;
        losses.push(train_step(&mut params, &batch, &labels, cfg, &mut state)?);
        if it % cfg.checkpoint_every == 0 || it == cfg.iterations {
            let ckpt = Checkpoint {
                iteration: it,
                config: cfg.clone(),
                params: params.clone(),
            };
            on_checkpoint(&ckpt)?;
            checkpoints.push(ckpt);
        }
    }
    Ok(TrainOutcome { checkpoints, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InMemorySource;
    use crate::network::{LayerSpec, MapShape};
    use crate::tensor::Shape4;

    fn toy_spec() -> NetworkSpec {
        NetworkSpec::new(
            MapShape { c: 1, h: 4, w: 4 },
            vec![
                LayerSpec::Conv { size: 3, stride: 1, features: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Fc { features: 2 },
                LayerSpec::SoftmaxXent,
            ],
        )
        .unwrap()
    }

    fn toy_source(n: usize) -> InMemorySource {
        let s = Shape4::new(n, 1, 4, 4);
        let mut data = Vec::with_capacity(s.len());
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 2) as u8;
            for p in 0..16 {
                let base = ((i * 31 + p * 17) % 13) as f64 / 13.0;
                data.push(if label == 1 { base + 1.0 } else { base });
            }
            labels.push(label);
        }
        InMemorySource::new(Tensor4::from_vec(s, data).unwrap(), labels).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_ok());
        cfg.learning_rate = -1.0;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { momentum: 1.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { checkpoint_every: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { iterations: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_params_untouched() {
        let spec = toy_spec();
        let src = toy_source(6);
        for mode in [TrainMode::Float, TrainMode::Binarized] {
            let cfg = TrainConfig { mode, learning_rate: 0.0, batch_size: 4, ..TrainConfig::default() };
            let mut params = init_params(&spec, 1);
            let before = params.clone();
            let mut state = SgdState::new(&params);
            let (batch, labels) = src.load_batch(&[0, 1, 2, 3]).unwrap();
            let loss = train_step(&mut params, &batch, &labels, &cfg, &mut state).unwrap();
            assert!(loss.is_finite() && loss > 0.0);
            assert_eq!(params, before);
        }
    }

    #[test]
    fn single_checkpoint_when_one_iteration() {
        let cfg = TrainConfig { iterations: 1, checkpoint_every: 1, batch_size: 2, ..TrainConfig::default() };
        let out = train_loop(&toy_spec(), &toy_source(4), &cfg, |_| Ok(())).unwrap();
        assert_eq!(out.checkpoints.len(), 1);
        assert_eq!(out.checkpoints[0].iteration, 1);
    }

    #[test]
    fn checkpoint_cadence_includes_final() {
        let cfg = TrainConfig { iterations: 7, checkpoint_every: 3, batch_size: 2, ..TrainConfig::default() };
        let mut seen = Vec::new();
        let out = train_loop(&toy_spec(), &toy_source(4), &cfg, |c| {
            seen.push(c.iteration);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![3, 6, 7]);
        assert_eq!(out.losses.len(), 7);
    }

    #[test]
    fn single_class_rejected() {
        let s = Shape4::new(2, 1, 4, 4);
        let src = InMemorySource::new(Tensor4::zeros(s).unwrap(), vec![1, 1]).unwrap();
        assert!(train_loop(&toy_spec(), &src, &TrainConfig::default(), |_| Ok(())).is_err());
    }

    #[test]
    fn divergence_reports_iteration() {
        let spec = toy_spec();
        let src = toy_source(4);
        let cfg = TrainConfig { learning_rate: 1e200, momentum: 0.0, batch_size: 4, ..TrainConfig::default() };
        let mut params = init_params(&spec, 3);
        let mut state = SgdState::new(&params);
        let (batch, labels) = src.load_batch(&[0, 1, 2, 3]).unwrap();
        let mut result = Ok(0.0);
        for _ in 0..5 {
            result = train_step(&mut params, &batch, &labels, &cfg, &mut state);
            if result.is_err() {
                break;
            }
        }
        match result {
            Err(Error::Divergence { iteration, .. }) => assert!((1..=5).contains(&iteration)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn sampler_reshuffles_each_epoch() {
        let mut s = EpochSampler::new(5, 11);
        let first: Vec<usize> = s.order().to_vec();
        let mut sorted = first.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next_batch(5), first);
        let straddle = s.next_batch(3);
        assert_eq!(s.epoch(), 1);
        assert_eq!(straddle, s.order()[..3].to_vec());
    }
}
