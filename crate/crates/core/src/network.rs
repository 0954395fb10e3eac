//! Network topology, parameters, and the dense forward/backward passes.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, maxpool_backward, maxpool_forward, pool_output_shape, relu_backward,
    relu_forward, softmax, ConvLayerParams, PoolIndices,
};
use crate::tensor::{Shape4, Tensor4};

/// Side length of the square network input.
pub const INPUT_SIZE: usize = 118;
pub const INPUT_CHANNELS: usize = 3;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerSpec {
    Conv { size: usize, stride: usize, features: usize },
    MaxPool { size: usize, stride: usize },
    /// Fully connected, realised as a convolution spanning its whole input.
    Fc { features: usize },
    Relu,
    SoftmaxXent,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Fc { .. })
    }
}

/// Per-sample activation shape `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl MapShape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, n: usize) -> Shape4 {
        Shape4::new(n, self.c, self.h, self.w)
    }
}

impl std::fmt::Display for MapShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// Dimensions of one parametric (conv or fc) layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamDims {
    /// Index of the layer within [`NetworkSpec::layers`].
    pub layer: usize,
    pub fc: bool,
    pub out_features: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    /// Spatial size of the layer's output.
    pub out_h: usize,
    pub out_w: usize,
}

impl ParamDims {
    pub fn kernel_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn weight_count(&self) -> usize {
        self.out_features * self.kernel_len()
    }

    pub fn windows(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Ordered layer descriptors plus the input shape they apply to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    input: MapShape,
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: MapShape, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = NetworkSpec { input, layers };
        spec.validate()?;
        Ok(spec)
    }

    /// Four conv/pool stages followed by two fully connected layers, for
    /// 3x118x118 input. Rectifiers follow every conv and the first fc.
    pub fn canonical() -> Self {
        use LayerSpec::*;
        let pool = MaxPool { size: 2, stride: 2 };
        let layers = vec![
            Conv { size: 3, stride: 1, features: 8 },
            Relu,
            pool,
            Conv { size: 3, stride: 1, features: 16 },
            Relu,
            pool,
            Conv { size: 5, stride: 1, features: 32 },
            Relu,
            pool,
            Conv { size: 5, stride: 1, features: 32 },
            Relu,
            pool,
            Fc { features: 128 },
            Relu,
            Fc { features: NUM_CLASSES },
            SoftmaxXent,
        ];
        Self::new(
            MapShape {
                c: INPUT_CHANNELS,
                h: INPUT_SIZE,
                w: INPUT_SIZE,
            },
            layers,
        )
        .expect("canonical network is valid")
    }

    pub fn input(&self) -> MapShape {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.output_shapes().last().map_or(0, |s| s.c)
    }

    fn validate(&self) -> Result<()> {
        if self.input.is_empty() {
            return Err(Error::InvalidArgument("network input must be non-empty".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        if let Some(i) = self.layers[..self.layers.len() - 1]
            .iter()
            .position(|l| *l == LayerSpec::SoftmaxXent)
        {
            return Err(Error::InvalidArgument(format!(
                "softmax head must be the last layer (found at {i})"
            )));
        }
        if !self.layers.iter().any(LayerSpec::has_params) {
            return Err(Error::InvalidArgument("network has no conv or fc layer".into()));
        }
        let shapes = self.try_output_shapes()?;
        let out = *shapes.last().expect("non-empty");
        if out.h != 1 || out.w != 1 || out.c < 2 {
            return Err(Error::InvalidArgument(format!(
                "network must end in >= 2 logits of size 1x1, got {out}"
            )));
        }
        Ok(())
    }

    fn try_output_shapes(&self) -> Result<Vec<MapShape>> {
        let mut cur = self.input;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv { size, stride, features } => {
                    if size == 0 || stride == 0 || features == 0 || cur.h < size || cur.w < size {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: conv {size}x{size}/{stride} does not fit input {cur}"
                        )));
                    }
                    MapShape {
                        c: features,
                        h: (cur.h - size) / stride + 1,
                        w: (cur.w - size) / stride + 1,
                    }
                }
                LayerSpec::MaxPool { size, stride } => {
                    let s = pool_output_shape(cur.batch(1), size, stride)
                        .map_err(|e| Error::InvalidArgument(format!("layer {i}: {e}")))?;
                    MapShape { c: s.c, h: s.h, w: s.w }
                }
                LayerSpec::Fc { features } => {
                    if features == 0 {
                        return Err(Error::InvalidArgument(format!("layer {i}: fc with 0 features")));
                    }
                    MapShape { c: features, h: 1, w: 1 }
                }
                LayerSpec::Relu | LayerSpec::SoftmaxXent => cur,
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Per-sample output shape of every layer, in order.
    pub fn output_shapes(&self) -> Vec<MapShape> {
        self.try_output_shapes().expect("validated at construction")
    }

    /// Dimensions of every conv/fc layer, in order.
    pub fn param_dims(&self) -> Vec<ParamDims> {
        let shapes = self.output_shapes();
        let mut prev = self.input;
        let mut dims = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let out = shapes[i];
            match *layer {
                LayerSpec::Conv { size, stride, features } => dims.push(ParamDims {
                    layer: i,
                    fc: false,
                    out_features: features,
                    in_channels: prev.c,
                    kh: size,
                    kw: size,
                    stride,
                    out_h: out.h,
                    out_w: out.w,
                }),
                LayerSpec::Fc { features } => dims.push(ParamDims {
                    layer: i,
                    fc: true,
                    out_features: features,
                    in_channels: prev.c,
                    kh: prev.h,
                    kw: prev.w,
                    stride: 1,
                    out_h: 1,
                    out_w: 1,
                }),
                _ => {}
            }
            prev = out;
        }
        dims
    }

    pub fn weight_count(&self) -> usize {
        self.param_dims().iter().map(ParamDims::weight_count).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.param_dims().iter().map(|d| d.out_features).sum()
    }
}

/// Master weights and biases for every conv/fc layer of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    spec: NetworkSpec,
    layers: Vec<ConvLayerParams>,
}

impl NetworkParams {
    pub fn new(spec: NetworkSpec, layers: Vec<ConvLayerParams>) -> Result<Self> {
        let dims = spec.param_dims();
        if dims.len() != layers.len() {
            return Err(Error::shape(
                "NetworkParams::new",
                format!("{} parametric layers", dims.len()),
                format!("{} layers", layers.len()),
            ));
        }
        for (i, (d, p)) in dims.iter().zip(&layers).enumerate() {
            let got = (p.out_features(), p.in_channels(), p.kernel_size(), p.stride());
            let want = (d.out_features, d.in_channels, (d.kh, d.kw), d.stride);
            if got != want {
                return Err(Error::shape(
                    "NetworkParams::new",
                    format!("layer {i}: {want:?}"),
                    format!("{got:?}"),
                ));
            }
        }
        Ok(NetworkParams { spec, layers })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = spec
            .param_dims()
            .iter()
            .map(|d| ConvLayerParams::zeros(d.out_features, d.in_channels, d.kh, d.kw, d.stride).expect("valid dims"))
            .collect();
        NetworkParams {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[ConvLayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayerParams] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<ConvLayerParams> {
        self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights().iter().chain(l.biases()).all(|v| v.is_finite()))
    }

    /// Dense forward pass returning logits.
    pub fn logits(&self, batch: &Tensor4) -> Result<Tensor4> {
        forward(&self.spec, &self.layers, batch)
    }
}

/// Zero-mean uniform weights with bound `sqrt(3 / fan_in)`, zero biases.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(spec);
    for layer in params.layers_mut() {
        let bound = (3.0 / layer.kernel_len() as f64).sqrt();
        let dist = Uniform::new(-bound, bound);
        for w in layer.weights_mut() {
            *w = dist.sample(&mut rng);
        }
    }
    params
}

fn check_input(spec: &NetworkSpec, layers: &[ConvLayerParams], batch: &Tensor4) -> Result<()> {
    let s = batch.shape();
    let want = spec.input();
    if (s.c, s.h, s.w) != (want.c, want.h, want.w) {
        return Err(Error::shape("network input", want.batch(s.n), s));
    }
    let n_params = spec.layers().iter().filter(|l| l.has_params()).count();
    if layers.len() != n_params {
        return Err(Error::shape(
            "network parameters",
            format!("{n_params} layers"),
            format!("{} layers", layers.len()),
        ));
    }
    Ok(())
}

/// Dense forward pass with arbitrary per-layer weights (master or
/// effective), returning logits.
pub fn forward(spec: &NetworkSpec, layers: &[ConvLayerParams], batch: &Tensor4) -> Result<Tensor4> {
    check_input(spec, layers, batch)?;
    let mut params = layers.iter();
    let mut x = batch.clone();
    for layer in spec.layers() {
        x = match *layer {
            LayerSpec::Conv { .. } | LayerSpec::Fc { .. } => {
                conv2d_forward(&x, params.next().expect("count checked"))?
            }
            LayerSpec::MaxPool { size, stride } => maxpool_forward(&x, size, stride)?.0,
            LayerSpec::Relu => relu_forward(&x),
            LayerSpec::SoftmaxXent => x,
        };
    }
    Ok(x)
}

/// Activations retained by [`forward_trace`] for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer.
    inputs: Vec<Tensor4>,
    pools: Vec<Option<PoolIndices>>,
    logits: Tensor4,
}

impl Trace {
    pub fn logits(&self) -> &Tensor4 {
        &self.logits
    }
}

pub fn forward_trace(spec: &NetworkSpec, layers: &[ConvLayerParams], batch: &Tensor4) -> Result<Trace> {
    check_input(spec, layers, batch)?;
    let mut params = layers.iter();
    let mut inputs = Vec::with_capacity(spec.layers().len());
    let mut pools = Vec::with_capacity(spec.layers().len());
    let mut x = batch.clone();
    for layer in spec.layers() {
        let (next, pool) = match *layer {
            LayerSpec::Conv { .. } | LayerSpec::Fc { .. } => {
                (conv2d_forward(&x, params.next().expect("count checked"))?, None)
            }
            LayerSpec::MaxPool { size, stride } => {
                let (y, idx) = maxpool_forward(&x, size, stride)?;
                (y, Some(idx))
            }
            LayerSpec::Relu => (relu_forward(&x), None),
            LayerSpec::SoftmaxXent => (x.clone(), None),
        };
        inputs.push(std::mem::replace(&mut x, next));
        pools.push(pool);
    }
    Ok(Trace {
        inputs,
        pools,
        logits: x,
    })
}

/// Weight and bias gradients for one conv/fc layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Backpropagates `grad_logits` through a recorded forward pass. Returns one
/// entry per conv/fc layer plus the gradient with respect to the input.
pub fn backward(
    spec: &NetworkSpec,
    layers: &[ConvLayerParams],
    trace: &Trace,
    grad_logits: &Tensor4,
) -> Result<(Vec<LayerGrads>, Tensor4)> {
    if grad_logits.shape() != trace.logits.shape() {
        return Err(Error::shape("network backward", trace.logits.shape(), grad_logits.shape()));
    }
    let mut grads = Vec::with_capacity(layers.len());
    let mut params = layers.iter().rev();
    let mut g = grad_logits.clone();
    for (i, layer) in spec.layers().iter().enumerate().rev() {
        let input = &trace.inputs[i];
        g = match *layer {
            LayerSpec::Conv { .. } | LayerSpec::Fc { .. } => {
                let p = params.next().expect("count checked");
                let cg = conv2d_backward(input, p, &g)?;
                grads.push(LayerGrads {
                    weights: cg.weights,
                    biases: cg.biases,
                });
                cg.input
            }
            LayerSpec::MaxPool { .. } => {
                maxpool_backward(trace.pools[i].as_ref().expect("pool indices recorded"), &g)?
            }
            LayerSpec::Relu => relu_backward(input, &g)?,
            LayerSpec::SoftmaxXent => g,
        };
    }
    grads.reverse();
    Ok((grads, g))
}

/// Argmax label per sample (class 0 wins exact ties) and softmax
/// probabilities.
pub fn classify(logits: &Tensor4) -> Result<(Vec<u8>, Tensor4)> {
    let probs = softmax(logits)?;
    let labels = (0..logits.shape().n)
        .map(|n| {
            let z = logits.sample(n);
            let mut best = 0;
            for k in 1..z.len() {
                if z[k] > z[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    Ok((labels, probs))
}
