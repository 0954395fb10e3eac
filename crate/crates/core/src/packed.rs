//! Multiplication-free inference over bit-packed sign kernels.
//!
//! Each kernel stores one bit per weight (1 ↔ +1, 0 ↔ −1) in
//! `(in_channel, kh, kw)` row-major order, most significant bit first, padded
//! with zero bits to a byte boundary. A window is evaluated as
//! `α·(Σ inputs under 1-bits − Σ inputs under 0-bits) + bias`: one multiply
//! per window, none when `α = 1`. Activations are single precision.

use crate::binarize::{BinarizedKernel, BinarizedNetwork};
use crate::error::{Error, Result};
use crate::layers::ConvLayerParams;
use crate::network::{classify, LayerSpec, MapShape, NetworkParams, NetworkSpec, ParamDims};
use crate::tensor::{Shape4, Tensor4};

/// Bytes needed for `n` packed sign bits.
pub const fn packed_len(n: usize) -> usize {
    n.div_ceil(8)
}

/// Packs `±1` signs MSB-first; padding bits are zero.
pub fn pack_signs(signs: &[i8]) -> Vec<u8> {
    let mut bytes = vec![0u8; packed_len(signs.len())];
    for (i, &s) in signs.iter().enumerate() {
        if s > 0 {
            bytes[i / 8] |= 0x80 >> (i % 8);
        }
    }
    bytes
}

/// Inverse of [`pack_signs`]. Fails if the byte count is wrong or any padding
/// bit is set.
pub fn unpack_signs(bytes: &[u8], n: usize) -> Result<Vec<i8>> {
    check_bits(bytes, n)?;
    Ok((0..n)
        .map(|i| if bytes[i / 8] & (0x80 >> (i % 8)) != 0 { 1 } else { -1 })
        .collect())
}

fn check_bits(bytes: &[u8], n: usize) -> Result<()> {
    if n == 0 || bytes.len() != packed_len(n) {
        return Err(Error::shape(
            "packed signs",
            format!("{} bytes for {n} bits", packed_len(n)),
            format!("{} bytes", bytes.len()),
        ));
    }
    let used = n % 8;
    if used != 0 && bytes[bytes.len() - 1] & (0xFF >> used) != 0 {
        return Err(Error::InvalidArgument("nonzero padding bits in packed signs".into()));
    }
    Ok(())
}

/// One output kernel in storage form.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedKernel {
    alpha: f32,
    bias: f32,
    bits: Vec<u8>,
    n: usize,
}

impl PackedKernel {
    pub fn new(alpha: f32, bias: f32, bits: Vec<u8>, n: usize) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if !bias.is_finite() {
            return Err(Error::NonFinite("kernel bias"));
        }
        check_bits(&bits, n)?;
        Ok(PackedKernel { alpha, bias, bits, n })
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn bias(&self) -> f32 {
        self.bias
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Number of weights.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn positive(&self, i: usize) -> bool {
        self.bits[i / 8] & (0x80 >> (i % 8)) != 0
    }
}

/// Packs a kernel; α and the bias are rounded to single precision.
pub fn pack(kernel: &BinarizedKernel, bias: f64) -> Result<PackedKernel> {
    PackedKernel::new(kernel.alpha() as f32, bias as f32, pack_signs(kernel.signs()), kernel.len())
}

pub fn unpack(kernel: &PackedKernel) -> Result<BinarizedKernel> {
    BinarizedKernel::new(f64::from(kernel.alpha), unpack_signs(&kernel.bits, kernel.n)?)
}

/// Packed kernels of one conv/fc layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedLayer {
    in_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    kernels: Vec<PackedKernel>,
}

impl PackedLayer {
    pub fn new(in_channels: usize, kh: usize, kw: usize, stride: usize, kernels: Vec<PackedKernel>) -> Result<Self> {
        if in_channels == 0 || kh == 0 || kw == 0 || stride == 0 || kernels.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "packed layer dims must be >= 1: in={in_channels} k={kh}x{kw} stride={stride} kernels={}",
                kernels.len()
            )));
        }
        let n = in_channels * kh * kw;
        if let Some((i, k)) = kernels.iter().enumerate().find(|(_, k)| k.n != n) {
            return Err(Error::shape(
                "PackedLayer::new",
                format!("{n} weights per kernel"),
                format!("kernel {i} with {}", k.n),
            ));
        }
        Ok(PackedLayer {
            in_channels,
            kh,
            kw,
            stride,
            kernels,
        })
    }

    pub fn kernels(&self) -> &[PackedKernel] {
        &self.kernels
    }

    pub fn out_features(&self) -> usize {
        self.kernels.len()
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    fn output_shape(&self, input: MapShape) -> Result<MapShape> {
        if input.c != self.in_channels || input.h < self.kh || input.w < self.kw {
            return Err(Error::shape(
                "packed_conv2d",
                format!("input ?x{}x>={}x>={}", self.in_channels, self.kh, self.kw),
                input,
            ));
        }
        Ok(MapShape {
            c: self.kernels.len(),
            h: (input.h - self.kh) / self.stride + 1,
            w: (input.w - self.kw) / self.stride + 1,
        })
    }

    /// Dense equivalent with weights `α·B` (in double precision).
    pub fn dense_params(&self) -> ConvLayerParams {
        let mut weights = Vec::with_capacity(self.kernels.len() * self.kernels[0].n);
        let mut biases = Vec::with_capacity(self.kernels.len());
        for k in &self.kernels {
            let a = f64::from(k.alpha);
            weights.extend((0..k.n).map(|i| if k.positive(i) { a } else { -a }));
            biases.push(f64::from(k.bias));
        }
        ConvLayerParams::new(self.kernels.len(), self.in_channels, self.kh, self.kw, self.stride, weights, biases)
            .expect("validated dims")
    }

    /// Sign-gated accumulation for one sample.
    fn run(&self, input: &[f32], ishape: MapShape, oshape: MapShape, out: &mut [f32]) {
        let plane = oshape.h * oshape.w;
        let in_plane = ishape.h * ishape.w;
        let mut wide = vec![0.0f32; in_plane];
        for (f, k) in self.kernels.iter().enumerate() {
            let acc = &mut out[f * plane..(f + 1) * plane];
            acc.fill(0.0);
            if plane == 1 {
                // Kernel spans the input: a plain signed sum.
                let mut sum = 0.0f32;
                for (i, &x) in input[..k.n].iter().enumerate() {
                    if k.positive(i) {
                        sum += x;
                    } else {
                        sum -= x;
                    }
                }
                acc[0] = sum;
            } else if self.stride == 1 {
                // Accumulate at input width so every tap is one contiguous
                // run, then keep the valid columns. Per-output summation
                // order is unchanged.
                let len = (oshape.h - 1) * ishape.w + oshape.w;
                wide[..len].fill(0.0);
                let mut tap = 0;
                for c in 0..ishape.c {
                    let chan = &input[c * in_plane..(c + 1) * in_plane];
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let src = &chan[ky * ishape.w + kx..][..len];
                            let dst = &mut wide[..len];
                            if k.positive(tap) {
                                dst.iter_mut().zip(src).for_each(|(d, &x)| *d += x);
                            } else {
                                dst.iter_mut().zip(src).for_each(|(d, &x)| *d -= x);
                            }
                            tap += 1;
                        }
                    }
                }
                for (oy, row) in acc.chunks_exact_mut(oshape.w).enumerate() {
                    row.copy_from_slice(&wide[oy * ishape.w..oy * ishape.w + oshape.w]);
                }
            } else {
                let mut tap = 0;
                for c in 0..ishape.c {
                    let chan = &input[c * in_plane..(c + 1) * in_plane];
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let add = k.positive(tap);
                            tap += 1;
                            for oy in 0..oshape.h {
                                let row = &chan[(oy * self.stride + ky) * ishape.w + kx..];
                                let dst = &mut acc[oy * oshape.w..(oy + 1) * oshape.w];
                                let s = self.stride;
                                if add {
                                    dst.iter_mut().enumerate().for_each(|(ox, d)| *d += row[ox * s]);
                                } else {
                                    dst.iter_mut().enumerate().for_each(|(ox, d)| *d -= row[ox * s]);
                                }
                            }
                        }
                    }
                }
            }
            if k.alpha == 1.0 {
                acc.iter_mut().for_each(|v| *v += k.bias);
            } else {
                acc.iter_mut().for_each(|v| *v = k.alpha * *v + k.bias);
            }
        }
    }
}

/// Packed conv over a batch. The input is rounded to single precision.
pub fn packed_conv2d(input: &Tensor4, layer: &PackedLayer) -> Result<Tensor4> {
    let s = input.shape();
    let ishape = MapShape { c: s.c, h: s.h, w: s.w };
    let oshape = layer.output_shape(ishape)?;
    let mut out = Vec::with_capacity(s.n * oshape.len());
    let mut buf = vec![0.0f32; oshape.len()];
    let mut x = vec![0.0f32; ishape.len()];
    for n in 0..s.n {
        for (d, &v) in x.iter_mut().zip(input.sample(n)) {
            *d = v as f32;
        }
        layer.run(&x, ishape, oshape, &mut buf);
        out.extend(buf.iter().map(|&v| f64::from(v)));
    }
    Tensor4::from_vec(oshape.batch(s.n), out)
}

/// A binarized network in storage/test-phase form.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedModel {
    spec: NetworkSpec,
    layers: Vec<PackedLayer>,
}

impl BinarizedModel {
    pub fn new(spec: NetworkSpec, layers: Vec<PackedLayer>) -> Result<Self> {
        let dims = spec.param_dims();
        if dims.len() != layers.len() {
            return Err(Error::shape(
                "BinarizedModel::new",
                format!("{} parametric layers", dims.len()),
                format!("{}", layers.len()),
            ));
        }
        for (i, (d, l)) in dims.iter().zip(&layers).enumerate() {
            let got = (l.out_features(), l.in_channels, l.kh, l.kw, l.stride);
            let want = (d.out_features, d.in_channels, d.kh, d.kw, d.stride);
            if got != want {
                return Err(Error::shape("BinarizedModel::new", format!("layer {i}: {want:?}"), format!("{got:?}")));
            }
        }
        Ok(BinarizedModel { spec, layers })
    }

    pub fn from_binarized(net: &BinarizedNetwork) -> Result<Self> {
        let layers = net
            .layers()
            .iter()
            .map(|l| {
                let (kh, kw) = l.kernel_size();
                let kernels = l
                    .kernels()
                    .iter()
                    .zip(l.biases())
                    .map(|(k, &b)| pack(k, b))
                    .collect::<Result<Vec<_>>>()?;
                PackedLayer::new(l.in_channels(), kh, kw, l.stride(), kernels)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(net.spec().clone(), layers)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[PackedLayer] {
        &self.layers
    }

    pub fn kernel_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernels.len()).sum()
    }

    /// Dense double-precision parameters computing the same function.
    pub fn dense_params(&self) -> NetworkParams {
        NetworkParams::new(self.spec.clone(), self.layers.iter().map(PackedLayer::dense_params).collect())
            .expect("validated dims")
    }

    fn check_input(&self, batch: &Tensor4) -> Result<()> {
        let s = batch.shape();
        let want = self.spec.input();
        if (s.c, s.h, s.w) != (want.c, want.h, want.w) {
            return Err(Error::shape("packed_forward input", want.batch(s.n), s));
        }
        Ok(())
    }

    /// Logits of one sample through the packed path.
    fn sample_logits(&self, x: &[f64]) -> Vec<f32> {
        let mut shape = self.spec.input();
        let mut cur: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let mut params = self.layers.iter();
        for layer in self.spec.layers() {
            match *layer {
                LayerSpec::Conv { .. } | LayerSpec::Fc { .. } => {
                    let p = params.next().expect("validated count");
                    let oshape = p.output_shape(shape).expect("validated dims");
                    let mut out = vec![0.0f32; oshape.len()];
                    p.run(&cur, shape, oshape, &mut out);
                    cur = out;
                    shape = oshape;
                }
                LayerSpec::MaxPool { size, stride } => {
                    let (out, oshape) = maxpool_f32(&cur, shape, size, stride);
                    cur = out;
                    shape = oshape;
                }
                LayerSpec::Relu => cur.iter_mut().for_each(|v| *v = v.max(0.0)),
                LayerSpec::SoftmaxXent => {}
            }
        }
        cur
    }

    /// Logits for a batch through the packed path.
    pub fn logits(&self, batch: &Tensor4) -> Result<Tensor4> {
        self.check_input(batch)?;
        let s = batch.shape();
        let k = self.spec.num_classes();
        let mut data = Vec::with_capacity(s.n * k);
        for n in 0..s.n {
            data.extend(self.sample_logits(batch.sample(n)).into_iter().map(f64::from));
        }
        Tensor4::from_vec(Shape4::new(s.n, k, 1, 1), data)
    }
}

fn maxpool_f32(x: &[f32], s: MapShape, size: usize, stride: usize) -> (Vec<f32>, MapShape) {
    let o = MapShape {
        c: s.c,
        h: (s.h - size) / stride + 1,
        w: (s.w - size) / stride + 1,
    };
    let mut out = Vec::with_capacity(o.len());
    for c in 0..s.c {
        let plane = &x[c * s.h * s.w..(c + 1) * s.h * s.w];
        for oy in 0..o.h {
            for ox in 0..o.w {
                let mut best = plane[oy * stride * s.w + ox * stride];
                for dy in 0..size {
                    let row = &plane[(oy * stride + dy) * s.w + ox * stride..][..size];
                    for &v in row {
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    (out, o)
}

/// End-to-end packed inference: argmax labels (class 0 on exact ties) and
/// softmax probabilities.
pub fn packed_forward(model: &BinarizedModel, batch: &Tensor4) -> Result<(Vec<u8>, Tensor4)> {
    classify(&model.logits(batch)?)
}

/// Static arithmetic counts for one conv/fc layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct OpCounts {
    pub multiplies_dense: u64,
    /// One α multiply per output window.
    pub multiplies_packed: u64,
    /// Sign-gated additions/subtractions on the packed path.
    pub addsubs: u64,
    /// α multiplies skipped because α is exactly 1 (model-dependent).
    pub unit_alpha_skipped: u64,
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.multiplies_dense += o.multiplies_dense;
        self.multiplies_packed += o.multiplies_packed;
        self.addsubs += o.addsubs;
        self.unit_alpha_skipped += o.unit_alpha_skipped;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct OpCountReport {
    pub layers: Vec<OpCounts>,
    pub total: OpCounts,
}

fn layer_counts(d: &ParamDims) -> OpCounts {
    let windows = (d.out_features * d.windows()) as u64;
    let n = d.kernel_len() as u64;
    OpCounts {
        multiplies_dense: windows * n,
        multiplies_packed: windows,
        addsubs: windows * n,
        unit_alpha_skipped: 0,
    }
}

fn report(layers: Vec<OpCounts>) -> OpCountReport {
    let mut total = OpCounts::default();
    for l in &layers {
        total += *l;
    }
    OpCountReport { layers, total }
}

/// Per-sample operation counts for the dense and packed paths. Bias additions
/// are excluded from both.
pub fn op_count_report(spec: &NetworkSpec) -> OpCountReport {
    report(spec.param_dims().iter().map(layer_counts).collect())
}

/// As [`op_count_report`], also counting α multiplies skipped for kernels
/// whose α is exactly 1.
pub fn op_count_report_for_model(model: &BinarizedModel) -> OpCountReport {
    let counts = model
        .spec
        .param_dims()
        .iter()
        .zip(&model.layers)
        .map(|(d, l)| {
            let mut c = layer_counts(d);
            let unit = l.kernels.iter().filter(|k| k.alpha == 1.0).count() as u64;
            c.unit_alpha_skipped = unit * d.windows() as u64;
            c
        })
        .collect();
    report(counts)
}
