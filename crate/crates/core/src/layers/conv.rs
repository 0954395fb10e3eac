use crate::error::{Error, Result};
use crate::layers::gemm::{gemm, MatRef};
use crate::tensor::{Shape4, Tensor4};

/// Weights `(out_feature, in_channel, kh, kw)` and one bias per output
/// feature of a valid (unpadded) convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    out_features: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl ConvLayerParams {
    pub fn new(
        out_features: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        if out_features == 0 || in_channels == 0 || kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv dims must be >= 1: out={out_features} in={in_channels} k={kh}x{kw} stride={stride}"
            )));
        }
        let expected = out_features * in_channels * kh * kw;
        if weights.len() != expected {
            return Err(Error::shape(
                "ConvLayerParams::new",
                format!("{expected} weights ({out_features}x{in_channels}x{kh}x{kw})"),
                format!("{} weights", weights.len()),
            ));
        }
        if biases.len() != out_features {
            return Err(Error::shape(
                "ConvLayerParams::new",
                format!("{out_features} biases"),
                format!("{} biases", biases.len()),
            ));
        }
        Ok(ConvLayerParams {
            out_features,
            in_channels,
            kh,
            kw,
            stride,
            weights,
            biases,
        })
    }

    pub fn zeros(out_features: usize, in_channels: usize, kh: usize, kw: usize, stride: usize) -> Result<Self> {
        let n = out_features * in_channels * kh * kw;
        Self::new(out_features, in_channels, kh, kw, stride, vec![0.0; n], vec![0.0; out_features])
    }

    pub fn out_features(&self) -> usize {
        self.out_features
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

    /// Elements in one output kernel (`in_channels·kh·kw`).
    pub fn kernel_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn kernel(&self, feature: usize) -> &[f64] {
        let k = self.kernel_len();
        &self.weights[feature * k..(feature + 1) * k]
    }

    pub fn kernels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.weights.chunks_exact(self.kernel_len())
    }

    /// Same dimensions, different values.
    pub fn with_values(&self, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        Self::new(
            self.out_features,
            self.in_channels,
            self.kh,
            self.kw,
            self.stride,
            weights,
            biases,
        )
    }

    /// Output shape of a forward pass over `input`, or a diagnostic naming
    /// both shapes.
    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.c != self.in_channels || input.h < self.kh || input.w < self.kw {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input ?x{}x>={}x>={} for kernel {}x{}x{}x{}",
                    self.in_channels, self.kh, self.kw, self.out_features, self.in_channels, self.kh, self.kw
                ),
                input,
            ));
        }
        Ok(Shape4::new(
            input.n,
            self.out_features,
            (input.h - self.kh) / self.stride + 1,
            (input.w - self.kw) / self.stride + 1,
        ))
    }

    fn covers(&self, input: Shape4) -> bool {
        self.kh == input.h && self.kw == input.w
    }
}

/// Gradients of a scalar loss with respect to a convolution's input and
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Gathers every receptive field of one sample into a `(c·kh·kw) x (oh·ow)`
/// row-major matrix.
fn im2col(sample: &[f64], input: Shape4, p: &ConvLayerParams, out: Shape4, cols: &mut [f64]) {
    let plane = out.h * out.w;
    let mut row = 0;
    for c in 0..input.c {
        let chan = &sample[c * input.h * input.w..(c + 1) * input.h * input.w];
        for ky in 0..p.kh {
            for kx in 0..p.kw {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..out.h {
                    let src_row = &chan[(oy * p.stride + ky) * input.w..];
                    let dst_row = &mut dst[oy * out.w..(oy + 1) * out.w];
                    if p.stride == 1 {
                        dst_row.copy_from_slice(&src_row[kx..kx + out.w]);
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            *d = src_row[ox * p.stride + kx];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im_add(cols: &[f64], input: Shape4, p: &ConvLayerParams, out: Shape4, sample: &mut [f64]) {
    let plane = out.h * out.w;
    let mut row = 0;
    for c in 0..input.c {
        let chan = &mut sample[c * input.h * input.w..(c + 1) * input.h * input.w];
        for ky in 0..p.kh {
            for kx in 0..p.kw {
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..out.h {
                    let base = (oy * p.stride + ky) * input.w + kx;
                    let src_row = &src[oy * out.w..(oy + 1) * out.w];
                    for (ox, &g) in src_row.iter().enumerate() {
                        chan[base + ox * p.stride] += g;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Valid convolution: `out[n,f,y,x] = Σ in[n,c,y·s+i,x·s+j]·w[f,c,i,j] + b[f]`.
pub fn conv2d_forward(input: &Tensor4, params: &ConvLayerParams) -> Result<Tensor4> {
    let ishape = input.shape();
    let oshape = params.output_shape(ishape)?;
    let k = params.kernel_len();
    let plane = oshape.h * oshape.w;
    let mut out = Tensor4::zeros(oshape)?;
    let weights = MatRef::row_major(&params.weights, params.out_features, k);

    if params.covers(ishape) {
        // Each sample is already one column; do the whole batch at once.
        let x = MatRef::row_major(input.data(), ishape.n, k);
        gemm(x, weights.t(), 0.0, out.data_mut());
    } else {
        let mut cols = vec![0.0; k * plane];
        for n in 0..ishape.n {
            im2col(input.sample(n), ishape, params, oshape, &mut cols);
            gemm(weights, MatRef::row_major(&cols, k, plane), 0.0, out.sample_mut(n));
        }
    }
    for n in 0..oshape.n {
        let sample = out.sample_mut(n);
        for (f, &b) in params.biases.iter().enumerate() {
            for v in &mut sample[f * plane..(f + 1) * plane] {
                *v += b;
            }
        }
    }
    Ok(out)
}

/// Backpropagates `grad_out` through [`conv2d_forward`].
pub fn conv2d_backward(input: &Tensor4, params: &ConvLayerParams, grad_out: &Tensor4) -> Result<ConvGrads> {
    let ishape = input.shape();
    let oshape = params.output_shape(ishape)?;
    if grad_out.shape() != oshape {
        return Err(Error::shape("conv2d_backward", oshape, grad_out.shape()));
    }
    let k = params.kernel_len();
    let f = params.out_features;
    let plane = oshape.h * oshape.w;
    let weights = MatRef::row_major(&params.weights, f, k);
    let mut grad_input = Tensor4::zeros(ishape)?;
    let mut grad_weights = vec![0.0; params.weights.len()];
    let mut grad_biases = vec![0.0; f];

    for n in 0..oshape.n {
        let g = grad_out.sample(n);
        for (fi, gb) in grad_biases.iter_mut().enumerate() {
            *gb += g[fi * plane..(fi + 1) * plane].iter().sum::<f64>();
        }
    }

    if params.covers(ishape) {
        let x = MatRef::row_major(input.data(), ishape.n, k);
        let g = MatRef::row_major(grad_out.data(), ishape.n, f);
        gemm(g.t(), x, 0.0, &mut grad_weights);
        gemm(g, weights, 0.0, grad_input.data_mut());
    } else {
        let mut cols = vec![0.0; k * plane];
        let mut dcols = vec![0.0; k * plane];
        for n in 0..ishape.n {
            im2col(input.sample(n), ishape, params, oshape, &mut cols);
            let g = MatRef::row_major(grad_out.sample(n), f, plane);
            let c = MatRef::row_major(&cols, k, plane);
            gemm(g, c.t(), 1.0, &mut grad_weights);
            gemm(weights.t(), g, 0.0, &mut dcols);
            col2im_add(&dcols, ishape, params, oshape, grad_input.sample_mut(n));
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weights: grad_weights,
        biases: grad_biases,
    })
}

fn check_fc(input: Shape4, params: &ConvLayerParams) -> Result<()> {
    if !params.covers(input) || input.c != params.in_channels {
        return Err(Error::shape(
            "fc",
            format!("input ?x{}x{}x{} matching the kernel", params.in_channels, params.kh, params.kw),
            input,
        ));
    }
    Ok(())
}

/// Fully connected layer as a convolution whose kernel spans the whole input.
pub fn fc_forward(input: &Tensor4, params: &ConvLayerParams) -> Result<Tensor4> {
    check_fc(input.shape(), params)?;
    conv2d_forward(input, params)
}

pub fn fc_backward(input: &Tensor4, params: &ConvLayerParams, grad_out: &Tensor4) -> Result<ConvGrads> {
    check_fc(input.shape(), params)?;
    conv2d_backward(input, params, grad_out)
}
