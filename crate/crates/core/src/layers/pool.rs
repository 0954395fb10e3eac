use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Argmax positions recorded by [`maxpool_forward`], one flat input index per
/// output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input: Shape4,
    output: Shape4,
    size: usize,
    stride: usize,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> Shape4 {
        self.input
    }

    pub fn output_shape(&self) -> Shape4 {
        self.output
    }

    /// Flat input index chosen for each output element.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Output shape of a max-pool; the windows must tile the input exactly.
pub fn pool_output_shape(input: Shape4, size: usize, stride: usize) -> Result<Shape4> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "pool size and stride must be >= 1, got {size}/{stride}"
        )));
    }
    let fits = |d: usize| d >= size && (d - size).is_multiple_of(stride);
    if !fits(input.h) || !fits(input.w) {
        return Err(Error::shape(
            "maxpool",
            format!("spatial dims tiled exactly by {size}x{size}/{stride} windows"),
            input,
        ));
    }
    Ok(Shape4::new(
        input.n,
        input.c,
        (input.h - size) / stride + 1,
        (input.w - size) / stride + 1,
    ))
}

/// Max over each `size x size` window. Ties go to the first element in
/// row-major scan order.
pub fn maxpool_forward(input: &Tensor4, size: usize, stride: usize) -> Result<(Tensor4, PoolIndices)> {
    let is = input.shape();
    let os = pool_output_shape(is, size, stride)?;
    let mut out = Vec::with_capacity(os.len());
    let mut argmax = Vec::with_capacity(os.len());
    let data = input.data();
    for n in 0..is.n {
        for c in 0..is.c {
            let base = is.index(n, c, 0, 0);
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best_i = base + oy * stride * is.w + ox * stride;
                    let mut best = data[best_i];
                    for dy in 0..size {
                        let row = base + (oy * stride + dy) * is.w + ox * stride;
                        for (i, &v) in data.iter().enumerate().skip(row).take(size) {
                            if v > best {
                                best = v;
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    let indices = PoolIndices {
        input: is,
        output: os,
        size,
        stride,
        argmax,
    };
    Ok((Tensor4::from_vec(os, out)?, indices))
}

/// Routes each output gradient to the input position that won its window.
pub fn maxpool_backward(indices: &PoolIndices, grad_out: &Tensor4) -> Result<Tensor4> {
    let os = indices.output;
    let is = indices.input;
    if grad_out.shape() != os || indices.argmax.len() != os.len() {
        return Err(Error::shape("maxpool_backward", os, grad_out.shape()));
    }
    let mut grad_in = Tensor4::zeros(is)?;
    let gi = grad_in.data_mut();
    let mut o = 0;
    for n in 0..os.n {
        for c in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let idx = indices.argmax[o];
                    let y0 = oy * indices.stride;
                    let x0 = ox * indices.stride;
                    let plane = is.index(n, c, 0, 0);
                    let in_window = idx >= plane && {
                        let rel = idx - plane;
                        let (y, x) = (rel / is.w, rel % is.w);
                        y >= y0 && y < y0 + indices.size && x >= x0 && x < x0 + indices.size && y < is.h
                    };
                    if !in_window {
                        return Err(Error::InvalidArgument(format!(
                            "stale pooling index {idx} for output element {o}"
                        )));
                    }
                    gi[idx] += grad_out.data()[o];
                    o += 1;
                }
            }
        }
    }
    Ok(grad_in)
}
