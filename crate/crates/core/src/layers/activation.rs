use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Rectifier, `max(0, x)` elementwise.
pub fn relu_forward(input: &Tensor4) -> Tensor4 {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Passes `grad_out` where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu_backward", input.shape(), grad_out.shape()));
    }
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad)
}
