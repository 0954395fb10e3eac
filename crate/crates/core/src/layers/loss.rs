use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

fn check_logits(logits: &Tensor4) -> Result<Shape4> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 || s.c < 2 {
        return Err(Error::shape("softmax", "Nx(K>=2)x1x1 logits", s));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    Ok(s)
}

fn softmax_into(z: &[f64], p: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (pi, &zi) in p.iter_mut().zip(z) {
        *pi = (zi - m).exp();
        total += *pi;
    }
    for pi in p.iter_mut() {
        *pi /= total;
    }
}

/// Class probabilities per sample, shape `N x K x 1 x 1`.
pub fn softmax(logits: &Tensor4) -> Result<Tensor4> {
    let s = check_logits(logits)?;
    let mut probs = Tensor4::zeros(s)?;
    for n in 0..s.n {
        softmax_into(logits.sample(n), probs.sample_mut(n));
    }
    Ok(probs)
}

/// Batch-mean softmax cross-entropy and its gradient with respect to the
/// logits.
pub fn softmax_xent(logits: &Tensor4, labels: &[u8]) -> Result<(f64, Tensor4)> {
    let s = check_logits(logits)?;
    if labels.len() != s.n {
        return Err(Error::shape(
            "softmax_xent",
            format!("{} labels", s.n),
            format!("{} labels", labels.len()),
        ));
    }
    let scale = 1.0 / s.n as f64;
    let mut grad = Tensor4::zeros(s)?;
    let mut loss = 0.0;
    for (n, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= s.c {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                s.c
            )));
        }
        let z = logits.sample(n);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        loss += log_sum - (z[label] - m);
        let g = grad.sample_mut(n);
        softmax_into(z, g);
        g[label] -= 1.0;
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    Ok((loss * scale, grad))
}
