//! Weight binarization `W ≈ αB` with `B ∈ {±1}ⁿ`.
//!
//! For a fixed sign pattern the reconstruction cost `‖W − αB‖²` is a quadratic
//! in α minimised at `α = Wᵀ B / n`; over all sign patterns the optimum is
//! `B = sign(W)`, which gives `α = ‖W‖₁ / n`. Biases are never binarized.

use crate::error::{Error, Result};
use crate::layers::ConvLayerParams;
use crate::network::{NetworkParams, NetworkSpec};

/// Scale and sign pattern approximating one output kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedKernel {
    alpha: f64,
    signs: Vec<i8>,
}

impl BinarizedKernel {
    pub fn new(alpha: f64, signs: Vec<i8>) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if signs.is_empty() {
            return Err(Error::InvalidArgument("kernel must have at least one weight".into()));
        }
        if let Some(s) = signs.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument(format!("sign {s} is not +1 or -1")));
        }
        Ok(BinarizedKernel { alpha, signs })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }
}

/// Optimal `(α, B)` for one kernel: `α = mean |wᵢ|`, `Bᵢ = sign(wᵢ)` with
/// `sign(0) = +1`.
pub fn binarize_kernel(w: &[f64]) -> Result<BinarizedKernel> {
    if w.is_empty() {
        return Err(Error::InvalidArgument("cannot binarize an empty kernel".into()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel weights"));
    }
    let alpha = mean_abs(w);
    let signs = w.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect();
    Ok(BinarizedKernel { alpha, signs })
}

/// Mean of `|wᵢ|`, shifted by the first magnitude so that a kernel whose
/// magnitudes are all equal yields that magnitude exactly.
fn mean_abs(w: &[f64]) -> f64 {
    let shift = w[0].abs();
    let dev: f64 = w.iter().map(|v| v.abs() - shift).sum();
    (shift + dev / w.len() as f64).max(0.0)
}

/// `J = Σ (wᵢ − α·Bᵢ)²`.
pub fn reconstruction_cost(w: &[f64], kernel: &BinarizedKernel) -> Result<f64> {
    if w.len() != kernel.len() {
        return Err(Error::shape(
            "reconstruction_cost",
            format!("{} weights", kernel.len()),
            format!("{} weights", w.len()),
        ));
    }
    Ok(w.iter()
        .zip(&kernel.signs)
        .map(|(&wi, &b)| {
            let d = wi - kernel.alpha * f64::from(b);
            d * d
        })
        .sum())
}

/// `Ŵ = α·B`.
pub fn effective_weights(kernel: &BinarizedKernel) -> Vec<f64> {
    kernel.signs.iter().map(|&b| kernel.alpha * f64::from(b)).collect()
}

/// How many weights share one scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaGranularity {
    /// One α per output kernel (filter).
    #[default]
    PerKernel,
    /// One α shared by every kernel of a layer.
    PerLayer,
}

/// Binarized kernels of one conv/fc layer, biases kept real.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedLayer {
    template: ConvLayerParams,
    kernels: Vec<BinarizedKernel>,
}

impl BinarizedLayer {
    pub fn kernels(&self) -> &[BinarizedKernel] {
        &self.kernels
    }

    pub fn biases(&self) -> &[f64] {
        self.template.biases()
    }

    pub fn out_features(&self) -> usize {
        self.template.out_features()
    }

    pub fn in_channels(&self) -> usize {
        self.template.in_channels()
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        self.template.kernel_size()
    }

    pub fn stride(&self) -> usize {
        self.template.stride()
    }

    /// Dense layer whose weights are `α·B` per kernel.
    pub fn effective_params(&self) -> ConvLayerParams {
        let weights = self.kernels.iter().flat_map(effective_weights).collect();
        self.template
            .with_values(weights, self.template.biases().to_vec())
            .expect("same dims")
    }
}

/// Every conv/fc layer of a network in binarized form.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedNetwork {
    spec: NetworkSpec,
    layers: Vec<BinarizedLayer>,
}

impl BinarizedNetwork {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[BinarizedLayer] {
        &self.layers
    }

    pub fn kernel_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernels.len()).sum()
    }

    /// Dense parameters holding the effective weights `Ŵ`.
    pub fn effective_params(&self) -> NetworkParams {
        NetworkParams::new(
            self.spec.clone(),
            self.layers.iter().map(BinarizedLayer::effective_params).collect(),
        )
        .expect("same dims as source")
    }
}

fn binarize_layer(layer: &ConvLayerParams, granularity: AlphaGranularity) -> Result<BinarizedLayer> {
    let mut kernels = layer.kernels().map(binarize_kernel).collect::<Result<Vec<_>>>()?;
    if granularity == AlphaGranularity::PerLayer {
        let alpha = mean_abs(layer.weights());
        for k in &mut kernels {
            k.alpha = alpha;
        }
    }
    Ok(BinarizedLayer {
        template: layer.clone(),
        kernels,
    })
}

/// Binarizes every conv/fc layer with one α per output kernel.
pub fn binarize_network(params: &NetworkParams) -> Result<BinarizedNetwork> {
    binarize_network_with(params, AlphaGranularity::PerKernel)
}

pub fn binarize_network_with(params: &NetworkParams, granularity: AlphaGranularity) -> Result<BinarizedNetwork> {
    let layers = params
        .layers()
        .iter()
        .map(|l| binarize_layer(l, granularity))
        .collect::<Result<Vec<_>>>()?;
    Ok(BinarizedNetwork {
        spec: params.spec().clone(),
        layers,
    })
}

/// Sum of reconstruction costs per layer.
pub fn layer_costs(params: &NetworkParams, binarized: &BinarizedNetwork) -> Result<Vec<f64>> {
    params
        .layers()
        .iter()
        .zip(binarized.layers())
        .map(|(p, b)| {
            p.kernels()
                .zip(b.kernels())
                .map(|(w, k)| reconstruction_cost(w, k))
                .sum::<Result<f64>>()
        })
        .collect()
}

/// Copy of a layer with each kernel replaced by `α·sign(W)`; biases unchanged.
pub fn effective_layer(layer: &ConvLayerParams) -> Result<ConvLayerParams> {
    Ok(binarize_layer(layer, AlphaGranularity::PerKernel)?.effective_params())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;

    #[test]
    fn already_binary_kernel() {
        let k = binarize_kernel(&[1.0, -1.0, 1.0, 1.0]).unwrap();
        assert_eq!(k.alpha(), 1.0);
        assert_eq!(k.signs(), &[1, -1, 1, 1]);
        assert_eq!(reconstruction_cost(&[1.0, -1.0, 1.0, 1.0], &k).unwrap(), 0.0);
    }

    #[test]
    fn mixed_kernel() {
        let k = binarize_kernel(&[0.5, -1.5, 1.0, -1.0]).unwrap();
        assert_eq!(k.alpha(), 1.0);
        assert_eq!(k.signs(), &[1, -1, 1, -1]);
    }

    #[test]
    fn zero_kernel() {
        let k = binarize_kernel(&[0.0; 5]).unwrap();
        assert_eq!(k.alpha(), 0.0);
        assert_eq!(k.signs(), &[1; 5]);
        assert_eq!(effective_weights(&k), vec![0.0; 5]);
    }

    #[test]
    fn cost_of_half_offsets() {
        let k = BinarizedKernel::new(1.0, vec![1, -1]).unwrap();
        assert_eq!(reconstruction_cost(&[0.5, -1.5], &k).unwrap(), 0.5);
        assert!(reconstruction_cost(&[0.5], &k).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(binarize_kernel(&[]).is_err());
        assert!(binarize_kernel(&[1.0, f64::NAN]).is_err());
        assert!(BinarizedKernel::new(-1.0, vec![1]).is_err());
        assert!(BinarizedKernel::new(1.0, vec![0]).is_err());
    }

    #[test]
    fn effective_weights_have_magnitude_alpha() {
        let k = BinarizedKernel::new(1.0, vec![1, -1]).unwrap();
        assert_eq!(effective_weights(&k), vec![1.0, -1.0]);
        let k = binarize_kernel(&[0.3, -2.0, 0.7]).unwrap();
        assert!(effective_weights(&k).iter().all(|w| w.abs() == k.alpha()));
    }

    #[test]
    fn canonical_network_has_218_kernels_and_keeps_biases() {
        let mut params = init_params(&NetworkSpec::canonical(), 1);
        for (i, l) in params.layers_mut().iter_mut().enumerate() {
            for (j, b) in l.biases_mut().iter_mut().enumerate() {
                *b = (i * 1000 + j) as f64 * 1e-3 - 0.1;
            }
        }
        let bin = binarize_network(&params).unwrap();
        assert_eq!(bin.kernel_count(), 218);
        for (p, b) in params.layers().iter().zip(bin.layers()) {
            assert_eq!(p.biases(), b.biases());
            assert_eq!(b.kernels().len(), p.out_features());
            assert!(b.kernels().iter().all(|k| k.len() == p.kernel_len()));
        }
    }

    #[test]
    fn already_scaled_network_is_lossless() {
        let params = init_params(&NetworkSpec::canonical(), 5);
        let eff = binarize_network(&params).unwrap().effective_params();
        let again = binarize_network(&eff).unwrap();
        let costs = layer_costs(&eff, &again).unwrap();
        assert!(costs.iter().all(|&c| c == 0.0), "{costs:?}");
        assert_eq!(again.effective_params(), eff);
    }

    #[test]
    fn per_layer_alpha_is_shared() {
        let params = init_params(&NetworkSpec::canonical(), 9);
        let bin = binarize_network_with(&params, AlphaGranularity::PerLayer).unwrap();
        for (p, l) in params.layers().iter().zip(bin.layers()) {
            let mean = p.weights().iter().map(|v| v.abs()).sum::<f64>() / p.weights().len() as f64;
            let a = l.kernels()[0].alpha();
            assert!((a - mean).abs() < 1e-12);
            assert!(l.kernels().iter().all(|k| k.alpha() == a));
        }
    }
}
