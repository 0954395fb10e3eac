//! Seeded fixtures shared by the benchmarks.

use bcnn::binarize::binarize_network;
use bcnn::network::{init_params, NetworkParams, NetworkSpec};
use bcnn::packed::BinarizedModel;
use bcnn::tensor::{Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inputs uniform in [0, 1), like resized frames.
pub fn random_input(shape: Shape4, seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_vec(shape, (0..shape.len()).map(|_| rng.gen::<f64>()).collect()).expect("valid shape")
}

/// Canonical network: the dense model with effective weights `α·sign(W)`
/// and its packed counterpart, so both paths compute the same function.
pub fn canonical_pair(seed: u64) -> (NetworkParams, BinarizedModel) {
    let params = init_params(&NetworkSpec::canonical(), seed);
    let bin = binarize_network(&params).expect("finite weights");
    let packed = BinarizedModel::from_binarized(&bin).expect("consistent layers");
    (bin.effective_params(), packed)
}
