//! Fixtures shared by the benchmarks.

use agc_core::data::generate_synthetic;
use agc_core::numerics::Tensor;
use agc_core::{AgcLstmNetwork, Layout, NetworkConfig, SkeletonSequence, Stream, SyntheticActionSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

/// A network over the 15-joint body.
pub fn body_network(variant: &str, width: usize) -> AgcLstmNetwork {
    let mut cfg = NetworkConfig::toy(3, width);
    cfg.variant = variant.parse().expect("known variant");
    AgcLstmNetwork::new(cfg, &Layout::Body15.graph(), Stream::Joints, 1).expect("valid network")
}

/// One synthetic clip resampled to `frames` frames.
pub fn clip(frames: usize) -> SkeletonSequence {
    let spec = SyntheticActionSpec::standard(3);
    let data = generate_synthetic(&spec, 1, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    agc_core::data::sample_fixed_length(&data.samples[0], frames, agc_core::data::SampleMode::Eval, &mut rng)
        .expect("non-empty clip")
}
