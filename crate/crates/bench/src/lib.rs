//! Shared fixtures for the criterion benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use refsr_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng(seed))
}

/// Default synthetic pair as `(t2_lr, pd_reference, t2_hr)`.
pub fn synth_inputs() -> (Tensor, Tensor, Tensor) {
    let pair = refsr_core::data_io::synth_pair(&refsr_core::data_io::SynthPairSpec::default()).expect("default spec is valid");
    let lr = refsr_core::data_io::make_lr(&pair.t2, 4).expect("64 is divisible by 4");
    (lr, pair.pd, pair.t2)
}
