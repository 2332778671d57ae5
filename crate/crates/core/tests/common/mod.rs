//! Helpers shared by the integration tests.
#![allow(dead_code)]

use neurotopo::{LabelVolume, Shape};
use neurotopo_oracle::BoolVol;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_oracle(v: &LabelVolume) -> BoolVol {
    BoolVol::new(v.shape().0, v.as_slice().to_vec())
}

pub fn random_label(rng: &mut impl Rng, shape: Shape, density: f64) -> LabelVolume {
    LabelVolume::from_fn(shape, |_| rng.random::<f64>() < density)
}

pub fn random_shape(rng: &mut impl Rng, lo: usize, hi: usize) -> Shape {
    Shape([0; 3].map(|_| rng.random_range(lo..=hi)))
}

/// `(26-foreground, 6-background)` component counts by the oracle.
pub fn oracle_counts(v: &LabelVolume) -> (usize, usize) {
    neurotopo_oracle::topology_counts(&to_oracle(v))
}
