//! Seeded random streams.
//!
//! Every random quantity comes from `ChaCha8Rng::seed_from_u64(seed)` with the
//! stream selector `(trial << 32) | (block << 24) | layer`, so each
//! (trial, weight block, layer) triple owns an independent counter-based
//! sequence and trials can run in any order or in parallel. Gaussians are
//! drawn with `rand_distr::StandardNormal` (ziggurat).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Weight block identifiers used in the stream selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Block {
    W = 0,
    U = 1,
    B = 2,
    V = 3,
    Input = 4,
    Split = 5,
}

pub fn stream(seed: u64, trial: u32, block: Block, layer: u32) -> ChaCha8Rng {
    assert!(layer < (1 << 24), "layer index exceeds the 24-bit stream field");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(trial) << 32) | ((block as u64) << 24) | u64::from(layer));
    rng
}

/// `len` standard normals from the given stream, in order.
pub fn normals(seed: u64, trial: u32, block: Block, layer: u32, len: usize) -> Vec<f64> {
    let mut rng = stream(seed, trial, block, layer);
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random unit vector of dimension `m`.
pub fn unit_vector(seed: u64, trial: u32, m: usize) -> Vec<f64> {
    let mut v = normals(seed, trial, Block::Input, 0, m);
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    v
}
