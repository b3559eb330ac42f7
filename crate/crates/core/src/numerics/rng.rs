//! Seeded random streams.
//!
//! Every stochastic component draws from ChaCha8 seeded with
//! `ChaCha8Rng::seed_from_u64(seed)` and then switched to a 64-bit stream id
//! with `set_stream`. Distinct consumers (scene layout, per-sequence oracle
//! noise, parameter init, masking) use distinct stream ids, so adding draws
//! in one consumer never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Matrix;

pub type StreamRng = ChaCha8Rng;

/// Well-known stream ids.
pub mod streams {
    pub const ENCODER_INIT: u64 = 1;
    pub const TRACKER_INIT: u64 = 2;
    pub const SCENE_LAYOUT: u64 = 10;
    pub const SCENE_RENDER: u64 = 11;
    pub const ORACLE: u64 = 12;
    pub const MASKING: u64 = 20;
    pub const AUGMENT: u64 = 21;
    pub const TRAIN_DATA: u64 = 30;
}

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child stream id, e.g. one per sequence or per training step.
pub fn substream(stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer keeps children of nearby parents apart
    let mut z = stream
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal(rng: &mut StreamRng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
}

/// Matrix with i.i.d. centered Gaussian entries.
pub fn gaussian_matrix(rng: &mut StreamRng, rows: usize, cols: usize, sigma: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| normal(rng, sigma))
}
