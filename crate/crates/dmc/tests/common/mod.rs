#![allow(dead_code)]

use dmc::clustering::ClusterConfig;
use dmc::encoder::Nonlinearity;
use dmc::grid::RawGrid;
use dmc::loss_train::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Visual 2×10×1 grids with 2×2 patches give 5 features; audio 12×2 grids give 6.
pub fn tiny_config(z: f64, iterations: usize, nonlinearity: Nonlinearity) -> ModelConfig {
    ModelConfig {
        feature_dim: 4,
        center_dim: 3,
        cluster: ClusterConfig { k: 2, iterations, z },
        nonlinearity,
        visual_patch: (2, 2),
        visual_channels: 1,
        audio_patch: (2, 2),
    }
}

pub fn tiny_model(seed: u64) -> Model {
    Model::init(&tiny_config(1.0, 2, Nonlinearity::RationalCubic), seed).unwrap()
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> RawGrid {
    let values = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    RawGrid::new(h, w, c, values).unwrap()
}

/// Visual, audio and negative-audio grids of `count` tiny samples.
pub fn tiny_grids(seed: u64, count: usize) -> Vec<(RawGrid, RawGrid, RawGrid)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (
                random_grid(&mut rng, 2, 10, 1),
                random_grid(&mut rng, 12, 2, 1),
                random_grid(&mut rng, 12, 2, 1),
            )
        })
        .collect()
}
