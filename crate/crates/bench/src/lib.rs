//! Seeded inputs shared by the benchmarks.

use crnet_core::csc::CscProblem;
use crnet_core::models::{CrnetAConfig, CrnetBConfig, Model};
use crnet_core::{FilterBank, Shape, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn image(c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
    Tensor4::random_uniform(Shape::new(1, c, h, w), 0.0, 1.0, &mut rng(seed))
}

/// `out×inp×k×k` bank with He-scaled entries.
pub fn bank(out: usize, inp: usize, k: usize, seed: u64) -> FilterBank {
    let std = (2.0 / (inp * k * k) as f64).sqrt();
    FilterBank::new(Tensor4::random_normal(
        Shape::new(out, inp, k, k),
        std,
        &mut rng(seed),
    ))
    .expect("valid bank")
}

/// Grayscale `side×side` signal coded by `m` random 3×3 atoms.
pub fn csc_problem(m: usize, side: usize, lambda: f64) -> CscProblem {
    CscProblem::new(image(1, side, side, 1), bank(m, 1, 3, 2), lambda, false)
        .expect("valid problem")
}

/// CRNet-A with `k` recurrent stages and otherwise default widths.
pub fn crnet_a(k: usize) -> Model {
    Model::init(
        CrnetAConfig {
            k,
            ..CrnetAConfig::default()
        }
        .into(),
        3,
    )
    .expect("valid config")
}

pub fn crnet_b_small() -> Model {
    let cfg = CrnetBConfig {
        n0: 32,
        m0: 64,
        k: 5,
        scales: vec![2],
        ..CrnetBConfig::default()
    };
    Model::init(cfg.into(), 4).expect("valid config")
}
