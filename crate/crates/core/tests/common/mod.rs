#![allow(dead_code)]

use nalgebra::{dmatrix, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srhc_core::model::SystemModel;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable third-order plant in Brunovsky form.
pub fn stable_plant() -> SystemModel {
    SystemModel::new(
        dmatrix![0.0, 1.0, 0.0; 0.0, 0.0, 1.0; 0.4, 0.5, -0.25],
        dmatrix![0.0; 0.0; 1.0],
    )
    .unwrap()
}

pub fn stable_plant_noise_cov() -> DMatrix<f64> {
    dmatrix![
        2.830399255, 5.491512606, 3.612257417;
        5.491512606, 11.554870229, 6.896706270;
        3.612257417, 6.896706270, 4.625993264
    ]
}

/// Triple integrator.
pub fn triple_integrator() -> SystemModel {
    SystemModel::new(
        dmatrix![1.0, 1.0, 0.0; 0.0, 1.0, 1.0; 0.0, 0.0, 1.0],
        dmatrix![0.0; 0.0; 1.0],
    )
    .unwrap()
}

pub fn random_vector(rng: &mut impl Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// `GGᵀ + εI`, exactly symmetric.
pub fn random_spd(rng: &mut impl Rng, n: usize, eps: f64) -> DMatrix<f64> {
    let g = random_matrix(rng, n, n, 1.0);
    let s = &g * g.transpose() + DMatrix::identity(n, n) * eps;
    (&s + s.transpose()) * 0.5
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Unstable second-order plant with a single input.
pub fn unstable_plant() -> SystemModel {
    SystemModel::new(dmatrix![1.23, -0.15; 0.25, 1.0], dmatrix![0.14; 0.12]).unwrap()
}

pub fn unstable_plant_noise_cov() -> DMatrix<f64> {
    dmatrix![2.722030613, 4.975999693; 4.975999693, 9.102559685]
}
