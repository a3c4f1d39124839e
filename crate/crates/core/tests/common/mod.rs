#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pbdw::sensing::default_layout;
use pbdw::{MeasurementSystem, ModelConfig, ParametricModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn model_1d(n_mesh: usize, d_y: usize, rho: f64) -> ParametricModel {
    ParametricModel::build(&ModelConfig { n_mesh, d_y, rho, ..ModelConfig::default() }).unwrap()
}

pub fn model_2d(n_mesh: usize, d_y: usize, rho: f64) -> ParametricModel {
    ParametricModel::build(&ModelConfig { dx: 2, n_mesh, d_y, rho, ..ModelConfig::default() }).unwrap()
}

pub fn default_model() -> ParametricModel {
    ParametricModel::build(&ModelConfig::default()).unwrap()
}

pub fn sensors(model: &ParametricModel, m: usize) -> MeasurementSystem {
    let width = if model.space().dx() == 1 { 0.05 } else { 0.1 };
    MeasurementSystem::build(model.space(), &default_layout(model.space().dx(), m, width)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_param(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Dense copy of a pattern-backed sparse operator.
pub fn dense_operator(model: &ParametricModel, values: &[f64]) -> DMatrix<f64> {
    let csc = nalgebra_sparse::CscMatrix::try_from_pattern_and_values(
        model.space().mesh().pattern().clone(),
        values.to_vec(),
    )
    .unwrap();
    DMatrix::from(&csc)
}

/// Dense Gram matrix of the U inner product.
pub fn dense_gram(model: &ParametricModel) -> DMatrix<f64> {
    DMatrix::from(&model.space().gram())
}

/// `sqrt(rᵀ G⁻¹ r)` by a dense solve.
pub fn dense_dual_norm(gram: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let z = gram.clone().cholesky().unwrap().solve(r);
    r.dot(&z).sqrt()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
