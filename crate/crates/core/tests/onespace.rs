mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use pbdw::greedy::{weak_greedy, GreedyConfig, GreedyMode, TrainingSet};
use pbdw::linalg::UBasis;
use pbdw::onespace::{beta_mu, OneSpaceMap, ReducedSpace};
use pbdw::{MeasurementSystem, ParametricModel, PbdwError};
use proptest::prelude::*;
use rand::Rng;

fn hierarchy(model: &ParametricModel, n: usize) -> (ReducedSpace, Vec<f64>) {
    let cfg = GreedyConfig { n_max: n, ..GreedyConfig::default() };
    let (rs, trace) = weak_greedy(model, &TrainingSet::tensor_grid(model.d_y(), 5).unwrap(), &cfg, GreedyMode::Fixed).unwrap();
    (rs, trace.eps_history)
}

fn random_space(model: &ParametricModel, n: usize, seed: u64) -> ReducedSpace {
    let mut g = rng(seed);
    let cols = DMatrix::from_fn(model.dim(), n, |_, _| g.random_range(-1.0..1.0));
    ReducedSpace::linear(model.dim(), UBasis::from_columns(model.space(), &cols, 1e-10), 0.1, "random")
}

/// `min ‖P_W v‖_U` over unit `v = cos t·v1 + sin t·v2` of a 2-dimensional space.
fn sampled_beta(system: &MeasurementSystem, rs: &ReducedSpace, samples: usize) -> f64 {
    let b = rs.basis().vectors();
    (0..samples)
        .map(|k| {
            let t = std::f64::consts::PI * k as f64 / samples as f64;
            let v = &b[0] * t.cos() + &b[1] * t.sin();
            system.w_coords(&v).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn space_inside_w_has_unit_stability() {
    let model = model_1d(80, 2, 0.5);
    let system = sensors(&model, 4);
    let psi = system.representers().columns(0, 1).clone_owned();
    let rs = ReducedSpace::linear(model.dim(), UBasis::from_columns(model.space(), &psi, 1e-10), 0.0, "w");
    let (beta, mu) = beta_mu(&system, &rs);
    assert!(rel_close(beta, 1.0, 1e-12) && rel_close(mu, 1.0, 1e-12));
}

#[test]
fn space_orthogonal_to_w_is_refused() {
    let model = model_1d(80, 2, 0.5);
    let system = sensors(&model, 4);
    let (_, perp) = system.project_w(&random_vector(&mut rng(2), model.dim()));
    let rs = ReducedSpace::linear(model.dim(), UBasis::from_columns(model.space(), &DMatrix::from_column_slice(model.dim(), 1, perp.as_slice()), 1e-10), 0.1, "perp");
    let (beta, mu) = beta_mu(&system, &rs);
    assert!(beta <= 1e-10 && mu.is_infinite());
    assert!(matches!(OneSpaceMap::new(&system, rs), Err(PbdwError::MapUndefined { .. })));
}

#[test]
fn more_basis_vectors_than_sensors_gives_infinite_mu() {
    let model = model_1d(80, 2, 0.5);
    let system = sensors(&model, 2);
    let (_, mu) = beta_mu(&system, &random_space(&model, 3, 1));
    assert!(mu.is_infinite());
}

#[test]
fn beta_agrees_with_sampled_inf_sup() {
    let model = model_1d(100, 2, 0.5);
    let system = sensors(&model, 3);
    for seed in 0..5 {
        let rs = random_space(&model, 2, seed);
        let (beta, _) = beta_mu(&system, &rs);
        let sampled = sampled_beta(&system, &rs, 20_000);
        assert!(sampled >= beta * (1.0 - 1e-12));
        assert!(rel_close(sampled, beta, 1e-3), "seed {seed}: {sampled} vs {beta}");
    }
}

#[test]
fn zero_dimensional_space_returns_the_minimal_norm_element() {
    let model = model_1d(80, 2, 0.5);
    let system = sensors(&model, 4);
    let map = OneSpaceMap::new(&system, ReducedSpace::linear(model.dim(), UBasis::new(), 0.3, "empty")).unwrap();
    let u = model.solve(&[0.3, 0.1]).unwrap();
    let (w_part, _) = system.project_w(&u);
    let rec = map.recover(&system, &system.observe_exact(&u)).unwrap();
    assert!(model.space().norm(&(rec - &w_part)) <= 1e-12 * model.space().norm(&w_part));
    assert!(rel_close(map.certify(), 0.3, 1e-15));
}

#[test]
fn reduced_space_members_are_recovered_exactly() {
    let model = model_1d(100, 4, 0.9);
    let system = sensors(&model, 4);
    let (rs, eps) = hierarchy(&model, 3);
    let map = OneSpaceMap::new(&system, rs.truncated(3, eps[3])).unwrap();
    let mut g = rng(5);
    for _ in 0..20 {
        let a = random_vector(&mut g, 3);
        let u = map.reduced().basis().combine(&a, model.dim());
        let rec = map.recover_coords(&system, &system.w_coords(&u));
        assert!(model.space().norm(&(rec - &u)) <= 1e-8 * model.space().norm(&u));
    }
}

#[test]
fn zero_eps_certifies_zero() {
    let model = model_1d(80, 2, 0.5);
    let system = sensors(&model, 4);
    let map = OneSpaceMap::new(&system, random_space(&model, 2, 3).truncated(2, 0.0)).unwrap();
    assert_eq!(map.certify(), 0.0);
    assert!(rel_close(map.certify_noisy(0.01), map.mu() * 0.01, 1e-12));
}

#[test]
fn extremal_cylinder_element_attains_the_certificate() {
    let model = model_1d(100, 4, 0.9);
    let system = sensors(&model, 4);
    let (rs, eps) = hierarchy(&model, 3);
    for n in 1..=3 {
        let map = OneSpaceMap::new(&system, rs.truncated(n, eps[n])).unwrap();
        let e = map.extremal_element(&system).unwrap();
        let space = model.space();
        let dist = space.norm(&(&e - map.reduced().project(&e)));
        assert!(dist <= eps[n] * (1.0 + 1e-8), "n = {n}: dist {dist} > eps {}", eps[n]);
        let err = space.norm(&(&e - map.recover_coords(&system, &system.w_coords(&e))));
        assert!(rel_close(err, map.certify(), 1e-2), "n = {n}: {err} vs {}", map.certify());
    }
}

#[test]
fn manifold_errors_respect_mu_times_distance() {
    let model = model_1d(100, 4, 0.9);
    let system = sensors(&model, 4);
    let (rs, eps) = hierarchy(&model, 4);
    let space = model.space();
    for n in 1..=4 {
        let map = OneSpaceMap::new(&system, rs.truncated(n, eps[n])).unwrap();
        let mut g = rng(n as u64);
        for _ in 0..25 {
            let u = model.solve(&random_param(&mut g, 4)).unwrap();
            let dist = space.norm(&(&u - map.reduced().project(&u)));
            let err = space.norm(&(&u - map.recover_coords(&system, &system.w_coords(&u))));
            assert!(err <= map.mu() * dist * (1.0 + 1e-8) + 1e-14);
        }
    }
}

#[test]
fn nested_spaces_record_distance_and_stability() {
    // Distances shrink along the hierarchy while mu may grow.
    let model = model_1d(100, 4, 0.9);
    let system = sensors(&model, 4);
    let (rs, eps) = hierarchy(&model, 4);
    let mut last = f64::INFINITY;
    let mut mus = Vec::new();
    for n in 0..=4 {
        let dist = eps[n];
        assert!(dist <= last);
        last = dist;
        mus.push(beta_mu(&system, &rs.truncated(n, eps[n])).1);
    }
    assert!(mus.windows(2).any(|w| w[1] > w[0]));
}

#[test]
fn linear_map_norm_equals_mu() {
    let model = model_1d(100, 4, 0.9);
    let system = sensors(&model, 4);
    let (rs, eps) = hierarchy(&model, 3);
    let map = OneSpaceMap::new(&system, rs.truncated(3, eps[3])).unwrap();
    let mut g = rng(11);
    let mut best: f64 = 0.0;
    for _ in 0..1000 {
        let c = random_vector(&mut g, 4).normalize();
        let ratio = model.space().norm(&map.recover_coords(&system, &c));
        assert!(ratio <= map.mu() * (1.0 + 1e-6));
        best = best.max(ratio);
    }
    assert!(best >= 0.9 * map.mu());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recovery_is_data_consistent_and_optimal(seed in any::<u64>()) {
        let model = model_1d(80, 3, 0.7);
        let system = sensors(&model, 5);
        let anchor = model.solve(&[0.0; 3]).unwrap();
        let basis = random_space(&model, 3, seed).basis().clone();
        let map = OneSpaceMap::new(&system, ReducedSpace::affine(anchor, basis, 0.1, "affine")).unwrap();
        let mut g = rng(seed ^ 1);
        let u = random_vector(&mut g, model.dim());
        let w = system.w_coords(&u);
        let rec = map.recover_coords(&system, &w);
        prop_assert!((system.w_coords(&rec) - &w).norm() <= 1e-9 * w.norm().max(1.0));
        let gap = &rec - map.reduced().project(&rec);
        for _ in 0..5 {
            let (_, eta) = system.project_w(&random_vector(&mut g, model.dim()));
            let ip = model.space().inner(&gap, &eta);
            prop_assert!(ip.abs() <= 1e-9 * model.space().norm(&gap).max(1e-12) * model.space().norm(&eta));
        }
    }

    #[test]
    fn linear_recovery_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let model = model_1d(80, 2, 0.5);
        let system = sensors(&model, 4);
        let map = OneSpaceMap::new(&system, random_space(&model, 3, seed)).unwrap();
        let mut g = rng(seed);
        let (w1, w2): (DVector<f64>, DVector<f64>) = (random_vector(&mut g, 4), random_vector(&mut g, 4));
        let lhs = map.recover_coords(&system, &(&w1 * alpha + &w2));
        let rhs = map.recover_coords(&system, &w1) * alpha + map.recover_coords(&system, &w2);
        prop_assert!(model.space().norm(&(&lhs - &rhs)) <= 1e-10 * model.space().norm(&rhs).max(1.0));
    }
}
