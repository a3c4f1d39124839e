mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use pbdw::affine_map::*;
use pbdw::greedy::{poor_mans_select, weak_greedy, GreedyConfig, GreedyMode, TrainingSet};
use pbdw::linalg::{singular_values_desc, UBasis};
use pbdw::minimax::{solve_minimax, MinimaxConfig};
use pbdw::onespace::ReducedSpace;
use pbdw::oracle::{wc_error_bruteforce, ManifoldNet};
use pbdw::{MeasurementSystem, ParametricModel};
use proptest::prelude::*;

fn linear_space(model: &ParametricModel, vectors: &[DVector<f64>], eps: f64) -> ReducedSpace {
    let mut b = UBasis::new();
    for v in vectors {
        let _ = b.try_push(model.space(), v, 1e-10);
    }
    ReducedSpace::linear(model.dim(), b, eps, "explicit")
}

/// Numerical rank of `[W, vectors]` in the U geometry.
fn joint_rank(model: &ParametricModel, system: &MeasurementSystem, vectors: &[DVector<f64>]) -> usize {
    let mut cols: Vec<DVector<f64>> = system.w_basis().column_iter().map(|c| c.clone_owned()).collect();
    cols.extend(vectors.iter().cloned());
    let mut m = DMatrix::zeros(model.dim(), cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, &model.space().whiten(c));
    }
    let sv = singular_values_desc(&m);
    sv.iter().filter(|s| **s > 1e-9 * sv[0]).count()
}

#[test]
fn complement_of_a_subspace_of_w_is_empty() {
    let model = model_1d(80, 2, 0.5);
    let system = sensors(&model, 4);
    let vs: Vec<DVector<f64>> = (0..3).map(|j| system.representers().column(j).clone_owned()).collect();
    assert_eq!(build_complement(model.space(), &system, &vs).unwrap().ncols(), 0);
}

#[test]
fn complement_of_a_space_orthogonal_to_w_is_that_space() {
    let model = model_1d(80, 2, 0.5);
    let system = sensors(&model, 4);
    let mut g = rng(3);
    let vs: Vec<DVector<f64>> = (0..3).map(|_| system.project_w(&random_vector(&mut g, model.dim())).1).collect();
    let z = build_complement(model.space(), &system, &vs).unwrap();
    assert_eq!(z.ncols(), 3);
    let gz = model.space().gram_mul_matrix(&z);
    for v in &vs {
        let back = &z * gz.tr_mul(v);
        assert!(model.space().norm(&(back - v)) <= 1e-10 * model.space().norm(v));
    }
}

#[test]
fn general_complement_is_orthogonal_with_the_expected_dimension() {
    let model = model_1d(100, 4, 0.9);
    let system = sensors(&model, 4);
    let mut g = rng(8);
    let mut vs: Vec<DVector<f64>> = (0..4).map(|_| model.solve(&random_param(&mut g, 4)).unwrap()).collect();
    vs.push(system.representers().column(1).clone_owned());
    let z = build_complement(model.space(), &system, &vs).unwrap();
    let cross = system.gram_w_basis().tr_mul(&z);
    assert!(cross.amax() <= 1e-10);
    assert_eq!(z.ncols(), joint_rank(&model, &system, &vs) - system.m());
    assert!(z.ncols() <= vs.len());
    let gram = z.transpose() * model.space().gram_mul_matrix(&z);
    assert!((gram - DMatrix::identity(z.ncols(), z.ncols())).amax() <= 1e-12);
}

#[test]
fn single_state_net_gives_the_projection_and_zero_map() {
    let model = model_1d(100, 4, 0.9);
    let system = sensors(&model, 4);
    let u0 = model.solve(&[0.3, -0.2, 0.9, 0.0]).unwrap();
    let u1 = model.solve(&[-0.5, 0.5, 0.1, 0.4]).unwrap();
    let ul = linear_space(&model, &[u1], 0.0);
    let net = ManifoldNet::from_parts(vec![vec![0.0; 4]], vec![u0.clone()]);
    let map = fit(&model, &system, &net, &ul, &MinimaxConfig::default()).unwrap();
    assert!(map.b_matrix.amax() <= 1e-12);
    let gz = model.space().gram_mul_matrix(&map.complement_basis);
    assert!((&map.z - gz.tr_mul(&u0)).norm() <= 1e-10 * u0.norm());
    let (w_part, perp) = system.project_w(&u0);
    let in_span = &w_part + &map.complement_basis * &map.z;
    let dist = model.space().norm(&(&u0 - &in_span));
    assert!(rel_close(map.training_objective, dist, 1e-8));
    assert!(dist > 0.0 && dist < model.space().norm(&perp));
}

#[test]
fn exact_affine_models_are_fitted_to_solver_precision() {
    let model = model_1d(100, 4, 0.9);
    let system = sensors(&model, 4);
    let ubar = model.solve(&[0.0; 4]).unwrap();
    let v = model.solve(&[1.0, -1.0, 0.5, 0.0]).unwrap() - &ubar;
    assert!(system.w_coords(&v).norm() > 0.0);
    let states: Vec<DVector<f64>> = (0..21).map(|k| &ubar + &v * (-1.0 + 0.1 * k as f64)).collect();
    let net = ManifoldNet::from_parts(vec![vec![0.0; 4]; states.len()], states);
    let ul = linear_space(&model, &[ubar.clone(), v.clone()], 0.0);
    let map = fit(&model, &system, &net, &ul, &MinimaxConfig::default()).unwrap();
    assert!(map.training_objective <= 1e-6 * model.space().norm(&ubar), "{}", map.training_objective);
}

#[test]
fn zero_map_returns_the_observed_part() {
    let model = model_1d(60, 2, 0.5);
    let system = sensors(&model, 3);
    let z = build_complement(model.space(), &system, &[model.solve(&[0.1, 0.2]).unwrap()]).unwrap();
    let map = AffineRecoveryMap {
        z: DVector::zeros(z.ncols()),
        b_matrix: DMatrix::zeros(z.ncols(), 3),
        complement_basis: z,
        training_objective: 0.0,
        objective_lower_bound: 0.0,
        certified: true,
        newton_steps: 0,
        history: vec![],
        eta: 0.0,
    };
    let w = DVector::from_vec(vec![0.3, -1.0, 2.0]);
    assert!((map.apply_coords(&system, &w) - system.synthesize(&w)).amax() <= 1e-15);
}

#[test]
fn fitted_map_dominates_the_poor_mans_map_and_respects_the_width_bound() {
    let model = model_1d(100, 4, 0.9);
    let system = sensors(&model, 4);
    let training = TrainingSet::tensor_grid(4, 4).unwrap();
    let (rs, trace) = weak_greedy(&model, &training, &GreedyConfig { n_max: 7, ..GreedyConfig::default() }, GreedyMode::Fixed).unwrap();
    let net = ManifoldNet::from_training(&model, &training).unwrap();
    let pm = poor_mans_select(&system, &rs, &trace.eps_history).unwrap();
    let pm_obj = wc_error_bruteforce(&model, &system, &net, &pm.map).unwrap().wc_lb;
    let map = fit(&model, &system, &net, &rs, &MinimaxConfig::default()).unwrap();
    assert!(map.certified);
    assert!(map.training_objective < pm_obj, "{} vs {pm_obj}", map.training_objective);
    let wc = wc_error_bruteforce(&model, &system, &net, &map).unwrap().wc_lb;
    assert!(rel_close(wc, map.training_objective, 1e-8));
    let proxy = width_lower_proxy(model.space(), &net.states, system.m());
    assert!(proxy.sigma <= proxy.tail);
    assert!(map.training_objective >= proxy.tail * (1.0 - 1e-9));
    assert!(map.history.windows(2).all(|w| w[1] <= w[0]));
    assert!(map.objective_lower_bound <= map.training_objective);
}

#[test]
fn exhausted_budget_returns_an_uncertified_best_iterate() {
    let model = model_1d(100, 4, 0.9);
    let system = sensors(&model, 4);
    let training = TrainingSet::tensor_grid(4, 3).unwrap();
    let (rs, _) = weak_greedy(&model, &training, &GreedyConfig { n_max: 5, ..GreedyConfig::default() }, GreedyMode::Fixed).unwrap();
    let net = ManifoldNet::from_training(&model, &training).unwrap();
    let cfg = MinimaxConfig { max_newton: 2, ..MinimaxConfig::default() };
    let map = fit(&model, &system, &net, &rs, &cfg).unwrap();
    assert!(!map.certified);
    assert!(map.training_objective.is_finite());
    let wc = wc_error_bruteforce(&model, &system, &net, &map).unwrap().wc_lb;
    assert!(rel_close(wc, map.training_objective, 1e-8));
}

/// Brute-force minimax line fit: nested ternary searches on a convex function.
fn ternary(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn minimax_matches_a_brute_force_line_fit(seed in any::<u64>()) {
        let mut g = rng(seed);
        let s = 12;
        let xs = random_vector(&mut g, s);
        let ds = random_vector(&mut g, s);
        let rho: Vec<f64> = random_vector(&mut g, s).iter().map(|v| 0.2 * v.abs()).collect();
        let obj = |a: f64, b: f64| {
            (0..s).map(|i| ((ds[i] - a - b * xs[i]).powi(2) + rho[i] * rho[i]).sqrt()).fold(0.0, f64::max)
        };
        let (_, best) = ternary(-10.0, 10.0, |b| ternary(-10.0, 10.0, |a| obj(a, b)).1);
        let d = DMatrix::from_column_slice(s, 1, ds.as_slice());
        let c = DMatrix::from_fn(s, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let res = solve_minimax(&d, &c, &rho, &MinimaxConfig::default());
        prop_assert!(res.converged);
        prop_assert!((res.objective - best).abs() <= 1e-6 * best + 1e-9, "{} vs {}", res.objective, best);
        prop_assert!(res.lower_bound <= best * (1.0 + 1e-9));
        prop_assert!((obj(res.x[(0, 0)], res.x[(0, 1)]) - res.objective).abs() <= 1e-12);
    }

    #[test]
    fn apply_is_affine_and_data_consistent(seed in any::<u64>(), alpha in -2.0f64..2.0) {
        let model = model_1d(60, 3, 0.7);
        let system = sensors(&model, 4);
        let mut g = rng(seed);
        let vs: Vec<DVector<f64>> = (0..3).map(|_| model.solve(&random_param(&mut g, 3)).unwrap()).collect();
        let z = build_complement(model.space(), &system, &vs).unwrap();
        let p = z.ncols();
        let map = AffineRecoveryMap {
            z: random_vector(&mut g, p),
            b_matrix: DMatrix::from_fn(p, 4, |i, j| ((i * 4 + j) as f64 * 0.7 + seed as f64).sin()),
            complement_basis: z,
            training_objective: 0.0,
            objective_lower_bound: 0.0,
            certified: true,
            newton_steps: 0,
            history: vec![],
            eta: 0.0,
        };
        let (w1, w2) = (random_vector(&mut g, 4), random_vector(&mut g, 4));
        let zero = map.apply_coords(&system, &DVector::zeros(4));
        let lhs = map.apply_coords(&system, &(&w1 * alpha + &w2)) - &zero;
        let rhs = (map.apply_coords(&system, &w1) - &zero) * alpha + (map.apply_coords(&system, &w2) - &zero);
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
        let back = system.w_coords(&map.apply_coords(&system, &w1));
        prop_assert!((back - &w1).norm() <= 1e-9 * w1.norm().max(1.0));
    }
}
