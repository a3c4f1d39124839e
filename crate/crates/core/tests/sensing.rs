mod common;

use common::*;
use nalgebra::DVector;
use pbdw::sensing::{default_layout, NoiseSpace, NoiseSpec, SensorSpec};
use pbdw::{DiscreteSpace, MeasurementSystem, PbdwError};
use proptest::prelude::*;

/// Piecewise-linear interpolant of nodal values with zero boundary values.
fn eval_1d(space: &DiscreteSpace, u: &DVector<f64>, x: f64) -> f64 {
    let n = space.n_mesh();
    let h = 1.0 / n as f64;
    let k = ((x / h).floor() as usize).min(n - 1);
    let t = x / h - k as f64;
    let val = |i: usize| if i == 0 || i == n { 0.0 } else { u[i - 1] };
    (1.0 - t) * val(k) + t * val(k + 1)
}

#[test]
fn local_averages_match_fine_quadrature() {
    let space = DiscreteSpace::new(1, 50).unwrap();
    let specs = vec![SensorSpec::local_average(vec![0.3], 0.1), SensorSpec::local_average(vec![0.71], 0.05)];
    let system = MeasurementSystem::build(&space, &specs).unwrap();
    let u = random_vector(&mut rng(1), space.dim());
    let raw = system.raw_values(&u);
    for (i, s) in specs.iter().enumerate() {
        let (a, b) = (s.center[0] - s.width / 2.0, s.center[0] + s.width / 2.0);
        let k = 200_000;
        let quad: f64 = (0..k).map(|j| eval_1d(&space, &u, a + (b - a) * (j as f64 + 0.5) / k as f64)).sum::<f64>() / k as f64;
        // Functionals are averages over their support.
        assert!((raw[i] - quad).abs() <= 1e-8 * raw[i].abs().max(1.0), "sensor {i}: {} vs {quad}", raw[i]);
    }
}

#[test]
fn point_value_representer_satisfies_the_riesz_identity() {
    let space = DiscreteSpace::new(1, 64).unwrap();
    let system = MeasurementSystem::build(&space, &[SensorSpec::point_value(0.5)]).unwrap();
    let psi = system.representers().column(0).clone_owned();
    let lhs = space.inner(&psi, &psi);
    let rhs = system.raw_values(&psi)[0];
    assert!(rel_close(lhs, rhs, 1e-12));
    // The Green's function of -u'' with a point load at 1/2 peaks at 1/4.
    assert!(rel_close(rhs, 0.25, 1e-12));
}

#[test]
fn identical_sensors_name_the_dependent_index() {
    let space = DiscreteSpace::new(1, 40).unwrap();
    let s = SensorSpec::local_average(vec![0.4], 0.1);
    let err = MeasurementSystem::build(&space, &[SensorSpec::local_average(vec![0.2], 0.1), s.clone(), s]).unwrap_err();
    assert!(matches!(err, PbdwError::RankDeficientSensors { index: 2 }));
}

#[test]
fn supports_outside_the_domain_are_rejected() {
    let space = DiscreteSpace::new(1, 40).unwrap();
    let err = MeasurementSystem::build(&space, &[SensorSpec::local_average(vec![0.98], 0.1)]).unwrap_err();
    assert!(matches!(err, PbdwError::InvalidSensor { index: 0, .. }));
    let space2 = DiscreteSpace::new(2, 8).unwrap();
    assert!(MeasurementSystem::build(&space2, &[SensorSpec::point_value(0.5)]).is_err());
}

#[test]
fn representer_gramian_condition_is_finite_and_recorded() {
    let space = DiscreteSpace::new(1, 200).unwrap();
    let system = MeasurementSystem::build(&space, &default_layout(1, 8, 0.1)).unwrap();
    let g = system.representers().transpose() * space.gram_mul_matrix(system.representers());
    let ev = g.symmetric_eigenvalues();
    let expected = ev.max() / ev.min();
    assert!(system.gramian_condition().is_finite());
    assert!(rel_close(system.gramian_condition(), expected, 1e-6));
}

#[test]
fn basis_is_orthonormal_in_both_dimensions() {
    for (dx, n, m) in [(1, 120, 6), (2, 12, 9)] {
        let space = DiscreteSpace::new(dx, n).unwrap();
        let system = MeasurementSystem::build(&space, &default_layout(dx, m, 0.1)).unwrap();
        let g = system.w_basis().transpose() * space.gram_mul_matrix(system.w_basis());
        assert!((g - nalgebra::DMatrix::identity(m, m)).amax() <= 1e-12);
    }
}

#[test]
fn deflated_complement_element_has_no_w_part() {
    let model = model_1d(80, 2, 0.5);
    let system = sensors(&model, 5);
    let v = random_vector(&mut rng(4), model.dim());
    let (_, perp) = system.project_w(&v);
    let (w_part, perp2) = system.project_w(&perp);
    assert!(model.space().norm(&w_part) <= 1e-12 * model.space().norm(&perp));
    assert!(model.space().norm(&(perp2 - &perp)) <= 1e-12 * model.space().norm(&perp));
    let u_in_w = system.synthesize(&DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0]));
    let (_, p) = system.project_w(&u_in_w);
    assert!(model.space().norm(&p) <= 1e-12 * model.space().norm(&u_in_w));
}

#[test]
fn noisy_observations_are_reproducible_and_bounded() {
    let model = model_1d(80, 2, 0.5);
    let system = sensors(&model, 4);
    let u = model.solve(&[0.2, -0.4]).unwrap();
    let clean = system.observe_exact(&u);
    let none = system.observe(&u, &NoiseSpec::None, 3).unwrap();
    assert_eq!(none.raw, system.raw_values(&u));
    for seed in 0..200 {
        let noisy = system.observe(&u, &NoiseSpec::Bounded { eps: 1e-3, space: NoiseSpace::WCoords }, seed).unwrap();
        assert!((&noisy.w_coords - &clean.w_coords).norm() <= 1e-3 * (1.0 + 1e-12));
        assert_eq!(noisy.noise_level, 1e-3);
        let again = system.observe(&u, &NoiseSpec::Bounded { eps: 1e-3, space: NoiseSpace::WCoords }, seed).unwrap();
        assert_eq!(noisy, again);
        let raw_noisy = system.observe(&u, &NoiseSpec::Bounded { eps: 1e-3, space: NoiseSpace::Raw }, seed).unwrap();
        assert!((&raw_noisy.raw - &clean.raw).norm() <= 1e-3 * (1.0 + 1e-12));
        assert_eq!(raw_noisy.noise_space, NoiseSpace::Raw);
    }
    let g = system.observe(&u, &NoiseSpec::Gaussian { sigma: 0.1, space: NoiseSpace::WCoords }, 9).unwrap();
    assert_eq!(g, system.observe(&u, &NoiseSpec::Gaussian { sigma: 0.1, space: NoiseSpace::WCoords }, 9).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn representers_reproduce_the_functionals(seed in any::<u64>()) {
        let model = model_2d(10, 4, 0.5);
        let system = sensors(&model, 4);
        let v = random_vector(&mut rng(seed), model.dim());
        let via_riesz = system.representers().transpose() * model.space().gram_mul(&v);
        let raw = system.raw_values(&v);
        prop_assert!((via_riesz - &raw).norm() <= 1e-10 * raw.norm().max(1e-300));
    }

    #[test]
    fn projection_is_orthogonal_idempotent_and_self_adjoint(seed in any::<u64>()) {
        let model = model_1d(100, 2, 0.5);
        let system = sensors(&model, 6);
        let space = model.space();
        let mut g = rng(seed);
        let (u, v) = (random_vector(&mut g, model.dim()), random_vector(&mut g, model.dim()));
        let (wu, pu) = system.project_w(&u);
        let (wv, _) = system.project_w(&v);
        let n2 = space.inner(&u, &u);
        prop_assert!(rel_close(n2, space.inner(&wu, &wu) + space.inner(&pu, &pu), 1e-10));
        let (wwu, _) = system.project_w(&wu);
        prop_assert!(space.norm(&(wwu - &wu)) <= 1e-10 * space.norm(&u));
        let a = space.inner(&wu, &v);
        let b = space.inner(&u, &wv);
        prop_assert!((a - b).abs() <= 1e-10 * space.norm(&u) * space.norm(&v));
    }

    #[test]
    fn raw_and_coordinates_carry_the_same_information(seed in any::<u64>()) {
        let model = model_1d(100, 2, 0.5);
        let system = sensors(&model, 6);
        let u = random_vector(&mut rng(seed), model.dim());
        let obs = system.observe_exact(&u);
        let back = system.raw_to_coords(&obs.raw).unwrap();
        prop_assert!((&back - &obs.w_coords).norm() <= 1e-10 * obs.w_coords.norm());
        let raw = system.coords_to_raw(&obs.w_coords);
        prop_assert!((&raw - &obs.raw).norm() <= 1e-10 * obs.raw.norm());
    }
}
