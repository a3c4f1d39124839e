mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use pbdw::io::*;
use pbdw::PbdwError;
use proptest::prelude::*;

fn text(f: impl FnOnce(&mut Vec<u8>)) -> String {
    let mut buf = Vec::new();
    f(&mut buf);
    String::from_utf8(buf).unwrap()
}

#[test]
fn single_observation_uses_the_short_header() {
    let s = text(|b| write_observations(b, &[DVector::from_vec(vec![1.5, -2.0])]).unwrap());
    assert_eq!(s, "sensor_id,value\n0,1.5e0\n1,-2e0\n");
    let two = text(|b| write_observations(b, &[DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0])]).unwrap());
    assert!(two.starts_with("observation_id,sensor_id,value\n0,0,"));
}

#[test]
fn wrong_sensor_count_is_a_dimension_mismatch() {
    let err = read_raw_observations("sensor_id,value\n0,1.0\n1,2.0\n".as_bytes(), 3).unwrap_err();
    assert!(matches!(err, PbdwError::DimensionMismatch { expected: 3, found: 2, .. }), "{err}");
}

#[test]
fn parse_errors_carry_the_line() {
    let err = read_raw_observations("sensor_id,value\n0,1.0\n1,abc\n".as_bytes(), 2).unwrap_err();
    assert!(matches!(err, PbdwError::Parse { line: 3, .. }), "{err:?}");
    let err = read_raw_observations("sensor_id,value\n0,1.0\n2,1.0\n".as_bytes(), 3).unwrap_err();
    assert!(matches!(err, PbdwError::Parse { line: 3, .. }), "{err:?}");
    let err = read_raw_observations("sensor,value\n0,1.0\n".as_bytes(), 1).unwrap_err();
    assert!(matches!(err, PbdwError::Parse { line: 1, .. }), "{err:?}");
    let err = read_raw_observations("observation_id,sensor_id,value\n0,0,1\n2,0,1\n".as_bytes(), 1).unwrap_err();
    assert!(matches!(err, PbdwError::Parse { line: 3, .. }), "{err:?}");
    let err = read_state("node,value\n0,1\n1,2,3\n".as_bytes(), 2).unwrap_err();
    assert!(matches!(err, PbdwError::Parse { line: 3, .. }), "{err:?}");
}

#[test]
fn ingested_observations_match_direct_sensing() {
    let model = model_1d(80, 2, 0.5);
    let system = sensors(&model, 4);
    let mut g = rng(1);
    let states: Vec<DVector<f64>> = (0..3).map(|_| model.solve(&random_param(&mut g, 2)).unwrap()).collect();
    let raws: Vec<DVector<f64>> = states.iter().map(|u| system.raw_values(u)).collect();
    let file = text(|b| write_observations(b, &raws).unwrap());
    let obs = ingest_observations(file.as_bytes(), &system, 0.0).unwrap();
    assert_eq!(obs.len(), 3);
    for (o, u) in obs.iter().zip(&states) {
        assert!((&o.w_coords - system.w_coords(u)).norm() <= 1e-12 * o.w_coords.norm());
    }
    assert!(ingest_observations(file.as_bytes(), &sensors(&model, 3), 0.0).is_err());
}

proptest! {
    #[test]
    fn states_round_trip_exactly(v in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
        let u = DVector::from_vec(v);
        let s = text(|b| write_state(b, &u).unwrap());
        prop_assert_eq!(read_state(s.as_bytes(), u.len()).unwrap(), u.clone());
        prop_assert!(read_state(s.as_bytes(), u.len() + 1).is_err());
    }

    #[test]
    fn observations_round_trip_exactly(k in 1usize..4, m in 1usize..6, seed in any::<u64>()) {
        let mut g = rng(seed);
        let raws: Vec<DVector<f64>> = (0..k).map(|_| random_vector(&mut g, m)).collect();
        let s = text(|b| write_observations(b, &raws).unwrap());
        prop_assert_eq!(read_raw_observations(s.as_bytes(), m).unwrap(), raws);
    }

    #[test]
    fn matrices_round_trip_exactly(r in 0usize..5, c in 1usize..5, seed in any::<u64>()) {
        let mut g = rng(seed);
        let m = DMatrix::from_iterator(r, c, random_vector(&mut g, r * c).iter().copied());
        let s = text(|b| write_matrix(b, &m).unwrap());
        prop_assert_eq!(read_matrix(s.as_bytes()).unwrap(), m);
    }
}
