//! Brute-force benchmarks over finite manifold nets: slice radii, the
//! indistinguishability diameter `δ_ε`, and worst-case errors of recovery
//! maps. Every quantity is a maximum over the net and therefore a lower
//! bound for the corresponding supremum over the manifold.
//!
//! `δ_ε` is evaluated pairwise in closed form. For net states `u_s, u_t`
//! with `Δc = P_W(u_s - u_t)` and `Δp = P_{W⊥}(u_s - u_t)`, perturbations of
//! norm at most `ε` can cancel `Δc` whenever `‖Δc‖ ≤ 2ε`, and the remaining
//! budget is spent along `Δp`, giving `‖Δp‖ + sqrt(4ε² - ‖Δc‖²)`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PbdwError, Result};
use crate::greedy::TrainingSet;
use crate::model::ParametricModel;
use crate::onespace::OneSpaceMap;
use crate::sensing::MeasurementSystem;

pub const NET_BUDGET: usize = 1_000_000;
pub const PAIR_BUDGET: u64 = 10_000_000;

/// Any map from orthonormal W coordinates to states.
pub trait RecoveryMap: Sync {
    fn recover_coords(&self, system: &MeasurementSystem, coords: &DVector<f64>) -> Result<DVector<f64>>;
}

impl RecoveryMap for OneSpaceMap {
    fn recover_coords(&self, system: &MeasurementSystem, coords: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(OneSpaceMap::recover_coords(self, system, coords))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldNet {
    pub params: Vec<Vec<f64>>,
    pub states: Vec<DVector<f64>>,
    /// Points per coordinate for tensor nets.
    pub grid_per_dim: Option<usize>,
}

impl ManifoldNet {
    /// Tensor-grid net with `k` points per parameter coordinate.
    pub fn tensor(model: &ParametricModel, k: usize) -> Result<Self> {
        let total = (k as f64).powi(model.d_y() as i32);
        if total > NET_BUDGET as f64 {
            return Err(PbdwError::BudgetExceeded(format!(
                "{k}^{} net points exceed the budget of {NET_BUDGET}",
                model.d_y()
            )));
        }
        let mut net = Self::from_training(model, &TrainingSet::tensor_grid(model.d_y(), k)?)?;
        net.grid_per_dim = Some(k);
        Ok(net)
    }

    pub fn from_training(model: &ParametricModel, training: &TrainingSet) -> Result<Self> {
        if training.len() > NET_BUDGET {
            return Err(PbdwError::BudgetExceeded(format!("{} net points", training.len())));
        }
        Ok(Self {
            params: training.points().to_vec(),
            states: training.snapshots(model)?,
            grid_per_dim: None,
        })
    }

    pub fn from_parts(params: Vec<Vec<f64>>, states: Vec<DVector<f64>>) -> Self {
        Self { params, states, grid_per_dim: None }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Net states split into W coordinates and whitened `P_{W⊥}` parts, so that
/// all U distances become Euclidean.
#[derive(Debug, Clone)]
pub struct ProjectedNet {
    pub coords: Vec<DVector<f64>>,
    pub perp: Vec<DVector<f64>>,
    /// Net indices sorted by the first W coordinate.
    order: Vec<usize>,
}

impl ProjectedNet {
    pub fn new(model: &ParametricModel, system: &MeasurementSystem, net: &ManifoldNet) -> Self {
        let space = model.space();
        let (coords, perp): (Vec<_>, Vec<_>) = net
            .states
            .par_iter()
            .map(|u| {
                let c = system.w_coords(u);
                let perp = u - system.synthesize(&c);
                (c, space.whiten(&perp))
            })
            .unzip();
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by(|&a, &b| coords[a][0].total_cmp(&coords[b][0]).then(a.cmp(&b)));
        Self { coords, perp, order }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// `1e-3 · median ‖P_W u‖` over the net.
    pub fn default_slice_tol(&self) -> f64 {
        let mut norms: Vec<f64> = self.coords.iter().map(|c| c.norm()).collect();
        norms.sort_by(f64::total_cmp);
        1e-3 * norms.get(norms.len() / 2).copied().unwrap_or(0.0)
    }

    pub fn distance(&self, s: usize, t: usize) -> f64 {
        ((&self.coords[s] - &self.coords[t]).norm_squared() + (&self.perp[s] - &self.perp[t]).norm_squared()).sqrt()
    }

    /// Visits every pair `s ≤ t` (self pairs included) with
    /// `‖c_s - c_t‖ ≤ radius`; `visit` receives `(s, t, ‖Δc‖)`.
    fn scan_pairs<F>(&self, radius: f64, budget: u64, visit: F) -> Result<(Option<(f64, usize, usize)>, u64)>
    where
        F: Fn(usize, usize, f64) -> f64 + Sync,
    {
        let n = self.len();
        let results: Vec<(Option<(f64, usize, usize)>, u64)> = (0..n)
            .into_par_iter()
            .map(|a| {
                let s = self.order[a];
                let mut best: Option<(f64, usize, usize)> = None;
                let mut count = 0u64;
                for &t in &self.order[a..] {
                    if self.coords[t][0] - self.coords[s][0] > radius {
                        break;
                    }
                    count += 1;
                    let dc = (&self.coords[s] - &self.coords[t]).norm();
                    if dc > radius {
                        continue;
                    }
                    let v = visit(s, t, dc);
                    let key = (v, s.min(t), s.max(t));
                    if better(key, best) {
                        best = Some(key);
                    }
                }
                (best, count)
            })
            .collect();
        let mut best = None;
        let mut total = 0u64;
        for (b, c) in results {
            total += c;
            if let Some(k) = b {
                if better(k, best) {
                    best = Some(k);
                }
            }
        }
        if total > budget {
            return Err(PbdwError::BudgetExceeded(format!("{total} pair evaluations exceed {budget}")));
        }
        Ok((best, total))
    }
}

/// Larger value wins; ties go to the lexicographically smaller pair.
fn better(key: (f64, usize, usize), best: Option<(f64, usize, usize)>) -> bool {
    match best {
        None => true,
        Some((v, s, t)) => key.0 > v || (key.0 == v && (key.1, key.2) < (s, t)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceResult {
    pub members: Vec<usize>,
    /// Half the diameter of the slice; `None` for an empty slice.
    pub radius_lb: Option<f64>,
    pub slice_tol: f64,
}

/// Net members with `‖P_W u - w‖_U ≤ slice_tol` and their half diameter.
pub fn slice_and_radius(net: &ProjectedNet, w: &DVector<f64>, slice_tol: f64) -> SliceResult {
    let members: Vec<usize> = (0..net.len()).filter(|&s| (&net.coords[s] - w).norm() <= slice_tol).collect();
    let radius_lb = if members.is_empty() {
        None
    } else {
        let mut diam = 0.0f64;
        for (i, &s) in members.iter().enumerate() {
            for &t in &members[i + 1..] {
                diam = diam.max(net.distance(s, t));
            }
        }
        Some(diam / 2.0)
    };
    SliceResult { members, radius_lb, slice_tol }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub eps: f64,
    pub slice_tol: f64,
    /// Max over pairs that noise of size `eps` makes indistinguishable.
    pub delta_lb: f64,
    /// Same with the admission radius widened by `slice_tol`.
    pub delta_relaxed: f64,
    pub extremal_pair: (usize, usize),
    pub pairs_evaluated: u64,
}

fn pair_value(net: &ProjectedNet, eps: f64, s: usize, t: usize, dc: f64) -> f64 {
    let dp = (&net.perp[s] - &net.perp[t]).norm();
    dp + (4.0 * eps * eps - dc * dc).max(0.0).sqrt()
}

/// Lower bound of `δ_ε(M, W)` over the net.
pub fn delta_eps_bruteforce(net: &ProjectedNet, eps: f64, slice_tol: f64) -> Result<DeltaReport> {
    if !(eps >= 0.0 && slice_tol >= 0.0) {
        return Err(PbdwError::InvalidConfig("eps and slice tolerance must be nonnegative".into()));
    }
    if net.is_empty() {
        return Err(PbdwError::InvalidConfig("empty net".into()));
    }
    let (certified, _) = net.scan_pairs(2.0 * eps, PAIR_BUDGET, |s, t, dc| pair_value(net, eps, s, t, dc))?;
    let (relaxed, pairs) =
        net.scan_pairs(2.0 * eps + slice_tol, PAIR_BUDGET, |s, t, dc| pair_value(net, eps, s, t, dc))?;
    let (delta_lb, s, t) = certified.expect("self pairs are always admitted");
    let delta_relaxed = relaxed.map(|r| r.0).unwrap_or(delta_lb).max(delta_lb);
    Ok(DeltaReport { eps, slice_tol, delta_lb, delta_relaxed, extremal_pair: (s, t), pairs_evaluated: pairs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WcReport {
    pub wc_lb: f64,
    pub argmax: usize,
    pub errors: Vec<f64>,
}

/// `max_s ‖u_s - A(P_W u_s)‖_U` over the net.
pub fn wc_error_bruteforce(
    model: &ParametricModel,
    system: &MeasurementSystem,
    net: &ManifoldNet,
    map: &dyn RecoveryMap,
) -> Result<WcReport> {
    let space = model.space();
    let errors: Vec<f64> = net
        .states
        .par_iter()
        .map(|u| Ok(space.norm(&(u - map.recover_coords(system, &system.w_coords(u))?))))
        .collect::<Result<_>>()?;
    let mut argmax = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e > errors[argmax] {
            argmax = i;
        }
    }
    Ok(WcReport { wc_lb: errors.get(argmax).copied().unwrap_or(0.0), argmax, errors })
}

/// Returns the stored state whose W coordinates are closest to the data.
#[derive(Debug, Clone)]
pub struct NearestNeighborMap {
    coords: Vec<DVector<f64>>,
    states: Vec<DVector<f64>>,
}

impl NearestNeighborMap {
    pub fn new(system: &MeasurementSystem, net: &ManifoldNet) -> Self {
        Self {
            coords: net.states.iter().map(|u| system.w_coords(u)).collect(),
            states: net.states.clone(),
        }
    }
}

impl RecoveryMap for NearestNeighborMap {
    fn recover_coords(&self, _system: &MeasurementSystem, coords: &DVector<f64>) -> Result<DVector<f64>> {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.coords.iter().enumerate() {
            let d = (c - coords).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        self.states
            .get(best)
            .cloned()
            .ok_or_else(|| PbdwError::InvalidConfig("nearest-neighbour map has no states".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapBenchmark {
    pub name: String,
    pub certificate: Option<f64>,
    pub wc_lb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub net_size: usize,
    pub net_resolution: Option<usize>,
    pub slice_tol: f64,
    pub delta: Vec<DeltaReport>,
    /// Slice radius lower bounds at the data of sampled net states.
    pub rad_slices: Vec<Option<f64>>,
    pub wc_errors: Vec<MapBenchmark>,
}

/// A recovery map entered into a benchmark, with its certificate if it has one.
pub struct BenchmarkEntry<'a> {
    pub name: String,
    pub map: &'a dyn RecoveryMap,
    pub certificate: Option<f64>,
}

/// Evaluates `δ_ε` for every `eps`, slice radii at the data of `n_slices`
/// evenly strided net states, and the worst-case error of every map, all on
/// the same net.
pub fn benchmark(
    model: &ParametricModel,
    system: &MeasurementSystem,
    net: &ManifoldNet,
    eps: &[f64],
    n_slices: usize,
    maps: &[BenchmarkEntry<'_>],
) -> Result<BenchmarkReport> {
    let projected = ProjectedNet::new(model, system, net);
    let slice_tol = projected.default_slice_tol();
    let delta = eps.iter().map(|&e| delta_eps_bruteforce(&projected, e, slice_tol)).collect::<Result<Vec<_>>>()?;
    let stride = (net.len() / n_slices.max(1)).max(1);
    let rad_slices = (0..net.len())
        .step_by(stride)
        .take(n_slices)
        .map(|s| slice_and_radius(&projected, &projected.coords[s], slice_tol).radius_lb)
        .collect();
    let wc_errors = maps
        .iter()
        .map(|entry| {
            Ok(MapBenchmark {
                name: entry.name.clone(),
                certificate: entry.certificate,
                wc_lb: wc_error_bruteforce(model, system, net, entry.map)?.wc_lb,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BenchmarkReport {
        net_size: net.len(),
        net_resolution: net.grid_per_dim,
        slice_tol,
        delta,
        rad_slices,
        wc_errors,
    })
}
