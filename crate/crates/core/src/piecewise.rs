//! Piecewise-affine reduced models: the parameter box is split into cells
//! until every cell carries a local one-space map whose certificate meets a
//! global target. Recovery evaluates every local map and keeps the candidate
//! with the smallest metric-projection surrogate.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxqp::BoxLsqConfig;
use crate::error::{check_dim, PbdwError, Result};
use crate::greedy::{GreedyState, TrainingSet};
use crate::inverse::metric_project;
use crate::model::ParametricModel;
use crate::onespace::{beta_mu, OneSpaceMap};
use crate::oracle::RecoveryMap;
use crate::sensing::{MeasurementSystem, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Halve the coordinate whose halving leaves the smallest pooled
    /// within-half variance of the local surrogate.
    Variance,
    /// Cycle through the coordinates by depth.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiecewiseConfig {
    /// Global target `ε` for every cell certificate.
    pub eps: f64,
    pub max_cells: usize,
    pub max_depth: usize,
    /// Cap on local dimensions; `None` uses the number of sensors.
    pub max_local_n: Option<usize>,
    /// Points per coordinate of per-cell tensor grids (`d_y ≤ 3`).
    pub grid_per_dim: usize,
    /// Size of per-cell random training sets (`d_y > 3`).
    pub random_points: usize,
    pub seed: u64,
    pub split_rule: SplitRule,
    pub surrogate: BoxLsqConfig,
}

impl Default for PiecewiseConfig {
    fn default() -> Self {
        Self {
            eps: 1e-2,
            max_cells: 64,
            max_depth: 12,
            max_local_n: None,
            grid_per_dim: 5,
            random_points: 200,
            seed: 0,
            split_rule: SplitRule::Variance,
            surrogate: BoxLsqConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub depth: usize,
    pub eps_k: f64,
    pub mu: f64,
    /// `mu·eps_k`.
    pub certificate: f64,
    pub local_map: OneSpaceMap,
}

impl Cell {
    pub fn n_k(&self) -> usize {
        self.local_map.n()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvent {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub depth: usize,
    pub coordinate: usize,
    /// Smallest certificate found before splitting.
    pub best_certificate: f64,
}

#[derive(Debug, Clone)]
pub struct PartitionedModel {
    pub cells: Vec<Cell>,
    pub target_eps: f64,
    pub split_trace: Vec<SplitEvent>,
    /// False when the budget forced acceptance of a cell above the target.
    pub complete: bool,
    pub worst_certificate: f64,
    pub surrogate_cfg: BoxLsqConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub depth: usize,
    pub n_k: usize,
    pub eps_k: f64,
    pub mu: f64,
    pub certificate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub target_eps: f64,
    pub complete: bool,
    pub worst_certificate: f64,
    pub cells: Vec<CellSummary>,
    pub split_trace: Vec<SplitEvent>,
}

impl PartitionedModel {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn summary(&self) -> PartitionSummary {
        PartitionSummary {
            target_eps: self.target_eps,
            complete: self.complete,
            worst_certificate: self.worst_certificate,
            cells: self
                .cells
                .iter()
                .map(|c| CellSummary {
                    lo: c.lo.clone(),
                    hi: c.hi.clone(),
                    depth: c.depth,
                    n_k: c.n_k(),
                    eps_k: c.eps_k,
                    mu: c.mu,
                    certificate: c.certificate,
                })
                .collect(),
            split_trace: self.split_trace.clone(),
        }
    }
}

struct LocalFit {
    best: Cell,
    accepted: bool,
    /// Surrogate values of the last scan, for the split rule.
    values: Vec<f64>,
    points: Vec<Vec<f64>>,
}

fn local_training(d_y: usize, lo: &[f64], hi: &[f64], cfg: &PiecewiseConfig, id: u64) -> Result<TrainingSet> {
    if d_y <= 3 {
        TrainingSet::tensor_grid_in(lo, hi, cfg.grid_per_dim)
    } else {
        let seed = cfg.seed.wrapping_add(id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Ok(TrainingSet::random_in(lo, hi, cfg.random_points, seed))
    }
}

fn fit_cell(
    model: &ParametricModel,
    system: &MeasurementSystem,
    lo: &[f64],
    hi: &[f64],
    depth: usize,
    cfg: &PiecewiseConfig,
    id: u64,
) -> Result<LocalFit> {
    let center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let anchor = model.solve(&center)?;
    let training = local_training(model.d_y(), lo, hi, cfg, id)?;
    let points = training.points().to_vec();
    let mut state = GreedyState::new(model, training, Some(anchor))?;
    let n_cap = cfg.max_local_n.unwrap_or(system.m()).min(system.m());
    let mut best: Option<Cell> = None;
    loop {
        let scan = state.scan()?;
        let eps_k = scan.max / model.r();
        let reduced = state.reduced_space(eps_k, format!("local greedy on cell at depth {depth}"));
        let (_, mu) = beta_mu(system, &reduced);
        if mu.is_finite() {
            let local_map = OneSpaceMap::new(system, reduced)?;
            let certificate = local_map.certify();
            if best.as_ref().is_none_or(|b| certificate < b.certificate) {
                best = Some(Cell { lo: lo.to_vec(), hi: hi.to_vec(), depth, eps_k, mu, certificate, local_map });
            }
            if certificate <= cfg.eps {
                let best = best.expect("set above");
                return Ok(LocalFit { best, accepted: true, values: scan.values, points });
            }
        }
        if state.n() >= n_cap || !state.add_best(&scan)? {
            let best = best.ok_or(PbdwError::NoFiniteMu)?;
            return Ok(LocalFit { best, accepted: false, values: scan.values, points });
        }
    }
}

fn split_coordinate(fit: &LocalFit, lo: &[f64], hi: &[f64], depth: usize, rule: SplitRule) -> usize {
    let d = lo.len();
    match rule {
        SplitRule::RoundRobin => depth % d,
        SplitRule::Variance => {
            let mut best = (0, f64::INFINITY);
            for j in 0..d {
                let mid = 0.5 * (lo[j] + hi[j]);
                let mut pooled = 0.0;
                for upper in [false, true] {
                    let vals: Vec<f64> = fit
                        .points
                        .iter()
                        .zip(&fit.values)
                        .filter(|(y, _)| (y[j] >= mid) == upper)
                        .map(|(_, v)| *v)
                        .collect();
                    if vals.is_empty() {
                        continue;
                    }
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    pooled += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
                }
                if pooled < best.1 {
                    best = (j, pooled);
                }
            }
            best.0
        }
    }
}

/// Breadth-first splitting of Y until every cell certificate is at most
/// `cfg.eps` or the budget runs out.
pub fn build_partition(model: &ParametricModel, system: &MeasurementSystem, cfg: &PiecewiseConfig) -> Result<PartitionedModel> {
    if !(cfg.eps > 0.0) {
        return Err(PbdwError::InvalidConfig(format!("piecewise target must be positive, got {}", cfg.eps)));
    }
    if cfg.max_cells == 0 {
        return Err(PbdwError::InvalidConfig("max_cells must be at least 1".into()));
    }
    check_dim("measurement system", model.dim(), system.dim())?;
    let d = model.d_y();
    let mut queue = std::collections::VecDeque::from([(vec![-1.0; d], vec![1.0; d], 0usize)]);
    let mut cells = Vec::new();
    let mut trace = Vec::new();
    let mut complete = true;
    let mut id = 0u64;
    while let Some((lo, hi, depth)) = queue.pop_front() {
        let fit = fit_cell(model, system, &lo, &hi, depth, cfg, id)?;
        id += 1;
        if fit.accepted {
            cells.push(fit.best);
            continue;
        }
        let room = cells.len() + queue.len() + 2 <= cfg.max_cells;
        if depth >= cfg.max_depth || !room {
            log::warn!(
                "cell at depth {depth} accepted with certificate {:e} above target {:e}",
                fit.best.certificate,
                cfg.eps
            );
            complete = false;
            cells.push(fit.best);
            continue;
        }
        let j = split_coordinate(&fit, &lo, &hi, depth, cfg.split_rule);
        let mid = 0.5 * (lo[j] + hi[j]);
        trace.push(SplitEvent { lo: lo.clone(), hi: hi.clone(), depth, coordinate: j, best_certificate: fit.best.certificate });
        let (mut lo2, mut hi1) = (lo.clone(), hi.clone());
        hi1[j] = mid;
        lo2[j] = mid;
        queue.push_back((lo, hi1, depth + 1));
        queue.push_back((lo2, hi, depth + 1));
    }
    let worst_certificate = cells.iter().map(|c| c.certificate).fold(0.0, f64::max);
    Ok(PartitionedModel { cells, target_eps: cfg.eps, split_trace: trace, complete, worst_certificate, surrogate_cfg: cfg.surrogate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostic {
    pub k: usize,
    pub s_value: f64,
    pub certificate: f64,
}

#[derive(Debug, Clone)]
pub struct PwRecovery {
    pub state: DVector<f64>,
    pub k_star: usize,
    pub diagnostics: Vec<CellDiagnostic>,
}

/// Evaluates every local map and keeps the smallest surrogate, ties to the
/// smallest cell index.
pub fn recover_pw_coords(
    model: &ParametricModel,
    system: &MeasurementSystem,
    pm: &PartitionedModel,
    coords: &DVector<f64>,
) -> Result<PwRecovery> {
    check_dim("observation", system.m(), coords.len())?;
    let candidates: Vec<(DVector<f64>, f64)> = pm
        .cells
        .par_iter()
        .map(|cell| {
            let u = cell.local_map.recover_coords(system, coords);
            let s = metric_project(model, &u, &pm.surrogate_cfg)?.s_value;
            Ok((u, s))
        })
        .collect::<Result<_>>()?;
    let mut k_star = None;
    for (k, (_, s)) in candidates.iter().enumerate() {
        if k_star.is_none_or(|b: usize| *s < candidates[b].1) {
            k_star = Some(k);
        }
    }
    let k_star = k_star.ok_or(PbdwError::NoFiniteMu)?;
    let diagnostics = candidates
        .iter()
        .zip(&pm.cells)
        .enumerate()
        .map(|(k, ((_, s), cell))| CellDiagnostic { k, s_value: *s, certificate: cell.certificate })
        .collect();
    let state = candidates.into_iter().nth(k_star).expect("index in range").0;
    Ok(PwRecovery { state, k_star, diagnostics })
}

pub fn recover_pw(
    model: &ParametricModel,
    system: &MeasurementSystem,
    pm: &PartitionedModel,
    obs: &Observation,
) -> Result<PwRecovery> {
    recover_pw_coords(model, system, pm, &obs.w_coords)
}

/// A partitioned model bound to its parametric model, usable as a recovery map.
pub struct PiecewiseMap<'a> {
    pub model: &'a ParametricModel,
    pub partition: &'a PartitionedModel,
}

impl RecoveryMap for PiecewiseMap<'_> {
    fn recover_coords(&self, system: &MeasurementSystem, coords: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(recover_pw_coords(self.model, system, self.partition, coords)?.state)
    }
}
