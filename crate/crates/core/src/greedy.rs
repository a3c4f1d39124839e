//! Weak-greedy reduced bases driven by the residual surrogate, training sets,
//! and dimension selection by the smallest `mu·eps` product.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PbdwError, Result};
use crate::linalg::UBasis;
use crate::model::ParametricModel;
use crate::onespace::{beta_mu, OneSpaceMap, ReducedSpace};
use crate::sensing::MeasurementSystem;

/// Relative remainder below which a snapshot is treated as dependent.
pub const DEFLATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainingMode {
    TensorGrid { per_dim: usize },
    Random { n: usize, seed: u64 },
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    points: Vec<Vec<f64>>,
    mode: TrainingMode,
}

impl TrainingSet {
    /// `k` equispaced points per coordinate of Y, endpoints included (`k = 1`
    /// gives the centre).
    pub fn tensor_grid(d_y: usize, k: usize) -> Result<Self> {
        Self::tensor_grid_in(&vec![-1.0; d_y], &vec![1.0; d_y], k)
    }

    pub fn tensor_grid_in(lo: &[f64], hi: &[f64], k: usize) -> Result<Self> {
        check_dim("grid bounds", lo.len(), hi.len())?;
        if k == 0 {
            return Err(PbdwError::InvalidConfig("grid needs at least one point per dimension".into()));
        }
        let d = lo.len();
        let total = (k as f64).powi(d as i32);
        if total > 1e7 {
            return Err(PbdwError::BudgetExceeded(format!("tensor grid with {k}^{d} points")));
        }
        let coord = |j: usize, i: usize| {
            if k == 1 {
                0.5 * (lo[j] + hi[j])
            } else {
                lo[j] + (hi[j] - lo[j]) * i as f64 / (k - 1) as f64
            }
        };
        let mut points = Vec::with_capacity(total as usize);
        let mut idx = vec![0usize; d];
        loop {
            points.push((0..d).map(|j| coord(j, idx[j])).collect());
            let mut j = 0;
            while j < d {
                idx[j] += 1;
                if idx[j] < k {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == d {
                break;
            }
        }
        Ok(Self { points, mode: TrainingMode::TensorGrid { per_dim: k } })
    }

    /// `n` i.i.d. uniform points in Y.
    pub fn random(d_y: usize, n: usize, seed: u64) -> Self {
        Self::random_in(&vec![-1.0; d_y], &vec![1.0; d_y], n, seed)
    }

    pub fn random_in(lo: &[f64], hi: &[f64], n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| lo.iter().zip(hi).map(|(a, b)| rng.random_range(*a..=*b)).collect())
            .collect();
        Self { points, mode: TrainingMode::Random { n, seed } }
    }

    pub fn from_points(points: Vec<Vec<f64>>) -> Self {
        Self { points, mode: TrainingMode::Explicit }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mode(&self) -> &TrainingMode {
        &self.mode
    }

    /// Solves every point.
    pub fn snapshots(&self, model: &ParametricModel) -> Result<Vec<DVector<f64>>> {
        self.points.par_iter().map(|y| model.solve(y)).collect()
    }
}

/// Size `N = ceil(c_n (|ln eta| + |ln eps|))` of a randomized training set.
pub fn random_training_size(eps: f64, eta: f64, c_n: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0 && eta > 0.0 && eta < 1.0) {
        return Err(PbdwError::InvalidConfig(format!(
            "eps and eta must lie in (0, 1), got {eps} and {eta}"
        )));
    }
    Ok((c_n * (eta.ln().abs() + eps.ln().abs())).ceil() as usize)
}

pub fn random_training(d_y: usize, eps: f64, eta: f64, c_n: f64, seed: u64) -> Result<TrainingSet> {
    Ok(TrainingSet::random(d_y, random_training_size(eps, eta, c_n)?, seed))
}

/// Parameter-independent data for the Galerkin projection onto
/// `anchor + span(V)`.
#[derive(Debug, Clone)]
pub struct ReducedOperators {
    anchor: DVector<f64>,
    basis: DMatrix<f64>,
    /// `A_j V`, `j = 0..=d_y`.
    a_v: Vec<DMatrix<f64>>,
    /// `f - A_0 ū`, then `-A_j ū`.
    anchor_residual: Vec<DVector<f64>>,
    /// `Vᵀ A_j V`.
    v_a_v: Vec<DMatrix<f64>>,
    /// `Vᵀ (anchor_residual_j)`.
    v_res: Vec<DVector<f64>>,
}

impl ReducedOperators {
    pub fn new(model: &ParametricModel, anchor: &DVector<f64>, basis: &DMatrix<f64>) -> Self {
        let n_ops = model.n_ops();
        let a_v: Vec<DMatrix<f64>> = (0..n_ops)
            .map(|j| {
                let mut m = DMatrix::zeros(basis.nrows(), basis.ncols());
                for (k, col) in basis.column_iter().enumerate() {
                    m.set_column(k, &model.apply_op(j, &col.clone_owned()));
                }
                m
            })
            .collect();
        let mut anchor_residual = Vec::with_capacity(n_ops);
        anchor_residual.push(model.load() - model.apply_op(0, anchor));
        for j in 1..n_ops {
            anchor_residual.push(-model.apply_op(j, anchor));
        }
        let v_a_v = a_v.iter().map(|av| basis.tr_mul(av)).collect();
        let v_res = anchor_residual.iter().map(|r| basis.tr_mul(r)).collect();
        Self { anchor: anchor.clone(), basis: basis.clone(), a_v, anchor_residual, v_a_v, v_res }
    }

    pub fn from_reduced(model: &ParametricModel, reduced: &ReducedSpace) -> Self {
        Self::new(model, reduced.anchor(), &reduced.basis_matrix())
    }

    pub fn n(&self) -> usize {
        self.basis.ncols()
    }

    /// Reduced coefficients of the Galerkin projection of `u(y)`.
    pub fn galerkin_coeffs(&self, y: &[f64]) -> Result<DVector<f64>> {
        let n = self.n();
        if n == 0 {
            return Ok(DVector::zeros(0));
        }
        let mut lhs = self.v_a_v[0].clone();
        let mut rhs = self.v_res[0].clone();
        for (j, &yj) in y.iter().enumerate() {
            lhs += &self.v_a_v[j + 1] * yj;
            rhs += &self.v_res[j + 1] * yj;
        }
        match lhs.clone().cholesky() {
            Some(ch) => Ok(ch.solve(&rhs)),
            None => lhs
                .lu()
                .solve(&rhs)
                .ok_or_else(|| PbdwError::Numerical("singular reduced Galerkin system".into())),
        }
    }

    /// `ū + V a` for the Galerkin coefficients `a`.
    pub fn galerkin_state(&self, y: &[f64]) -> Result<DVector<f64>> {
        Ok(&self.anchor + &self.basis * self.galerkin_coeffs(y)?)
    }

    /// Residual `f - A(y)(ū + V a)` assembled from its affine pieces.
    pub fn residual(&self, y: &[f64], a: &DVector<f64>) -> DVector<f64> {
        let mut r = self.anchor_residual[0].clone();
        for (j, &yj) in y.iter().enumerate() {
            r.axpy(yj, &self.anchor_residual[j + 1], 1.0);
        }
        if self.n() > 0 {
            let mut av = &self.a_v[0] * a;
            for (j, &yj) in y.iter().enumerate() {
                av.gemv(yj, &self.a_v[j + 1], a, 1.0);
            }
            r -= av;
        }
        r
    }

    /// Dual norm of the Galerkin residual.
    pub fn surrogate(&self, model: &ParametricModel, y: &[f64]) -> Result<f64> {
        let a = self.galerkin_coeffs(y)?;
        Ok(model.space().dual_norm_unchecked(&self.residual(y, &a)))
    }
}

/// Surrogate `‖R(y, Π u(y))‖_{V'}` for a single parameter.
pub fn surrogate(model: &ParametricModel, reduced: &ReducedSpace, y: &[f64]) -> Result<f64> {
    model.validate_param(y)?;
    ReducedOperators::from_reduced(model, reduced).surrogate(model, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyConfig {
    pub n_max: usize,
    /// Target accuracy; `None` runs to `n_max`.
    pub tol: Option<f64>,
    /// Stopping constant `c` in `max surrogate ≤ c·tol^{1+a}`; defaults to `r`.
    pub stop_c: Option<f64>,
    pub stop_a: f64,
    /// Track the exact max projection error over the training set.
    pub record_dist: bool,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self { n_max: 20, tol: None, stop_c: None, stop_a: 0.0, record_dist: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GreedyMode {
    /// One fixed training set.
    Fixed,
    /// `n` fresh uniform points per step.
    Randomized { n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEvent {
    pub step: usize,
    pub point: Vec<f64>,
    pub remainder_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    pub selected_params: Vec<Vec<f64>>,
    /// Max surrogate with `k` basis vectors, `k = 0..=n`.
    pub surrogate_max_history: Vec<f64>,
    /// `(1/r)·surrogate_max_history`.
    pub eps_history: Vec<f64>,
    pub dist_history: Option<Vec<f64>>,
    /// Weakness constant at surrogate level; exact argmax makes it 1.
    pub gamma_used: f64,
    pub skipped: Vec<SkipEvent>,
    pub training_sizes: Vec<usize>,
}

fn validate_training(model: &ParametricModel, training: &TrainingSet) -> Result<()> {
    if training.is_empty() {
        return Err(PbdwError::InvalidConfig("training set is empty".into()));
    }
    for y in training.points() {
        model.validate_param(y)?;
    }
    Ok(())
}

/// Step-wise greedy over a training set.
pub struct GreedyState<'a> {
    model: &'a ParametricModel,
    training: TrainingSet,
    anchor: DVector<f64>,
    basis: UBasis,
    ops: ReducedOperators,
    excluded: Vec<bool>,
    snapshots: Option<Vec<DVector<f64>>>,
    selected: Vec<Vec<f64>>,
    skipped: Vec<SkipEvent>,
}

#[derive(Debug, Clone)]
pub struct SurrogateScan {
    pub values: Vec<f64>,
    /// Argmax over non-excluded points, lowest index on ties.
    pub argmax: Option<usize>,
    /// Max over all points, excluded ones included.
    pub max: f64,
}

impl<'a> GreedyState<'a> {
    pub fn new(model: &'a ParametricModel, training: TrainingSet, anchor: Option<DVector<f64>>) -> Result<Self> {
        validate_training(model, &training)?;
        let dim = model.dim();
        let anchor = anchor.unwrap_or_else(|| DVector::zeros(dim));
        check_dim("anchor", dim, anchor.len())?;
        let ops = ReducedOperators::new(model, &anchor, &DMatrix::zeros(dim, 0));
        Ok(Self {
            model,
            excluded: vec![false; training.len()],
            training,
            anchor,
            basis: UBasis::new(),
            ops,
            snapshots: None,
            selected: Vec::new(),
            skipped: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.basis.len()
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    /// Swaps in a new training set, keeping the basis.
    pub fn replace_training(&mut self, training: TrainingSet) -> Result<()> {
        validate_training(self.model, &training)?;
        self.excluded = vec![false; training.len()];
        self.snapshots = None;
        self.training = training;
        Ok(())
    }

    pub fn basis(&self) -> &UBasis {
        &self.basis
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn scan(&self) -> Result<SurrogateScan> {
        let values: Vec<f64> = self
            .training
            .points()
            .par_iter()
            .map(|y| self.ops.surrogate(self.model, y))
            .collect::<Result<_>>()?;
        let mut argmax = None;
        let mut best = f64::NEG_INFINITY;
        let mut max = f64::NEG_INFINITY;
        for (i, &v) in values.iter().enumerate() {
            max = max.max(v);
            if !self.excluded[i] && v > best {
                best = v;
                argmax = Some(i);
            }
        }
        Ok(SurrogateScan { values, argmax, max })
    }

    /// Cached snapshots of all training points.
    pub fn snapshots(&mut self) -> Result<&[DVector<f64>]> {
        if self.snapshots.is_none() {
            let anchor = &self.anchor;
            let snaps = self
                .training
                .snapshots(self.model)?
                .into_iter()
                .map(|u| u - anchor)
                .collect();
            self.snapshots = Some(snaps);
        }
        Ok(self.snapshots.as_deref().expect("filled above"))
    }

    /// Max over the training set of the U-distance to the current space.
    pub fn max_distance(&mut self) -> Result<f64> {
        let basis = self.basis.clone();
        let space = self.model.space().clone();
        let snaps = self.snapshots()?;
        Ok(snaps
            .par_iter()
            .map(|u| space.norm(&(u - basis.combine(&basis.coords(u), u.len()))))
            .reduce(|| 0.0, f64::max))
    }

    /// Adds the snapshot of training point `index`. A numerically dependent
    /// snapshot excludes the point and is reported as `Ok(false)`.
    pub fn add(&mut self, index: usize) -> Result<bool> {
        let y = &self.training.points()[index].clone();
        let snapshot = match &self.snapshots {
            Some(s) => s[index].clone(),
            None => self.model.solve(y)? - &self.anchor,
        };
        match self.basis.try_push(self.model.space(), &snapshot, DEFLATION_TOL) {
            Ok(_) => {
                self.selected.push(y.clone());
                self.ops = ReducedOperators::new(self.model, &self.anchor, &self.basis.matrix(self.model.dim()));
                Ok(true)
            }
            Err(ratio) => {
                self.excluded[index] = true;
                self.skipped.push(SkipEvent { step: self.n(), point: y.clone(), remainder_ratio: ratio });
                Ok(false)
            }
        }
    }

    /// Adds the highest-surrogate admissible point of `scan`, skipping
    /// dependent snapshots. `Ok(false)` when every point is dependent.
    pub fn add_best(&mut self, scan: &SurrogateScan) -> Result<bool> {
        let mut order: Vec<usize> = (0..self.training.len()).collect();
        order.sort_by(|&a, &b| scan.values[b].total_cmp(&scan.values[a]).then(a.cmp(&b)));
        for idx in order {
            if !self.excluded[idx] && self.add(idx)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub fn reduced_space(&self, eps: f64, provenance: impl Into<String>) -> ReducedSpace {
        ReducedSpace::affine(self.anchor.clone(), self.basis.clone(), eps, provenance)
    }
}

/// Weak greedy with exact argmax over the training set.
pub fn weak_greedy(
    model: &ParametricModel,
    training: &TrainingSet,
    cfg: &GreedyConfig,
    mode: GreedyMode,
) -> Result<(ReducedSpace, GreedyTrace)> {
    weak_greedy_anchored(model, training, cfg, mode, None)
}

pub fn weak_greedy_anchored(
    model: &ParametricModel,
    training: &TrainingSet,
    cfg: &GreedyConfig,
    mode: GreedyMode,
    anchor: Option<DVector<f64>>,
) -> Result<(ReducedSpace, GreedyTrace)> {
    let r = model.r();
    let threshold = cfg
        .tol
        .map(|t| cfg.stop_c.unwrap_or(r) * t.powf(1.0 + cfg.stop_a))
        .unwrap_or(f64::NEG_INFINITY);
    let d_y = model.d_y();
    let mut state = GreedyState::new(model, training.clone(), anchor)?;
    let mut history = Vec::new();
    let mut dist_history = cfg.record_dist.then(Vec::new);
    let mut training_sizes = Vec::new();
    let mut step = 0u64;

    loop {
        if let GreedyMode::Randomized { n, seed } = mode {
            state.replace_training(TrainingSet::random(d_y, n, seed.wrapping_add(step.wrapping_mul(0x9E37_79B9))))?;
        }
        training_sizes.push(state.training.len());
        let scan = state.scan()?;
        history.push(scan.max);
        if let Some(d) = dist_history.as_mut() {
            d.push(state.max_distance()?);
        }
        if scan.max <= threshold || state.n() >= cfg.n_max {
            break;
        }
        if !state.add_best(&scan)? {
            log::warn!("greedy stalled at n = {}: every remaining snapshot is dependent", state.n());
            break;
        }
        step += 1;
    }

    let eps_history: Vec<f64> = history.iter().map(|s| s / r).collect();
    let eps = *eps_history.last().expect("at least one scan");
    let provenance = match mode {
        GreedyMode::Fixed => format!("weak greedy, {:?}", training.mode()),
        GreedyMode::Randomized { n, seed } => format!("randomized weak greedy, {n} points per step, seed {seed}"),
    };
    let reduced = state.reduced_space(eps, provenance);
    let trace = GreedyTrace {
        selected_params: state.selected.clone(),
        surrogate_max_history: history,
        eps_history,
        dist_history,
        gamma_used: 1.0,
        skipped: state.skipped.clone(),
        training_sizes,
    };
    Ok((reduced, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub n: usize,
    pub beta: f64,
    pub mu: f64,
    pub eps: f64,
    pub product: f64,
}

#[derive(Debug, Clone)]
pub struct PoorMansSelection {
    pub n_star: usize,
    pub map: OneSpaceMap,
    pub table: Vec<SelectionRow>,
}

/// Minimizes `mu(U_n)·eps_n` over `n = 1..=min(m, N)` of a nested hierarchy,
/// ties to the smallest `n`. `eps[n]` certifies the first `n` vectors.
pub fn poor_mans_select(
    system: &MeasurementSystem,
    hierarchy: &ReducedSpace,
    eps: &[f64],
) -> Result<PoorMansSelection> {
    let n_top = hierarchy.n().min(system.m()).min(eps.len().saturating_sub(1));
    let mut table = Vec::with_capacity(n_top);
    let mut best: Option<(usize, f64)> = None;
    for n in 1..=n_top {
        let space = hierarchy.truncated(n, eps[n]);
        let (beta, mu) = beta_mu(system, &space);
        let product = if eps[n] == 0.0 && mu.is_finite() { 0.0 } else { mu * eps[n] };
        table.push(SelectionRow { n, beta, mu, eps: eps[n], product });
        if mu.is_finite() && best.is_none_or(|(_, p)| product < p) {
            best = Some((n, product));
        }
    }
    let (n_star, _) = best.ok_or(PbdwError::NoFiniteMu)?;
    let map = OneSpaceMap::new(system, hierarchy.truncated(n_star, eps[n_star]))?;
    Ok(PoorMansSelection { n_star, map, table })
}
