//! Affine recovery maps `A(w) = w + z + B w` fitted by minimizing the
//! worst-case error over a finite manifold net.
//!
//! The range of the correction is the complement `(U_L + W) ⊖ W` of the
//! observation space inside a reduced space `U_L`. In complement coordinates
//! the error at a net state `u_s` is `sqrt(‖d_s - z - B c_s‖² + ρ_s²)` where
//! `c_s` are its W coordinates, `d_s` its complement coordinates and `ρ_s`
//! the part of `u_s` outside `U_L + W`. The fit is a convex min-max problem
//! in `(z, B)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PbdwError, Result};
use crate::linalg::{singular_values_desc, spectral_norm, UBasis};
use crate::minimax::{solve_minimax, MinimaxConfig};
use crate::model::ParametricModel;
use crate::onespace::ReducedSpace;
use crate::oracle::{ManifoldNet, RecoveryMap};
use crate::sensing::{MeasurementSystem, Observation};
use crate::space::DiscreteSpace;

/// Relative remainder below which a spanning vector is considered dependent.
pub const COMPLEMENT_TOL: f64 = 1e-10;

/// U-orthonormal basis of `(span(vectors) + W) ⊖ W`, as columns.
pub fn build_complement(space: &DiscreteSpace, system: &MeasurementSystem, vectors: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let mut basis = UBasis::new();
    for col in system.w_basis().column_iter() {
        basis
            .try_push(space, &col.clone_owned(), COMPLEMENT_TOL)
            .map_err(|_| PbdwError::Numerical("observation basis is not U-orthonormal".into()))?;
    }
    let m = basis.len();
    for v in vectors {
        check_dim("complement spanning vector", space.dim(), v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(PbdwError::Numerical("non-finite spanning vector".into()));
        }
        let _ = basis.try_push(space, v, COMPLEMENT_TOL);
    }
    let mut out = DMatrix::zeros(space.dim(), basis.len() - m);
    for (j, b) in basis.vectors()[m..].iter().enumerate() {
        out.set_column(j, b);
    }
    Ok(out)
}

/// Spanning vectors of `U_L`: its basis, plus the anchor when it is nonzero.
pub fn reduced_space_span(reduced: &ReducedSpace) -> Vec<DVector<f64>> {
    let mut v = reduced.basis().vectors().to_vec();
    if reduced.anchor().iter().any(|x| *x != 0.0) {
        v.push(reduced.anchor().clone());
    }
    v
}

/// Per-state data of the min-max problem.
#[derive(Debug, Clone)]
pub struct NetData {
    /// `S × m` W coordinates.
    pub c: DMatrix<f64>,
    /// `S × p` complement coordinates.
    pub d: DMatrix<f64>,
    /// Distance of each state to `U_L + W`.
    pub rho: Vec<f64>,
}

impl NetData {
    pub fn new(space: &DiscreteSpace, system: &MeasurementSystem, complement: &DMatrix<f64>, states: &[DVector<f64>]) -> Result<Self> {
        let (s, m, p) = (states.len(), system.m(), complement.ncols());
        let gz = space.gram_mul_matrix(complement);
        let mut c = DMatrix::zeros(s, m);
        let mut d = DMatrix::zeros(s, p);
        let mut rho = Vec::with_capacity(s);
        for (i, u) in states.iter().enumerate() {
            check_dim("net state", space.dim(), u.len())?;
            let ci = system.w_coords(u);
            let di = gz.tr_mul(u);
            let rest = u - system.synthesize(&ci) - complement * &di;
            c.set_row(i, &ci.transpose());
            d.set_row(i, &di.transpose());
            rho.push(space.norm(&rest));
        }
        Ok(Self { c, d, rho })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRecoveryMap {
    /// `dim × p`, U-orthonormal columns spanning `(U_L + W) ⊖ W`.
    pub complement_basis: DMatrix<f64>,
    /// Offset in complement coordinates.
    pub z: DVector<f64>,
    /// `p × m`, maps W coordinates to complement coordinates.
    pub b_matrix: DMatrix<f64>,
    /// Max error over the training net.
    pub training_objective: f64,
    /// Certified lower bound for the optimal training objective.
    pub objective_lower_bound: f64,
    pub certified: bool,
    pub newton_steps: usize,
    /// Best objective after each solver stage; non-increasing.
    pub history: Vec<f64>,
    /// Certified accuracy of `U_L` on the manifold.
    pub eta: f64,
}

impl AffineRecoveryMap {
    pub fn p(&self) -> usize {
        self.complement_basis.ncols()
    }

    pub fn m(&self) -> usize {
        self.b_matrix.ncols()
    }

    /// Operator norm of `B`, which is also its norm as a map `W → U`.
    pub fn b_norm(&self) -> f64 {
        spectral_norm(&self.b_matrix)
    }

    /// `w + z + B w` from orthonormal W coordinates.
    pub fn apply_coords(&self, system: &MeasurementSystem, coords: &DVector<f64>) -> DVector<f64> {
        let mut u = system.synthesize(coords);
        if self.p() > 0 {
            u += &self.complement_basis * (&self.z + &self.b_matrix * coords);
        }
        u
    }

    pub fn apply(&self, system: &MeasurementSystem, obs: &Observation) -> Result<DVector<f64>> {
        check_dim("observation", system.m(), obs.w_coords.len())?;
        Ok(self.apply_coords(system, &obs.w_coords))
    }

    /// Net-independent certificate: training objective plus the worst
    /// change of the error between a state and its nearest net state.
    pub fn certificate(&self, delta: f64) -> f64 {
        self.training_objective + (1.0 + self.b_norm()) * delta
    }
}

impl RecoveryMap for AffineRecoveryMap {
    fn recover_coords(&self, system: &MeasurementSystem, coords: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.apply_coords(system, coords))
    }
}

/// Fits `(z, B)` over the net with `U_L = u_l`; `u_l.eps` is recorded as `η`.
pub fn fit(
    model: &ParametricModel,
    system: &MeasurementSystem,
    net: &ManifoldNet,
    u_l: &ReducedSpace,
    cfg: &MinimaxConfig,
) -> Result<AffineRecoveryMap> {
    if net.is_empty() {
        return Err(PbdwError::InvalidConfig("affine fit needs a nonempty net".into()));
    }
    let space = model.space();
    check_dim("reduced space", space.dim(), u_l.dim())?;
    let complement = build_complement(space, system, &reduced_space_span(u_l))?;
    let data = NetData::new(space, system, &complement, &net.states)?;
    fit_data(complement, &data, u_l.eps, cfg)
}

/// Fit on precomputed net data.
pub fn fit_data(complement: DMatrix<f64>, data: &NetData, eta: f64, cfg: &MinimaxConfig) -> Result<AffineRecoveryMap> {
    let (s, m, p) = (data.c.nrows(), data.c.ncols(), data.d.ncols());
    if s == 0 {
        return Err(PbdwError::InvalidConfig("affine fit needs a nonempty net".into()));
    }
    // Centered and scaled coordinates keep the Newton systems well conditioned.
    let mean: Vec<f64> = (0..m).map(|j| data.c.column(j).mean()).collect();
    let scale: Vec<f64> = (0..m)
        .map(|j| {
            let sd = data.c.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / s as f64;
            if sd.sqrt() > 1e-14 {
                sd.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let hat = DMatrix::from_fn(s, m + 1, |i, j| if j == 0 { 1.0 } else { (data.c[(i, j - 1)] - mean[j - 1]) / scale[j - 1] });
    let res = solve_minimax(&data.d, &hat, &data.rho, cfg);
    if !res.converged {
        log::warn!(
            "affine fit stopped after {} Newton steps with gap {:e}",
            res.newton_steps,
            res.objective - res.lower_bound
        );
    }
    let mut b = DMatrix::zeros(p, m);
    for j in 0..m {
        b.set_column(j, &(res.x.column(j + 1) / scale[j]));
    }
    let mean_v = DVector::from_vec(mean);
    let z = if p > 0 { res.x.column(0) - &b * &mean_v } else { DVector::zeros(0) };
    Ok(AffineRecoveryMap {
        complement_basis: complement,
        z,
        b_matrix: b,
        training_objective: res.objective,
        objective_lower_bound: res.lower_bound,
        certified: res.converged,
        newton_steps: res.newton_steps,
        history: res.history,
        eta,
    })
}

/// Lower bounds for the error of any map with an `(m+1)`-dimensional range,
/// computed from the singular values `σ_k` of the whitened `S`-column net
/// matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthProxy {
    /// `σ_{m+2} / √S`.
    pub sigma: f64,
    /// `sqrt(Σ_{k ≥ m+2} σ_k² / S)`, never smaller than `sigma`.
    pub tail: f64,
}

pub fn width_lower_proxy(space: &DiscreteSpace, states: &[DVector<f64>], m: usize) -> WidthProxy {
    let s = states.len();
    if s == 0 {
        return WidthProxy { sigma: 0.0, tail: 0.0 };
    }
    let mut mat = DMatrix::zeros(space.dim(), s);
    for (j, u) in states.iter().enumerate() {
        mat.set_column(j, &space.whiten(u));
    }
    let sv = singular_values_desc(&mat);
    let sigma = sv.get(m + 1).copied().unwrap_or(0.0) / (s as f64).sqrt();
    let tail = (sv.iter().skip(m + 1).map(|v| v * v).sum::<f64>() / s as f64).sqrt();
    WidthProxy { sigma, tail }
}

/// `max_probe min_s ‖probe - u_s‖_U`, an a posteriori net fineness.
pub fn net_fineness(space: &DiscreteSpace, net: &[DVector<f64>], probes: &[DVector<f64>]) -> f64 {
    let white: Vec<DVector<f64>> = net.iter().map(|u| space.whiten(u)).collect();
    probes
        .iter()
        .map(|p| {
            let wp = space.whiten(p);
            white.iter().map(|w| (w - &wp).norm()).fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutReport {
    pub max_error: f64,
    /// `max_error - training_objective`.
    pub gap: f64,
    /// Net fineness measured on the held-out states.
    pub delta: f64,
    pub b_norm: f64,
    /// `η + ‖B‖·δ`.
    pub slack: f64,
    /// `sqrt(1 + ‖B‖²)·δ`, a bound on the gap that holds for every state.
    pub rigorous_slack: f64,
}

pub fn held_out(
    space: &DiscreteSpace,
    system: &MeasurementSystem,
    map: &AffineRecoveryMap,
    net: &[DVector<f64>],
    held_out_states: &[DVector<f64>],
) -> HeldOutReport {
    let max_error = held_out_states
        .iter()
        .map(|u| space.norm(&(u - map.apply_coords(system, &system.w_coords(u)))))
        .fold(0.0, f64::max);
    let delta = net_fineness(space, net, held_out_states);
    let b_norm = map.b_norm();
    HeldOutReport {
        max_error,
        gap: max_error - map.training_objective,
        delta,
        b_norm,
        slack: map.eta + b_norm * delta,
        rigorous_slack: (1.0 + b_norm * b_norm).sqrt() * delta,
    }
}
