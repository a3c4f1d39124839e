//! Residual-based metric projection onto the solution manifold and the
//! resulting parameter estimates.
//!
//! For a state `ū` the squared residual dual norm is a quadratic form in
//! `ŷ = (1, y)`: `‖f - A(y) ū‖²_{V'} = ŷᵀ Q ŷ` with `Q_ij = R_iᵀ G⁻¹ R_j`.
//! Minimizing it over the parameter box gives `ȳ`, and `S(ū) = ‖ū - u(ȳ)‖_U`
//! is within the factor `R/r` of the distance from `ū` to the manifold.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::boxqp::{solve_box_lsq, BoxLsqConfig};
use crate::error::{check_dim, Result};
use crate::model::ParametricModel;

#[derive(Debug, Clone)]
pub struct ResidualQuadratic {
    q: DMatrix<f64>,
    /// Triangular factor with `Q = Rᵀ R`, used for stable evaluation.
    r: DMatrix<f64>,
}

impl ResidualQuadratic {
    /// The `(d_y+1)×(d_y+1)` Gramian of the lifted residual components.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn hat(y: &[f64]) -> DVector<f64> {
        DVector::from_iterator(y.len() + 1, std::iter::once(1.0).chain(y.iter().copied()))
    }

    /// `‖R ŷ‖²`, equal to `ŷᵀ Q ŷ` without its cancellation.
    pub fn value(&self, y: &[f64]) -> f64 {
        (&self.r * Self::hat(y)).norm_squared()
    }

    /// `ŷᵀ Q ŷ` evaluated directly.
    pub fn quadratic_form(&self, y: &[f64]) -> f64 {
        let h = Self::hat(y);
        h.dot(&(&self.q * &h))
    }
}

pub fn residual_quadratic(model: &ParametricModel, u_bar: &DVector<f64>) -> Result<ResidualQuadratic> {
    let residual = model.residual(u_bar, &vec![0.0; model.d_y()])?;
    let space = model.space();
    let k = residual.components.len();
    let mut z = DMatrix::zeros(model.dim(), k);
    for (j, c) in residual.components.iter().enumerate() {
        z.set_column(j, &space.whiten_dual(c));
    }
    let q = z.tr_mul(&z);
    let r = if z.nrows() >= k {
        z.qr().r()
    } else {
        z.clone()
    };
    Ok(ResidualQuadratic { q, r })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub y_bar: Vec<f64>,
    /// `S(ū) = ‖ū - u(ȳ)‖_U`.
    pub s_value: f64,
    /// `‖f - A(ȳ) ū‖_{V'}`.
    pub residual_at_opt: f64,
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective_history: Vec<f64>,
    pub active: Vec<i8>,
}

pub fn metric_project(model: &ParametricModel, u_bar: &DVector<f64>, cfg: &BoxLsqConfig) -> Result<ProjectionResult> {
    check_dim("projected state", model.dim(), u_bar.len())?;
    let quad = residual_quadratic(model, u_bar)?;
    let d = model.d_y();
    let rf = quad.factor();
    // Scale so that the largest column has unit norm; the KKT tolerance is
    // then relative.
    let scale = rf.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let b = rf.column(0) / scale;
    let m = rf.columns(1, d) / scale;
    let sol = solve_box_lsq(&b, &m, &vec![-1.0; d], &vec![1.0; d], cfg);
    if !sol.converged {
        log::warn!("metric projection stopped with KKT residual {:e}", sol.kkt_residual);
    }
    let u = model.solve(&sol.y)?;
    let s_value = model.space().norm(&(u_bar - u));
    Ok(ProjectionResult {
        residual_at_opt: quad.value(&sol.y).sqrt(),
        y_bar: sol.y,
        s_value,
        kkt_residual: sol.kkt_residual,
        converged: sol.converged,
        iterations: sol.iterations,
        objective_history: sol.objective_history.iter().map(|f| 2.0 * f * scale * scale).collect(),
        active: sol.active,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub y_bar: Vec<f64>,
    /// `(1 + κ)·certificate` bounds `‖u(y*) - u(ȳ)‖_U`.
    pub chain_bound: f64,
    pub projection: ProjectionResult,
}

/// Parameter estimate from a recovered state whose worst-case error is
/// certified by `certificate`.
pub fn estimate_parameter(
    model: &ParametricModel,
    recovered: &DVector<f64>,
    certificate: f64,
    cfg: &BoxLsqConfig,
) -> Result<ParameterEstimate> {
    let projection = metric_project(model, recovered, cfg)?;
    Ok(ParameterEstimate {
        y_bar: projection.y_bar.clone(),
        chain_bound: (1.0 + model.kappa()) * certificate,
        projection,
    })
}

/// `‖u(y) - u(y')‖_U`.
pub fn state_error(model: &ParametricModel, y: &[f64], y2: &[f64]) -> Result<f64> {
    let a = model.solve(y)?;
    let b = model.solve(y2)?;
    Ok(model.space().norm(&(a - b)))
}
