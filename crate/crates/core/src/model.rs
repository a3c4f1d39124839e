//! Affine parametric diffusion problem `-div(a(x,y) grad u) = f` with
//! `a(x,y) = a0 + Σ_j y_j c_j χ_{I_j}(x)` and `y ∈ [-1,1]^{d_y}`.

use nalgebra::DVector;
use nalgebra_sparse::factorization::CscCholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PbdwError, Result};
use crate::mesh::spmv;
use crate::space::DiscreteSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CoeffProfile {
    /// `c_j = rho / d_y`
    #[default]
    Equal,
    /// `c_j = rho / j²`
    Decay,
}

fn default_dx() -> usize {
    1
}
fn default_one() -> f64 {
    1.0
}
fn default_solver_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_dx")]
    pub dx: usize,
    pub n_mesh: usize,
    pub d_y: usize,
    #[serde(default = "default_one")]
    pub a0: f64,
    #[serde(default)]
    pub coeff_profile: CoeffProfile,
    pub rho: f64,
    /// Explicit amplitudes; overrides `coeff_profile` and `rho` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default = "default_one")]
    pub f: f64,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dx: 1,
            n_mesh: 200,
            d_y: 4,
            a0: 1.0,
            coeff_profile: CoeffProfile::Equal,
            rho: 0.9,
            amplitudes: None,
            f: 1.0,
            solver_tol: 1e-12,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn amplitudes(&self) -> Vec<f64> {
        if let Some(a) = &self.amplitudes {
            return a.clone();
        }
        match self.coeff_profile {
            CoeffProfile::Equal => vec![self.rho / self.d_y as f64; self.d_y],
            CoeffProfile::Decay => (1..=self.d_y).map(|j| self.rho / (j * j) as f64).collect(),
        }
    }
}

/// Dual vector of `f - A(y) v` together with its affine components.
#[derive(Debug, Clone)]
pub struct Residual {
    pub dual_vector: DVector<f64>,
    /// `R_0(v) = f - A_0 v`, then `R_j(v) = -A_j v`.
    pub components: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct ParametricModel {
    config: ModelConfig,
    space: DiscreteSpace,
    amplitudes: Vec<f64>,
    /// Subdomain index of every element.
    element_region: Vec<usize>,
    region_measure: Vec<f64>,
    /// Values of `A_0, A_1, …, A_{d_y}` on the shared pattern.
    ops: Vec<Vec<f64>>,
    load: DVector<f64>,
    load_dual_norm: f64,
    r: f64,
    big_r: f64,
}

/// Subdomain of a point: equal strips in 1D, a checkerboard in 2D when `d_y`
/// is a perfect square and vertical strips otherwise.
fn region_of(dx: usize, d_y: usize, x: f64, y: f64) -> usize {
    let strip = |t: f64, k: usize| ((t * k as f64).floor() as usize).min(k - 1);
    if dx == 1 {
        return strip(x, d_y);
    }
    let s = (d_y as f64).sqrt().round() as usize;
    if s * s == d_y {
        strip(y, s) * s + strip(x, s)
    } else {
        strip(x, d_y)
    }
}

impl ParametricModel {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        if config.d_y == 0 {
            return Err(PbdwError::InvalidConfig("d_y must be at least 1".into()));
        }
        if !(config.a0 > 0.0) {
            return Err(PbdwError::InvalidConfig(format!("a0 must be positive, got {}", config.a0)));
        }
        if !(config.f > 0.0) {
            return Err(PbdwError::InvalidConfig(format!("load f must be positive, got {}", config.f)));
        }
        if !(config.solver_tol > 0.0) {
            return Err(PbdwError::InvalidConfig("solver_tol must be positive".into()));
        }
        let amplitudes = config.amplitudes();
        check_dim("coefficient amplitudes", config.d_y, amplitudes.len())?;
        let sum: f64 = amplitudes.iter().map(|c| c.abs()).sum();
        if !(sum < config.a0) {
            return Err(PbdwError::EllipticityViolated { sum, a0_min: config.a0 });
        }

        let space = DiscreteSpace::new(config.dx, config.n_mesh)?;
        let mesh = space.mesh();
        let element_region: Vec<usize> = mesh
            .elements()
            .iter()
            .map(|e| region_of(config.dx, config.d_y, e.centroid.x, e.centroid.y))
            .collect();
        let mut region_measure = vec![0.0; config.d_y];
        for (e, &j) in mesh.elements().iter().zip(&element_region) {
            region_measure[j] += e.measure;
        }
        if let Some(j) = region_measure.iter().position(|&m| m == 0.0) {
            return Err(PbdwError::InvalidConfig(format!(
                "subdomain {j} contains no element; refine the mesh or reduce d_y"
            )));
        }

        let n_el = mesh.elements().len();
        let mut ops = Vec::with_capacity(config.d_y + 1);
        ops.push(mesh.stiffness_values(&vec![config.a0; n_el]));
        for (j, &c) in amplitudes.iter().enumerate() {
            let coeff: Vec<f64> = element_region.iter().map(|&k| if k == j { c } else { 0.0 }).collect();
            ops.push(mesh.stiffness_values(&coeff));
        }
        let load = mesh.load_vector(&vec![config.f; n_el]);
        let load_dual_norm = space.dual_norm_unchecked(&load);

        let model = Self {
            config: config.clone(),
            space,
            amplitudes,
            element_region,
            region_measure,
            ops,
            load,
            load_dual_norm,
            r: config.a0 - sum,
            big_r: config.a0 + sum,
        };
        model.check_vertices()?;
        Ok(model)
    }

    /// Factors `A(y)` at every vertex of Y (`d_y ≤ 12`) or at 4096 random vertices.
    fn check_vertices(&self) -> Result<()> {
        let d = self.d_y();
        let check = |y: &[f64]| -> Result<()> {
            self.factor(y).map(|_| ()).map_err(|_| {
                PbdwError::NotPositiveDefinite(format!("A(y) at vertex {y:?}"))
            })
        };
        if d <= 12 {
            for mask in 0..(1usize << d) {
                let y: Vec<f64> = (0..d).map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 }).collect();
                check(&y)?;
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            for _ in 0..4096 {
                let y: Vec<f64> = (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
                check(&y)?;
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn space(&self) -> &DiscreteSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn d_y(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// Lower coercivity bound `r = a0 - Σ|c_j|`.
    pub fn r(&self) -> f64 {
        self.r
    }

    /// Upper continuity bound `R = a0 + Σ|c_j|`.
    pub fn big_r(&self) -> f64 {
        self.big_r
    }

    /// Condition ratio `κ = R / r`.
    pub fn kappa(&self) -> f64 {
        self.big_r / self.r
    }

    pub fn load(&self) -> &DVector<f64> {
        &self.load
    }

    pub fn load_dual_norm(&self) -> f64 {
        self.load_dual_norm
    }

    pub fn solver_tol(&self) -> f64 {
        self.config.solver_tol
    }

    pub fn region_measures(&self) -> &[f64] {
        &self.region_measure
    }

    pub fn element_regions(&self) -> &[usize] {
        &self.element_region
    }

    /// Values of `A_j` on the shared sparsity pattern (`j = 0` is the mean part).
    pub fn op_values(&self, j: usize) -> &[f64] {
        &self.ops[j]
    }

    pub fn n_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn validate_param(&self, y: &[f64]) -> Result<()> {
        check_dim("parameter", self.d_y(), y.len())?;
        for (index, &value) in y.iter().enumerate() {
            if !(-1.0..=1.0).contains(&value) {
                return Err(PbdwError::OutsideParameterBox { index, value });
            }
        }
        Ok(())
    }

    /// Values of `A(y) = A_0 + Σ y_j A_j`.
    pub fn operator_values(&self, y: &[f64]) -> Vec<f64> {
        let mut values = self.ops[0].clone();
        for (yj, op) in y.iter().zip(&self.ops[1..]) {
            if *yj == 0.0 {
                continue;
            }
            for (v, a) in values.iter_mut().zip(op) {
                *v += yj * a;
            }
        }
        values
    }

    /// `A_j v`.
    pub fn apply_op(&self, j: usize, v: &DVector<f64>) -> DVector<f64> {
        spmv(self.space.mesh().pattern(), &self.ops[j], v)
    }

    /// `A(y) v`.
    pub fn apply(&self, y: &[f64], v: &DVector<f64>) -> DVector<f64> {
        spmv(self.space.mesh().pattern(), &self.operator_values(y), v)
    }

    /// Coefficient value on every element.
    pub fn coefficient_field(&self, y: &[f64]) -> Vec<f64> {
        self.element_region
            .iter()
            .map(|&j| self.config.a0 + y[j] * self.amplitudes[j])
            .collect()
    }

    /// `‖a(·,y) - a(·,y')‖_{L²}` in closed form.
    pub fn coefficient_l2_distance(&self, y: &[f64], y2: &[f64]) -> f64 {
        self.amplitudes
            .iter()
            .zip(&self.region_measure)
            .zip(y.iter().zip(y2))
            .map(|((c, m), (a, b))| c * c * m * (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn factor(&self, y: &[f64]) -> Result<CscCholesky<f64>> {
        CscCholesky::factor_numerical(self.space.symbolic().clone(), &self.operator_values(y))
            .map_err(|e| PbdwError::NotPositiveDefinite(format!("A(y): {e:?}")))
    }

    /// The state `u(y)` with `A(y) u = f`.
    pub fn solve(&self, y: &[f64]) -> Result<DVector<f64>> {
        self.validate_param(y)?;
        self.solve_unchecked(y)
    }

    /// Solve without the parameter box check; used for extrapolated states.
    pub fn solve_unchecked(&self, y: &[f64]) -> Result<DVector<f64>> {
        check_dim("parameter", self.d_y(), y.len())?;
        let factor = self.factor(y)?;
        let values = self.operator_values(y);
        let solve = |rhs: &DVector<f64>| {
            let mut x = nalgebra::DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
            factor.solve_mut(&mut x);
            DVector::from_column_slice(x.as_slice())
        };
        let mut u = solve(&self.load);
        let tol = self.config.solver_tol * self.load_dual_norm;
        for _ in 0..2 {
            let res = &self.load - spmv(self.space.mesh().pattern(), &values, &u);
            if self.space.dual_norm_unchecked(&res) <= tol {
                return Ok(u);
            }
            u += solve(&res);
        }
        let res = &self.load - spmv(self.space.mesh().pattern(), &values, &u);
        let achieved = self.space.dual_norm_unchecked(&res);
        if achieved <= tol {
            Ok(u)
        } else {
            Err(PbdwError::Numerical(format!(
                "direct solve residual {achieved:e} exceeds tolerance {tol:e}"
            )))
        }
    }

    pub fn residual(&self, v: &DVector<f64>, y: &[f64]) -> Result<Residual> {
        check_dim("residual state", self.dim(), v.len())?;
        check_dim("parameter", self.d_y(), y.len())?;
        let mut components = Vec::with_capacity(self.n_ops());
        components.push(&self.load - self.apply_op(0, v));
        for j in 1..self.n_ops() {
            components.push(-self.apply_op(j, v));
        }
        let mut dual_vector = components[0].clone();
        for (yj, c) in y.iter().zip(&components[1..]) {
            dual_vector.axpy(*yj, c, 1.0);
        }
        Ok(Residual { dual_vector, components })
    }

    /// `‖f - A(y) v‖_{V'}`.
    pub fn residual_norm(&self, v: &DVector<f64>, y: &[f64]) -> Result<f64> {
        check_dim("residual state", self.dim(), v.len())?;
        check_dim("parameter", self.d_y(), y.len())?;
        let res = &self.load - self.apply(y, v);
        Ok(self.space.dual_norm_unchecked(&res))
    }

    /// Bounds `(‖R‖/R, ‖R‖/r)` enclosing `‖u(y) - v‖_U`.
    pub fn error_residual_envelope(&self, v: &DVector<f64>, y: &[f64]) -> Result<(f64, f64)> {
        self.validate_param(y)?;
        let res = self.residual_norm(v, y)?;
        Ok((res / self.big_r, res / self.r))
    }
}
