//! One-space recovery: the element of the data-consistent set closest to a
//! (possibly affine) reduced space, with its inf-sup stability constant.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, PbdwError, Result};
use crate::linalg::UBasis;
use crate::sensing::{MeasurementSystem, Observation};

/// `beta` at or below this value makes `mu` infinite.
pub const BETA_TOL: f64 = 1e-10;
/// Relative singular value cutoff of the cross-Gramian pseudo-inverse.
pub const PINV_TOL: f64 = 1e-10;

/// Affine reduced space `anchor + span(basis)` with accuracy certificate `eps`.
#[derive(Debug, Clone)]
pub struct ReducedSpace {
    anchor: DVector<f64>,
    basis: UBasis,
    pub eps: f64,
    pub provenance: String,
}

impl ReducedSpace {
    pub fn linear(dim: usize, basis: UBasis, eps: f64, provenance: impl Into<String>) -> Self {
        Self::affine(DVector::zeros(dim), basis, eps, provenance)
    }

    pub fn affine(anchor: DVector<f64>, basis: UBasis, eps: f64, provenance: impl Into<String>) -> Self {
        Self { anchor, basis, eps, provenance: provenance.into() }
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn basis(&self) -> &UBasis {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn basis_matrix(&self) -> DMatrix<f64> {
        self.basis.matrix(self.dim())
    }

    /// The first `n` basis vectors with a new certificate.
    pub fn truncated(&self, n: usize, eps: f64) -> Self {
        Self {
            anchor: self.anchor.clone(),
            basis: self.basis.truncated(n),
            eps,
            provenance: self.provenance.clone(),
        }
    }

    /// U-orthogonal projection onto the affine space.
    pub fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        let shifted = u - &self.anchor;
        &self.anchor + self.basis.combine(&self.basis.coords(&shifted), self.dim())
    }
}

/// Cross-Gramian `Bᵀ G V` between the W basis and a reduced basis.
pub fn cross_gramian(system: &MeasurementSystem, basis: &DMatrix<f64>) -> DMatrix<f64> {
    system.gram_w_basis().tr_mul(basis)
}

/// `(beta, mu)`; `mu` is infinite when `beta ≤ BETA_TOL` or `n > m`.
pub fn beta_mu(system: &MeasurementSystem, reduced: &ReducedSpace) -> (f64, f64) {
    let n = reduced.n();
    if n == 0 {
        return (1.0, 1.0);
    }
    if n > system.m() {
        log::warn!("reduced dimension {n} exceeds the number of sensors {}; beta set to 0", system.m());
        return (0.0, f64::INFINITY);
    }
    let c = cross_gramian(system, &reduced.basis_matrix());
    let beta = c.singular_values().min();
    if beta <= BETA_TOL {
        (beta, f64::INFINITY)
    } else {
        (beta, 1.0 / beta)
    }
}

#[derive(Debug, Clone)]
pub struct OneSpaceMap {
    reduced: ReducedSpace,
    beta: f64,
    mu: f64,
    basis: DMatrix<f64>,
    cross: DMatrix<f64>,
    cross_pinv: DMatrix<f64>,
    anchor_coords: DVector<f64>,
    /// Unit right singular vector of the smallest singular value.
    weakest_direction: DVector<f64>,
}

impl OneSpaceMap {
    /// Fails with `MapUndefined` when the reduced space meets W⊥.
    pub fn new(system: &MeasurementSystem, reduced: ReducedSpace) -> Result<Self> {
        check_dim("reduced space", system.dim(), reduced.dim())?;
        let (beta, mu) = beta_mu(system, &reduced);
        if !mu.is_finite() {
            return Err(PbdwError::MapUndefined { beta });
        }
        let basis = reduced.basis_matrix();
        let cross = cross_gramian(system, &basis);
        let n = reduced.n();
        let (cross_pinv, weakest_direction) = if n == 0 {
            (DMatrix::zeros(0, system.m()), DVector::zeros(0))
        } else {
            let svd = cross.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let k = svd.singular_values.imin();
            let weakest = svd.v_t.as_ref().expect("requested").row(k).transpose();
            let pinv = svd
                .pseudo_inverse(PINV_TOL * smax)
                .map_err(|e| PbdwError::Numerical(e.to_string()))?;
            (pinv, weakest)
        };
        let anchor_coords = system.w_coords(reduced.anchor());
        Ok(Self { reduced, beta, mu, basis, cross, cross_pinv, anchor_coords, weakest_direction })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn n(&self) -> usize {
        self.reduced.n()
    }

    pub fn reduced(&self) -> &ReducedSpace {
        &self.reduced
    }

    pub fn cross_gramian(&self) -> &DMatrix<f64> {
        &self.cross
    }

    /// Recovery from orthonormal W coordinates.
    pub fn recover_coords(&self, system: &MeasurementSystem, coords: &DVector<f64>) -> DVector<f64> {
        let shifted = coords - &self.anchor_coords;
        let a = &self.cross_pinv * &shifted;
        let w_correction = &shifted - &self.cross * &a;
        self.reduced.anchor() + &self.basis * &a + system.synthesize(&w_correction)
    }

    pub fn recover(&self, system: &MeasurementSystem, obs: &Observation) -> Result<DVector<f64>> {
        check_dim("observation", system.m(), obs.w_coords.len())?;
        Ok(self.recover_coords(system, &obs.w_coords))
    }

    /// Worst-case error `mu·eps` over the cylinder around the reduced space.
    pub fn certify(&self) -> f64 {
        if self.reduced.eps == 0.0 {
            0.0
        } else {
            self.mu * self.reduced.eps
        }
    }

    /// Certificate for data perturbed by at most `noise` in W.
    pub fn certify_noisy(&self, noise: f64) -> f64 {
        self.mu * (self.reduced.eps + noise)
    }

    /// Cylinder element whose recovery error equals `mu·eps`: the anchor plus
    /// a scaled `P_{W⊥}` image of the least observable reduced direction.
    /// Its data coincide with those of the anchor. Returns `None` when the
    /// reduced space lies inside W or `n = 0`, where no such direction exists.
    pub fn extremal_element(&self, system: &MeasurementSystem) -> Option<DVector<f64>> {
        if self.n() == 0 {
            return None;
        }
        let v = &self.basis * &self.weakest_direction;
        let perp_norm = self.u_norm_of_perp(system, &v);
        if perp_norm <= BETA_TOL {
            return None;
        }
        let (_, perp) = system.project_w(&v);
        Some(self.reduced.anchor() + perp * (self.mu * self.reduced.eps / perp_norm))
    }

    /// `‖P_{W⊥} v‖_U` for a unit reduced direction: `sqrt(1 - ‖P_W v‖²)`.
    fn u_norm_of_perp(&self, system: &MeasurementSystem, v: &DVector<f64>) -> f64 {
        let c = system.w_coords(v);
        (1.0 - c.norm_squared()).max(0.0).sqrt()
    }
}
