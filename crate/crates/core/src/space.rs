//! The ambient discrete space U_h with the H¹₀-seminorm inner product.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::{CscCholesky, CscSymbolicCholesky};
use nalgebra_sparse::CscMatrix;

use crate::error::{check_dim, PbdwError, Result};
use crate::mesh::{spmv, Mesh, Point};

/// Finite element space on a uniform grid. The Gram matrix of the U inner
/// product is the unit-coefficient stiffness matrix, factored once.
#[derive(Debug, Clone)]
pub struct DiscreteSpace {
    mesh: Mesh,
    gram_values: Vec<f64>,
    gram_factor: CscCholesky<f64>,
    symbolic: CscSymbolicCholesky,
}

impl DiscreteSpace {
    pub fn new(dx: usize, n_mesh: usize) -> Result<Self> {
        let mesh = Mesh::uniform(dx, n_mesh)?;
        let gram_values = mesh.stiffness_values(&vec![1.0; mesh.elements().len()]);
        let symbolic = CscSymbolicCholesky::factor(mesh.pattern().clone());
        let gram_factor = CscCholesky::factor_numerical(symbolic.clone(), &gram_values)
            .map_err(|e| PbdwError::NotPositiveDefinite(format!("gram matrix: {e:?}")))?;
        Ok(Self {
            mesh,
            gram_values,
            gram_factor,
            symbolic,
        })
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn dx(&self) -> usize {
        self.mesh.dx()
    }

    pub fn n_mesh(&self) -> usize {
        self.mesh.n()
    }

    pub fn nodes(&self) -> &[Point] {
        self.mesh.nodes()
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn gram(&self) -> CscMatrix<f64> {
        CscMatrix::try_from_pattern_and_values(self.mesh.pattern().clone(), self.gram_values.clone())
            .expect("values match pattern")
    }

    pub(crate) fn symbolic(&self) -> &CscSymbolicCholesky {
        &self.symbolic
    }

    /// `G v`, the dual vector of the functional `⟨v, ·⟩_U`.
    pub fn gram_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        spmv(self.mesh.pattern(), &self.gram_values, v)
    }

    /// `G V` column by column.
    pub fn gram_mul_matrix(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for (j, col) in v.column_iter().enumerate() {
            let g = self.gram_mul(&col.clone_owned());
            out.set_column(j, &g);
        }
        out
    }

    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&self.gram_mul(v))
    }

    pub fn norm(&self, u: &DVector<f64>) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    /// `G⁻¹ r`: the state whose U inner product reproduces the functional `r`.
    pub fn riesz_lift(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("riesz_lift", self.dim(), r.len())?;
        Ok(self.riesz_lift_unchecked(r))
    }

    pub(crate) fn riesz_lift_unchecked(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut x = DMatrix::from_column_slice(r.len(), 1, r.as_slice());
        self.gram_factor.solve_mut(&mut x);
        DVector::from_column_slice(x.as_slice())
    }

    pub fn riesz_lift_matrix(&self, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("riesz_lift_matrix", self.dim(), r.nrows())?;
        let mut x = r.clone();
        self.gram_factor.solve_mut(&mut x);
        Ok(x)
    }

    /// `sqrt(rᵀ G⁻¹ r) = sup_v r(v) / ‖v‖_U`.
    pub fn dual_norm(&self, r: &DVector<f64>) -> Result<f64> {
        check_dim("dual_norm", self.dim(), r.len())?;
        Ok(self.dual_norm_unchecked(r))
    }

    pub(crate) fn dual_norm_unchecked(&self, r: &DVector<f64>) -> f64 {
        // ‖L⁻¹ r‖₂ avoids the cancellation of rᵀ(G⁻¹ r) for tiny residuals.
        self.whiten_dual(r).norm()
    }

    /// `L⁻¹ r` with `G = L Lᵀ`, so that `‖L⁻¹ r‖₂ = ‖r‖_{V'}`.
    pub fn whiten_dual(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut x = DMatrix::from_column_slice(r.len(), 1, r.as_slice());
        nalgebra_sparse::ops::serial::spsolve_csc_lower_triangular(
            nalgebra_sparse::ops::Op::NoOp(self.gram_factor.l()),
            &mut x,
        )
        .expect("factor is nonsingular");
        DVector::from_column_slice(x.as_slice())
    }

    /// `Lᵀ u` with `G = L Lᵀ`, so that `‖Lᵀ u‖₂ = ‖u‖_U`.
    pub fn whiten(&self, u: &DVector<f64>) -> DVector<f64> {
        let l = self.gram_factor.l();
        let mut out = DVector::zeros(u.len());
        for (j, col) in l.col_iter().enumerate() {
            out[j] = col
                .row_indices()
                .iter()
                .zip(col.values())
                .map(|(&i, &v)| v * u[i])
                .sum();
        }
        out
    }

    pub fn whiten_matrix(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for (j, col) in v.column_iter().enumerate() {
            out.set_column(j, &self.whiten(&col.clone_owned()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn gram_is_symmetric() {
        for dx in [1, 2] {
            let space = DiscreteSpace::new(dx, 9).unwrap();
            let g = nalgebra::DMatrix::from(&space.gram());
            assert_eq!((&g - g.transpose()).amax(), 0.0);
        }
    }

    #[test]
    fn riesz_lift_inverts_gram() {
        let space = DiscreteSpace::new(2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random_vec(&mut rng, space.dim());
        let lift = space.riesz_lift(&space.gram_mul(&e)).unwrap();
        assert!((lift - &e).amax() < 1e-12);
    }

    #[test]
    fn dual_norm_of_gram_image_is_state_norm() {
        let space = DiscreteSpace::new(1, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let e = random_vec(&mut rng, space.dim());
            let d = space.dual_norm(&space.gram_mul(&e)).unwrap();
            assert!((d - space.norm(&e)).abs() <= 1e-12 * d);
        }
        assert_eq!(space.dual_norm(&DVector::zeros(space.dim())).unwrap(), 0.0);
    }

    #[test]
    fn whitening_preserves_norm() {
        let space = DiscreteSpace::new(2, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_vec(&mut rng, space.dim());
        assert!((space.whiten(&u).norm() - space.norm(&u)).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let space = DiscreteSpace::new(1, 10).unwrap();
        assert!(matches!(
            space.dual_norm(&DVector::zeros(3)),
            Err(PbdwError::DimensionMismatch { expected: 9, found: 3, .. })
        ));
    }
}
