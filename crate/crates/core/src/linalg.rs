//! Dense helpers in the U inner product.

use nalgebra::{DMatrix, DVector};

use crate::space::DiscreteSpace;

/// Incrementally built U-orthonormal basis. `G b` is cached for every basis
/// vector so that coordinates cost one dot product each.
#[derive(Debug, Clone, Default)]
pub struct UBasis {
    vectors: Vec<DVector<f64>>,
    gram_vectors: Vec<DVector<f64>>,
}

impl UBasis {
    pub fn new() -> Self {
        Self::default()
    }

    /// Orthonormalizes the columns of `m`, dropping numerically dependent ones.
    pub fn from_columns(space: &DiscreteSpace, m: &DMatrix<f64>, rel_tol: f64) -> Self {
        let mut basis = Self::new();
        for col in m.column_iter() {
            let _ = basis.try_push(space, &col.clone_owned(), rel_tol);
        }
        basis
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    /// Two passes of modified Gram–Schmidt. On success the basis grows by one
    /// and the returned coefficients satisfy `v = Σ c_k b_k`. When the
    /// remainder is below `rel_tol·‖v‖_U` the basis is unchanged and the
    /// remainder ratio is returned as the error.
    pub fn try_push(
        &mut self,
        space: &DiscreteSpace,
        v: &DVector<f64>,
        rel_tol: f64,
    ) -> Result<DVector<f64>, f64> {
        let k = self.len();
        let norm0 = space.norm(v);
        if norm0 == 0.0 {
            return Err(0.0);
        }
        let mut w = v.clone();
        let mut coeffs = DVector::zeros(k + 1);
        for _ in 0..2 {
            for (i, (b, gb)) in self.vectors.iter().zip(&self.gram_vectors).enumerate() {
                let c = w.dot(gb);
                w.axpy(-c, b, 1.0);
                coeffs[i] += c;
            }
        }
        let gw = space.gram_mul(&w);
        let nrm = w.dot(&gw).max(0.0).sqrt();
        if nrm <= rel_tol * norm0 {
            return Err(nrm / norm0);
        }
        coeffs[k] = nrm;
        self.vectors.push(w / nrm);
        self.gram_vectors.push(gw / nrm);
        Ok(coeffs)
    }

    /// Coordinates `⟨v, b_k⟩_U`.
    pub fn coords(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.gram_vectors.iter().map(|gb| gb.dot(v)))
    }

    /// `Σ c_k b_k`.
    pub fn combine(&self, coeffs: &DVector<f64>, dim: usize) -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        for (c, b) in coeffs.iter().zip(&self.vectors) {
            out.axpy(*c, b, 1.0);
        }
        out
    }

    /// Basis vectors as columns.
    pub fn matrix(&self, dim: usize) -> DMatrix<f64> {
        columns_to_matrix(&self.vectors, dim)
    }

    /// `G b_k` as columns.
    pub fn gram_matrix(&self, dim: usize) -> DMatrix<f64> {
        columns_to_matrix(&self.gram_vectors, dim)
    }

    pub fn truncated(&self, n: usize) -> Self {
        Self {
            vectors: self.vectors[..n].to_vec(),
            gram_vectors: self.gram_vectors[..n].to_vec(),
        }
    }
}

pub fn columns_to_matrix(cols: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

/// Singular values in descending order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Spectral norm, zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values_desc(m).first().copied().unwrap_or(0.0)
}
