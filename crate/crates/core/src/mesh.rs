//! Uniform tensor grids on the unit interval / unit square with P1 (1D) or
//! bilinear Q1 (2D) elements, homogeneous Dirichlet boundary.
//!
//! Only interior nodes carry degrees of freedom. Every stiffness-type matrix
//! built on the grid shares one sparsity pattern, so operators are stored as
//! value arrays aligned with that pattern and parameter-dependent operators are
//! assembled by a weighted sum of value arrays.

use std::collections::BTreeSet;

use nalgebra::DVector;
use nalgebra_sparse::pattern::SparsityPattern;
use serde::{Deserialize, Serialize};

use crate::error::{PbdwError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct Element {
    pub centroid: Point,
    pub measure: f64,
    /// Global dof of each local vertex, `None` on the boundary.
    pub dofs: Vec<Option<usize>>,
    /// Lower-left corner and side length.
    pub origin: Point,
    pub size: f64,
}

// Q1 stiffness on a square (independent of the side length), vertices ordered
// (0,0), (1,0), (1,1), (0,1).
const Q1_STIFFNESS: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

#[derive(Debug, Clone)]
pub struct Mesh {
    dx: usize,
    n: usize,
    nodes: Vec<Point>,
    elements: Vec<Element>,
    pattern: SparsityPattern,
    /// Per element: (position in the value array, unit-coefficient local entry).
    scatter: Vec<Vec<(usize, f64)>>,
    /// Per element: (dof, integral of the hat function over the element).
    load_scatter: Vec<Vec<(usize, f64)>>,
}

impl Mesh {
    /// Uniform grid with `n` elements per direction on (0,1)^dx.
    pub fn uniform(dx: usize, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(PbdwError::InvalidConfig(format!(
                "mesh resolution must be at least 2, got {n}"
            )));
        }
        let h = 1.0 / n as f64;
        let (nodes, elements) = match dx {
            1 => {
                let nodes = (1..n).map(|i| Point { x: i as f64 * h, y: 0.0 }).collect();
                let dof = |i: usize| (i > 0 && i < n).then(|| i - 1);
                let elements = (0..n)
                    .map(|k| Element {
                        centroid: Point { x: (k as f64 + 0.5) * h, y: 0.0 },
                        measure: h,
                        dofs: vec![dof(k), dof(k + 1)],
                        origin: Point { x: k as f64 * h, y: 0.0 },
                        size: h,
                    })
                    .collect();
                (nodes, elements)
            }
            2 => {
                let mut nodes = Vec::with_capacity((n - 1) * (n - 1));
                for j in 1..n {
                    for i in 1..n {
                        nodes.push(Point { x: i as f64 * h, y: j as f64 * h });
                    }
                }
                let dof = |i: usize, j: usize| {
                    (i > 0 && i < n && j > 0 && j < n).then(|| (j - 1) * (n - 1) + (i - 1))
                };
                let mut elements = Vec::with_capacity(n * n);
                for j in 0..n {
                    for i in 0..n {
                        elements.push(Element {
                            centroid: Point {
                                x: (i as f64 + 0.5) * h,
                                y: (j as f64 + 0.5) * h,
                            },
                            measure: h * h,
                            dofs: vec![dof(i, j), dof(i + 1, j), dof(i + 1, j + 1), dof(i, j + 1)],
                            origin: Point { x: i as f64 * h, y: j as f64 * h },
                            size: h,
                        });
                    }
                }
                (nodes, elements)
            }
            _ => {
                return Err(PbdwError::InvalidConfig(format!(
                    "spatial dimension must be 1 or 2, got {dx}"
                )))
            }
        };

        let dim = nodes.len();
        let mut columns: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); dim];
        for e in &elements {
            for a in e.dofs.iter().flatten() {
                for b in e.dofs.iter().flatten() {
                    columns[*b].insert(*a);
                }
            }
        }
        let mut offsets = Vec::with_capacity(dim + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for col in &columns {
            indices.extend(col.iter().copied());
            offsets.push(indices.len());
        }
        let pattern = SparsityPattern::try_from_offsets_and_indices(dim, dim, offsets, indices)
            .map_err(|e| PbdwError::Numerical(format!("sparsity pattern: {e}")))?;

        let position = |row: usize, col: usize| -> usize {
            let lane = pattern.lane(col);
            let start = pattern.major_offsets()[col];
            start + lane.binary_search(&row).expect("entry present in pattern")
        };
        let scatter = elements
            .iter()
            .map(|e| {
                let mut entries = Vec::new();
                for (la, a) in e.dofs.iter().enumerate() {
                    for (lb, b) in e.dofs.iter().enumerate() {
                        if let (Some(a), Some(b)) = (a, b) {
                            let k = if dx == 1 {
                                let s = if la == lb { 1.0 } else { -1.0 };
                                s / h
                            } else {
                                Q1_STIFFNESS[la][lb]
                            };
                            entries.push((position(*a, *b), k));
                        }
                    }
                }
                entries
            })
            .collect();
        let hat_integral = if dx == 1 { h / 2.0 } else { h * h / 4.0 };
        let load_scatter = elements
            .iter()
            .map(|e| e.dofs.iter().flatten().map(|&d| (d, hat_integral)).collect())
            .collect();

        Ok(Self {
            dx,
            n,
            nodes,
            elements,
            pattern,
            scatter,
            load_scatter,
        })
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    /// Values of the stiffness matrix for an element-wise constant coefficient.
    pub fn stiffness_values(&self, coefficient: &[f64]) -> Vec<f64> {
        let mut values = vec![0.0; self.pattern.nnz()];
        for (entries, &c) in self.scatter.iter().zip(coefficient) {
            if c == 0.0 {
                continue;
            }
            for &(pos, k) in entries {
                values[pos] += c * k;
            }
        }
        values
    }

    /// Load vector of an element-wise constant source term.
    pub fn load_vector(&self, source: &[f64]) -> DVector<f64> {
        let mut load = DVector::zeros(self.dim());
        for (entries, &f) in self.load_scatter.iter().zip(source) {
            for &(dof, w) in entries {
                load[dof] += f * w;
            }
        }
        load
    }
}

/// `y = A x` for a symmetric matrix stored column-major on `pattern`.
pub fn spmv(pattern: &SparsityPattern, values: &[f64], x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(pattern.minor_dim());
    spmv_into(pattern, values, x.as_slice(), y.as_mut_slice());
    y
}

fn spmv_into(pattern: &SparsityPattern, values: &[f64], x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    let offsets = pattern.major_offsets();
    let rows = pattern.minor_indices();
    for col in 0..pattern.major_dim() {
        let xc = x[col];
        if xc == 0.0 {
            continue;
        }
        for p in offsets[col]..offsets[col + 1] {
            y[rows[p]] += values[p] * xc;
        }
    }
}
