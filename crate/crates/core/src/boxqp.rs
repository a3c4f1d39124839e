//! Box-constrained linear least squares `min ½‖b + M y‖²` over `lo ≤ y ≤ hi`
//! by projected Newton steps on an ε-active set with an Armijo search along
//! the projection arc.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxLsqConfig {
    /// Bound on `‖y - P(y - ∇f)‖_∞`.
    pub kkt_tol: f64,
    pub max_iter: usize,
}

impl Default for BoxLsqConfig {
    fn default() -> Self {
        Self { kkt_tol: 1e-8, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxLsqResult {
    pub y: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective_history: Vec<f64>,
    /// -1 at the lower bound, +1 at the upper bound, 0 in the interior.
    pub active: Vec<i8>,
}

fn project(y: &mut DVector<f64>, lo: &[f64], hi: &[f64]) {
    for (i, v) in y.iter_mut().enumerate() {
        *v = v.clamp(lo[i], hi[i]);
    }
}

fn objective(b: &DVector<f64>, m: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    0.5 * (b + m * y).norm_squared()
}

fn kkt_residual(y: &DVector<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    y.iter()
        .zip(g.iter())
        .enumerate()
        .map(|(i, (&yi, &gi))| (yi - (yi - gi).clamp(lo[i], hi[i])).abs())
        .fold(0.0, f64::max)
}

pub fn solve_box_lsq(
    b: &DVector<f64>,
    m: &DMatrix<f64>,
    lo: &[f64],
    hi: &[f64],
    cfg: &BoxLsqConfig,
) -> BoxLsqResult {
    let d = m.ncols();
    let mut y = DVector::from_fn(d, |i, _| 0.0f64.clamp(lo[i], hi[i]));
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let sigma = 1e-4;
    let lipschitz = m.norm_squared().max(f64::MIN_POSITIVE);

    for it in 0..cfg.max_iter {
        iterations = it;
        let r = b + m * &y;
        let f = 0.5 * r.norm_squared();
        history.push(f);
        let g = m.tr_mul(&r);
        let kkt = kkt_residual(&y, &g, lo, hi);
        if kkt <= cfg.kkt_tol {
            converged = true;
            break;
        }
        let delta = kkt.min(1e-3);
        let free: Vec<usize> = (0..d)
            .filter(|&i| !((y[i] <= lo[i] + delta && g[i] > 0.0) || (y[i] >= hi[i] - delta && g[i] < 0.0)))
            .collect();

        let mut dir = DVector::zeros(d);
        if !free.is_empty() {
            let mf = m.select_columns(&free);
            let svd = mf.svd(true, true);
            let tol = 1e-13 * svd.singular_values.max();
            if let Ok(step) = svd.solve(&(-&r), tol) {
                for (k, &i) in free.iter().enumerate() {
                    dir[i] = step[k];
                }
            }
        }

        let arc_search = |dir: &DVector<f64>, y: &DVector<f64>| -> Option<DVector<f64>> {
            let mut alpha = 1.0;
            while alpha > 1e-20 {
                let mut trial = y + dir * alpha;
                project(&mut trial, lo, hi);
                let decrease = g.dot(&(y - &trial));
                if decrease > 0.0 && objective(b, m, &trial) <= f - sigma * decrease {
                    return Some(trial);
                }
                alpha *= 0.5;
            }
            None
        };

        let next = arc_search(&dir, &y).or_else(|| arc_search(&(-&g / lipschitz), &y));
        match next {
            Some(trial) => {
                if (&trial - &y).amax() == 0.0 {
                    break;
                }
                y = trial;
            }
            None => break,
        }
        iterations = it + 1;
    }

    let r = b + m * &y;
    let g = m.tr_mul(&r);
    let kkt = kkt_residual(&y, &g, lo, hi);
    converged |= kkt <= cfg.kkt_tol;
    let active = (0..d)
        .map(|i| {
            if y[i] <= lo[i] {
                -1
            } else if y[i] >= hi[i] {
                1
            } else {
                0
            }
        })
        .collect();
    BoxLsqResult {
        y: y.iter().copied().collect(),
        objective: 0.5 * r.norm_squared(),
        kkt_residual: kkt,
        converged,
        iterations,
        objective_history: history,
        active,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_minimizer_is_the_least_squares_solution() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        let target = DVector::from_vec(vec![0.3, -0.2]);
        let b = -(&m * &target);
        let res = solve_box_lsq(&b, &m, &[-1.0, -1.0], &[1.0, 1.0], &BoxLsqConfig::default());
        assert!(res.converged);
        assert!((res.y[0] - 0.3).abs() < 1e-12 && (res.y[1] + 0.2).abs() < 1e-12);
        assert_eq!(res.active, vec![0, 0]);
    }

    #[test]
    fn exterior_minimizer_activates_bounds_with_correct_signs() {
        let m = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![-3.0, 0.5]);
        let res = solve_box_lsq(&b, &m, &[-1.0, -1.0], &[1.0, 1.0], &BoxLsqConfig::default());
        assert_eq!(res.y, vec![1.0, -0.5]);
        assert_eq!(res.active, vec![1, 0]);
    }

    #[test]
    fn singular_problems_return_a_kkt_point() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![-0.5, -0.5]);
        let res = solve_box_lsq(&b, &m, &[-1.0, -1.0], &[1.0, 1.0], &BoxLsqConfig::default());
        assert!(res.converged);
        assert!(res.objective < 1e-20);
    }
}
