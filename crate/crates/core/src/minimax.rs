//! `min_X max_s ‖d_s - X ĉ_s‖² + ρ_s²` by a log-barrier method on the epigraph
//! form `min T s.t. q_s(X) ≤ T`.
//!
//! Centering uses damped Newton steps that keep every constraint strictly
//! feasible. After each centering the normalized barrier weights form a
//! probability vector `λ`; the weighted least-squares fit `X_λ` minimizes
//! `Σ λ_s q_s` and so `Σ λ_s q_s(X_λ)` is a lower bound for the optimum.
//! The method stops once that bound certifies the requested relative gap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimaxConfig {
    /// Relative gap between the objective and its certified lower bound.
    pub tol_opt: f64,
    pub max_newton: usize,
    /// Growth factor of the barrier parameter.
    pub barrier_growth: f64,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        Self { tol_opt: 1e-6, max_newton: 2000, barrier_growth: 8.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxResult {
    /// `p × k` minimizer.
    pub x: DMatrix<f64>,
    /// `max_s sqrt(q_s(x))`.
    pub objective: f64,
    /// Certified lower bound for the optimal value.
    pub lower_bound: f64,
    pub converged: bool,
    pub newton_steps: usize,
    /// Best objective after each centering; non-increasing.
    pub history: Vec<f64>,
}

struct Problem<'a> {
    d: &'a DMatrix<f64>,
    c: &'a DMatrix<f64>,
    rho2: Vec<f64>,
}

impl Problem<'_> {
    fn s(&self) -> usize {
        self.d.nrows()
    }

    /// Residual rows `d_s - X ĉ_s` as an `S × p` matrix.
    fn residuals(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.d - self.c * x.transpose()
    }

    fn values(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let r = self.residuals(x);
        r.row_iter().zip(&self.rho2).map(|(row, p)| row.norm_squared() + p).collect()
    }

    fn max_value(&self, x: &DMatrix<f64>) -> f64 {
        self.values(x).into_iter().fold(0.0, f64::max)
    }

    /// Minimizer of `Σ λ_s q_s`.
    fn weighted_fit(&self, lambda: &[f64]) -> DMatrix<f64> {
        let k = self.c.ncols();
        let mut cc = DMatrix::zeros(k, k);
        let mut dc = DMatrix::zeros(self.d.ncols(), k);
        for s in 0..self.s() {
            if lambda[s] == 0.0 {
                continue;
            }
            let ci = self.c.row(s);
            cc += ci.transpose() * ci * lambda[s];
            dc += self.d.row(s).transpose() * ci * lambda[s];
        }
        let svd = cc.svd(true, true);
        let tol = 1e-13 * svd.singular_values.max();
        match svd.pseudo_inverse(tol) {
            Ok(pinv) => dc * pinv,
            Err(_) => DMatrix::zeros(self.d.ncols(), k),
        }
    }
}

fn vec_of(x: &DMatrix<f64>) -> DVector<f64> {
    // row-major
    DVector::from_iterator(x.len(), x.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

fn mat_of(v: &[f64], p: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(p, k, v)
}

/// Solves the min-max fit. `d` is `S × p`, `c` is `S × k`, `rho` has `S` entries.
pub fn solve_minimax(d: &DMatrix<f64>, c: &DMatrix<f64>, rho: &[f64], cfg: &MinimaxConfig) -> MinimaxResult {
    let s_count = d.nrows();
    let (p, k) = (d.ncols(), c.ncols());
    let raw = Problem { d, c, rho2: rho.iter().map(|r| r * r).collect() };
    let uniform = vec![1.0 / s_count as f64; s_count];
    let x0 = raw.weighted_fit(&uniform);
    let scale2 = raw.max_value(&x0);
    if scale2 == 0.0 || p == 0 {
        let obj = scale2.sqrt();
        return MinimaxResult {
            x: x0,
            objective: obj,
            lower_bound: obj,
            converged: true,
            newton_steps: 0,
            history: vec![obj],
        };
    }
    let scale = scale2.sqrt();
    let dn = d / scale;
    let prob = Problem { d: &dn, c, rho2: raw.rho2.iter().map(|r| r / scale2).collect() };

    let nx = p * k;
    let mut x = vec_of(&(x0 / scale));
    let mut best_x = mat_of(x.as_slice(), p, k);
    let mut best_ub = prob.max_value(&best_x);
    let mut lower = 0.0f64;
    let mut t_var = best_ub * 1.1 + 1e-12;
    let mut t = s_count as f64 / t_var;
    let mut newton_steps = 0;
    let mut history = vec![best_ub.sqrt() * scale];
    let mut converged = false;
    let abs_floor = 1e-12;

    let barrier = |x: &DVector<f64>, tv: f64, t: f64| -> Option<f64> {
        let q = prob.values(&mat_of(x.as_slice(), p, k));
        let mut val = t * tv;
        for qs in q {
            let slack = tv - qs;
            if slack <= 0.0 {
                return None;
            }
            val -= slack.ln();
        }
        Some(val)
    };

    'outer: loop {
        // centering
        loop {
            if newton_steps >= cfg.max_newton {
                break 'outer;
            }
            let xm = mat_of(x.as_slice(), p, k);
            let r = prob.residuals(&xm);
            let q: Vec<f64> = r.row_iter().zip(&prob.rho2).map(|(row, p2)| row.norm_squared() + p2).collect();
            let w: Vec<f64> = q.iter().map(|qs| 1.0 / (t_var - qs)).collect();
            let mut grad = DVector::zeros(nx + 1);
            let mut jac = DMatrix::zeros(s_count, nx + 1);
            let mut cw = DMatrix::zeros(k, k);
            for s in 0..s_count {
                let cs = c.row(s);
                for i in 0..p {
                    for j in 0..k {
                        let g = -2.0 * r[(s, i)] * cs[j];
                        grad[i * k + j] += w[s] * g;
                        jac[(s, i * k + j)] = w[s] * g;
                    }
                }
                jac[(s, nx)] = -w[s];
                cw += cs.transpose() * cs * (2.0 * w[s]);
            }
            grad[nx] = t - w.iter().sum::<f64>();
            let mut hess = jac.tr_mul(&jac);
            for i in 0..p {
                let off = i * k;
                let mut block = hess.view_mut((off, off), (k, k));
                block += &cw;
            }
            let ridge = 1e-14 * hess.diagonal().amax().max(f64::MIN_POSITIVE);
            for i in 0..=nx {
                hess[(i, i)] += ridge;
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => match hess.svd(true, true).solve(&(-&grad), 1e-14) {
                    Ok(s) => s,
                    Err(_) => break 'outer,
                },
            };
            let decrement = -grad.dot(&step);
            newton_steps += 1;
            if !(decrement > 1e-8) {
                break;
            }
            let f0 = barrier(&x, t_var, t).expect("iterate is strictly feasible");
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-16 {
                let xn = &x + step.rows(0, nx) * alpha;
                let tn = t_var + step[nx] * alpha;
                if let Some(f1) = barrier(&xn, tn, t) {
                    if f1 <= f0 - 0.25 * alpha * decrement {
                        x = xn;
                        t_var = tn;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            // Short steps near the centre only chase rounding in the barrier.
            if !accepted || (alpha < 1e-3 && decrement < 1e-4) {
                break;
            }
        }

        // certificate from the barrier weights
        let xm = mat_of(x.as_slice(), p, k);
        let q = prob.values(&xm);
        let w: Vec<f64> = q.iter().map(|qs| 1.0 / (t_var - qs)).collect();
        let wsum: f64 = w.iter().sum();
        let lambda: Vec<f64> = w.iter().map(|v| v / wsum).collect();
        let mut candidates = vec![xm];
        // Any probability vector gives a bound; dropping the weight that the
        // barrier spreads over inactive constraints usually tightens it.
        let lmax = lambda.iter().copied().fold(0.0, f64::max);
        for cut in [0.0, 1e-8, 1e-6, 1e-4, 1e-3, 1e-2] {
            let mut l: Vec<f64> = lambda.iter().map(|&v| if v >= cut * lmax { v } else { 0.0 }).collect();
            let total: f64 = l.iter().sum();
            l.iter_mut().for_each(|v| *v /= total);
            let x_l = prob.weighted_fit(&l);
            let lb: f64 = prob.values(&x_l).iter().zip(&l).map(|(q, w)| q * w).sum();
            lower = lower.max(lb);
            candidates.push(x_l);
        }
        for candidate in candidates {
            let ub = prob.max_value(&candidate);
            if ub < best_ub {
                best_ub = ub;
                best_x = candidate;
            }
        }
        history.push(best_ub.sqrt() * scale);
        if best_ub.sqrt() - lower.sqrt() <= cfg.tol_opt * best_ub.sqrt() + abs_floor {
            converged = true;
            break;
        }
        t *= cfg.barrier_growth;
    }

    MinimaxResult {
        x: best_x * scale,
        objective: best_ub.sqrt() * scale,
        lower_bound: lower.min(best_ub).sqrt() * scale,
        converged,
        newton_steps,
        history,
    }
}
