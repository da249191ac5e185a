//! Kernel SVMs trained by sequential minimal optimization.
//!
//! Both the soft-margin binary SVM and the ν one-class SVM reduce to the same
//! dual problem
//!
//! ```text
//! min_a  ½ aᵀQa + pᵀa   s.t.  yᵀa = Δ,  0 <= a_i <= C_i
//! ```
//!
//! with `Q_ij = y_i y_j K(x_i, x_j)`. The solver picks the maximal-violating
//! pair with second-order working-set selection and stops once the KKT gap
//! `m(a) - M(a)` falls below the tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KKT_TOLERANCE: f64 = 1e-3;
/// Iteration cap, counted in sweeps of `n` pair updates.
pub const MAX_PASSES: usize = 10_000;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    /// exp(-gamma * |x - y|²)
    Rbf { gamma: f64 },
    /// (gamma * x·y + 1)^degree
    Poly { gamma: f64, degree: u32 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Poly { gamma, degree } => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (gamma * dot + 1.0).powi(degree as i32)
            }
        }
    }

    pub fn gram(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = rows.len();
        let mut k = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = self.eval(&rows[i], &rows[j]);
                k[i][j] = v;
                k[j][i] = v;
            }
        }
        k
    }
}

/// Result of one dual solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Offset such that the decision function is `Σ y_i a_i K(x_i, x) - rho`.
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final KKT gap m(a) - M(a).
    pub kkt_gap: f64,
}

struct Solver<'a> {
    kernel: &'a [Vec<f64>],
    y: &'a [f64],
    upper: &'a [f64],
    alpha: Vec<f64>,
    grad: Vec<f64>,
}

impl Solver<'_> {
    fn q(&self, i: usize, j: usize) -> f64 {
        self.y[i] * self.y[j] * self.kernel[i][j]
    }

    fn at_upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.upper[t]
    }

    fn at_lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    /// Returns the working pair and the current KKT gap, or `None` at optimum.
    fn select(&self, eps: f64) -> (Option<(usize, usize)>, f64) {
        let n = self.alpha.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if self.y[t] > 0.0 {
                if !self.at_upper(t) && -self.grad[t] >= gmax {
                    gmax = -self.grad[t];
                    i_sel = Some(t);
                }
            } else if !self.at_lower(t) && self.grad[t] >= gmax {
                gmax = self.grad[t];
                i_sel = Some(t);
            }
        }

        let mut j_sel = None;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let Some(i) = i_sel else { break };
            let qii = self.kernel[i][i];
            if self.y[t] > 0.0 {
                if !self.at_lower(t) {
                    let diff = gmax + self.grad[t];
                    if diff > 0.0 {
                        let quad = qii + self.kernel[t][t] - 2.0 * self.y[i] * self.q(i, t);
                        let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= best {
                            best = obj;
                            j_sel = Some(t);
                        }
                    }
                }
            } else if !self.at_upper(t) {
                let diff = gmax - self.grad[t];
                if diff > 0.0 {
                    let quad = qii + self.kernel[t][t] + 2.0 * self.y[i] * self.q(i, t);
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }

        let mut m_low = f64::NEG_INFINITY;
        for t in 0..n {
            if self.y[t] > 0.0 {
                if !self.at_lower(t) {
                    m_low = m_low.max(self.grad[t]);
                }
            } else if !self.at_upper(t) {
                m_low = m_low.max(-self.grad[t]);
            }
        }
        let gap = gmax + m_low;
        match (i_sel, j_sel) {
            (Some(i), Some(j)) if gap >= eps => (Some((i, j)), gap),
            _ => (None, gap.max(0.0)),
        }
    }

    fn update(&mut self, i: usize, j: usize) {
        let (ci, cj) = (self.upper[i], self.upper[j]);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let qij = self.q(i, j);
        let (qii, qjj) = (self.kernel[i][i], self.kernel[j][j]);
        let (mut ai, mut aj) = (old_i, old_j);

        if self.y[i] != self.y[j] {
            let quad = qii + qjj + 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let quad = qii + qjj - 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }

        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..self.alpha.len() {
            self.grad[t] += self.q(i, t) * di + self.q(j, t) * dj;
        }
    }

    fn rho(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut sum_free = 0.0;
        let mut n_free = 0usize;
        for t in 0..self.alpha.len() {
            let yg = self.y[t] * self.grad[t];
            if self.at_upper(t) {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.at_lower(t) {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        }
    }
}

/// Solves the dual from a feasible starting point `alpha0`.
pub fn solve_dual(
    kernel: &[Vec<f64>],
    y: &[f64],
    linear: &[f64],
    upper: &[f64],
    alpha0: Vec<f64>,
    eps: f64,
) -> DualSolution {
    let n = y.len();
    let mut grad = linear.to_vec();
    for (j, &a) in alpha0.iter().enumerate() {
        if a != 0.0 {
            for (t, g) in grad.iter_mut().enumerate() {
                *g += y[t] * y[j] * kernel[t][j] * a;
            }
        }
    }
    let mut solver = Solver {
        kernel,
        y,
        upper,
        alpha: alpha0,
        grad,
    };

    let max_iter = MAX_PASSES.saturating_mul(n.max(1));
    let mut iterations = 0;
    let (converged, kkt_gap) = loop {
        let (pair, gap) = solver.select(eps);
        match pair {
            None => break (true, gap),
            Some(_) if iterations >= max_iter => break (false, gap),
            Some((i, j)) => {
                solver.update(i, j);
                iterations += 1;
            }
        }
    };
    let rho = solver.rho();
    DualSolution {
        alpha: solver.alpha,
        rho,
        iterations,
        converged,
        kkt_gap,
    }
}

/// Support vectors with their signed coefficients `y_i a_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportVectors {
    pub kernel: Kernel,
    pub vectors: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_gap: f64,
}

impl SupportVectors {
    fn from_solution(kernel: Kernel, rows: &[Vec<f64>], y: &[f64], sol: DualSolution) -> Self {
        let (vectors, coef) = rows
            .iter()
            .zip(y.iter().zip(&sol.alpha))
            .filter(|(_, (_, a))| **a > 0.0)
            .map(|(x, (y, a))| (x.clone(), y * a))
            .unzip();
        SupportVectors {
            kernel,
            vectors,
            coef,
            rho: sol.rho,
            iterations: sol.iterations,
            converged: sol.converged,
            kkt_gap: sol.kkt_gap,
        }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.vectors
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * self.kernel.eval(sv, x))
            .sum::<f64>()
            - self.rho
    }
}

/// Soft-margin binary SVM; `y` holds +1 (valid) and -1 (imposter).
pub fn fit_svc(
    rows: &[Vec<f64>],
    y: &[f64],
    kernel: Kernel,
    c: f64,
) -> Result<(SupportVectors, DualSolution)> {
    if rows.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let gram = kernel.gram(rows);
    let n = rows.len();
    let sol = solve_dual(
        &gram,
        y,
        &vec![-1.0; n],
        &vec![c; n],
        vec![0.0; n],
        KKT_TOLERANCE,
    );
    Ok((
        SupportVectors::from_solution(kernel, rows, y, sol.clone()),
        sol,
    ))
}

/// ν one-class SVM. Dual scaled so that `0 <= a_i <= 1` and `Σ a_i = ν n`.
pub fn fit_one_class(
    rows: &[Vec<f64>],
    kernel: Kernel,
    nu: f64,
) -> Result<(SupportVectors, DualSolution)> {
    if rows.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let n = rows.len();
    let total = nu * n as f64;
    let full = (total.floor() as usize).min(n);
    let mut alpha0 = vec![0.0; n];
    for a in alpha0.iter_mut().take(full) {
        *a = 1.0;
    }
    if full < n {
        alpha0[full] = total - full as f64;
    }
    let gram = kernel.gram(rows);
    let y = vec![1.0; n];
    let sol = solve_dual(
        &gram,
        &y,
        &vec![0.0; n],
        &vec![1.0; n],
        alpha0,
        KKT_TOLERANCE,
    );
    Ok((
        SupportVectors::from_solution(kernel, rows, &y, sol.clone()),
        sol,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels() {
        let a = [1.0, 2.0];
        let b = [0.0, 1.0];
        assert!((Kernel::Rbf { gamma: 0.5 }.eval(&a, &b) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(
            Kernel::Poly {
                gamma: 1.0,
                degree: 2
            }
            .eval(&a, &b),
            9.0
        );
    }

    #[test]
    fn two_point_svc_is_analytic() {
        // x = ±1 on a line with a linear-degree poly kernel (x·y + 1): the
        // maximum-margin boundary sits at 0.
        let rows = vec![vec![1.0], vec![-1.0]];
        let y = vec![1.0, -1.0];
        let (sv, sol) = fit_svc(
            &rows,
            &y,
            Kernel::Poly {
                gamma: 1.0,
                degree: 1,
            },
            10.0,
        )
        .unwrap();
        assert!(sol.converged);
        assert!(sv.decision(&[0.0]).abs() < 1e-9);
        assert!((sv.decision(&[1.0]) - 1.0).abs() < 1e-9);
        assert!((sol.alpha[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn one_class_alpha_sum() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let (_, sol) = fit_one_class(&rows, Kernel::Rbf { gamma: 0.5 }, 0.3).unwrap();
        let s: f64 = sol.alpha.iter().sum();
        assert!((s - 6.0).abs() < 1e-9);
        assert!(sol.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}
