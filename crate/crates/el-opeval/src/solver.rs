//! Damped-Newton maximization of smooth concave objectives over a polyhedron.
//!
//! Every dual problem in this crate has the same shape: a concave objective
//! that is finite on an open set, plus linear inequality constraints coming
//! from the support vertices. Dimension is tiny (<= 4), so a dense Newton
//! step with a log-barrier continuation on the vertex constraints is both
//! simple and fast. The barrier keeps every iterate strictly interior, which
//! is exactly what the log arguments require; the final barrier weight is
//! small enough that the residual gap (num_constraints * mu) is far below
//! every tolerance used by callers.

use nalgebra::{DMatrix, DVector};

/// Linear inequality `coeffs . theta + offset >= 0`.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub coeffs: DVector<f64>,
    pub offset: f64,
}

impl LinearConstraint {
    pub fn slack(&self, theta: &DVector<f64>) -> f64 {
        self.coeffs.dot(theta) + self.offset
    }
}

/// Smooth concave objective. Evaluation returns None outside the open domain.
pub trait ConcaveObjective {
    fn dim(&self) -> usize;
    fn value(&self, theta: &DVector<f64>) -> Option<f64>;
    fn value_grad_hess(&self, theta: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)>;
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub mu_ladder: Vec<f64>,
    pub max_iter_per_stage: usize,
    /// Newton-decrement threshold for the final stage.
    pub tol_decrement: f64,
    /// Relative objective-change stop, for boundary-limited solves.
    pub tol_rel_change: f64,
    pub divergence_value: f64,
    pub divergence_norm: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mu_ladder: vec![1e-3, 1e-6, 1e-10, 1e-13],
            max_iter_per_stage: 300,
            tol_decrement: 1e-11,
            tol_rel_change: 1e-13,
            divergence_value: 1e12,
            divergence_norm: 1e10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub theta: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub enum SolveOutcome {
    Converged(Solution),
    /// Objective unbounded above on the feasible set.
    Unbounded,
    /// Iteration cap hit; carries the best feasible point found.
    MaxIter(Solution),
}

fn barrier_eval(
    obj: &dyn ConcaveObjective,
    constraints: &[LinearConstraint],
    mu: f64,
    theta: &DVector<f64>,
) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
    let (mut f, mut g, mut h) = obj.value_grad_hess(theta)?;
    for c in constraints {
        let s = c.slack(theta);
        if s <= 0.0 {
            return None;
        }
        f += mu * s.ln();
        g.axpy(mu / s, &c.coeffs, 1.0);
        h.syger(-mu / (s * s), &c.coeffs, &c.coeffs, 1.0);
    }
    Some((f, g, h))
}

fn barrier_value(
    obj: &dyn ConcaveObjective,
    constraints: &[LinearConstraint],
    mu: f64,
    theta: &DVector<f64>,
) -> Option<f64> {
    let mut f = obj.value(theta)?;
    for c in constraints {
        let s = c.slack(theta);
        if s <= 0.0 {
            return None;
        }
        f += mu * s.ln();
    }
    Some(f)
}

/// Newton step for a maximum: solve (-H) d = g, with a small ridge if the
/// negated Hessian is not positive definite. Returns None when the Hessian
/// carries no usable curvature.
fn newton_step(g: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
    let dim = g.len();
    let neg_h = -h;
    let scale = neg_h.diagonal().amax().max(1e-300);
    for ridge_factor in [0.0, 1e-12, 1e-9, 1e-6] {
        let mut m = neg_h.clone();
        if ridge_factor > 0.0 {
            for i in 0..dim {
                m[(i, i)] += ridge_factor * scale;
            }
        }
        if let Some(chol) = m.cholesky() {
            let d = chol.solve(g);
            if d.iter().all(|x| x.is_finite()) {
                return Some(d);
            }
        }
    }
    None
}

/// Maximizes `obj` over `{theta : constraints hold}` starting from a strictly
/// feasible `theta0` (infeasible warm starts are pulled back toward the origin).
pub fn maximize(
    obj: &dyn ConcaveObjective,
    constraints: &[LinearConstraint],
    theta0: DVector<f64>,
    opts: &SolverOptions,
) -> SolveOutcome {
    let dim = obj.dim();
    debug_assert_eq!(theta0.len(), dim);
    let mut theta = theta0;
    if barrier_value(obj, constraints, 0.0, &theta).is_none() {
        let mut t = 1.0;
        let mut ok = false;
        for _ in 0..60 {
            t *= 0.5;
            let cand = &theta * t;
            if barrier_value(obj, constraints, 0.0, &cand).is_some() {
                theta = cand;
                ok = true;
                break;
            }
        }
        if !ok {
            theta = DVector::zeros(dim);
        }
    }
    let mut total_iters = 0usize;
    let mut exhausted = false;

    let stages = opts.mu_ladder.len();
    for (stage, &mu) in opts.mu_ladder.iter().enumerate() {
        let tol = if stage + 1 == stages {
            opts.tol_decrement
        } else {
            opts.tol_decrement.max(1e-9)
        };
        let mut converged = false;
        for _ in 0..opts.max_iter_per_stage {
            total_iters += 1;
            let (f, g, h) = match barrier_eval(obj, constraints, mu, &theta) {
                Some(v) => v,
                None => break,
            };
            if f > opts.divergence_value || theta.norm() > opts.divergence_norm {
                return SolveOutcome::Unbounded;
            }

            let (d, decrement, expandable) = match newton_step(&g, &h) {
                Some(d) => {
                    let dec = g.dot(&d);
                    (d, dec, false)
                }
                // Curvature-free direction: plain gradient ascent with an
                // expanding search, which races along recession rays.
                None => {
                    let dec = g.norm_squared();
                    (g.clone(), dec, true)
                }
            };
            if decrement.abs() <= tol {
                converged = true;
                break;
            }

            // Largest step keeping the linear constraints strictly feasible.
            let mut t_max = f64::INFINITY;
            for c in constraints {
                let along = c.coeffs.dot(&d);
                if along < 0.0 {
                    t_max = t_max.min(-c.slack(&theta) / along);
                }
            }
            let t_start = if t_max.is_finite() {
                (0.995 * t_max).min(1.0)
            } else {
                1.0
            };

            let mut accepted = None;
            if expandable && !t_max.is_finite() {
                // Double the step while the objective keeps improving.
                let mut t = t_start;
                let mut best: Option<(f64, f64)> = None;
                for _ in 0..80 {
                    match barrier_value(obj, constraints, mu, &(&theta + &d * t)) {
                        Some(fc) if fc > best.map_or(f, |(bf, _)| bf) => {
                            best = Some((fc, t));
                            t *= 2.0;
                        }
                        _ => break,
                    }
                }
                if let Some((_, t)) = best {
                    accepted = Some(t);
                }
            }
            if accepted.is_none() {
                let mut t = t_start;
                for _ in 0..60 {
                    if let Some(fc) = barrier_value(obj, constraints, mu, &(&theta + &d * t)) {
                        if fc >= f + 1e-4 * t * decrement {
                            accepted = Some(t);
                            break;
                        }
                    }
                    t *= 0.5;
                    if t < 1e-16 {
                        break;
                    }
                }
            }

            match accepted {
                Some(t) => {
                    let cand = &theta + &d * t;
                    let fnew = barrier_value(obj, constraints, mu, &cand).unwrap_or(f);
                    theta = cand;
                    if (fnew - f).abs() < opts.tol_rel_change * (1.0 + fnew.abs()) {
                        converged = true;
                        break;
                    }
                }
                // Line search failed outright; the iterate is as good as the
                // barrier subproblem allows.
                None => {
                    converged = true;
                    break;
                }
            }
        }
        if !converged && stage + 1 == stages {
            exhausted = true;
        }
    }

    let value = match obj.value(&theta) {
        Some(v) => v,
        None => return SolveOutcome::Unbounded,
    };
    if value > opts.divergence_value || theta.norm() > opts.divergence_norm {
        return SolveOutcome::Unbounded;
    }
    let sol = Solution {
        theta,
        value,
        iterations: total_iters,
    };
    if exhausted {
        SolveOutcome::MaxIter(sol)
    } else {
        SolveOutcome::Converged(sol)
    }
}
