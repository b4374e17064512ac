//! Log-empirical-likelihood evaluation through the Lagrange dual.
//!
//! `log L(v)` is minus the supremum of `sum_i log(1 + beta.(w_i - 1) +
//! tau.(w_i r_i - v))` over dual points that keep the affine form
//! non-negative at every support vertex. All values drop the shared
//! immaterial constant, so only differences of `LogLik`s are meaningful.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::data::LoggedDataset;
use crate::solver::{self, ConcaveObjective, LinearConstraint, SolveOutcome, SolverOptions};

#[derive(Debug, Error)]
pub enum ElError {
    #[error("dual solver hit the iteration cap (best log-EL {best})")]
    MaxIterationsExceeded { best: f64 },
    #[error("log argument non-positive at sample {sample}")]
    NonPositiveLogArgument { sample: usize },
    #[error("difference likelihood needs exactly 2 policies, got {0}")]
    WrongPolicyCount(usize),
    #[error("boundary mass allocation inconsistent (residual {residual:.3e})")]
    InconsistentBoundaryAllocation { residual: f64 },
    #[error("solver failure: {0}")]
    SolverFailure(String),
}

/// A log-empirical-likelihood value up to a shared additive constant, with
/// negative infinity standing for an infeasible parameter value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLik(f64);

impl LogLik {
    pub const NEG_INFINITY: LogLik = LogLik(f64::NEG_INFINITY);

    pub fn finite(value: f64) -> Self {
        debug_assert!(value.is_finite());
        LogLik(value)
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn is_infeasible(&self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

/// Dual variables of the joint problem; in difference mode `tau` holds the
/// single multiplier for the difference constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Exact value, gradient, and Hessian of the dual objective
/// `sum_i log(1 + beta.(w_i - 1) + tau.(w_i r_i - v))` in `(beta, tau)`.
pub fn dual_objective(
    ds: &LoggedDataset,
    v: &[f64],
    p: &DualPoint,
) -> Result<(f64, DVector<f64>, DMatrix<f64>), ElError> {
    let l = ds.policy_count();
    assert_eq!(v.len(), l);
    assert_eq!(p.beta.len(), l);
    assert_eq!(p.tau.len(), l);
    let m = 2 * l;
    let mut value = 0.0;
    let mut grad = DVector::zeros(m);
    let mut hess = DMatrix::zeros(m, m);
    let mut x = DVector::zeros(m);
    for (i, s) in ds.samples().iter().enumerate() {
        for j in 0..l {
            x[j] = s.weights[j] - 1.0;
            x[l + j] = s.weights[j] * s.reward - v[j];
        }
        let mut g = 1.0;
        for j in 0..l {
            g += p.beta[j] * x[j] + p.tau[j] * x[l + j];
        }
        if g <= 0.0 {
            return Err(ElError::NonPositiveLogArgument { sample: i });
        }
        value += g.ln();
        grad.axpy(1.0 / g, &x, 1.0);
        hess.syger(-1.0 / (g * g), &x, &x, 1.0);
    }
    // syger fills the lower triangle; mirror it.
    for i in 0..m {
        for j in (i + 1)..m {
            hess[(i, j)] = hess[(j, i)];
        }
    }
    Ok((value, grad, hess))
}

/// Sum-of-logs dual objective over precomputed per-sample coefficient rows:
/// `f(theta) = sum_i log(1 + x_i . theta)`.
pub(crate) struct SumLogDual {
    pub xs: Vec<Vec<f64>>,
    pub dim: usize,
}

impl SumLogDual {
    fn log_args(&self, theta: &DVector<f64>) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.xs.len());
        for x in &self.xs {
            let mut g = 1.0;
            for (xj, tj) in x.iter().zip(theta.iter()) {
                g += xj * tj;
            }
            if g <= 0.0 {
                return None;
            }
            out.push(g);
        }
        Some(out)
    }
}

impl ConcaveObjective for SumLogDual {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: &DVector<f64>) -> Option<f64> {
        let mut value = 0.0;
        for x in &self.xs {
            let mut g = 1.0;
            for (xj, tj) in x.iter().zip(theta.iter()) {
                g += xj * tj;
            }
            if g <= 0.0 {
                return None;
            }
            value += g.ln();
        }
        Some(value)
    }

    fn value_grad_hess(&self, theta: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let gs = self.log_args(theta)?;
        let m = self.dim;
        let mut value = 0.0;
        let mut grad = DVector::zeros(m);
        let mut hess = DMatrix::zeros(m, m);
        for (x, &g) in self.xs.iter().zip(&gs) {
            value += g.ln();
            let inv = 1.0 / g;
            let inv2 = inv * inv;
            for a in 0..m {
                grad[a] += x[a] * inv;
                for b in 0..=a {
                    hess[(a, b)] -= x[a] * x[b] * inv2;
                }
            }
        }
        for a in 0..m {
            for b in (a + 1)..m {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        Some((value, grad, hess))
    }
}

/// Outcome of one dual solve, before conversion to a `LogLik`.
pub(crate) enum DualSolve {
    Finite { sup: f64, theta: DVector<f64> },
    Diverged,
}

pub(crate) fn solve_sum_log_dual(
    obj: &SumLogDual,
    constraints: &[LinearConstraint],
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<DualSolve, ElError> {
    let start = warm
        .cloned()
        .unwrap_or_else(|| DVector::zeros(obj.dim));
    match solver::maximize(obj, constraints, start, opts) {
        SolveOutcome::Converged(sol) => Ok(DualSolve::Finite {
            sup: sol.value,
            theta: sol.theta,
        }),
        SolveOutcome::Unbounded => Ok(DualSolve::Diverged),
        SolveOutcome::MaxIter(sol) => Err(ElError::MaxIterationsExceeded { best: -sol.value }),
    }
}

/// Indices of the free dual coordinates for the value dual: degenerate box
/// axes pin the matching beta component to zero.
fn value_free_indices(ds: &LoggedDataset) -> Vec<usize> {
    let l = ds.policy_count();
    let degenerate = ds.support().degenerate_axes();
    let mut free = Vec::with_capacity(2 * l);
    for j in 0..l {
        if !degenerate[j] {
            free.push(j);
        }
    }
    for j in 0..l {
        free.push(l + j);
    }
    free
}

pub(crate) fn value_dual_problem(
    ds: &LoggedDataset,
    v: &[f64],
) -> (SumLogDual, Vec<LinearConstraint>) {
    let l = ds.policy_count();
    let free = value_free_indices(ds);
    let dim = free.len();
    let full_row = |w: &[f64], r: f64| -> Vec<f64> {
        let mut x = vec![0.0; 2 * l];
        for j in 0..l {
            x[j] = w[j] - 1.0;
            x[l + j] = w[j] * r - v[j];
        }
        x
    };
    let xs = ds
        .samples()
        .iter()
        .map(|s| {
            let x = full_row(&s.weights, s.reward);
            free.iter().map(|&k| x[k]).collect()
        })
        .collect();
    let constraints = ds
        .support()
        .vertices()
        .into_iter()
        .map(|(w, r)| {
            let x = full_row(&w, r);
            LinearConstraint {
                coeffs: DVector::from_iterator(dim, free.iter().map(|&k| x[k])),
                offset: 1.0,
            }
        })
        .collect();
    (SumLogDual { xs, dim }, constraints)
}

pub(crate) fn diff_dual_problem(
    ds: &LoggedDataset,
    d: f64,
) -> (SumLogDual, Vec<LinearConstraint>) {
    let degenerate = ds.support().degenerate_axes();
    let free_beta: Vec<usize> = (0..2).filter(|&j| !degenerate[j]).collect();
    let dim = free_beta.len() + 1;
    let row = |w: &[f64], r: f64| -> Vec<f64> {
        let mut x: Vec<f64> = free_beta.iter().map(|&j| w[j] - 1.0).collect();
        x.push((w[1] - w[0]) * r - d);
        x
    };
    let xs = ds
        .samples()
        .iter()
        .map(|s| row(&s.weights, s.reward))
        .collect();
    let constraints = ds
        .support()
        .vertices()
        .into_iter()
        .map(|(w, r)| LinearConstraint {
            coeffs: DVector::from_vec(row(&w, r)),
            offset: 1.0,
        })
        .collect();
    (SumLogDual { xs, dim }, constraints)
}

/// Joint log-empirical likelihood of the policy value vector `v`.
pub fn log_el_value(ds: &LoggedDataset, v: &[f64]) -> Result<LogLik, ElError> {
    log_el_value_warm(ds, v, &mut None)
}

/// As `log_el_value`, with a reusable warm-start slot for grid sweeps. On
/// success the slot holds the dual optimum of this solve.
pub fn log_el_value_warm(
    ds: &LoggedDataset,
    v: &[f64],
    warm: &mut Option<DVector<f64>>,
) -> Result<LogLik, ElError> {
    assert_eq!(v.len(), ds.policy_count());
    assert!(v.iter().all(|x| x.is_finite()));
    let (obj, constraints) = value_dual_problem(ds, v);
    let opts = SolverOptions::default();
    match solve_sum_log_dual(&obj, &constraints, warm.as_ref(), &opts)? {
        DualSolve::Finite { sup, theta } => {
            *warm = Some(theta);
            Ok(LogLik::finite(-sup))
        }
        DualSolve::Diverged => {
            *warm = None;
            Ok(LogLik::NEG_INFINITY)
        }
    }
}

/// Log-empirical likelihood of the policy value difference `d = v_2 - v_1`
/// for a two-policy dataset.
pub fn log_el_diff(ds: &LoggedDataset, d: f64) -> Result<LogLik, ElError> {
    log_el_diff_warm(ds, d, &mut None)
}

pub fn log_el_diff_warm(
    ds: &LoggedDataset,
    d: f64,
    warm: &mut Option<DVector<f64>>,
) -> Result<LogLik, ElError> {
    if ds.policy_count() != 2 {
        return Err(ElError::WrongPolicyCount(ds.policy_count()));
    }
    assert!((-1.0..=1.0).contains(&d));
    let (obj, constraints) = diff_dual_problem(ds, d);
    let opts = SolverOptions::default();
    match solve_sum_log_dual(&obj, &constraints, warm.as_ref(), &opts)? {
        DualSolve::Finite { sup, theta } => {
            *warm = Some(theta);
            Ok(LogLik::finite(-sup))
        }
        DualSolve::Diverged => {
            *warm = None;
            Ok(LogLik::NEG_INFINITY)
        }
    }
}
