//! Adaptive sub-support: the smallest hyperrectangle containing the region
//! where the empirical likelihood stays within a factor 1/c of its maximum.
//!
//! Each endpoint solves a small concave dual over (gamma, beta) in which the
//! likelihood-threshold multiplier has been eliminated analytically; the
//! geometric-mean coefficient is evaluated in log space and folded with the
//! attained weight-dual value so no immaterial constant ever appears.

use nalgebra::{DMatrix, DVector};

use crate::data::LoggedDataset;
use crate::intervals::{chi2_quantile, IntervalError};
use crate::loglik::{ElError, LogLik};
use crate::mele::mele;
use crate::solver::{self, ConcaveObjective, LinearConstraint, SolveOutcome, SolverOptions};

/// Which likelihood the sub-support is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Joint likelihood of the value vector; one interval per policy.
    Value,
    /// Likelihood of the value difference d = v_2 - v_1; a single interval
    /// within [-1, 1].
    Diff,
}

#[derive(Debug, Clone)]
pub struct SubSupport {
    /// Per-dimension closed intervals.
    pub intervals: Vec<(f64, f64)>,
    pub threshold_log_c: f64,
    /// Log-likelihood threshold: max_loglik - log_c.
    pub phi: f64,
    pub max_loglik: LogLik,
}

/// The reduced dual objective for one endpoint:
/// `-gamma - sum(beta) + coef * exp(mean_i log s_i)` with
/// `s_i = gamma + beta . w_i + direction_j * w_ij * r_i`.
struct EndpointDual {
    /// Rows (1, w_i[free]) so theta = (gamma, beta_free).
    xs: Vec<Vec<f64>>,
    /// Constant per-sample shift from the objective direction.
    shifts: Vec<f64>,
    coef: f64,
    dim: usize,
}

impl EndpointDual {
    fn args(&self, theta: &DVector<f64>) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.xs.len());
        for (x, &c) in self.xs.iter().zip(&self.shifts) {
            let mut s = c;
            for (xj, tj) in x.iter().zip(theta.iter()) {
                s += xj * tj;
            }
            if s <= 0.0 {
                return None;
            }
            out.push(s);
        }
        Some(out)
    }

    fn linear_part(&self, theta: &DVector<f64>) -> f64 {
        -theta.iter().sum::<f64>()
    }
}

impl ConcaveObjective for EndpointDual {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: &DVector<f64>) -> Option<f64> {
        let args = self.args(theta)?;
        let n = args.len() as f64;
        let mean_log: f64 = args.iter().map(|s| s.ln()).sum::<f64>() / n;
        Some(self.linear_part(theta) + self.coef * mean_log.exp())
    }

    fn value_grad_hess(&self, theta: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let args = self.args(theta)?;
        let n = args.len() as f64;
        let m = self.dim;
        let mean_log: f64 = args.iter().map(|s| s.ln()).sum::<f64>() / n;
        let p = self.coef * mean_log.exp();
        // u = mean_i x_i / s_i ; big_m = mean_i x_i x_i^T / s_i^2
        let mut u = DVector::zeros(m);
        let mut big_m = DMatrix::zeros(m, m);
        for (x, &s) in self.xs.iter().zip(&args) {
            let inv = 1.0 / s;
            for a in 0..m {
                u[a] += x[a] * inv;
                for b in 0..=a {
                    big_m[(a, b)] += x[a] * x[b] * inv * inv;
                }
            }
        }
        u /= n;
        big_m /= n;
        let mut grad = DVector::from_element(m, -1.0);
        grad.axpy(p, &u, 1.0);
        let mut hess = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..=a {
                let h = p * (u[a] * u[b] - big_m[(a, b)]);
                hess[(a, b)] = h;
                hess[(b, a)] = h;
            }
        }
        Some((self.linear_part(theta) + p, grad, hess))
    }
}

/// Per-sample objective direction: sign * (contribution of the target
/// coordinate to w r). Value mode targets w_j r, diff mode (w_2 - w_1) r.
fn direction_term(mode: Mode, dim_j: usize, w: &[f64], r: f64, sign: f64) -> f64 {
    match mode {
        Mode::Value => sign * w[dim_j] * r,
        Mode::Diff => sign * (w[1] - w[0]) * r,
    }
}

fn endpoint(
    ds: &LoggedDataset,
    mode: Mode,
    dim_j: usize,
    sign: f64,
    coef: f64,
) -> Result<f64, ElError> {
    let l = ds.policy_count();
    let degenerate = ds.support().degenerate_axes();
    let free: Vec<usize> = (0..l).filter(|&j| !degenerate[j]).collect();
    let dim = 1 + free.len();

    let xs: Vec<Vec<f64>> = ds
        .samples()
        .iter()
        .map(|s| {
            let mut x = Vec::with_capacity(dim);
            x.push(1.0);
            x.extend(free.iter().map(|&j| s.weights[j]));
            x
        })
        .collect();
    let shifts: Vec<f64> = ds
        .samples()
        .iter()
        .map(|s| direction_term(mode, dim_j, &s.weights, s.reward, sign))
        .collect();

    // Feasibility must hold over the whole support; the reward-dependent
    // term is linear in r, so r in {0, 1} at the weight vertices suffices.
    let constraints: Vec<LinearConstraint> = ds
        .support()
        .weight_vertices()
        .iter()
        .map(|w| {
            let worst = direction_term(mode, dim_j, w, 1.0, sign).min(0.0);
            let mut coeffs = Vec::with_capacity(dim);
            coeffs.push(1.0);
            coeffs.extend(free.iter().map(|&j| w[j]));
            LinearConstraint {
                coeffs: DVector::from_vec(coeffs),
                offset: worst,
            }
        })
        .collect();

    let obj = EndpointDual { xs, shifts, coef, dim };
    // Strictly feasible start: gamma large enough to dominate every shift,
    // beta = 0.
    let gamma0 = 1.0 + ds
        .support()
        .bounds()
        .iter()
        .map(|&(_, hi)| hi)
        .sum::<f64>();
    let mut theta0 = DVector::zeros(dim);
    theta0[0] = gamma0;

    let opts = SolverOptions::default();
    match solver::maximize(&obj, &constraints, theta0, &opts) {
        SolveOutcome::Converged(sol) => Ok(sol.value),
        SolveOutcome::Unbounded => Err(ElError::SolverFailure(
            "sub-support endpoint dual diverged".into(),
        )),
        SolveOutcome::MaxIter(sol) => Err(ElError::MaxIterationsExceeded { best: sol.value }),
    }
}

/// Infimum and supremum of dimension `dim_j` over the region where the log-EL
/// ratio stays above `-log_c`. Result clipped to the natural parameter range.
pub fn sub_support_dual(
    ds: &LoggedDataset,
    dim_j: usize,
    log_c: f64,
) -> Result<(f64, f64), ElError> {
    sub_support_dual_mode(ds, Mode::Value, dim_j, log_c)
}

pub fn sub_support_dual_mode(
    ds: &LoggedDataset,
    mode: Mode,
    dim_j: usize,
    log_c: f64,
) -> Result<(f64, f64), ElError> {
    assert!(log_c >= 0.0);
    // At log_c = 0 the dual optimum is only attained in the limit (the
    // threshold constraint loses its interior); a tiny floor keeps the solve
    // well-posed and moves the endpoints by far less than working accuracy.
    let log_c = log_c.max(1e-7);
    let n = ds.len() as f64;
    let m = mele(ds)?;
    let d_mele = -m.max_loglik.value();
    let coef = (-(d_mele + log_c) / n).exp();

    let lo = endpoint(ds, mode, dim_j, 1.0, coef)?;
    let hi = -endpoint(ds, mode, dim_j, -1.0, coef)?;
    let (min_nat, max_nat) = match mode {
        Mode::Value => (0.0, 1.0),
        Mode::Diff => (-1.0, 1.0),
    };
    let lo = lo.clamp(min_nat, max_nat);
    let hi = hi.clamp(lo, max_nat);
    Ok((lo, hi))
}

/// Full adaptive sub-support at the given tail quantile (default 0.9999).
pub fn sub_support(
    ds: &LoggedDataset,
    mode: Mode,
    quantile: f64,
) -> Result<SubSupport, IntervalError> {
    assert!(quantile > 0.0 && quantile < 1.0);
    let l = ds.policy_count();
    let k = match mode {
        Mode::Value => {
            assert!(l <= 2, "joint sub-support supports at most 2 policies");
            l
        }
        Mode::Diff => {
            assert_eq!(l, 2, "difference sub-support needs 2 policies");
            1
        }
    };
    let log_c = 0.5 * chi2_quantile(k, quantile)?;
    let m = mele(ds)?;
    let dims = match mode {
        Mode::Value => l,
        Mode::Diff => 1,
    };
    let mut intervals = Vec::with_capacity(dims);
    for j in 0..dims {
        intervals.push(sub_support_dual_mode(ds, mode, j, log_c)?);
    }
    Ok(SubSupport {
        intervals,
        threshold_log_c: log_c,
        phi: m.max_loglik.value() - log_c,
        max_loglik: m.max_loglik,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, BoxSupport};
    use crate::loglik::log_el_value;

    fn bernoulli_unit_weights(n: usize, ones: usize) -> LoggedDataset {
        let rows = vec![vec![1.0]; n];
        let rewards: Vec<f64> = (0..n).map(|i| if i < ones { 1.0 } else { 0.0 }).collect();
        build_dataset(&rows, &rewards, BoxSupport::new(vec![(1.0, 1.0)]).unwrap()).unwrap()
    }

    #[test]
    fn log_c_zero_collapses_to_value_box() {
        let ds = build_dataset(
            &[vec![0.5], vec![1.5]],
            &[1.0, 0.0],
            BoxSupport::new(vec![(0.0, 2.0)]).unwrap(),
        )
        .unwrap();
        let (lo, hi) = sub_support_dual(&ds, 0, 0.0).unwrap();
        let m = mele(&ds).unwrap();
        assert!((lo - m.value_box[0].0).abs() < 1e-4, "lo {lo}");
        assert!((hi - m.value_box[0].1).abs() < 1e-4, "hi {hi}");
    }

    #[test]
    fn matches_bisection_on_unit_weight_bernoulli() {
        // With unit weights the log-EL curve is 1-D and concave; find the
        // threshold crossings by bisection as an independent route.
        let ds = bernoulli_unit_weights(50, 20);
        let log_c = 3.0;
        let (lo, hi) = sub_support_dual(&ds, 0, log_c).unwrap();
        let max_ll = mele(&ds).unwrap().max_loglik.value();
        let ratio = |v: f64| -> f64 {
            let ll = log_el_value(&ds, &[v]).unwrap();
            if ll.is_infeasible() {
                f64::NEG_INFINITY
            } else {
                ll.value() - max_ll
            }
        };
        let bisect = |mut inside: f64, mut outside: f64| -> f64 {
            for _ in 0..60 {
                let mid = 0.5 * (inside + outside);
                if ratio(mid) >= -log_c {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            inside
        };
        let lo_oracle = bisect(0.4, 0.0);
        let hi_oracle = bisect(0.4, 1.0);
        assert!((lo - lo_oracle).abs() < 1e-4, "lo {lo} vs {lo_oracle}");
        assert!((hi - hi_oracle).abs() < 1e-4, "hi {hi} vs {hi_oracle}");
    }

    #[test]
    fn contains_value_box() {
        let ds = build_dataset(
            &[vec![0.5], vec![1.5], vec![0.2], vec![1.8]],
            &[1.0, 0.0, 1.0, 1.0],
            BoxSupport::new(vec![(0.0, 2.0)]).unwrap(),
        )
        .unwrap();
        let ss = sub_support(&ds, Mode::Value, 0.9999).unwrap();
        let m = mele(&ds).unwrap();
        assert!(ss.intervals[0].0 <= m.value_box[0].0 + 1e-6);
        assert!(ss.intervals[0].1 >= m.value_box[0].1 - 1e-6);
        assert!((ss.threshold_log_c - 0.5 * 15.136705).abs() < 1e-3);
    }
}
