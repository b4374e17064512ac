//! Maximum empirical likelihood estimation under the box support.
//!
//! The maximizing measure puts mass `Q*_i = 1/(n(1 + beta*.(w_i - 1)))` on
//! the data points; any residual mass sits on weight-box vertices where the
//! affine form vanishes, and because those atoms can carry any reward in
//! [0, 1] the estimator is a box rather than a point.

use nalgebra::{DMatrix, DVector};

use crate::data::LoggedDataset;
use crate::loglik::{solve_sum_log_dual, DualSolve, ElError, LogLik, SumLogDual};
use crate::solver::{LinearConstraint, SolverOptions};

/// Residual mass below this is treated as zero (unique MELE).
const TOL_UNIQUE: f64 = 1e-8;
/// Active-set tolerance on the affine value at weight-box vertices.
const TOL_ACTIVE: f64 = 1e-7;
/// Maximum residual of the boundary-mass least-squares solve.
const TOL_BOUNDARY: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct MeleResult {
    pub beta_star: Vec<f64>,
    /// Probabilities assigned to the observed data points.
    pub data_masses: Vec<f64>,
    /// Mass left for the boundary atoms.
    pub residual_mass: f64,
    /// Weight-box vertices where the affine form is (numerically) zero,
    /// paired with their allocated masses.
    pub boundary_atoms: Vec<(Vec<f64>, f64)>,
    /// Per-dimension interval of maximizing values.
    pub value_box: Vec<(f64, f64)>,
    pub max_loglik: LogLik,
}

impl MeleResult {
    pub fn is_unique(&self) -> bool {
        self.residual_mass <= TOL_UNIQUE
    }

    /// Midpoint of the value box.
    pub fn point_estimate(&self) -> Vec<f64> {
        self.value_box
            .iter()
            .map(|&(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }
}

/// Re-solves the weight dual with the numerically active vertex constraints
/// pinned as exact equalities. The barrier solution sits a hair inside the
/// active constraints, which is enough to break the downstream boundary-mass
/// identities; a few Newton-KKT steps on the equality-constrained problem
/// restore them to machine precision.
fn polish_active_set(
    obj: &SumLogDual,
    constraints: &[LinearConstraint],
    theta: DVector<f64>,
    sup: f64,
) -> (DVector<f64>, f64) {
    use crate::solver::ConcaveObjective;
    const TOL_STEP: f64 = 1e-13;

    let dim = theta.len();
    let active: Vec<usize> = (0..constraints.len())
        .filter(|&i| {
            (constraints[i].offset + constraints[i].coeffs.dot(&theta)).abs() < TOL_ACTIVE
        })
        .collect();
    if dim == 0 {
        return (theta, sup);
    }

    let rows = active.len();
    let c = DMatrix::from_fn(rows, dim, |r, k| constraints[active[r]].coeffs[k]);
    let rhs: DVector<f64> = DVector::from_iterator(rows, active.iter().map(|&i| -constraints[i].offset));

    // Project onto the equality manifold (minimum-norm correction).
    let mut cur = if rows == 0 {
        theta.clone()
    } else {
        let violation = &c * &theta - &rhs;
        match c.clone().svd(true, true).solve(&violation, 1e-12) {
            Ok(corr) => &theta - corr,
            Err(_) => return (theta, sup),
        }
    };
    if obj.value(&cur).is_none() {
        return (theta, sup);
    }

    for _ in 0..50 {
        let Some((f, g, h)) = obj.value_grad_hess(&cur) else { break };
        // KKT system for the Newton step within the manifold.
        let mut kkt = DMatrix::zeros(dim + rows, dim + rows);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(&(-&h));
        kkt.view_mut((0, dim), (dim, rows)).copy_from(&c.transpose());
        kkt.view_mut((dim, 0), (rows, dim)).copy_from(&c);
        let mut full_rhs = DVector::zeros(dim + rows);
        full_rhs.rows_mut(0, dim).copy_from(&g);
        let Some(sol) = kkt.full_piv_lu().solve(&full_rhs) else { break };
        let step = sol.rows(0, dim).into_owned();
        let decrement = g.dot(&step);
        if step.norm() < TOL_STEP || decrement <= 0.0 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &cur + t * &step;
            if let Some(fc) = obj.value(&cand) {
                if fc >= f - 1e-12 {
                    cur = cand;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted || decrement < 1e-14 * (1.0 + f.abs()) {
            break;
        }
    }
    match obj.value(&cur) {
        Some(f) => (cur, f),
        None => (theta, sup),
    }
}

pub fn mele(ds: &LoggedDataset) -> Result<MeleResult, ElError> {
    let l = ds.policy_count();
    let n = ds.len();
    let degenerate = ds.support().degenerate_axes();
    let free: Vec<usize> = (0..l).filter(|&j| !degenerate[j]).collect();
    let dim = free.len();

    let xs: Vec<Vec<f64>> = ds
        .samples()
        .iter()
        .map(|s| free.iter().map(|&j| s.weights[j] - 1.0).collect())
        .collect();
    let weight_vertices = ds.support().weight_vertices();
    let constraints: Vec<LinearConstraint> = weight_vertices
        .iter()
        .map(|w| LinearConstraint {
            coeffs: DVector::from_iterator(dim, free.iter().map(|&j| w[j] - 1.0)),
            offset: 1.0,
        })
        .collect();

    let obj = SumLogDual { xs, dim };
    let opts = SolverOptions::default();
    let (sup, theta) = match solve_sum_log_dual(&obj, &constraints, None, &opts)? {
        DualSolve::Finite { sup, theta } => (sup, theta),
        // The weight dual is always feasible at beta = 0 and bounded above;
        // divergence here means the dataset violates its own support.
        DualSolve::Diverged => {
            return Err(ElError::SolverFailure(
                "weight dual diverged on a validated dataset".into(),
            ))
        }
    };

    let (theta, sup) = polish_active_set(&obj, &constraints, theta, sup);

    let mut beta_star = vec![0.0; l];
    for (k, &j) in free.iter().enumerate() {
        beta_star[j] = theta[k];
    }

    let nf = n as f64;
    let mut data_masses = Vec::with_capacity(n);
    for s in ds.samples() {
        let mut g = 1.0;
        for j in 0..l {
            g += beta_star[j] * (s.weights[j] - 1.0);
        }
        data_masses.push(1.0 / (nf * g));
    }
    let mass_sum: f64 = data_masses.iter().sum();
    let residual_mass = 1.0 - mass_sum;

    // v_lo: boundary atoms at r = 0 contribute nothing.
    let mut v_lo = vec![0.0; l];
    for (s, &q) in ds.samples().iter().zip(&data_masses) {
        for j in 0..l {
            v_lo[j] += s.weights[j] * s.reward * q;
        }
    }

    let mut boundary_atoms = Vec::new();
    let mut value_box: Vec<(f64, f64)> = v_lo.iter().map(|&x| (x, x)).collect();

    if residual_mass > TOL_UNIQUE {
        let active: Vec<&Vec<f64>> = weight_vertices
            .iter()
            .filter(|w| {
                let mut aff = 1.0;
                for j in 0..l {
                    aff += beta_star[j] * (w[j] - 1.0);
                }
                aff.abs() < TOL_ACTIVE
            })
            .collect();

        // Primal conditions: masses sum to the residual and restore the
        // weight-mean constraint. Solved in least squares; a large residual
        // means the solver's active set is wrong.
        let rows = l + 1;
        let cols = active.len();
        let mut a = DMatrix::zeros(rows, cols);
        let mut b = DVector::zeros(rows);
        b[0] = residual_mass;
        for (k, w) in active.iter().enumerate() {
            a[(0, k)] = 1.0;
            for j in 0..l {
                a[(j + 1, k)] = w[j];
            }
        }
        for j in 0..l {
            let mut s = 1.0;
            for (smp, &q) in ds.samples().iter().zip(&data_masses) {
                s -= smp.weights[j] * q;
            }
            b[j + 1] = s;
        }
        let masses = if cols == 0 {
            DVector::zeros(0)
        } else {
            a.clone()
                .svd(true, true)
                .solve(&b, 1e-12)
                .map_err(|e| ElError::SolverFailure(e.to_string()))?
        };
        let resid = (&a * &masses - &b).norm();
        if resid > TOL_BOUNDARY {
            return Err(ElError::InconsistentBoundaryAllocation { residual: resid });
        }
        for (k, w) in active.iter().enumerate() {
            let q = masses[k].max(0.0);
            boundary_atoms.push(((*w).clone(), q));
            for j in 0..l {
                value_box[j].1 += w[j] * q;
            }
        }
    }

    Ok(MeleResult {
        beta_star,
        data_masses,
        residual_mass,
        boundary_atoms,
        value_box,
        max_loglik: LogLik::finite(-sup),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, BoxSupport};

    #[test]
    fn unit_weights_reduce_to_sample_mean() {
        let ds = build_dataset(
            &[vec![1.0], vec![1.0], vec![1.0], vec![1.0]],
            &[1.0, 0.0, 1.0, 1.0],
            BoxSupport::new(vec![(0.0, 2.0)]).unwrap(),
        )
        .unwrap();
        let m = mele(&ds).unwrap();
        assert!(m.beta_star[0].abs() < 1e-9);
        for &q in &m.data_masses {
            assert!((q - 0.25).abs() < 1e-9);
        }
        assert!(m.residual_mass.abs() < 1e-9);
        assert!(m.is_unique());
        assert!((m.value_box[0].0 - 0.75).abs() < 1e-9);
        assert!((m.value_box[0].1 - 0.75).abs() < 1e-9);
        assert!(m.max_loglik.value().abs() < 1e-9);
    }

    #[test]
    fn unit_mean_weight_columns_give_is_estimate() {
        // Empirical mean of the weight column is exactly 1, so beta* = 0 and
        // the MELE equals the IS estimate.
        let ds = build_dataset(
            &[vec![0.5], vec![1.5]],
            &[1.0, 0.0],
            BoxSupport::new(vec![(0.0, 2.0)]).unwrap(),
        )
        .unwrap();
        let m = mele(&ds).unwrap();
        assert!(m.beta_star[0].abs() < 1e-9);
        assert!((m.value_box[0].0 - 0.25).abs() < 1e-9);
        assert!(m.is_unique());
    }

    #[test]
    fn residual_mass_case_produces_box() {
        // Mean weight 0.5 < 1 forces beta to the vertex constraint and
        // leaves boundary mass at w = 2, so the MELE is a genuine interval.
        let ds = build_dataset(
            &[vec![0.5], vec![0.5]],
            &[1.0, 1.0],
            BoxSupport::new(vec![(0.0, 2.0)]).unwrap(),
        )
        .unwrap();
        let m = mele(&ds).unwrap();
        assert!(m.residual_mass > 1e-3, "residual {}", m.residual_mass);
        assert!(!m.is_unique());
        assert!(m.value_box[0].1 > m.value_box[0].0);
        // Masses restore the weight-mean constraint.
        let mut wmean: f64 = ds
            .samples()
            .iter()
            .zip(&m.data_masses)
            .map(|(s, q)| s.weights[0] * q)
            .sum();
        for (w, q) in &m.boundary_atoms {
            wmean += w[0] * q;
        }
        assert!((wmean - 1.0).abs() < 1e-6, "wmean {wmean}");
    }
}
