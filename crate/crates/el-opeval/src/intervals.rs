//! Wilks confidence intervals and the quantile functions behind both
//! calibration paths.

use thiserror::Error;

use crate::data::LoggedDataset;
use crate::loglik::{log_el_value_warm, ElError, LogLik};
use crate::mele::mele;

#[derive(Debug, Error)]
pub enum IntervalError {
    #[error("chi-squared quantile only implemented for 1 or 2 degrees of freedom, got {0}")]
    UnsupportedDf(usize),
    #[error("quantile probability {0} outside [0, 1)")]
    BadProbability(f64),
    #[error(transparent)]
    El(#[from] ElError),
}

/// Standard normal quantile, Wichura's AS241 rational approximation
/// (absolute error well below 1e-9 on (0, 1)).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal quantile needs p in (0,1)");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509080928730122e3 * r + 3.3430575583588128e4) * r
            + 6.7265770927008700e4)
            * r
            + 4.5921953931549871e4)
            * r
            + 1.3731693765509461e4)
            * r
            + 1.9715909503065514e3)
            * r
            + 1.3314166789178437e2)
            * r
            + 3.3871328727963666e0)
            * q;
        let den = ((((((5.2264952788528545e3 * r + 2.8729085735721942e4) * r
            + 3.9307895800092710e4)
            * r
            + 2.1213794301586595e4)
            * r
            + 5.3941960214247511e3)
            * r
            + 6.8718700749205790e2)
            * r
            + 4.2313330701600911e1)
            * r
            + 1.0;
        return num / den;
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
            + 2.41780725177450611770e-1)
            * r
            + 1.27045825245236838258e0)
            * r
            + 3.64784832476320460504e0)
            * r
            + 5.76949722146069140550e0)
            * r
            + 4.63033784615654529590e0)
            * r
            + 1.42343711074968357734e0;
        let den = ((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
            + 1.51986665636164571966e-2)
            * r
            + 1.48103976427480074590e-1)
            * r
            + 6.89767334985100004550e-1)
            * r
            + 1.67638483018380384940e0)
            * r
            + 2.05319162663775882187e0)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 1.24266094738807843860e-3)
            * r
            + 2.65321895265761230930e-2)
            * r
            + 2.96560571828504891230e-1)
            * r
            + 1.78482653991729133580e0)
            * r
            + 5.46378491116411436990e0)
            * r
            + 6.65790464350110377720e0;
        let den = ((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
            + 1.84631831751005468180e-5)
            * r
            + 7.86869131145613259100e-4)
            * r
            + 1.48753612908506148525e-2)
            * r
            + 1.36929880922735805310e-1)
            * r
            + 5.99832206555887937690e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Chi-squared quantile for 1 or 2 degrees of freedom.
///
/// df = 2 has the closed form -2 ln(1 - q); df = 1 is the squared standard
/// normal quantile of (1 + q) / 2.
pub fn chi2_quantile(df: usize, q: f64) -> Result<f64, IntervalError> {
    if !(0.0..1.0).contains(&q) {
        return Err(IntervalError::BadProbability(q));
    }
    match df {
        1 => {
            if q == 0.0 {
                Ok(0.0)
            } else {
                let z = normal_quantile((1.0 + q) / 2.0);
                Ok(z * z)
            }
        }
        2 => Ok(-2.0 * (1.0 - q).ln()),
        other => Err(IntervalError::UnsupportedDf(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilksInterval {
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
    /// Log-EL ratio threshold: -chi2_quantile(1, 1 - alpha) / 2.
    pub threshold_log: f64,
}

impl WilksInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

const BISECT_TOL: f64 = 1e-6;
const BISECT_MAX: usize = 80;

/// Wilks interval for a single-policy dataset: the set of `v` whose log-EL
/// ratio to the maximum exceeds the chi-squared threshold. Found by
/// bisection outward from the MELE value box, valid by concavity of the
/// log-EL curve; clipped at [0, 1].
pub fn wilks_interval(ds: &LoggedDataset, alpha: f64) -> Result<WilksInterval, IntervalError> {
    assert_eq!(ds.policy_count(), 1, "wilks_interval needs a 1-policy dataset");
    assert!(alpha > 0.0 && alpha < 1.0);
    let threshold_log = -0.5 * chi2_quantile(1, 1.0 - alpha)?;
    let m = mele(ds)?;
    let max_ll = m.max_loglik.value();
    let (box_lo, box_hi) = m.value_box[0];

    let mut warm = None;
    let ratio = |v: f64, warm: &mut Option<nalgebra::DVector<f64>>| -> Result<f64, ElError> {
        let ll = match log_el_value_warm(ds, &[v], warm) {
            Ok(ll) => ll,
            // A capped solve still lower-bounds the dual supremum, which
            // over-estimates the log-EL; it only happens far below the
            // threshold, where the classification is unaffected.
            Err(ElError::MaxIterationsExceeded { best }) => {
                *warm = None;
                LogLik::finite(best)
            }
            Err(e) => return Err(e),
        };
        Ok(if ll.is_infeasible() {
            f64::NEG_INFINITY
        } else {
            ll.value() - max_ll
        })
    };

    // Grow the bracket geometrically from the box edge toward the boundary,
    // then bisect the threshold crossing.
    let side = |edge: f64,
                    boundary: f64,
                    warm: &mut Option<nalgebra::DVector<f64>>|
     -> Result<f64, IntervalError> {
        let mut inside = edge;
        let mut step = 1e-3 * (boundary - edge).abs().max(1e-3);
        let mut outside = None;
        loop {
            let cand = if (boundary - edge) >= 0.0 {
                (inside + step).min(boundary)
            } else {
                (inside - step).max(boundary)
            };
            if ratio(cand, warm)? < threshold_log {
                outside = Some(cand);
                break;
            }
            inside = cand;
            if cand == boundary {
                break;
            }
            step *= 2.0;
        }
        let Some(mut outside) = outside else {
            return Ok(boundary);
        };
        for _ in 0..BISECT_MAX {
            if (outside - inside).abs() < BISECT_TOL {
                break;
            }
            let mid = 0.5 * (inside + outside);
            if ratio(mid, warm)? >= threshold_log {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        Ok(0.5 * (inside + outside))
    };

    let lo = side(box_lo, 0.0, &mut warm)?;
    warm = None;
    let hi = side(box_hi, 1.0, &mut warm)?;
    Ok(WilksInterval {
        lo,
        hi,
        alpha,
        threshold_log,
    })
}
