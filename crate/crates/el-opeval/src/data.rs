//! Logged off-policy data: importance-weight vectors, rewards, and the
//! declared box support whose vertices drive dual feasibility.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("reward {value} at row {row} outside [0, 1]")]
    RewardOutOfRange { row: usize, value: f64 },
    #[error("weight {value} at row {row}, column {col} outside declared support [{lo}, {hi}]")]
    WeightOutsideSupport {
        row: usize,
        col: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("weight bound pair ({lo}, {hi}) at index {index} invalid: need 0 <= lo <= hi")]
    BadBounds { index: usize, lo: f64, hi: f64 },
    #[error("dataset needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("row {row} has {got} weights, expected {expected}")]
    DimensionMismatch {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("{rows} weight rows but {rewards} rewards")]
    LengthMismatch { rows: usize, rewards: usize },
    #[error("sum of weights in column {0} is zero; SNIS undefined")]
    ZeroWeightSum(usize),
    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },
}

/// One logged round: the reward received and the importance-weight vector
/// of the target policies at the action taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedSample {
    pub reward: f64,
    pub weights: Vec<f64>,
}

/// Per-policy weight bounds; the reward range is always [0, 1].
///
/// Bounds are user-declared from policy structure (e.g. w in [0, K] under a
/// uniform behavior policy) and validated against the data; they are never
/// inferred from observed extremes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSupport {
    bounds: Vec<(f64, f64)>,
}

impl BoxSupport {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, DataError> {
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo > hi {
                return Err(DataError::BadBounds {
                    index: j,
                    lo,
                    hi,
                });
            }
        }
        Ok(Self { bounds })
    }

    pub fn policy_count(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Axes with w_min == w_max carry no information for the weight dual
    /// variable; callers pin the matching coordinate to zero.
    pub fn degenerate_axes(&self) -> Vec<bool> {
        self.bounds.iter().map(|&(lo, hi)| lo == hi).collect()
    }

    /// Vertices of the weight box only (reward dimension dropped), with
    /// collapsed axes de-duplicated. Lexicographic order, last axis fastest.
    pub fn weight_vertices(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![vec![]];
        for &(lo, hi) in &self.bounds {
            let values: &[f64] = if lo == hi { &[lo] } else { &[lo, hi] };
            let mut next = Vec::with_capacity(out.len() * values.len());
            for prefix in &out {
                for &v in values {
                    let mut w = prefix.clone();
                    w.push(v);
                    next.push(w);
                }
            }
            out = next;
        }
        out
    }

    /// Full vertex set of the support: every weight-box corner paired with
    /// reward 0 and 1. Deterministic order: lexicographic in the weights,
    /// reward fastest.
    pub fn vertices(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out = Vec::new();
        for w in self.weight_vertices() {
            out.push((w.clone(), 0.0));
            out.push((w, 1.0));
        }
        out
    }
}

/// Validated logged dataset: the sole input to all EL computations.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDataset {
    samples: Vec<LoggedSample>,
    support: BoxSupport,
}

impl LoggedDataset {
    pub fn samples(&self) -> &[LoggedSample] {
        &self.samples
    }

    pub fn support(&self) -> &BoxSupport {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn policy_count(&self) -> usize {
        self.support.policy_count()
    }
}

/// Validates and assembles a dataset from raw weight rows and rewards.
pub fn build_dataset(
    weight_rows: &[Vec<f64>],
    rewards: &[f64],
    support: BoxSupport,
) -> Result<LoggedDataset, DataError> {
    if weight_rows.len() != rewards.len() {
        return Err(DataError::LengthMismatch {
            rows: weight_rows.len(),
            rewards: rewards.len(),
        });
    }
    if weight_rows.len() < 2 {
        return Err(DataError::TooFewSamples(weight_rows.len()));
    }
    let l = support.policy_count();
    let mut samples = Vec::with_capacity(weight_rows.len());
    for (row, (ws, &r)) in weight_rows.iter().zip(rewards).enumerate() {
        if ws.len() != l {
            return Err(DataError::DimensionMismatch {
                row,
                got: ws.len(),
                expected: l,
            });
        }
        if !r.is_finite() || ws.iter().any(|w| !w.is_finite()) {
            return Err(DataError::NonFinite { row });
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(DataError::RewardOutOfRange { row, value: r });
        }
        for (col, (&w, &(lo, hi))) in ws.iter().zip(support.bounds()).enumerate() {
            if w < lo || w > hi {
                return Err(DataError::WeightOutsideSupport {
                    row,
                    col,
                    value: w,
                    lo,
                    hi,
                });
            }
        }
        samples.push(LoggedSample {
            reward: r,
            weights: ws.clone(),
        });
    }
    Ok(LoggedDataset { samples, support })
}

/// Importance sampling estimate: per-policy mean of w * r.
pub fn is_estimate(ds: &LoggedDataset) -> Vec<f64> {
    let l = ds.policy_count();
    let n = ds.len() as f64;
    let mut out = vec![0.0; l];
    for s in ds.samples() {
        for j in 0..l {
            out[j] += s.weights[j] * s.reward;
        }
    }
    for v in &mut out {
        *v /= n;
    }
    out
}

/// Self-normalized importance sampling estimate: sum(w r) / sum(w) per policy.
pub fn snis_estimate(ds: &LoggedDataset) -> Result<Vec<f64>, DataError> {
    let l = ds.policy_count();
    let mut num = vec![0.0; l];
    let mut den = vec![0.0; l];
    for s in ds.samples() {
        for j in 0..l {
            num[j] += s.weights[j] * s.reward;
            den[j] += s.weights[j];
        }
    }
    for j in 0..l {
        if den[j] <= 0.0 {
            return Err(DataError::ZeroWeightSum(j));
        }
        num[j] /= den[j];
    }
    Ok(num)
}
