//! Grid posteriors over policy values, HPD intervals, and probability queries.
//!
//! The posterior is prior times empirical-likelihood ratio, tabulated on an
//! equispaced grid placed over the adaptive sub-support. Cells are evaluated
//! in fixed-size strips so results are identical regardless of how many
//! worker threads run them; within a strip the dual solves warm-start from
//! their neighbor.

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::LoggedDataset;
use crate::loglik::{log_el_diff_warm, log_el_value_warm, ElError};
use crate::subsupport::{sub_support, Mode, SubSupport};

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error("every grid cell is infeasible; posterior is degenerate")]
    AllCellsInfeasible,
    #[error("conditioning event has mass below 1e-12")]
    EmptyConditioningEvent,
    #[error("invalid prior: {0}")]
    BadPrior(String),
    #[error(transparent)]
    El(#[from] ElError),
    #[error(transparent)]
    Interval(#[from] crate::intervals::IntervalError),
}

/// Prior over the gridded parameter.
#[derive(Debug, Clone)]
pub enum PriorSpec {
    Flat,
    /// Independent Beta(a_j, b_j) densities per dimension. In Diff mode the
    /// Beta density is placed on (d + 1) / 2 so it covers [-1, 1].
    BetaProduct(Vec<(f64, f64)>),
    /// One-dimensional density tabulated on its own grid; values between
    /// knots are linearly interpolated, values outside get zero density.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

impl PriorSpec {
    fn validate(&self, dims: usize) -> Result<(), PosteriorError> {
        match self {
            PriorSpec::Flat => Ok(()),
            PriorSpec::BetaProduct(ab) => {
                if ab.len() != dims {
                    return Err(PosteriorError::BadPrior(format!(
                        "BetaProduct has {} parameter pairs for {dims} dimensions",
                        ab.len()
                    )));
                }
                if ab.iter().any(|&(a, b)| a <= 0.0 || b <= 0.0) {
                    return Err(PosteriorError::BadPrior(
                        "Beta parameters must be positive".into(),
                    ));
                }
                Ok(())
            }
            PriorSpec::Tabulated { grid, values } => {
                if dims != 1 {
                    return Err(PosteriorError::BadPrior(
                        "tabulated priors are one-dimensional".into(),
                    ));
                }
                if grid.len() != values.len() || grid.len() < 2 {
                    return Err(PosteriorError::BadPrior(
                        "tabulated prior needs matching grid/value lists of length >= 2".into(),
                    ));
                }
                if grid.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(PosteriorError::BadPrior(
                        "tabulated prior grid must be strictly increasing".into(),
                    ));
                }
                if values.iter().any(|&v| !v.is_finite() || v < 0.0) {
                    return Err(PosteriorError::BadPrior(
                        "tabulated prior values must be finite and non-negative".into(),
                    ));
                }
                let mut integral = 0.0;
                for (w, v) in grid.windows(2).zip(values.windows(2)) {
                    integral += 0.5 * (v[0] + v[1]) * (w[1] - w[0]);
                }
                if integral <= 0.0 {
                    return Err(PosteriorError::BadPrior(
                        "tabulated prior integrates to zero".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Unnormalized log prior density at one grid point.
    fn log_density(&self, point: &[f64], mode: Mode) -> f64 {
        match self {
            PriorSpec::Flat => 0.0,
            PriorSpec::BetaProduct(ab) => {
                let mut ld = 0.0;
                for (&x, &(a, b)) in point.iter().zip(ab) {
                    let u = match mode {
                        Mode::Value => x,
                        Mode::Diff => 0.5 * (x + 1.0),
                    };
                    if u <= 0.0 || u >= 1.0 {
                        if (a - 1.0).abs() < f64::EPSILON && (b - 1.0).abs() < f64::EPSILON {
                            continue; // uniform prior has positive density at the edges
                        }
                        return f64::NEG_INFINITY;
                    }
                    ld += (a - 1.0) * u.ln() + (b - 1.0) * (1.0 - u).ln();
                }
                ld
            }
            PriorSpec::Tabulated { grid, values } => {
                let x = point[0];
                if x < grid[0] || x > *grid.last().unwrap() {
                    return f64::NEG_INFINITY;
                }
                let k = grid.partition_point(|&g| g <= x).min(grid.len() - 1);
                let (g0, g1) = (grid[k - 1], grid[k]);
                let t = (x - g0) / (g1 - g0);
                let dens = values[k - 1] + t * (values[k] - values[k - 1]);
                if dens > 0.0 {
                    dens.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// One equispaced grid axis; cell centers sit at `lo + (i + 1/2) * width`.
#[derive(Debug, Clone)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl GridAxis {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }
}

/// A normalized posterior tabulated on a 1-D or 2-D grid. Storage is
/// row-major: index = i0 + axes[0].cells * i1.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub mode: Mode,
    pub axes: Vec<GridAxis>,
    pub log_density: Vec<f64>,
    pub log_norm: f64,
    pub cell_mass: Vec<f64>,
    pub sub_support: SubSupport,
}

impl GridPosterior {
    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    fn center(&self, idx: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axes[0].center(idx)],
            2 => {
                let n0 = self.axes[0].cells;
                vec![self.axes[0].center(idx % n0), self.axes[1].center(idx / n0)]
            }
            _ => unreachable!(),
        }
    }

    /// Grid argmax as a parameter point.
    pub fn mode_point(&self) -> Vec<f64> {
        let (idx, _) = self
            .cell_mass
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        self.center(idx)
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Strip length for parallel evaluation. Fixed so that results do not depend
/// on the number of worker threads.
const STRIP: usize = 256;

pub fn build_posterior(
    ds: &LoggedDataset,
    mode: Mode,
    prior: &PriorSpec,
    grid_points: usize,
) -> Result<GridPosterior, PosteriorError> {
    assert!(grid_points >= 100, "need at least 100 grid points per axis");
    let ss = sub_support(ds, mode, 0.9999)?;
    let max_ll = ss.max_loglik.value();

    let dims = ss.intervals.len();
    prior.validate(dims)?;
    let axes: Vec<GridAxis> = ss
        .intervals
        .iter()
        .map(|&(lo, hi)| {
            // Guard against a numerically degenerate sub-support.
            let hi = if hi - lo < 1e-9 { lo + 1e-9 } else { hi };
            GridAxis { lo, hi, cells: grid_points }
        })
        .collect();

    let total: usize = axes.iter().map(|a| a.cells).product();
    let n0 = axes[0].cells;
    // Strips run along axis 0; each strip re-derives its own warm start.
    let strip_of = |start: usize| -> Vec<f64> {
        let row = start / n0;
        let end = ((start - row * n0) + STRIP).min(n0) + row * n0;
        let mut out = Vec::with_capacity(end - start);
        let mut warm: Option<DVector<f64>> = None;
        for idx in start..end {
            let point = match dims {
                1 => vec![axes[0].center(idx)],
                _ => vec![axes[0].center(idx % n0), axes[1].center(idx / n0)],
            };
            let lp = prior.log_density(&point, mode);
            let ll = if lp.is_finite() {
                let r = match mode {
                    Mode::Value => log_el_value_warm(ds, &point, &mut warm),
                    Mode::Diff => log_el_diff_warm(ds, point[0], &mut warm),
                };
                match r {
                    Ok(v) => v.value() - max_ll,
                    Err(_) => f64::NEG_INFINITY,
                }
            } else {
                f64::NEG_INFINITY
            };
            out.push(lp + ll);
        }
        out
    };

    let starts: Vec<usize> = (0..axes.get(1).map_or(1, |a| a.cells))
        .flat_map(|row| (0..n0).step_by(STRIP).map(move |c| row * n0 + c))
        .collect();
    let chunks: Vec<Vec<f64>> = starts.par_iter().map(|&s| strip_of(s)).collect();
    let mut log_density = Vec::with_capacity(total);
    for c in chunks {
        log_density.extend(c);
    }

    let log_norm = logsumexp(&log_density);
    if !log_norm.is_finite() {
        return Err(PosteriorError::AllCellsInfeasible);
    }
    let cell_mass: Vec<f64> = log_density.iter().map(|&ld| (ld - log_norm).exp()).collect();
    Ok(GridPosterior { mode, axes, log_density, log_norm, cell_mass, sub_support: ss })
}

/// Highest-posterior-density interval of a 1-D posterior.
///
/// Cells are taken in decreasing density order until the target mass is
/// reached; equal-density ties all enter together, and the resulting span is
/// then trimmed symmetrically while the mass stays at or above the target
/// (the posterior is treated as unimodal, which holds for EL profiles).
pub fn hpd_interval(post: &GridPosterior, alpha: f64) -> (f64, f64) {
    assert!(post.dims() == 1, "HPD intervals need a 1-D posterior");
    assert!(alpha > 0.0 && alpha < 1.0);
    let target = 1.0 - alpha;
    let m = &post.cell_mass;

    let mut order: Vec<usize> = (0..m.len()).collect();
    order.sort_by(|&a, &b| m[b].total_cmp(&m[a]));
    let mut acc = 0.0;
    let mut taken = 0;
    while taken < order.len() && acc < target {
        acc += m[order[taken]];
        taken += 1;
    }
    // Bring in every cell tied with the last one included.
    let tie = m[order[taken - 1]];
    while taken < order.len() && m[order[taken]] == tie {
        taken += 1;
    }

    let mut lo = *order[..taken].iter().min().unwrap();
    let mut hi = *order[..taken].iter().max().unwrap();
    let mut span_mass: f64 = m[lo..=hi].iter().sum();
    let max_density = m[order[0]];
    // A trim is only allowed if a maximum-density cell survives it, so the
    // interval always contains the grid argmax (any of them, under ties).
    let keeps_peak = |lo: usize, hi: usize| {
        lo + 1 < hi && m[lo + 1..hi].iter().any(|&x| x == max_density)
    };
    while lo < hi && keeps_peak(lo, hi) {
        let trimmed = span_mass - m[lo] - m[hi];
        if trimmed >= target {
            span_mass = trimmed;
            lo += 1;
            hi -= 1;
        } else {
            break;
        }
    }
    (post.axes[0].center(lo), post.axes[0].center(hi))
}

/// Region queries over a 2-D joint posterior; `v1` is axis 0 (baseline),
/// `v2` axis 1.
#[derive(Debug, Clone)]
pub enum RegionQuery {
    /// v2 > v1 + delta.
    Absolute(f64),
    /// v2 > (1 + delta) * v1.
    Relative(f64),
    /// a*v1 + b*v2 > c.
    HalfPlane { a: f64, b: f64, c: f64 },
    /// P(region | given), renormalized within the conditioning event.
    Conditional { region: Box<RegionQuery>, given: Box<RegionQuery> },
}

impl RegionQuery {
    fn holds(&self, v1: f64, v2: f64) -> bool {
        match self {
            RegionQuery::Absolute(d) => v2 > v1 + d,
            RegionQuery::Relative(d) => v2 > (1.0 + d) * v1,
            RegionQuery::HalfPlane { a, b, c } => a * v1 + b * v2 > *c,
            RegionQuery::Conditional { .. } => {
                unreachable!("conditional queries are decomposed before evaluation")
            }
        }
    }
}

pub fn prob_region(post: &GridPosterior, query: &RegionQuery) -> Result<f64, PosteriorError> {
    assert!(post.dims() == 2, "region queries need a 2-D posterior");
    if let RegionQuery::Conditional { region, given } = query {
        let joint = mass_where(post, |v1, v2| region.holds(v1, v2) && given.holds(v1, v2));
        let cond = mass_where(post, |v1, v2| given.holds(v1, v2));
        if cond < 1e-12 {
            return Err(PosteriorError::EmptyConditioningEvent);
        }
        return Ok((joint / cond).clamp(0.0, 1.0));
    }
    Ok(mass_where(post, |v1, v2| query.holds(v1, v2)))
}

fn mass_where(post: &GridPosterior, pred: impl Fn(f64, f64) -> bool) -> f64 {
    let n0 = post.axes[0].cells;
    let mut total = 0.0;
    for (idx, &mass) in post.cell_mass.iter().enumerate() {
        let v1 = post.axes[0].center(idx % n0);
        let v2 = post.axes[1].center(idx / n0);
        if pred(v1, v2) {
            total += mass;
        }
    }
    total
}

/// P(d > delta) from a 1-D difference posterior.
pub fn prob_diff(post: &GridPosterior, delta: f64) -> f64 {
    assert!(
        post.dims() == 1 && post.mode == Mode::Diff,
        "prob_diff needs a 1-D difference posterior"
    );
    post.cell_mass
        .iter()
        .enumerate()
        .filter(|&(i, _)| post.axes[0].center(i) > delta)
        .map(|(_, &m)| m)
        .sum()
}
