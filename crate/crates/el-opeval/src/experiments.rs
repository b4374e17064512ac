//! Replication harnesses: interval coverage/width studies and policy
//! comparison studies over many simulated replicates.
//!
//! Replicates are independent parallel units with seeds derived from the
//! master seed by a fixed mixing function; results are collected in
//! replicate order, so reports are bit-identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::intervals::{wilks_interval, IntervalError};
use crate::posterior::{build_posterior, hpd_interval, prob_diff, prob_region, PosteriorError,
    PriorSpec, RegionQuery};
use crate::sim::{build_logged_dataset, generate_log, mc_true_value, BanditEnvironment, Policy,
    Recipe, SimError, SimStreams};
use crate::subsupport::Mode;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{failures} of {replicates} replicates failed (limit 0.1%)")]
    TooManyFailures { failures: usize, replicates: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Interval(#[from] IntervalError),
}

/// Stateless seed derivation (SplitMix64 finalizer over mixed-in tags).
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(tag.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

const TRAIN_TAG: u64 = 1;
const TRUTH_TAG: u64 = 2;
const REPLICATE_TAG: u64 = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub recipe: Recipe,
    /// Evaluation-log sizes (a log-spaced ladder by default).
    pub sizes: Vec<usize>,
    /// Miscoverage levels alpha (0.05 and 0.10 by default).
    pub levels: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    /// 1-D posterior grid size for HPD intervals.
    pub grid_points: usize,
    /// Monte Carlo draws for the fixed true value.
    pub true_value_draws: usize,
}

impl CoverageConfig {
    pub fn preset_quick(recipe: Recipe, seed: u64) -> Self {
        CoverageConfig {
            recipe,
            sizes: vec![64, 2048],
            levels: vec![0.05],
            replicates: 2000,
            seed,
            grid_points: 400,
            true_value_draws: 1_000_000,
        }
    }

    pub fn preset_paper(recipe: Recipe, seed: u64) -> Self {
        CoverageConfig {
            recipe,
            sizes: vec![32, 64, 128, 256, 512, 1024, 2048],
            levels: vec![0.05, 0.10],
            replicates: 10_000,
            seed,
            grid_points: 10_000,
            true_value_draws: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalMethod {
    Wilks,
    Hpd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageCell {
    pub method: IntervalMethod,
    pub level: f64,
    pub n: usize,
    pub coverage: f64,
    pub mean_width: f64,
    /// 5/25/50/75/95% quantiles of the width distribution.
    pub width_quantiles: [f64; 5],
    pub replicates: usize,
    pub failures: usize,
    /// Monte Carlo standard error of the coverage estimate.
    pub mc_se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub true_value: f64,
    pub cells: Vec<CoverageCell>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

struct RepIntervals {
    /// (method, level-index, lo, hi) per requested level.
    rows: Vec<(IntervalMethod, usize, f64, f64)>,
}

pub fn coverage_run(config: &CoverageConfig) -> Result<CoverageReport, ExperimentError> {
    let env = BanditEnvironment::default();
    let policy = Policy::Learned(
        config
            .recipe
            .learn(&env, derive_seed(config.seed, TRAIN_TAG, 0))?,
    );
    let true_value = mc_true_value(
        &policy,
        &env,
        config.true_value_draws,
        derive_seed(config.seed, TRUTH_TAG, 0),
    );

    let mut cells = Vec::new();
    for (si, &n) in config.sizes.iter().enumerate() {
        let outcomes: Vec<Result<RepIntervals, ExperimentError>> = (0..config.replicates)
            .into_par_iter()
            .map(|rep| {
                let seed = derive_seed(config.seed, REPLICATE_TAG, (si * config.replicates + rep) as u64);
                one_coverage_replicate(&env, &policy, n, seed, config)
            })
            .collect();

        let failures = outcomes.iter().filter(|o| o.is_err()).count();
        if config.replicates > 0 && failures * 1000 > config.replicates {
            return Err(ExperimentError::TooManyFailures {
                failures,
                replicates: config.replicates,
            });
        }
        let good: Vec<&RepIntervals> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        for (li, &level) in config.levels.iter().enumerate() {
            for method in [IntervalMethod::Wilks, IntervalMethod::Hpd] {
                let mut widths = Vec::with_capacity(good.len());
                let mut hits = 0usize;
                for rep in &good {
                    for &(m, l, lo, hi) in &rep.rows {
                        if m == method && l == li {
                            widths.push(hi - lo);
                            if lo <= true_value && true_value <= hi {
                                hits += 1;
                            }
                        }
                    }
                }
                let r = widths.len();
                let coverage = if r == 0 { f64::NAN } else { hits as f64 / r as f64 };
                widths.sort_by(f64::total_cmp);
                let mean_width = if r == 0 {
                    f64::NAN
                } else {
                    widths.iter().sum::<f64>() / r as f64
                };
                cells.push(CoverageCell {
                    method,
                    level,
                    n,
                    coverage,
                    mean_width,
                    width_quantiles: [
                        quantile(&widths, 0.05),
                        quantile(&widths, 0.25),
                        quantile(&widths, 0.50),
                        quantile(&widths, 0.75),
                        quantile(&widths, 0.95),
                    ],
                    replicates: r,
                    failures,
                    mc_se: if r == 0 {
                        f64::NAN
                    } else {
                        (coverage * (1.0 - coverage) / r as f64).sqrt()
                    },
                });
            }
        }
    }
    Ok(CoverageReport { true_value, cells })
}

fn one_coverage_replicate(
    env: &BanditEnvironment,
    policy: &Policy,
    n: usize,
    seed: u64,
    config: &CoverageConfig,
) -> Result<RepIntervals, ExperimentError> {
    let log = generate_log(env, n, &mut SimStreams::new(seed));
    let ds = build_logged_dataset(&log, std::slice::from_ref(policy), env)?;
    let post = build_posterior(&ds, Mode::Value, &PriorSpec::Flat, config.grid_points)?;
    let mut rows = Vec::with_capacity(2 * config.levels.len());
    for (li, &level) in config.levels.iter().enumerate() {
        let w = wilks_interval(&ds, level)?;
        rows.push((IntervalMethod::Wilks, li, w.lo, w.hi));
        let (lo, hi) = hpd_interval(&post, level);
        rows.push((IntervalMethod::Hpd, li, lo, hi));
    }
    Ok(RepIntervals { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComparisonMode {
    /// P(v_new > v_baseline + delta) from the joint posterior.
    JointAbsolute,
    /// P(v_new > (1 + delta) v_baseline) from the joint posterior.
    JointRelative,
    /// P(d > delta) from the difference posterior.
    Diff,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub sizes: Vec<usize>,
    pub margins: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub grid_1d: usize,
    /// Per-axis grid for the joint posterior.
    pub grid_2d: usize,
    /// Evaluate both recipes, or baseline against itself when false.
    pub distinct_policies: bool,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            sizes: vec![400],
            margins: vec![0.0, 0.05, 0.10],
            replicates: 100,
            seed: 0,
            grid_1d: 2000,
            grid_2d: 120,
            distinct_policies: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub mode: ComparisonMode,
    pub margin: f64,
    pub n: usize,
    pub mean_prob: f64,
    /// 2.5% / 97.5% band across replicates.
    pub band: (f64, f64),
    pub replicates: usize,
    pub failures: usize,
}

/// Probabilities for one replicate, indexed `[mode][margin]` in config order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateProbs {
    pub n: usize,
    pub replicate: usize,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline_true_value: f64,
    pub new_true_value: f64,
    pub cells: Vec<ComparisonCell>,
    pub per_replicate: Vec<ReplicateProbs>,
}

pub const COMPARISON_MODES: [ComparisonMode; 3] = [
    ComparisonMode::JointAbsolute,
    ComparisonMode::JointRelative,
    ComparisonMode::Diff,
];

pub fn comparison_run(config: &ComparisonConfig) -> Result<ComparisonReport, ExperimentError> {
    let env = BanditEnvironment::default();
    let baseline = Policy::Learned(
        Recipe::Baseline.learn(&env, derive_seed(config.seed, TRAIN_TAG, 0))?,
    );
    let new = if config.distinct_policies {
        Policy::Learned(Recipe::New.learn(&env, derive_seed(config.seed, TRAIN_TAG, 1))?)
    } else {
        baseline.clone()
    };
    let truth_seed = derive_seed(config.seed, TRUTH_TAG, 0);
    let baseline_true_value = mc_true_value(&baseline, &env, 100_000, truth_seed);
    let new_true_value = mc_true_value(&new, &env, 100_000, truth_seed);

    let mut cells = Vec::new();
    let mut per_replicate = Vec::new();
    for (si, &n) in config.sizes.iter().enumerate() {
        let outcomes: Vec<Result<Vec<Vec<f64>>, ExperimentError>> = (0..config.replicates)
            .into_par_iter()
            .map(|rep| {
                let seed = derive_seed(config.seed, REPLICATE_TAG, (si * config.replicates + rep) as u64);
                one_comparison_replicate(&env, &baseline, &new, n, seed, config)
            })
            .collect();
        let failures = outcomes.iter().filter(|o| o.is_err()).count();
        if config.replicates > 0 && failures * 1000 > config.replicates {
            return Err(ExperimentError::TooManyFailures {
                failures,
                replicates: config.replicates,
            });
        }
        for (rep, o) in outcomes.iter().enumerate() {
            if let Ok(probs) = o {
                per_replicate.push(ReplicateProbs { n, replicate: rep, probs: probs.clone() });
            }
        }
        for (mi, &mode) in COMPARISON_MODES.iter().enumerate() {
            for (di, &margin) in config.margins.iter().enumerate() {
                let mut vals: Vec<f64> = outcomes
                    .iter()
                    .filter_map(|o| o.as_ref().ok().map(|p| p[mi][di]))
                    .collect();
                vals.sort_by(f64::total_cmp);
                let r = vals.len();
                cells.push(ComparisonCell {
                    mode,
                    margin,
                    n,
                    mean_prob: if r == 0 {
                        f64::NAN
                    } else {
                        vals.iter().sum::<f64>() / r as f64
                    },
                    band: (quantile(&vals, 0.025), quantile(&vals, 0.975)),
                    replicates: r,
                    failures,
                });
            }
        }
    }
    Ok(ComparisonReport { baseline_true_value, new_true_value, cells, per_replicate })
}

fn one_comparison_replicate(
    env: &BanditEnvironment,
    baseline: &Policy,
    new: &Policy,
    n: usize,
    seed: u64,
    config: &ComparisonConfig,
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let log = generate_log(env, n, &mut SimStreams::new(seed));
    let ds = build_logged_dataset(&log, &[baseline.clone(), new.clone()], env)?;
    let joint = build_posterior(&ds, Mode::Value, &PriorSpec::Flat, config.grid_2d)?;
    let diff = build_posterior(&ds, Mode::Diff, &PriorSpec::Flat, config.grid_1d)?;
    let mut probs = vec![Vec::with_capacity(config.margins.len()); COMPARISON_MODES.len()];
    for &margin in &config.margins {
        probs[0].push(prob_region(&joint, &RegionQuery::Absolute(margin))?);
        probs[1].push(prob_region(&joint, &RegionQuery::Relative(margin))?);
        probs[2].push(prob_diff(&diff, margin));
    }
    Ok(probs)
}
