//! Empirical-likelihood off-policy evaluation for contextual bandits.
//!
//! Given logged data with bounded importance weights, this crate evaluates
//! target-policy values through a nonparametric empirical likelihood profile:
//! point estimation (maximum EL estimate with its value box), likelihood-ratio
//! and highest-posterior-density intervals, grid posteriors over one or two
//! policy values, and the difference between two policies. A small simulator
//! and experiment harness reproduce coverage and interval-width studies.

pub mod data;
pub mod experiments;
pub mod intervals;
pub mod io;
pub mod loglik;
pub mod mele;
pub mod posterior;
pub mod sim;
pub mod solver;
pub mod subsupport;

pub use data::{build_dataset, is_estimate, snis_estimate, BoxSupport, DataError, LoggedDataset,
    LoggedSample};
pub use experiments::{comparison_run, coverage_run, ComparisonConfig, ComparisonReport,
    CoverageConfig, CoverageReport, ExperimentError, IntervalMethod};
pub use io::{emit_summary, export_weighted_csv, ingest_raw_csv, ingest_weighted_csv,
    EvalSummary, IoError, PriorConfig, RunConfig, SolverDiagnostics};
pub use intervals::{chi2_quantile, normal_quantile, wilks_interval, IntervalError, WilksInterval};
pub use loglik::{dual_objective, log_el_diff, log_el_value, DualPoint, ElError, LogLik};
pub use mele::{mele, MeleResult};
pub use posterior::{build_posterior, hpd_interval, prob_diff, prob_region, GridPosterior,
    PosteriorError, PriorSpec, RegionQuery};
pub use sim::{build_logged_dataset, fit_arm_logistic, generate_log, learn_policy, mc_true_value,
    oracle_policy, policy_probs, sample_context, true_arm_probs, upper_bound, ArmModel,
    BanditEnvironment, ContextDraw, LearnedPolicy, Policy, Recipe, RoundLog, SimError, SimStreams};
pub use subsupport::{sub_support, sub_support_dual, Mode, SubSupport};
