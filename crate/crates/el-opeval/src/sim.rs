//! Synthetic contextual-bandit environment, upper-bound softmax policy
//! learning, uniform-behavior logging, and Monte Carlo true values.
//!
//! Randomness is organized as ChaCha substreams of one master seed, one
//! stream per purpose (contexts, arm features, behavior choices, rewards),
//! so adding draws to one consumer never shifts another. Monte Carlo
//! integration is partitioned into fixed-size blocks with per-block streams
//! and summed in block order, making results independent of worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{build_dataset, BoxSupport, DataError, LoggedDataset};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("arm {0} appears fewer than 2 times in the log")]
    InsufficientArmData(usize),
    #[error("logistic fit needs at least 2 observations")]
    TooFewObservations,
}

#[derive(Debug, Clone)]
pub struct BanditEnvironment {
    pub k: usize,
    pub d: usize,
    pub beta0: f64,
    pub beta1: f64,
}

impl Default for BanditEnvironment {
    fn default() -> Self {
        BanditEnvironment { k: 10, d: 12, beta0: 0.0, beta1: 3.0 }
    }
}

impl BanditEnvironment {
    pub fn new(k: usize, d: usize, beta0: f64, beta1: f64) -> Self {
        assert!(k >= 2 && d >= 1);
        BanditEnvironment { k, d, beta0, beta1 }
    }
}

/// One round's context: a simplex point, per-arm feature vectors, and the
/// per-arm scores z_a = x_c . x_a.
#[derive(Debug, Clone)]
pub struct ContextDraw {
    pub x_c: Vec<f64>,
    pub x_arms: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

/// Per-purpose random streams derived from one master seed.
#[derive(Debug, Clone)]
pub struct SimStreams {
    pub context: ChaCha8Rng,
    pub arms: ChaCha8Rng,
    pub behavior: ChaCha8Rng,
    pub rewards: ChaCha8Rng,
}

impl SimStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        SimStreams {
            context: stream(0),
            arms: stream(1),
            behavior: stream(2),
            rewards: stream(3),
        }
    }
}

/// Stream offset where Monte Carlo block streams start, clear of the four
/// logging streams.
const MC_STREAM_BASE: u64 = 16;
/// Contexts per Monte Carlo block; fixed so parallel scheduling cannot
/// change the result.
const MC_BLOCK: usize = 4096;

pub fn sample_context(env: &BanditEnvironment, rng: &mut SimStreams) -> ContextDraw {
    // Dirichlet(1,...,1) as normalized unit exponentials.
    let mut x_c: Vec<f64> = (0..env.d).map(|_| Exp1.sample(&mut rng.context)).collect();
    let total: f64 = x_c.iter().sum();
    for v in &mut x_c {
        *v /= total;
    }
    let x_arms: Vec<Vec<f64>> = (0..env.k)
        .map(|_| (0..env.d).map(|_| StandardNormal.sample(&mut rng.arms)).collect())
        .collect();
    let z = x_arms
        .iter()
        .map(|xa| xa.iter().zip(&x_c).map(|(a, c)| a * c).sum())
        .collect();
    ContextDraw { x_c, x_arms, z }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn true_arm_probs(env: &BanditEnvironment, ctx: &ContextDraw) -> Vec<f64> {
    ctx.z.iter().map(|&z| logistic(env.beta0 + env.beta1 * z)).collect()
}

/// One logged round under the uniform behavior policy.
#[derive(Debug, Clone)]
pub struct RoundLog {
    pub ctx: ContextDraw,
    pub arm: usize,
    pub reward: f64,
    pub behavior_prob: f64,
}

pub fn generate_log(env: &BanditEnvironment, n: usize, rng: &mut SimStreams) -> Vec<RoundLog> {
    assert!(n >= 1);
    (0..n)
        .map(|_| {
            let ctx = sample_context(env, rng);
            let arm = rng.behavior.gen_range(0..env.k);
            let p = logistic(env.beta0 + env.beta1 * ctx.z[arm]);
            let reward = if rng.rewards.gen::<f64>() < p { 1.0 } else { 0.0 };
            RoundLog { ctx, arm, reward, behavior_prob: 1.0 / env.k as f64 }
        })
        .collect()
}

/// A fitted per-arm logistic model r ~ logistic(b0 + b1 z).
#[derive(Debug, Clone)]
pub struct ArmModel {
    pub b0: f64,
    pub b1: f64,
    /// Observed Fisher information at the fit (no ridge).
    pub fisher: [[f64; 2]; 2],
    /// True when the design was degenerate (all z equal) and the slope is
    /// pinned by the ridge.
    pub degenerate: bool,
}

const RIDGE: f64 = 1e-6;

pub fn fit_arm_logistic(pairs: &[(f64, f64)]) -> Result<ArmModel, SimError> {
    if pairs.len() < 2 {
        return Err(SimError::TooFewObservations);
    }
    let degenerate = pairs.windows(2).all(|w| w[0].0 == w[1].0);
    let (mut b0, mut b1) = (0.0_f64, 0.0_f64);
    for _ in 0..100 {
        let (mut g0, mut g1) = (0.0, 0.0);
        let (mut h00, mut h01, mut h11) = (RIDGE, 0.0, RIDGE);
        for &(z, r) in pairs {
            let p = logistic(b0 + b1 * z);
            let e = r - p;
            g0 += e;
            g1 += e * z;
            let w = p * (1.0 - p);
            h00 += w;
            h01 += w * z;
            h11 += w * z * z;
        }
        if (g0 * g0 + g1 * g1).sqrt() < 1e-8 {
            break;
        }
        let det = h00 * h11 - h01 * h01;
        b0 += (h11 * g0 - h01 * g1) / det;
        b1 += (h00 * g1 - h01 * g0) / det;
    }
    let (mut f00, mut f01, mut f11) = (0.0, 0.0, 0.0);
    for &(z, _) in pairs {
        let p = logistic(b0 + b1 * z);
        let w = p * (1.0 - p);
        f00 += w;
        f01 += w * z;
        f11 += w * z * z;
    }
    Ok(ArmModel { b0, b1, fisher: [[f00, f01], [f01, f11]], degenerate })
}

#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub arms: Vec<ArmModel>,
    pub m: f64,
    pub s: f64,
    pub k_prime: usize,
}

/// Upper confidence bound for one arm at score z:
/// logistic(eta + m * s.e.(eta)).
pub fn upper_bound(policy: &LearnedPolicy, z: f64, arm: usize) -> f64 {
    let a = &policy.arms[arm];
    let eta = a.b0 + a.b1 * z;
    let [[f00, f01], [_, f11]] = a.fisher;
    let det = f00 * f11 - f01 * f01;
    // Quadratic form [1, z] F^{-1} [1, z]^T; fall back to the pseudo-inverse
    // of the rank-one/zero information when singular.
    let q = if det.abs() > 1e-12 * (f00 * f11).max(1.0) {
        (f11 - 2.0 * z * f01 + z * z * f00) / det
    } else {
        let trace = f00 + f11;
        if trace <= 0.0 {
            0.0
        } else {
            // Rank-one F = trace * uu^T (u unit eigenvector), whose
            // pseudo-inverse is uu^T / trace; q = ([1,z].u)^2 / trace.
            let (ux, uy) = if f00 >= f11 { (f00, f01) } else { (f01, f11) };
            let norm = (ux * ux + uy * uy).sqrt();
            let dot = (ux + z * uy) / norm;
            dot * dot / trace
        }
    };
    let se = q.max(0.0).sqrt();
    logistic(eta + policy.m * se)
}

pub fn policy_probs(policy: &LearnedPolicy, ctx: &ContextDraw) -> Vec<f64> {
    let k = ctx.z.len();
    assert_eq!(k, policy.arms.len());
    let ubs: Vec<f64> = (0..k).map(|a| upper_bound(policy, ctx.z[a], a)).collect();
    // Keep the K' largest upper bounds; ties at the cut go to lower indices.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| ubs[b].total_cmp(&ubs[a]).then(a.cmp(&b)));
    let keep = policy.k_prime.clamp(1, k);
    let mut weights = vec![0.0; k];
    let mut total = 0.0;
    // Scale by the largest surviving ub before exponentiating: the ratio
    // form is invariant under normalization and cannot underflow for the
    // argmax even at very large s.
    let ub_max = ubs[order[0]];
    for &a in &order[..keep] {
        let w = if policy.s == 0.0 || ubs[a] == ub_max {
            1.0
        } else if ub_max > 0.0 {
            (ubs[a] / ub_max).powf(policy.s)
        } else {
            0.0
        };
        weights[a] = w;
        total += w;
    }
    if total <= 0.0 {
        for &a in &order[..keep] {
            weights[a] = 1.0 / keep as f64;
        }
        return weights;
    }
    for w in &mut weights {
        *w /= total;
    }
    weights
}

pub fn learn_policy(
    log: &[RoundLog],
    m: f64,
    s: f64,
    k_prime: usize,
) -> Result<LearnedPolicy, SimError> {
    let k = log.first().map_or(0, |r| r.ctx.z.len());
    let mut per_arm: Vec<Vec<(f64, f64)>> = vec![Vec::new(); k];
    for round in log {
        per_arm[round.arm].push((round.ctx.z[round.arm], round.reward));
    }
    let mut arms = Vec::with_capacity(k);
    for (a, pairs) in per_arm.iter().enumerate() {
        if pairs.len() < 2 {
            return Err(SimError::InsufficientArmData(a));
        }
        arms.push(fit_arm_logistic(pairs)?);
    }
    Ok(LearnedPolicy { arms, m, s, k_prime: k_prime.clamp(1, k.max(1)) })
}

/// A target policy under evaluation.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Uniform over all arms (the behavior policy itself).
    Uniform,
    /// Always the arm with the highest true success probability; ties to the
    /// lowest index.
    Oracle,
    Learned(LearnedPolicy),
}

pub fn oracle_policy() -> Policy {
    Policy::Oracle
}

impl Policy {
    pub fn probs(&self, env: &BanditEnvironment, ctx: &ContextDraw) -> Vec<f64> {
        match self {
            Policy::Uniform => vec![1.0 / env.k as f64; env.k],
            Policy::Oracle => {
                let p = true_arm_probs(env, ctx);
                let best = p
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap();
                let mut out = vec![0.0; env.k];
                out[best] = 1.0;
                out
            }
            Policy::Learned(lp) => policy_probs(lp, ctx),
        }
    }
}

/// Monte Carlo estimate of a policy's true value: the expectation over fresh
/// contexts of sum_a pi(a) p_a.
pub fn mc_true_value(policy: &Policy, env: &BanditEnvironment, n: usize, seed: u64) -> f64 {
    assert!(n >= 1);
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(MC_BLOCK)
        .enumerate()
        .map(|(b, start)| (b, (n - start).min(MC_BLOCK)))
        .collect();
    let partials: Vec<f64> = blocks
        .par_iter()
        .map(|&(b, count)| {
            let mut streams = SimStreams::new(seed);
            let set = |r: &mut ChaCha8Rng, s: u64| r.set_stream(MC_STREAM_BASE + 4 * b as u64 + s);
            set(&mut streams.context, 0);
            set(&mut streams.arms, 1);
            set(&mut streams.behavior, 2);
            set(&mut streams.rewards, 3);
            let mut acc = 0.0;
            for _ in 0..count {
                let ctx = sample_context(env, &mut streams);
                let pi = policy.probs(env, &ctx);
                let p = true_arm_probs(env, &ctx);
                acc += pi.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>();
            }
            acc
        })
        .collect();
    partials.iter().sum::<f64>() / n as f64
}

/// Table-style policy recipes: training-log size and (m, s, K').
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Recipe {
    Baseline,
    New,
}

impl Recipe {
    pub fn train_size(self) -> usize {
        match self {
            Recipe::Baseline => 256,
            Recipe::New => 1024,
        }
    }

    pub fn hyperparameters(self) -> (f64, f64, usize) {
        match self {
            Recipe::Baseline => (1.0, 2.0, 3),
            Recipe::New => (1.0, 1.0, 1),
        }
    }

    pub fn learn(self, env: &BanditEnvironment, seed: u64) -> Result<LearnedPolicy, SimError> {
        let mut streams = SimStreams::new(seed);
        let log = generate_log(env, self.train_size(), &mut streams);
        let (m, s, kp) = self.hyperparameters();
        learn_policy(&log, m, s, kp)
    }
}

/// Importance-weighted dataset for a list of target policies: weight for
/// policy j is pi_j(a | x) / (1/K), with declared bounds [0, K].
pub fn build_logged_dataset(
    log: &[RoundLog],
    policies: &[Policy],
    env: &BanditEnvironment,
) -> Result<LoggedDataset, DataError> {
    let mut rows = Vec::with_capacity(log.len());
    let mut rewards = Vec::with_capacity(log.len());
    for round in log {
        let mut w = Vec::with_capacity(policies.len());
        for pol in policies {
            let probs = pol.probs(env, &round.ctx);
            w.push(probs[round.arm] / round.behavior_prob);
        }
        rows.push(w);
        rewards.push(round.reward);
    }
    let bounds = vec![(0.0, env.k as f64); policies.len()];
    build_dataset(&rows, &rewards, BoxSupport::new(bounds)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_is_simplex_with_right_moments() {
        let env = BanditEnvironment::default();
        let mut rng = SimStreams::new(7);
        let mut mean = vec![0.0; env.d];
        let n = 20_000;
        for _ in 0..n {
            let ctx = sample_context(&env, &mut rng);
            let total: f64 = ctx.x_c.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(ctx.x_c.iter().all(|&v| v >= 0.0));
            for (m, v) in mean.iter_mut().zip(&ctx.x_c) {
                *m += v / n as f64;
            }
        }
        for m in &mean {
            assert!((m - 1.0 / 12.0).abs() < 0.004, "marginal mean {m}");
        }
    }

    #[test]
    fn arm_features_standard_normal() {
        let env = BanditEnvironment::new(2, 3, 0.0, 3.0);
        let mut rng = SimStreams::new(11);
        let (mut sum, mut sumsq, mut count) = (0.0, 0.0, 0usize);
        for _ in 0..20_000 {
            let ctx = sample_context(&env, &mut rng);
            for xa in &ctx.x_arms {
                for &v in xa {
                    sum += v;
                    sumsq += v * v;
                    count += 1;
                }
            }
        }
        let mean = sum / count as f64;
        let var = sumsq / count as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn true_probs_logistic_values() {
        let env = BanditEnvironment::default();
        let ctx = ContextDraw { x_c: vec![1.0], x_arms: vec![vec![0.0]], z: vec![0.0, 1.0] };
        let p = true_arm_probs(&env, &ctx);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.952574).abs() < 1e-6);
        let flat = BanditEnvironment::new(10, 12, 0.3, 0.0);
        let p = true_arm_probs(&flat, &ctx);
        assert!((p[0] - logistic(0.3)).abs() < 1e-12);
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn log_is_deterministic_and_balanced() {
        let env = BanditEnvironment::default();
        let n = 10_000;
        let log1 = generate_log(&env, n, &mut SimStreams::new(3));
        let log2 = generate_log(&env, n, &mut SimStreams::new(3));
        let mut counts = vec![0usize; env.k];
        for (a, b) in log1.iter().zip(&log2) {
            assert_eq!(a.arm, b.arm);
            assert_eq!(a.reward, b.reward);
            assert!(a.reward == 0.0 || a.reward == 1.0);
            counts[a.arm] += 1;
        }
        let expect = n as f64 / env.k as f64;
        let slack = 3.0 * (n as f64 * 0.1 * 0.9).sqrt();
        for &c in &counts {
            assert!((c as f64 - expect).abs() <= slack, "count {c}");
        }
    }

    #[test]
    fn intercept_only_fit() {
        let pairs: Vec<(f64, f64)> =
            (0..400).map(|i| (0.0, if i % 4 == 0 { 1.0 } else { 0.0 })).collect();
        let m = fit_arm_logistic(&pairs).unwrap();
        assert!(m.degenerate);
        assert!(m.b1.abs() < 1e-6, "b1 {}", m.b1);
        let logit_quarter = (0.25f64 / 0.75).ln();
        assert!((m.b0 - logit_quarter).abs() < 1e-3, "b0 {}", m.b0);
    }

    #[test]
    fn separated_fit_stays_finite() {
        let pairs: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let z = (i as f64 - 19.5) / 10.0;
                (z, if z > 0.0 { 1.0 } else { 0.0 })
            })
            .collect();
        let m = fit_arm_logistic(&pairs).unwrap();
        assert!(m.b0.is_finite() && m.b1.is_finite());
    }

    #[test]
    fn logistic_fit_recovers_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<(f64, f64)> = (0..10_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let p = logistic(3.0 * z);
                (z, if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
            })
            .collect();
        let m = fit_arm_logistic(&pairs).unwrap();
        assert!(m.b0.abs() < 0.15, "b0 {}", m.b0);
        assert!((m.b1 - 3.0).abs() < 0.15, "b1 {}", m.b1);
    }

    fn identity_fisher_policy(m: f64, s: f64, k_prime: usize, coefs: &[(f64, f64)]) -> LearnedPolicy {
        LearnedPolicy {
            arms: coefs
                .iter()
                .map(|&(b0, b1)| ArmModel {
                    b0,
                    b1,
                    fisher: [[1.0, 0.0], [0.0, 1.0]],
                    degenerate: false,
                })
                .collect(),
            m,
            s,
            k_prime,
        }
    }

    #[test]
    fn upper_bound_values() {
        let p = identity_fisher_policy(1.0, 1.0, 2, &[(0.0, 3.0), (0.0, 3.0)]);
        assert!((upper_bound(&p, 0.0, 0) - logistic(1.0)).abs() < 1e-9);
        let p0 = identity_fisher_policy(0.0, 1.0, 2, &[(0.2, 1.0), (0.2, 1.0)]);
        assert!((upper_bound(&p0, 0.5, 0) - logistic(0.7)).abs() < 1e-12);
        let phuge = identity_fisher_policy(1e4, 1.0, 2, &[(0.0, 0.0), (0.0, 0.0)]);
        assert!(upper_bound(&phuge, 0.0, 0) > 1.0 - 1e-9);
    }

    #[test]
    fn policy_probs_cases() {
        let env = BanditEnvironment::new(2, 3, 0.0, 3.0);
        let ctx = ContextDraw { x_c: vec![1.0, 0.0, 0.0], x_arms: vec![], z: vec![0.3, -0.4] };
        // s = 0, K' = K: uniform.
        let p = identity_fisher_policy(1.0, 0.0, 2, &[(0.0, 1.0), (0.0, 1.0)]);
        let probs = policy_probs(&p, &ctx);
        assert!((probs[0] - 0.5).abs() < 1e-12 && (probs[1] - 0.5).abs() < 1e-12);
        // Near-deterministic s.
        let sharp = identity_fisher_policy(0.0, 1e6, 2, &[(0.0, 1.0), (0.0, 1.0)]);
        let probs = policy_probs(&sharp, &ctx);
        assert!(probs[0] > 1.0 - 1e-9);
        // K' = 1 zeroes the weaker arm.
        let top1 = identity_fisher_policy(0.0, 1.0, 1, &[(0.0, 1.0), (0.0, 1.0)]);
        let probs = policy_probs(&top1, &ctx);
        assert_eq!(probs[1], 0.0);
        assert_eq!(probs[0], 1.0);
        let total: f64 = policy_probs(&p, &ctx).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let _ = env;
    }

    #[test]
    fn learn_policy_requires_arm_coverage() {
        let env = BanditEnvironment::default();
        let mut log = generate_log(&env, 200, &mut SimStreams::new(9));
        for round in &mut log {
            if round.arm == 4 {
                round.arm = 5; // starve arm 4
            }
        }
        match learn_policy(&log, 1.0, 2.0, 3) {
            Err(SimError::InsufficientArmData(4)) => {}
            other => panic!("expected InsufficientArmData(4), got {other:?}"),
        }
    }

    #[test]
    fn mc_value_uniform_flat_env() {
        let env = BanditEnvironment::new(10, 12, 0.0, 0.0);
        let v = mc_true_value(&Policy::Uniform, &env, 10_000, 21);
        assert!((v - 0.5).abs() < 0.02, "value {v}");
        // Identical reruns are bit-exact.
        assert_eq!(v, mc_true_value(&Policy::Uniform, &env, 10_000, 21));
    }

    #[test]
    fn oracle_beats_uniform() {
        let env = BanditEnvironment::default();
        let vo = mc_true_value(&Policy::Oracle, &env, 20_000, 33);
        let vu = mc_true_value(&Policy::Uniform, &env, 20_000, 33);
        assert!(vo > vu + 0.1, "oracle {vo} uniform {vu}");
    }

    #[test]
    fn uniform_target_gives_unit_weights() {
        let env = BanditEnvironment::default();
        let log = generate_log(&env, 50, &mut SimStreams::new(2));
        let ds = build_logged_dataset(&log, &[Policy::Uniform], &env).unwrap();
        for s in ds.samples() {
            assert!((s.weights[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_bounded_and_mean_near_one() {
        let env = BanditEnvironment::default();
        let policy = Recipe::Baseline.learn(&env, 77).unwrap();
        let log = generate_log(&env, 20_000, &mut SimStreams::new(78));
        let ds = build_logged_dataset(&log, &[Policy::Learned(policy)], &env).unwrap();
        let mut mean = 0.0;
        for s in ds.samples() {
            assert!((0.0..=10.0).contains(&s.weights[0]));
            mean += s.weights[0] / ds.len() as f64;
        }
        assert!((mean - 1.0).abs() < 0.05, "mean weight {mean}");
    }
}
