//! Cross-cutting property tests: concavity, normalization, nesting,
//! grid-refinement stability, and worker-count determinism.

use el_opeval::experiments::{coverage_run, CoverageConfig};
use el_opeval::posterior::{build_posterior, hpd_interval, prob_diff, prob_region, PriorSpec,
    RegionQuery};
use el_opeval::sim::{build_logged_dataset, generate_log, BanditEnvironment, Policy, Recipe,
    SimStreams};
use el_opeval::subsupport::Mode;
use el_opeval::{log_el_diff, log_el_value, LoggedDataset};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn sim_dataset(policies: usize, n: usize, seed: u64) -> LoggedDataset {
    let env = BanditEnvironment::default();
    let mut pols = vec![Policy::Learned(Recipe::Baseline.learn(&env, seed).unwrap())];
    if policies == 2 {
        pols.push(Policy::Learned(Recipe::New.learn(&env, seed + 1).unwrap()));
    }
    let log = generate_log(&env, n, &mut SimStreams::new(seed + 2));
    build_logged_dataset(&log, &pols, &env).unwrap()
}

#[test]
fn log_el_concave_along_random_segments() {
    let ds = sim_dataset(2, 80, 100);
    let m = el_opeval::mele(&ds).unwrap();
    let anchor = m.point_estimate();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 25 {
        let a: Vec<f64> = anchor
            .iter()
            .map(|&c| c + rng.gen_range(-0.15..0.15))
            .collect();
        let b: Vec<f64> = anchor
            .iter()
            .map(|&c| c + rng.gen_range(-0.15..0.15))
            .collect();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let (fa, fb, fm) = (
            log_el_value(&ds, &a).unwrap(),
            log_el_value(&ds, &b).unwrap(),
            log_el_value(&ds, &mid).unwrap(),
        );
        if fa.is_infeasible() || fb.is_infeasible() {
            continue;
        }
        checked += 1;
        assert!(
            fm.value() >= 0.5 * (fa.value() + fb.value()) - 1e-6,
            "midpoint {} below chord {}",
            fm.value(),
            0.5 * (fa.value() + fb.value())
        );
    }
    // Same property for the scalar difference likelihood.
    let mut checked = 0;
    while checked < 25 {
        let a = rng.gen_range(-0.3..0.3);
        let b = rng.gen_range(-0.3..0.3);
        let (fa, fb, fm) = (
            log_el_diff(&ds, a).unwrap(),
            log_el_diff(&ds, b).unwrap(),
            log_el_diff(&ds, 0.5 * (a + b)).unwrap(),
        );
        if fa.is_infeasible() || fb.is_infeasible() {
            continue;
        }
        checked += 1;
        assert!(fm.value() >= 0.5 * (fa.value() + fb.value()) - 1e-6);
    }
}

#[test]
fn posterior_normalizes_to_one() {
    let ds = sim_dataset(1, 60, 101);
    for prior in [
        PriorSpec::Flat,
        PriorSpec::BetaProduct(vec![(2.0, 3.0)]),
    ] {
        let post = build_posterior(&ds, Mode::Value, &prior, 500).unwrap();
        let total: f64 = post.cell_mass.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "total mass {total}");
    }
}

#[test]
fn hpd_intervals_nest_by_level() {
    let ds = sim_dataset(1, 60, 102);
    let post = build_posterior(&ds, Mode::Value, &PriorSpec::Flat, 800).unwrap();
    let mut previous: Option<(f64, f64)> = None;
    for alpha in [0.01, 0.05, 0.10, 0.25, 0.50] {
        let (lo, hi) = hpd_interval(&post, alpha);
        assert!(lo < hi);
        if let Some((plo, phi)) = previous {
            assert!(
                lo >= plo - 1e-12 && hi <= phi + 1e-12,
                "alpha {alpha}: [{lo}, {hi}] not inside [{plo}, {phi}]"
            );
        }
        previous = Some((lo, hi));
    }
}

#[test]
fn grid_refinement_is_stable() {
    let ds1 = sim_dataset(1, 60, 103);
    let coarse = build_posterior(&ds1, Mode::Value, &PriorSpec::Flat, 600).unwrap();
    let fine = build_posterior(&ds1, Mode::Value, &PriorSpec::Flat, 1200).unwrap();
    let cell = coarse.axes[0].width();
    for alpha in [0.05, 0.10] {
        let (clo, chi) = hpd_interval(&coarse, alpha);
        let (flo, fhi) = hpd_interval(&fine, alpha);
        assert!(
            (clo - flo).abs() < 2.0 * cell && (chi - fhi).abs() < 2.0 * cell,
            "alpha {alpha}: coarse [{clo}, {chi}] fine [{flo}, {fhi}] cell {cell}"
        );
    }

    let ds2 = sim_dataset(2, 60, 103);
    let coarse = build_posterior(&ds2, Mode::Diff, &PriorSpec::Flat, 600).unwrap();
    let fine = build_posterior(&ds2, Mode::Diff, &PriorSpec::Flat, 1200).unwrap();
    let max_cell_mass = coarse.cell_mass.iter().cloned().fold(0.0, f64::max);
    for delta in [0.0, 0.05] {
        let pc = prob_diff(&coarse, delta);
        let pf = prob_diff(&fine, delta);
        assert!(
            (pc - pf).abs() < 2.0 * max_cell_mass,
            "delta {delta}: coarse {pc} fine {pf} cell mass {max_cell_mass}"
        );
    }
}

#[test]
fn joint_region_probabilities_respond_to_margin() {
    let ds = sim_dataset(2, 80, 104);
    let post = build_posterior(&ds, Mode::Value, &PriorSpec::Flat, 110).unwrap();
    let mut last = 1.0;
    for delta in [-0.2, 0.0, 0.2] {
        let p = prob_region(&post, &RegionQuery::Absolute(delta)).unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert!(p <= last + 1e-12, "probability rose with the margin");
        last = p;
    }
}

#[test]
fn results_identical_across_worker_counts() {
    let run_posterior = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let ds = sim_dataset(1, 60, 105);
            let post = build_posterior(&ds, Mode::Value, &PriorSpec::Flat, 700).unwrap();
            post.cell_mass.clone()
        })
    };
    let one = run_posterior(1);
    let four = run_posterior(4);
    assert_eq!(one.len(), four.len());
    for (a, b) in one.iter().zip(&four) {
        assert_eq!(a.to_bits(), b.to_bits(), "posterior differs across worker counts");
    }

    let run_coverage = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let config = CoverageConfig {
                replicates: 8,
                sizes: vec![48],
                grid_points: 150,
                true_value_draws: 20_000,
                ..CoverageConfig::preset_quick(Recipe::Baseline, 9)
            };
            coverage_run(&config).unwrap()
        })
    };
    let one = run_coverage(1);
    let four = run_coverage(4);
    assert_eq!(one.true_value.to_bits(), four.true_value.to_bits());
    for (a, b) in one.cells.iter().zip(&four.cells) {
        assert_eq!(a.coverage.to_bits(), b.coverage.to_bits());
        assert_eq!(a.mean_width.to_bits(), b.mean_width.to_bits());
    }
}
