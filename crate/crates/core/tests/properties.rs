//! Property tests checked against independent oracles.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{conforming_envelope, random_distribution, sup_cdf_gap, union_support};
use cvarbound::bounds::{dominated_cdf, tight_lower, uniform_lower, uniform_upper, SupportBounds, UniformEnvelope};
use cvarbound::estimation::{
    estimate_delta, inverse_transform, multinomial_counts, stream_rng, DeltaEstimator, ProposalQ0,
};
use cvarbound::pomdp::{
    enumerate_return_distribution, enumerate_trajectory_expectations, expected_return, linspace, FinitePomdp, Model,
    Policy, SimplifiedPair, SuccessorUpdate,
};
use cvarbound::problem::Problem;
use cvarbound::risk::{cvar_estimate_from_counts, cvar_estimate_sorted, cvar_exact, var_exact};
use cvarbound::scenarios::random_instance;
use cvarbound::value::ExactAnalysis;
use cvarbound::{ConfidenceLevel, DiscreteDistribution, EmpiricalSample};

/// `min_t { t + E[(X - t)^+] / alpha }`; the minimum sits at an atom.
fn cvar_oracle(d: &DiscreteDistribution, alpha: f64) -> f64 {
    d.atoms()
        .iter()
        .map(|&(t, _)| t + d.atoms().iter().map(|&(x, p)| p * (x - t).max(0.0)).sum::<f64>() / alpha)
        .fold(f64::INFINITY, f64::min)
}

fn dist_strategy() -> impl Strategy<Value = DiscreteDistribution> {
    prop::collection::vec((-10.0..10.0_f64, 0.01..1.0_f64), 1..15)
        .prop_map(|atoms| DiscreteDistribution::normalized(atoms).unwrap())
}

fn alpha_strategy() -> impl Strategy<Value = f64> {
    0.01..0.99_f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exact_cvar_matches_inf_form(d in dist_strategy(), a in alpha_strategy()) {
        let q = cvar_exact(&d, ConfidenceLevel::new(a).unwrap());
        prop_assert!((q - cvar_oracle(&d, a)).abs() <= 1e-9 * (1.0 + q.abs()));
        prop_assert!(var_exact(&d, ConfidenceLevel::new(a).unwrap()) <= q + 1e-9);
        prop_assert!(q <= d.max() + 1e-12 && q >= d.mean() - 1e-9);
    }

    #[test]
    fn sorted_estimator_is_cvar_of_empirical(xs in prop::collection::vec(-5.0..5.0_f64, 1..80), a in alpha_strategy()) {
        let level = ConfidenceLevel::new(a).unwrap();
        let est = cvar_estimate_sorted(&EmpiricalSample::new(xs.clone()).unwrap(), level);
        let emp = DiscreteDistribution::normalized(xs.iter().map(|&x| (x, 1.0))).unwrap();
        prop_assert!((est - cvar_oracle(&emp, a)).abs() <= 1e-9);
    }

    #[test]
    fn counts_estimator_matches_expansion(counts in prop::collection::vec(0u64..6, 1..10), a in alpha_strategy()) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let values: Vec<f64> = (0..counts.len()).map(|i| i as f64 * 0.7 - 2.0).collect();
        let expanded: Vec<f64> = values.iter().zip(&counts).flat_map(|(&v, &c)| std::iter::repeat_n(v, c as usize)).collect();
        let level = ConfidenceLevel::new(a).unwrap();
        let direct = cvar_estimate_sorted(&EmpiricalSample::new(expanded).unwrap(), level);
        prop_assert!((cvar_estimate_from_counts(&values, &counts, level).unwrap() - direct).abs() <= 1e-9);
    }

    #[test]
    fn uniform_bounds_sandwich_random_pairs(seed in any::<u64>(), a in alpha_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_distribution(&mut rng, 8);
        let y = random_distribution(&mut rng, 8);
        let env = UniformEnvelope::new(sup_cdf_gap(&x, &y)).unwrap();
        let level = ConfidenceLevel::new(a).unwrap();
        let q = cvar_exact(&x, level);
        let s = SupportBounds::symmetric(1.0).unwrap();
        prop_assert!(uniform_lower(&y, level, env, s) <= q + 1e-9);
        prop_assert!(q <= uniform_upper(&y, level, env, s) + 1e-9);
    }

    #[test]
    fn dominated_cdf_matches_pointwise_formula(seed in any::<u64>(), a in alpha_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_distribution(&mut rng, 8);
        let y = random_distribution(&mut rng, 8);
        let g = conforming_envelope(&mut rng, &x, &y);
        let d = dominated_cdf(&y, &g).unwrap();
        for l in union_support(&x, &y) {
            prop_assert!((d.cdf(l) - (y.cdf(l) + g.eval(l)).min(1.0)).abs() <= 1e-9);
            prop_assert!(d.cdf(l) >= x.cdf(l) - 1e-9);
        }
        let level = ConfidenceLevel::new(a).unwrap();
        prop_assert!(tight_lower(&y, &g, level).unwrap() <= cvar_exact(&x, level) + 1e-9);
    }

    #[test]
    fn inverse_transform_is_generalized_inverse(d in dist_strategy(), u in 0.0001..1.0_f64) {
        let x = inverse_transform(&d, u);
        prop_assert!(d.cdf(x) >= u - 1e-12);
        let below = d.atoms().iter().map(|p| p.0).filter(|&v| v < x).fold(f64::NEG_INFINITY, f64::max);
        if below.is_finite() {
            prop_assert!(d.cdf(below) < u + 1e-12);
        }
    }

    #[test]
    fn multinomial_counts_sum_to_n(probs in prop::collection::vec(0.0..1.0_f64, 1..12), n in 0u64..100_000, seed in any::<u64>()) {
        let total: f64 = probs.iter().sum();
        prop_assume!(total > 0.0);
        let p: Vec<f64> = probs.iter().map(|x| x / total).collect();
        let counts = multinomial_counts(&p, n, &mut stream_rng(seed, 0, 0));
        prop_assert_eq!(counts.iter().sum::<u64>(), n);
        for (c, q) in counts.iter().zip(&p) {
            prop_assert!(*q > 0.0 || *c == 0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_instances_satisfy_exact_invariants(seed in any::<u64>(), gap in 1usize..4, pert in 0.0..0.5_f64) {
        let s = random_instance(seed, 3, 2, 2, gap, pert).unwrap();
        let p = &s.problem;
        let b = &s.default_query.belief;
        let d = enumerate_return_distribution(&p.pair, &p.policy, b, None, Model::Original, Default::default()).unwrap();
        let total: f64 = d.atoms().iter().map(|a| a.1).sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        let mean = expected_return(&p.pair, &p.policy, b, None, Model::Original).unwrap();
        prop_assert!((d.mean() - mean).abs() <= 1e-9);
        let rb = p.pair.original().return_bound();
        prop_assert!(d.min() >= -rb - 1e-9 && d.max() <= rb + 1e-9);

        let analysis = ExactAnalysis::new(&p.pair, &p.policy, b, None, &[], Default::default()).unwrap();
        for (&l, &g) in analysis.grid.iter().zip(&analysis.expectations.g_values) {
            let gap_l = (analysis.dist_original.cdf(l) - analysis.dist_simplified.cdf(l)).abs();
            prop_assert!(gap_l <= g + 1e-9);
        }
        for a in [0.05, 0.25, 0.5, 0.9] {
            prop_assert!(analysis.report(ConfidenceLevel::new(a).unwrap(), true).unwrap().sandwich_ok);
        }
    }

    #[test]
    fn problem_files_round_trip(seed in any::<u64>(), pert in 0.0..1.0_f64) {
        let s = random_instance(seed, 3, 2, 3, 2, pert).unwrap();
        let text = s.problem.to_json();
        let back = Problem::from_json(&text).unwrap();
        prop_assert_eq!(&back, &s.problem);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn exact_delta_estimate_is_unbiased_in_the_limit(seed in any::<u64>()) {
        let s = random_instance(seed, 3, 2, 2, 3, 0.3).unwrap();
        let p = &s.problem;
        let b = &s.default_query.belief;
        let q0 = ProposalQ0::build(&p.pair, &p.policy, b, None, Default::default()).unwrap();
        let eps = enumerate_trajectory_expectations(&p.pair, &p.policy, b, None, &[], Default::default()).unwrap().epsilon;
        let mut rng = stream_rng(seed, 3, 0);
        let est = estimate_delta(&q0, 2_000_000, &mut rng, DeltaEstimator::Exact).unwrap();
        prop_assert!((est.epsilon_hat - eps).abs() <= 0.02 * (1.0 + eps), "{} vs {}", est.epsilon_hat, eps);
        prop_assert!(est.g_hat.sup() <= est.epsilon_hat + 1e-9);
    }
}

#[test]
fn envelope_needs_the_first_transition() {
    // the models differ only in the first transition, so without its term g vanishes
    let o = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let pomdp = FinitePomdp::new(
        vec![vec![vec![1.0, 0.0], vec![1.0, 0.0]]],
        o.clone(),
        vec![vec![0.0], vec![1.0]],
        1.0,
        vec![1.0, 0.0],
        1,
        0,
    )
    .unwrap();
    let policy = Policy::constant(&pomdp, 0).unwrap();
    let pair = SimplifiedPair::new(pomdp, vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]], o, SuccessorUpdate::Shared).unwrap();
    let b = pair.original().initial_belief();
    let grid = linspace(-2.0, 2.0, 41);
    let e = enumerate_trajectory_expectations(&pair, &policy, &b, None, &grid, Default::default()).unwrap();
    let partial = e.without_first_transition().unwrap();
    let fp = enumerate_return_distribution(&pair, &policy, &b, None, Model::Original, Default::default()).unwrap();
    let fs = enumerate_return_distribution(&pair, &policy, &b, None, Model::Simplified, Default::default()).unwrap();
    let gap = |l: f64| (fp.cdf(l) - fs.cdf(l)).abs();
    assert!(grid.iter().all(|&l| gap(l) <= e.envelope.eval(l) + 1e-12));
    assert!(grid.iter().any(|&l| gap(l) > partial.eval(l) + 1e-9));
}
