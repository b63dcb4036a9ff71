//! Acceptance suite: one test per criterion, each printing a single
//! `[PASS]`/`[FAIL]` line. Run with `cargo test --test acceptance -- --nocapture`.

mod common;

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{conforming_envelope, random_distribution, random_sample, sup_cdf_gap};
use cvarbound::bounds::{
    dominated_cdf, lower_case, tight_lower, uniform_lower, uniform_upper, upper_case, LowerCase, SupportBounds,
    UniformEnvelope, UpperCase,
};
use cvarbound::estimation::{
    certified_trials, cvar_deviation_trials, epsilon_trials, g_trials, h_trials, is_valid_step_cdf,
    n_delta_for_certify_tight, n_delta_for_certify_uniform, n_delta_for_epsilon, n_delta_for_g, n_delta_for_h,
    BinGrid, BoundKind, CertifiedStudy, ProposalQ0,
};
use cvarbound::pomdp::{enumerate_return_distribution, enumerate_trajectory_expectations, linspace, Model};
use cvarbound::report::{build_report, to_json, Cli};
use cvarbound::risk::{cvar_estimate_inf, cvar_estimate_sorted, cvar_exact};
use cvarbound::scenarios::{builtin, ScenarioSpec, BUILTIN_NAMES};
use cvarbound::value::{q_exact, ExactAnalysis};
use cvarbound::{ConfidenceLevel, DiscreteDistribution, EmpiricalSample};

const ALPHAS: [f64; 5] = [0.05, 0.1, 0.25, 0.5, 0.9];

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    println!("[{}] criterion {id:02} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id:02} {name} failed: {detail}");
}

fn level(a: f64) -> ConfidenceLevel {
    ConfidenceLevel::new(a).unwrap()
}

fn exact_setup(s: &ScenarioSpec) -> (ProposalQ0, f64) {
    let p = &s.problem;
    let q0 = ProposalQ0::build(&p.pair, &p.policy, &s.default_query.belief, None, Default::default()).unwrap();
    let eps = enumerate_trajectory_expectations(&p.pair, &p.policy, &s.default_query.belief, None, &[], Default::default())
        .unwrap()
        .epsilon;
    (q0, eps)
}

#[test]
fn criterion_01_estimator_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=200);
        let sample = EmpiricalSample::new(random_sample(&mut rng, n)).unwrap();
        for a in ALPHAS {
            let d = (cvar_estimate_sorted(&sample, level(a)) - cvar_estimate_inf(&sample, level(a))).abs();
            worst = worst.max(d);
        }
    }
    verdict(1, "sorted_vs_inf_form", worst <= 1e-9, format!("max |difference| = {worst:.3e} over 1000 samples"));
}

#[test]
fn criterion_02_exact_cvar_is_coherent() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut translation, mut homogeneity, mut monotone) = (0usize, 0usize, 0usize);
    for _ in 0..1000 {
        let x = random_distribution(&mut rng, 12);
        let c = rng.random_range(-5.0..5.0);
        let lambda = rng.random_range(0.1..10.0);
        let shifts: Vec<f64> = (0..x.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let y = DiscreteDistribution::normalized(x.atoms().iter().zip(&shifts).map(|(&(v, p), s)| (v + s, p))).unwrap();
        for a in ALPHAS {
            let q = cvar_exact(&x, level(a));
            let shifted = cvar_exact(&x.affine(1.0, c).unwrap(), level(a));
            if (shifted - (q + c)).abs() > 1e-9 {
                translation += 1;
            }
            let scaled = cvar_exact(&x.affine(lambda, 0.0).unwrap(), level(a));
            if (scaled - lambda * q).abs() > 1e-9 * (1.0 + lambda * q.abs()) {
                homogeneity += 1;
            }
            if cvar_exact(&y, level(a)) < q - 1e-12 {
                monotone += 1;
            }
        }
    }
    verdict(
        2,
        "cvar_coherence",
        translation + homogeneity + monotone == 0,
        format!("failures: translation {translation}, homogeneity {homogeneity}, dominance {monotone}"),
    );
}

#[test]
fn criterion_03_upper_deviation_rate() {
    let values: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let dist = DiscreteDistribution::uniform(&values).unwrap();
    let rates = cvar_deviation_trials(&dist, 1000, level(0.1), 0.05, 2000, 303).unwrap();
    let upper = rates.iter().find(|r| r.event == "upper").unwrap();
    verdict(
        3,
        "cvar_upper_deviation",
        upper.frequency <= 0.05,
        format!("{} / {} violations (frequency {:.4}, delta 0.05)", upper.violations, upper.trials, upper.frequency),
    );
}

#[test]
fn criterion_04_uniform_sandwich() {
    let alphas = [0.05, 0.1, 0.25, 0.5, 0.75, 0.95];
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let support = SupportBounds::symmetric(1.0).unwrap();
    let mut fired = [0usize; 4];
    let mut failures = 0;
    for _ in 0..1000 {
        let x = random_distribution(&mut rng, 10);
        let other = random_distribution(&mut rng, 10);
        let w = rng.random_range(0.0..1.0_f64).powi(3);
        let y = DiscreteDistribution::normalized(
            x.atoms().iter().map(|&(v, p)| (v, (1.0 - w) * p)).chain(other.atoms().iter().map(|&(v, p)| (v, w * p))),
        )
        .unwrap();
        let eps = sup_cdf_gap(&x, &y);
        let env = UniformEnvelope::new(eps).unwrap();
        for a in alphas {
            let q = cvar_exact(&x, level(a));
            let lo = uniform_lower(&y, level(a), env, support);
            let hi = uniform_upper(&y, level(a), env, support);
            if !(lo <= q + 1e-9 && q <= hi + 1e-9) {
                failures += 1;
            }
            match upper_case(eps, level(a)) {
                UpperCase::ShiftedLevel => fired[0] += 1,
                UpperCase::SupportMax => fired[1] += 1,
            }
            match lower_case(eps, level(a)) {
                LowerCase::ShiftedLevel => fired[2] += 1,
                LowerCase::SupportMin => fired[3] += 1,
            }
        }
    }
    verdict(
        4,
        "uniform_sandwich",
        failures == 0 && fired.iter().all(|&c| c >= 50),
        format!("{failures} violations; case counts upper shifted/max {}/{}, lower shifted/min {}/{}", fired[0], fired[1], fired[2], fired[3]),
    );
}

#[test]
fn criterion_05_dominated_cdf_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut invalid, mut violations) = (0usize, 0usize);
    for _ in 0..1000 {
        let x = random_distribution(&mut rng, 10);
        let y = random_distribution(&mut rng, 10);
        let g = conforming_envelope(&mut rng, &x, &y);
        if !is_valid_step_cdf(&dominated_cdf(&y, &g).unwrap()) {
            invalid += 1;
        }
        for a in ALPHAS {
            if tight_lower(&y, &g, level(a)).unwrap() > cvar_exact(&x, level(a)) + 1e-9 {
                violations += 1;
            }
        }
    }
    verdict(
        5,
        "dominated_cdf",
        invalid == 0 && violations == 0,
        format!("{invalid} invalid CDFs, {violations} bound violations over 1000 triples"),
    );
}

#[test]
fn criterion_06_envelope_dominates_cdf_gap() {
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_cap = f64::NEG_INFINITY;
    for name in BUILTIN_NAMES {
        let s = builtin(name).unwrap();
        let p = &s.problem;
        let b = &s.default_query.belief;
        let rb = p.pair.original().return_bound();
        let grid = linspace(-rb, rb, 200);
        let e = enumerate_trajectory_expectations(&p.pair, &p.policy, b, None, &grid, Default::default()).unwrap();
        let fp = enumerate_return_distribution(&p.pair, &p.policy, b, None, Model::Original, Default::default()).unwrap();
        let fs = enumerate_return_distribution(&p.pair, &p.policy, b, None, Model::Simplified, Default::default()).unwrap();
        for (&l, &g) in grid.iter().zip(&e.g_values) {
            worst_gap = worst_gap.max((fp.cdf(l) - fs.cdf(l)).abs() - g);
            worst_cap = worst_cap.max(g - e.epsilon);
        }
    }
    verdict(
        6,
        "envelope_sandwich",
        worst_gap <= 1e-9 && worst_cap <= 1e-9,
        format!("max(|F_P - F_Ps| - g) = {worst_gap:.3e}, max(g - eps) = {worst_cap:.3e}"),
    );
}

#[test]
fn criterion_07_value_bounds_on_scenarios() {
    let mut failures = Vec::new();
    let (mut saw_max, mut saw_min) = (false, false);
    for name in BUILTIN_NAMES {
        let s = builtin(name).unwrap();
        let p = &s.problem;
        let analysis = ExactAnalysis::new(&p.pair, &p.policy, &s.default_query.belief, None, &[], Default::default()).unwrap();
        for a in ALPHAS {
            let r = analysis.report(level(a), true).unwrap();
            if !r.sandwich_ok {
                failures.push(format!("{name} alpha={a}"));
            }
            if name == "degrade_heavy" {
                saw_max |= r.upper_case == UpperCase::SupportMax;
                saw_min |= r.lower_case == LowerCase::SupportMin;
            }
        }
    }
    verdict(
        7,
        "scenario_value_bounds",
        failures.is_empty() && saw_max && saw_min,
        format!("sandwich failures {failures:?}; degrade_heavy saturated upper {saw_max}, lower {saw_min}"),
    );
}

#[test]
fn criterion_08_epsilon_estimate() {
    let s = builtin("two_state_sensor").unwrap();
    let (q0, eps) = exact_setup(&s);
    let t = s.problem.pair.original().horizon_t();
    let (v, delta) = (0.1, 0.1);
    let n = n_delta_for_epsilon(v, delta, q0.b_bound(), t, 0).unwrap();
    let r = epsilon_trials(&q0, eps, n, v, delta, 500, 808).unwrap();
    verdict(
        8,
        "epsilon_estimate",
        r.frequency <= delta,
        format!("N_delta = {n}, {} / {} trials with |eps_hat - eps| > 2v", r.violations, r.trials),
    );
}

#[test]
fn criterion_09_envelope_estimates() {
    let s = builtin("two_state_sensor").unwrap();
    let p = &s.problem;
    let (q0, _) = exact_setup(&s);
    let pomdp = p.pair.original();
    let (t, rb) = (pomdp.horizon_t(), pomdp.return_bound());
    let (v, delta, bins) = (0.1, 0.1, 10);
    let exact = enumerate_trajectory_expectations(&p.pair, &p.policy, &s.default_query.belief, None, &[], Default::default())
        .unwrap();
    let grid = BinGrid::for_return_range(rb, bins).unwrap();
    let ng = n_delta_for_g(v, delta, q0.b_bound(), t, 0).unwrap();
    let points = linspace(-rb, rb, 9);
    let g_rates = g_trials(&q0, &exact.envelope, &points, ng, v, delta, 300, 909).unwrap();
    let nh = n_delta_for_h(v, delta, q0.b_bound(), t, 0, bins).unwrap();
    let h = h_trials(&q0, &exact.envelope, &grid, nh, v, delta, 300, 910).unwrap();
    let worst_g = g_rates.iter().map(|r| r.frequency).fold(0.0, f64::max);
    let worst_h = h.rates.iter().map(|r| r.frequency).fold(0.0, f64::max);
    verdict(
        9,
        "envelope_estimates",
        worst_g <= delta && worst_h <= delta && h.ordering_failures == 0,
        format!(
            "g: N_delta = {ng}, worst rate {worst_g:.4}; h: N_delta = {nh}, worst rate {worst_h:.4}; ordering failures {}",
            h.ordering_failures
        ),
    );
}

#[test]
fn criterion_10_certified_bounds() {
    let s = builtin("two_state_sensor").unwrap();
    let p = &s.problem;
    let (q0, _) = exact_setup(&s);
    let pomdp = p.pair.original();
    let (t, rb) = (pomdp.horizon_t(), pomdp.return_bound());
    let (v, eta, delta, bins) = (0.05, 0.05, 0.1, 10);
    let study = CertifiedStudy {
        rollouts: 500,
        particles: 64,
        v,
        eta,
        delta,
        n_delta_uniform: n_delta_for_certify_uniform(v, delta, q0.b_bound(), t, 0).unwrap(),
        n_delta_tight: n_delta_for_certify_tight(eta, delta, q0.b_bound(), t, 0, bins).unwrap(),
        grid: BinGrid::for_return_range(rb, bins).unwrap(),
    };
    let mut seen = Vec::new();
    let mut worst = 0.0_f64;
    let mut invalid = 0;
    let mut inapplicable = 0;
    // eps is about 0.48 here: alpha 0.25 exercises L1, alpha 0.75 exercises L2 and U
    for (i, a) in [0.25, 0.75].into_iter().enumerate() {
        let mut q = s.default_query.clone();
        q.alpha = level(a);
        let q_true = q_exact(&p.pair, &p.policy, &q, Model::Original, Default::default()).unwrap();
        let out = certified_trials(&p.pair, &p.policy, &q, q_true, &q0, &study, 300, 1000 + i as u64).unwrap();
        invalid += out.invalid_f_hat;
        inapplicable += out.inapplicable;
        for r in &out.rates {
            worst = worst.max(r.frequency);
            seen.push(format!("{}@{a}: {}/{}", r.event, r.violations, r.trials));
        }
    }
    let kinds = [BoundKind::L1, BoundKind::L2, BoundKind::U, BoundKind::TightLower];
    let all_kinds = kinds.iter().all(|k| seen.iter().any(|s| s.starts_with(&format!("{}@", k.label()))));
    verdict(
        10,
        "certified_bounds",
        worst <= delta && invalid == 0 && all_kinds,
        format!("{}; invalid F_hat {invalid}; inapplicable L1 {inapplicable}", seen.join(", ")),
    );
}

#[test]
fn criterion_11_estimate_monotone_in_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let levels: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
    let mut failures = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=200);
        let sample = EmpiricalSample::new(random_sample(&mut rng, n)).unwrap();
        let values: Vec<f64> = levels.iter().map(|&a| cvar_estimate_sorted(&sample, level(a))).collect();
        if values.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            failures += 1;
        }
    }
    verdict(11, "estimate_monotone_in_alpha", failures == 0, format!("{failures} of 1000 samples not non-increasing"));
}

#[test]
fn criterion_12_certify_is_deterministic() {
    let run = |workers: &str| {
        let cli = Cli::try_parse_from([
            "cvarbound",
            "certify",
            "--scenario",
            "two_state_sensor",
            "--alpha",
            "0.25,0.75",
            "--seed",
            "12",
            "--workers",
            workers,
        ])
        .unwrap();
        to_json(&build_report(&cli.command).unwrap())
    };
    let one = run("1");
    let one_again = run("1");
    let four = run("4");
    verdict(
        12,
        "certify_determinism",
        one == one_again && one == four,
        format!("{} bytes; repeat identical {}, 1 vs 4 workers identical {}", one.len(), one == one_again, one == four),
    );
}
