//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use cvarbound::bounds::PointwiseEnvelope;
use cvarbound::DiscreteDistribution;
use rand::Rng;

/// Values in `[-1, 1]`; about a third are snapped to a coarse grid so ties occur.
pub fn random_sample<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-1.0..=1.0);
            if rng.random_bool(0.3) {
                (x * 4.0).round() / 4.0
            } else {
                x
            }
        })
        .collect()
}

/// Random distribution on `[-1, 1]` with at most `max_atoms` atoms.
pub fn random_distribution<R: Rng>(rng: &mut R, max_atoms: usize) -> DiscreteDistribution {
    let n = rng.random_range(1..=max_atoms);
    let values = random_sample(rng, n);
    DiscreteDistribution::normalized(values.into_iter().map(|v| (v, rng.random_range(0.01..1.0)))).unwrap()
}

/// Sorted union of the atom locations.
pub fn union_support(x: &DiscreteDistribution, y: &DiscreteDistribution) -> Vec<f64> {
    let mut pts: Vec<f64> = x.atoms().iter().chain(y.atoms()).map(|a| a.0).collect();
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    pts
}

/// `sup_l |F_X(l) - F_Y(l)|`, attained at an atom of either distribution.
pub fn sup_cdf_gap(x: &DiscreteDistribution, y: &DiscreteDistribution) -> f64 {
    union_support(x, y)
        .into_iter()
        .map(|l| (x.cdf(l) - y.cdf(l)).abs())
        .fold(0.0, f64::max)
}

/// A non-decreasing envelope with `|F_X - F_Y| <= g` everywhere: the running
/// maximum of the gap plus random non-negative slack.
pub fn conforming_envelope<R: Rng>(rng: &mut R, x: &DiscreteDistribution, y: &DiscreteDistribution) -> PointwiseEnvelope {
    let mut running = 0.0_f64;
    let mut slack = 0.0;
    let breakpoints = union_support(x, y)
        .into_iter()
        .map(|l| {
            running = running.max((x.cdf(l) - y.cdf(l)).abs());
            if rng.random_bool(0.3) {
                slack += rng.random_range(0.0..0.1);
            }
            (l, running + slack)
        })
        .collect();
    PointwiseEnvelope::new(breakpoints).unwrap()
}
