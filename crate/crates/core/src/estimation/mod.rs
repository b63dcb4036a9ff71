//! Monte-Carlo side: particle-belief rollouts, importance-sampled envelope
//! estimates, sample-size requirements and certified bounds.

mod certify;
mod concentration;
mod delta;
mod particle;

pub use certify::*;
pub use concentration::*;
pub use delta::*;
pub use particle::*;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};

/// RNG stream tags; every random component draws from its own stream.
pub mod tags {
    pub const PARTICLES: u64 = 1;
    pub const ROLLOUTS: u64 = 2;
    pub const DELTA: u64 = 3;
    pub const INVERSE: u64 = 4;
    pub const TRIALS: u64 = 5;
    pub const SAMPLES: u64 = 6;
}

/// One round of the splitmix64 mixer.
pub fn splitmix64(z: u64) -> u64 {
    let mut x = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent seed for component `tag` of a run seeded with `seed`.
pub fn seed_for(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Stream `stream` of the generator for `(seed, tag)`. Streams are
/// independent, so per-item generators do not depend on scheduling.
pub fn stream_rng(seed: u64, tag: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(seed, tag));
    rng.set_stream(stream);
    rng
}

/// Multinomial counts of `n` draws over `probs` (which should sum to one),
/// via sequential conditional binomials.
pub fn multinomial_counts<R: rand::Rng>(probs: &[f64], n: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0; probs.len()];
    let mut remaining_n = n;
    let mut remaining_p = 1.0;
    let last = probs.iter().rposition(|&p| p > 0.0);
    for (i, &p) in probs.iter().enumerate() {
        if remaining_n == 0 || p <= 0.0 {
            continue;
        }
        if Some(i) == last {
            counts[i] = remaining_n;
            break;
        }
        let q = (p / remaining_p).clamp(0.0, 1.0);
        let c = Binomial::new(remaining_n, q).expect("probability clamped to [0, 1]").sample(rng);
        counts[i] = c;
        remaining_n -= c;
        remaining_p -= p;
    }
    counts
}

fn check_common(x: f64, what: &str, delta: f64, b: f64, gap: usize) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what} = {x} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta = {delta} must lie in (0, 1)")));
    }
    if !(b >= 1.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("importance bound B = {b} must be at least 1")));
    }
    if gap < 1 {
        return Err(Error::InvalidParameter(
            "the horizon leaves no sampled steps between k+1 and T-1".into(),
        ));
    }
    Ok(())
}

fn ceil_count(x: f64) -> u64 {
    x.ceil().max(1.0) as u64
}

/// Number of sampled steps `T - 1 - k`.
pub fn sampled_steps(horizon_t: usize, start_k: usize) -> usize {
    horizon_t.saturating_sub(start_k + 1)
}

/// Draws needed so that `P(|eps_hat - eps| > 2v) <= delta`.
pub fn n_delta_for_epsilon(v: f64, delta: f64, b: f64, horizon_t: usize, start_k: usize) -> Result<u64> {
    let m = sampled_steps(horizon_t, start_k);
    check_common(v, "v", delta, b, m)?;
    let m = m as f64;
    Ok(ceil_count(-8.0 * b * b * (delta / (4.0 * m)).ln() / (v / m).powi(2)))
}

/// Draws needed so that `P(|g_hat(l) - g(l)| > v) <= delta` at a fixed `l`.
pub fn n_delta_for_g(v: f64, delta: f64, b: f64, horizon_t: usize, start_k: usize) -> Result<u64> {
    let m = sampled_steps(horizon_t, start_k);
    check_common(v, "v", delta, b, m)?;
    let m = m as f64;
    Ok(ceil_count(-((delta / m) / 2.0).ln() * 2.0 * b * b / (v / m).powi(2)))
}

/// Draws needed for the binned envelopes over `bins` bins.
pub fn n_delta_for_h(v: f64, delta: f64, b: f64, horizon_t: usize, start_k: usize, bins: usize) -> Result<u64> {
    let m = sampled_steps(horizon_t, start_k);
    check_common(v, "v", delta, b, m)?;
    if bins == 0 {
        return Err(Error::InvalidParameter("need at least one bin".into()));
    }
    let m = m as f64;
    Ok(ceil_count(
        -(((delta / bins as f64) / m) / 2.0).ln() * 2.0 * b * b / (v / m).powi(2),
    ))
}

/// Draws required by the uniform certified bounds.
pub fn n_delta_for_certify_uniform(v: f64, delta: f64, b: f64, horizon_t: usize, start_k: usize) -> Result<u64> {
    check_common(v, "v", delta, b, sampled_steps(horizon_t, start_k))?;
    let gap = (horizon_t - start_k) as f64;
    Ok(ceil_count(-8.0 * b * b * ((delta / 2.0) / (4.0 * gap)).ln() / (v / gap).powi(2)))
}

/// Draws required by the certified tight lower bound.
pub fn n_delta_for_certify_tight(
    eta: f64,
    delta: f64,
    b: f64,
    horizon_t: usize,
    start_k: usize,
    bins: usize,
) -> Result<u64> {
    n_delta_for_h(eta, delta / 4.0, b, horizon_t, start_k, bins)
}
