//! Bounds on `CVaR_a(X)` from a reference variable `Y` and an envelope on the
//! gap between their CDFs.
//!
//! Two envelope shapes are supported:
//!
//! * [`UniformEnvelope`]: `sup |F_X - F_Y| <= eps`, giving the shifted-level
//!   upper/lower bounds of [`uniform_upper`] and [`uniform_lower`].
//! * [`PointwiseEnvelope`]: `F_X(x) <= F_Y(x) + g(x)` with `g` a non-negative,
//!   non-decreasing, right-continuous step function vanishing at `-inf`. The
//!   clipped CDF `min(1, F_Y + g)` is itself a CDF that is first-order
//!   dominated by `X`, so its CVaR lower-bounds `CVaR_a(X)` ([`tight_lower`]).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::risk::{cvar_exact, ConfidenceLevel, DiscreteDistribution, PROB_TOL};

/// Uniform bound `eps` on the sup-distance between two CDFs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformEnvelope {
    epsilon: f64,
}

impl UniformEnvelope {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon >= 0.0 {
            Ok(Self { epsilon })
        } else {
            Err(Error::InvalidEnvelope(format!("epsilon {epsilon} must be finite and non-negative")))
        }
    }

    pub fn epsilon(self) -> f64 {
        self.epsilon
    }
}

/// Bounds on the support of the unknown variable `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportBounds {
    pub inf_img: f64,
    pub sup_img: f64,
}

impl SupportBounds {
    pub fn new(inf_img: f64, sup_img: f64) -> Result<Self> {
        if inf_img.is_finite() && sup_img.is_finite() && inf_img <= sup_img {
            Ok(Self { inf_img, sup_img })
        } else {
            Err(Error::InvalidParameter(format!("support [{inf_img}, {sup_img}] is not a finite interval")))
        }
    }

    /// `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64) -> Result<Self> {
        Self::new(-half_width, half_width)
    }
}

/// Which branch of the uniform upper bound applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperCase {
    /// `eps < alpha`: mixture of the shifted-level CVaR and the support maximum.
    ShiftedLevel,
    /// `eps >= alpha`: the support maximum.
    SupportMax,
}

/// Which branch of the uniform lower bound applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerCase {
    /// `eps + alpha < 1`.
    ShiftedLevel,
    /// `eps + alpha >= 1`: uses the support minimum.
    SupportMin,
}

pub fn upper_case(epsilon: f64, alpha: ConfidenceLevel) -> UpperCase {
    if epsilon < alpha.value() {
        UpperCase::ShiftedLevel
    } else {
        UpperCase::SupportMax
    }
}

pub fn lower_case(epsilon: f64, alpha: ConfidenceLevel) -> LowerCase {
    if epsilon + alpha.value() < 1.0 {
        LowerCase::ShiftedLevel
    } else {
        LowerCase::SupportMin
    }
}

/// Upper bound on `CVaR_a(X)` given `sup |F_X - F_Y| <= eps`.
pub fn uniform_upper(
    dist_y: &DiscreteDistribution,
    alpha: ConfidenceLevel,
    env: UniformEnvelope,
    support: SupportBounds,
) -> f64 {
    let a = alpha.value();
    let eps = env.epsilon();
    if eps == 0.0 {
        return cvar_exact(dist_y, alpha);
    }
    match upper_case(eps, alpha) {
        // (a-eps)/a * CVaR_{a-eps}(Y) == tail(a-eps)/a
        UpperCase::ShiftedLevel => (dist_y.upper_tail_integral(a - eps) + eps * support.sup_img) / a,
        UpperCase::SupportMax => support.sup_img,
    }
}

/// Lower bound on `CVaR_a(X)` given `sup |F_X - F_Y| <= eps`.
///
/// `eps * CVaR_eps(Y)` is taken as its limit 0 at `eps = 0`. For `eps >= 1`
/// every quantile of `X` is only known to exceed `inf_img`, so the bound is
/// `inf_img` (the saturated formula is continuous there).
pub fn uniform_lower(
    dist_y: &DiscreteDistribution,
    alpha: ConfidenceLevel,
    env: UniformEnvelope,
    support: SupportBounds,
) -> f64 {
    let a = alpha.value();
    let eps = env.epsilon();
    if eps == 0.0 {
        return cvar_exact(dist_y, alpha);
    }
    match lower_case(eps, alpha) {
        LowerCase::ShiftedLevel => (dist_y.upper_tail_integral(a + eps) - dist_y.upper_tail_integral(eps)) / a,
        LowerCase::SupportMin if eps >= 1.0 => support.inf_img,
        LowerCase::SupportMin => {
            ((a + eps - 1.0) * support.inf_img + dist_y.mean() - dist_y.upper_tail_integral(eps)) / a
        }
    }
}

/// Right-continuous, non-decreasing, non-negative step function that is zero
/// left of its first breakpoint. The value at breakpoint `x_i` holds on
/// `[x_i, x_{i+1})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointwiseEnvelope {
    breakpoints: Vec<(f64, f64)>,
}

impl PointwiseEnvelope {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(x, v)) in breakpoints.iter().enumerate() {
            if !x.is_finite() || !v.is_finite() {
                return Err(Error::InvalidEnvelope(format!("non-finite breakpoint ({x}, {v})")));
            }
            if v < 0.0 {
                return Err(Error::InvalidEnvelope(format!("negative value {v} at {x}")));
            }
            if i > 0 {
                let (px, pv) = breakpoints[i - 1];
                if x <= px {
                    return Err(Error::InvalidEnvelope(format!("breakpoints not strictly increasing at {x}")));
                }
                if v < pv {
                    return Err(Error::InvalidEnvelope(format!(
                        "values must be non-decreasing: {pv} at {px} then {v} at {x}"
                    )));
                }
            }
        }
        Ok(Self { breakpoints })
    }

    /// The identically-zero envelope.
    pub fn zero() -> Self {
        Self { breakpoints: Vec::new() }
    }

    /// `c * 1{y >= x0}`.
    pub fn step(x0: f64, c: f64) -> Result<Self> {
        Self::new(vec![(x0, c)])
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn eval(&self, y: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&(x, _)| x <= y);
        if idx == 0 {
            0.0
        } else {
            self.breakpoints[idx - 1].1
        }
    }

    /// Value at `+inf`.
    pub fn sup(&self) -> f64 {
        self.breakpoints.last().map_or(0.0, |b| b.1)
    }

    /// `g(y) + c` for `y >= x0`, `g(y)` otherwise.
    pub fn add_constant_from(&self, x0: f64, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidEnvelope(format!("added constant {c} must be non-negative")));
        }
        let mut xs: Vec<f64> = self.breakpoints.iter().map(|b| b.0).collect();
        xs.push(x0);
        xs.sort_by(|a, b| a.total_cmp(b));
        xs.dedup();
        Self::new(
            xs.into_iter()
                .map(|x| (x, self.eval(x) + if x >= x0 { c } else { 0.0 }))
                .collect(),
        )
    }

    /// Pointwise maximum with another envelope.
    pub fn max_with(&self, other: &Self) -> Self {
        let mut xs: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(other.breakpoints.iter())
            .map(|b| b.0)
            .collect();
        xs.sort_by(|a, b| a.total_cmp(b));
        xs.dedup();
        Self {
            breakpoints: xs.into_iter().map(|x| (x, self.eval(x).max(other.eval(x)))).collect(),
        }
    }
}

/// Sorted, de-duplicated union of the atom locations and the breakpoints.
fn merged_grid(dist: &DiscreteDistribution, env: &PointwiseEnvelope) -> Vec<f64> {
    let mut grid: Vec<f64> = dist
        .atoms()
        .iter()
        .map(|a| a.0)
        .chain(env.breakpoints().iter().map(|b| b.0))
        .collect();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    grid
}

/// Running CDF values of `dist` at an ascending grid.
fn cdf_on_grid(dist: &DiscreteDistribution, grid: &[f64]) -> Vec<f64> {
    let atoms = dist.atoms();
    let mut j = 0;
    let mut acc = 0.0;
    grid.iter()
        .map(|&y| {
            while j < atoms.len() && atoms[j].0 <= y {
                acc += atoms[j].1;
                j += 1;
            }
            acc
        })
        .collect()
}

/// The distribution whose CDF is `min(1, F_Y + g)`.
pub fn dominated_cdf(dist_y: &DiscreteDistribution, env: &PointwiseEnvelope) -> Result<DiscreteDistribution> {
    if env.sup() == 0.0 {
        return Ok(dist_y.clone());
    }
    let grid = merged_grid(dist_y, env);
    let cdf = cdf_on_grid(dist_y, &grid);
    let mut prev = 0.0;
    let mut atoms = Vec::with_capacity(grid.len());
    for (&y, &f) in grid.iter().zip(&cdf) {
        let clipped = (f + env.eval(y)).min(1.0);
        let mass = clipped - prev;
        if mass > 0.0 {
            atoms.push((y, mass));
            prev = clipped;
        }
    }
    DiscreteDistribution::new(atoms)
}

/// `CVaR_a` of the dominated CDF `min(1, F_Y + g)`; a lower bound on
/// `CVaR_a(X)` whenever `F_X <= F_Y + g` pointwise.
pub fn tight_lower(dist_y: &DiscreteDistribution, env: &PointwiseEnvelope, alpha: ConfidenceLevel) -> Result<f64> {
    Ok(cvar_exact(&dominated_cdf(dist_y, env)?, alpha))
}

/// Cumulative sum of a non-negative point-mass density `h`, as an envelope:
/// `g(z) = sum_{x_i <= z} h_i`.
pub fn density_envelope_to_g(h: &[(f64, f64)]) -> Result<PointwiseEnvelope> {
    let mut masses: Vec<(f64, f64)> = Vec::with_capacity(h.len());
    for &(x, m) in h {
        if !x.is_finite() || !m.is_finite() || m < 0.0 {
            return Err(Error::InvalidEnvelope(format!("density mass {m} at {x} must be finite and non-negative")));
        }
        if m > 0.0 {
            masses.push((x, m));
        }
    }
    masses.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut breakpoints: Vec<(f64, f64)> = Vec::with_capacity(masses.len());
    let mut acc = 0.0;
    for (x, m) in masses {
        acc += m;
        match breakpoints.last_mut() {
            Some(last) if last.0 == x => last.1 = acc,
            _ => breakpoints.push((x, acc)),
        }
    }
    PointwiseEnvelope::new(breakpoints)
}

/// `(1/a) * integral_{1-a}^{1} inf { z : G(z) >= t } dt` for the step function
/// `G` given by `levels` on the ascending `grid` (constant between grid points,
/// zero to the left). `G` need not be monotone.
fn quantile_integral(grid: &[f64], levels: &[f64], alpha: f64) -> Result<f64> {
    let lo = 1.0 - alpha;
    let mut running = 0.0_f64;
    let mut acc = 0.0;
    for (&z, &level) in grid.iter().zip(levels) {
        let next = running.max(level).min(1.0);
        if next > running {
            // quantile equals z for t in (running, next]
            let overlap = (next.min(1.0) - running.max(lo)).max(0.0);
            acc += z * overlap;
            running = next;
        }
    }
    if running < 1.0 - PROB_TOL {
        return Err(Error::UndefinedBound(format!(
            "shifted CDF never reaches 1 (max {running:.6}); quantiles above that level are empty"
        )));
    }
    if running < 1.0 {
        // rounding residue at the top level
        acc += grid[grid.len() - 1] * (1.0 - running.max(lo));
    }
    Ok(acc / alpha)
}

/// Quantile-scan lower bound using `inf { z : F_Y(z) + g(z) >= t }`.
pub fn raw_quantile_lower(dist_y: &DiscreteDistribution, env: &PointwiseEnvelope, alpha: ConfidenceLevel) -> Result<f64> {
    let grid = merged_grid(dist_y, env);
    let levels: Vec<f64> = cdf_on_grid(dist_y, &grid)
        .into_iter()
        .zip(&grid)
        .map(|(f, &y)| f + env.eval(y))
        .collect();
    quantile_integral(&grid, &levels, alpha.value())
}

/// Quantile-scan upper bound using `inf { z : F_Y(z) - g(z) >= t }`.
///
/// Fails with [`Error::UndefinedBound`] when `F_Y - g` stays below one, since
/// the upper quantiles are then empty sets.
pub fn raw_quantile_upper(dist_y: &DiscreteDistribution, env: &PointwiseEnvelope, alpha: ConfidenceLevel) -> Result<f64> {
    let grid = merged_grid(dist_y, env);
    let levels: Vec<f64> = cdf_on_grid(dist_y, &grid)
        .into_iter()
        .zip(&grid)
        .map(|(f, &y)| f - env.eval(y))
        .collect();
    quantile_integral(&grid, &levels, alpha.value())
}
