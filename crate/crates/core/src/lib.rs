//! CVaR value-function bounds for POMDP policies evaluated under a simplified
//! belief-transition model.
//!
//! The crate is layered bottom-up:
//!
//! * [`risk`]: exact CVaR/VaR on discrete distributions, sample estimators and
//!   concentration radii.
//! * [`bounds`]: CVaR bounds from uniform or pointwise CDF envelopes.
//! * [`pomdp`]: tabular POMDPs with an original and a simplified model, exact
//!   belief updates and return-distribution enumeration.
//! * [`value`]: exact value-function bounds built from enumeration.
//! * [`estimation`]: particle rollouts, importance-sampled envelope estimates
//!   and certified bounds.
//! * [`scenarios`]: built-in and random benchmark instances.
//! * [`report`]: the batch driver behind the `cvarbound` binary.

pub mod bounds;
pub mod error;
pub mod estimation;
pub mod pomdp;
pub mod problem;
pub mod report;
pub mod risk;
pub mod scenarios;
pub mod value;

pub use error::{Error, Result};
pub use risk::{ConfidenceLevel, DiscreteDistribution, EmpiricalSample};
