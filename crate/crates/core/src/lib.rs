//! Crossing-count distributions for Markov branching processes.
//!
//! A Markov branching process is a continuous-time chain on the nonnegative
//! integers in which each particle, independently and at rate `-b1`, is
//! replaced by `j` particles with probability `b_j / -b1` (`j != 1`). This
//! crate computes the distribution of *crossing counts*: how many events of
//! each tracked offspring size `k` (deaths for `k = 0`, `(k-1)`-range up
//! crossings for `k >= 2`) have occurred by time `t`, jointly with the
//! population size if desired.
//!
//! The main routes, which deliberately overlap so they can check each other:
//!
//! * [`engine`] — integrates the exactly-closed truncated coefficient ODE
//!   systems for the marginal and joint distributions, and the scalar
//!   generating-function flow.
//! * [`roots`] — minimal nonnegative roots of the (marked) branching
//!   generator and the Taylor expansion of the marked root, which is the
//!   extinction-conditioned crossing distribution up to normalization.
//! * [`closed_form`] — analytic formulas for the binary birth-death and
//!   cubic offspring laws, used as high-precision oracles.
//! * [`sim`] — exact stochastic simulation of the augmented chain with
//!   reproducible parallel Monte Carlo aggregation.
//! * [`validate`] — uniformization of the truncated augmented chain,
//!   total-variation distance, and z-score reports.

pub mod closed_form;
pub(crate) mod dense;
pub mod engine;
pub mod law;
pub(crate) mod quad;
pub mod rng;
pub mod roots;
pub mod sim;
pub mod validate;

pub use law::{CoeffTable, CrossingSet, LawError, MultiIndex, OffspringLaw, TableForm, Truncation};
