//! Adaptive-experimentation engine.
//!
//! The crate covers the full lifecycle of a batched adaptive experiment:
//!
//! - [`model`] — outcome and covariate types shared by every other module:
//!   arms, share-count outcomes, response weights, covariate encoding, and
//!   the on-disk dataset format.
//! - [`bandit`] — balanced linear Thompson sampling: a Bayesian linear
//!   outcome model over arm/covariate interactions, posterior-probability
//!   assignment with floors, and categorical draws.
//! - [`experiment`] — batch lifecycle around the bandit: assignment,
//!   outcome ingestion, scheduled posterior refits, an append-only event
//!   log, and dataset export.
//! - [`estimators`] — post-experiment inference from adaptively collected
//!   data: conditional-mean models, doubly robust scores, adaptive and
//!   censoring weights, interaction contrasts, and response-weight sweeps.
//! - [`policy`] — targeted assignment policies: greedy and restricted
//!   two-arm rules, off-policy evaluation, and rank-weighted targeting
//!   diagnostics.
//! - [`sim`] — synthetic populations with oracle ground truth, end-to-end
//!   simulated runs, regret reports, and coverage experiments.
//!
//! Everything is deterministic given the seeds in the relevant configs:
//! repeated runs produce byte-identical exports.

pub mod bandit;
pub mod estimators;
pub mod experiment;
pub mod model;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod stats;

pub use stats::Estimate;
