//! Targeted assignment policies: learning, application, and evaluation.
//!
//! A policy is a deterministic total map from a covariate context to an
//! arm. Two learners are provided:
//!
//! - [`learn_greedy_policy`]: assign each context the arm with the highest
//!   predicted response among a configured arm subset (the oriented "best
//!   arm for you" rule; ties go to the lowest arm index).
//! - [`learn_restricted_policy`]: choose between exactly two arms by the
//!   sign of an estimated conditional treatment effect, fit by regressing
//!   per-unit doubly robust score differences on covariates.
//!
//! Because policies are evaluated on data collected under a *different*
//! assignment rule, [`evaluate_policy`] reuses the scoring machinery: the
//! value of a policy is the weighted mean of each unit's score at the arm
//! the policy would have chosen. A constant policy therefore reproduces
//! [`mean_response`](crate::estimators::mean_response) through the same
//! code path, exactly.
//!
//! [`rate`] quantifies how much targeting could help at all: it ranks
//! units by a priority score and traces how the treatment effect of the
//! top slice decays as the slice widens.

pub mod rate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::mu::{fit_scalar_regressor, MuMethod, MuMode, MuPredictor};
use crate::estimators::{aipw_scores, mu::fit_conditional_means, EstimatorError, ScoreTable};
use crate::model::{CovariateContext, Dataset, ModelError, OutcomeMeasure};
use crate::stats::{combine_ratio_means, Estimate, RatioTerm, StatsError};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("estimator: {0}")]
    Estimator(#[from] EstimatorError),
    #[error("stats: {0}")]
    Stats(#[from] StatsError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("arm subset is empty")]
    EmptySubset,
    #[error("arm {arm} out of range for {n_arms} arms")]
    ArmOutOfRange { arm: usize, n_arms: usize },
    #[error("restricted policy needs two distinct arms, got {0} twice")]
    IdenticalArms(usize),
    #[error("arm {arm} has no completed observations in the learning data")]
    NoSupport { arm: usize },
    #[error("context has {got} features, policy expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("unit {unit_id}: policy chose arm {arm} which had zero propensity")]
    NoOverlap { unit_id: String, arm: usize },
    #[error("assignment vectors have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("table context missing fingerprint {0:#x} and no default arm set")]
    MissingTableEntry(u64),
    #[error("toc/rate: {0}")]
    Rate(String),
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Deterministic total map from context to arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// Everyone gets `arm`.
    Constant { arm: usize },
    /// Explicit lookup by context fingerprint, with a fallback arm for
    /// unseen contexts.
    Table {
        assignments: BTreeMap<u64, usize>,
        default_arm: usize,
    },
    /// Best predicted response among `arm_subset` under an embedded
    /// conditional-mean model — the largest prediction when
    /// `higher_is_better`, the smallest otherwise; ties go to the lowest
    /// arm index.
    Greedy {
        predictor: MuPredictor,
        arm_subset: Vec<usize>,
        higher_is_better: bool,
    },
    /// Two-arm rule driven by the sign of an estimated effect
    /// `tau(x) ~ value(arm_hi) - value(arm_lo)`; `higher_is_better`
    /// orients the comparison, and `tau = 0` picks `pair.0`.
    Restricted {
        pair: (usize, usize),
        cate: MuPredictor,
        higher_is_better: bool,
    },
}

impl Policy {
    /// Number of covariate features the policy expects (None = any).
    fn expected_features(&self) -> Option<usize> {
        match self {
            Policy::Constant { .. } | Policy::Table { .. } => None,
            Policy::Greedy { predictor, .. } => Some(predictor.n_features),
            Policy::Restricted { cate, .. } => Some(cate.n_features),
        }
    }

    /// Arm chosen for one context.
    pub fn assign(&self, context: &CovariateContext) -> Result<usize, PolicyError> {
        if let Some(expected) = self.expected_features() {
            if context.features.len() != expected {
                return Err(PolicyError::SchemaMismatch {
                    expected,
                    got: context.features.len(),
                });
            }
        }
        Ok(match self {
            Policy::Constant { arm } => *arm,
            Policy::Table { assignments, default_arm } => *assignments
                .get(&context.fingerprint())
                .unwrap_or(default_arm),
            Policy::Greedy { predictor, arm_subset, higher_is_better } => {
                let sign = if *higher_is_better { 1.0 } else { -1.0 };
                let preds: Vec<f64> = arm_subset
                    .iter()
                    .map(|&w| sign * predictor.predict(&context.features, w))
                    .collect();
                arm_subset[argmax_first(&preds)]
            }
            Policy::Restricted { pair, cate, higher_is_better } => {
                let tau = cate.predict(&context.features, 0);
                restricted_choice(tau, *pair, *higher_is_better)
            }
        })
    }
}

/// First index attaining the maximum (ties to the lowest index).
fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Arm picked by a restricted policy given the estimated effect of
/// `pair.0` relative to `pair.1`. An exactly-zero effect picks `pair.0`
/// regardless of orientation.
pub fn restricted_choice(tau: f64, pair: (usize, usize), higher_is_better: bool) -> usize {
    let prefer_first = if higher_is_better { tau >= 0.0 } else { tau <= 0.0 };
    if prefer_first {
        pair.0
    } else {
        pair.1
    }
}

// ---------------------------------------------------------------------------
// Learning
// ---------------------------------------------------------------------------

/// Greedy policy from a fitted conditional-mean model: pick the
/// highest-predicted arm in `arm_subset`, orienting predictions so that
/// "higher" always means "better" under `measure`.
pub fn learn_greedy_policy(
    predictor: MuPredictor,
    arm_subset: &[usize],
    measure: &OutcomeMeasure,
) -> Result<Policy, PolicyError> {
    if arm_subset.is_empty() {
        return Err(PolicyError::EmptySubset);
    }
    for &arm in arm_subset {
        if arm >= predictor.n_arms {
            return Err(PolicyError::ArmOutOfRange { arm, n_arms: predictor.n_arms });
        }
    }
    let mut subset = arm_subset.to_vec();
    subset.sort_unstable();
    subset.dedup();
    Ok(Policy::Greedy {
        predictor,
        arm_subset: subset,
        higher_is_better: measure.higher_is_better(),
    })
}

/// Settings for restricted-policy learning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestrictedConfig {
    /// Regressor for the effect model (default ridge).
    pub cate_method: MuMethod,
    /// Conditional-mean settings for the underlying scores.
    pub mu_method: MuMethod,
    pub mu_mode: MuMode,
}

impl Default for RestrictedConfig {
    fn default() -> Self {
        RestrictedConfig {
            cate_method: MuMethod::Ridge { lambda: 1.0 },
            mu_method: MuMethod::Ridge { lambda: 1.0 },
            mu_mode: MuMode::Historical,
        }
    }
}

/// Learn a two-arm rule from learning-stage data: build doubly robust
/// scores, regress the per-unit difference
/// `gamma_i(pair.0) - gamma_i(pair.1)` on covariates, and assign `pair.0`
/// wherever the fitted difference points the right way under `measure`'s
/// orientation (ties to `pair.0`).
pub fn learn_restricted_policy(
    dataset: &Dataset,
    pair: (usize, usize),
    measure: &OutcomeMeasure,
    config: &RestrictedConfig,
) -> Result<Policy, PolicyError> {
    let k = dataset.n_arms();
    if pair.0 == pair.1 {
        return Err(PolicyError::IdenticalArms(pair.0));
    }
    for arm in [pair.0, pair.1] {
        if arm >= k {
            return Err(PolicyError::ArmOutOfRange { arm, n_arms: k });
        }
    }
    let completed = dataset.completed_indices();
    for arm in [pair.0, pair.1] {
        if !completed.iter().any(|&i| dataset.units[i].arm == arm) {
            return Err(PolicyError::NoSupport { arm });
        }
    }
    let mu = fit_conditional_means(dataset, measure, &config.mu_method, &config.mu_mode)?;
    let table = aipw_scores(dataset, measure, &mu)?;
    let features: Vec<Vec<f64>> = completed
        .iter()
        .map(|&i| dataset.units[i].context.features.clone())
        .collect();
    let deltas: Vec<f64> = table
        .scores
        .iter()
        .map(|row| row[pair.0] - row[pair.1])
        .collect();
    let cate = fit_scalar_regressor(&features, &deltas, &config.cate_method)?;
    Ok(Policy::Restricted { pair, cate, higher_is_better: measure.higher_is_better() })
}

// ---------------------------------------------------------------------------
// Application
// ---------------------------------------------------------------------------

/// Deterministic assignments plus the arm-share table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyApplication {
    pub assignments: Vec<usize>,
    /// Fraction of contexts assigned to each arm (sums to 1).
    pub shares: Vec<f64>,
}

/// Apply a policy to a slice of contexts.
pub fn apply_policy(
    policy: &Policy,
    contexts: &[CovariateContext],
    n_arms: usize,
) -> Result<PolicyApplication, PolicyError> {
    let mut assignments = Vec::with_capacity(contexts.len());
    let mut counts = vec![0usize; n_arms];
    for context in contexts {
        let arm = policy.assign(context)?;
        if arm >= n_arms {
            return Err(PolicyError::ArmOutOfRange { arm, n_arms });
        }
        counts[arm] += 1;
        assignments.push(arm);
    }
    let total = contexts.len().max(1) as f64;
    Ok(PolicyApplication {
        assignments,
        shares: counts.iter().map(|&c| c as f64 / total).collect(),
    })
}

/// Fraction of contexts on which two assignment vectors agree.
pub fn overlap(a: &[usize], b: &[usize]) -> Result<f64, PolicyError> {
    if a.len() != b.len() {
        return Err(PolicyError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if a.is_empty() {
        return Err(PolicyError::Rate("overlap of empty assignments".into()));
    }
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.len() as f64)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn policy_column(
    table: &ScoreTable,
    assignments: &[usize],
    rows: &[usize],
) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    let mut values = Vec::with_capacity(rows.len());
    let mut weights = Vec::with_capacity(rows.len());
    for &i in rows {
        let arm = assignments[i];
        if arm >= table.n_arms {
            return Err(PolicyError::ArmOutOfRange { arm, n_arms: table.n_arms });
        }
        if table.propensities[i][arm] <= 0.0 {
            return Err(PolicyError::NoOverlap {
                unit_id: table.unit_ids[i].clone(),
                arm,
            });
        }
        values.push(table.scores[i][arm]);
        let h = table.adaptive.as_ref().map_or(1.0, |a| a[i][arm]);
        let c = table.censor.as_ref().map_or(1.0, |c| c[i]);
        weights.push(h * c);
    }
    Ok((values, weights))
}

fn evaluation_rows(
    table: &ScoreTable,
    assignments: &[usize],
    subgroup: Option<&[usize]>,
) -> Result<Vec<usize>, PolicyError> {
    if assignments.len() != table.n_units() {
        return Err(PolicyError::LengthMismatch {
            a: assignments.len(),
            b: table.n_units(),
        });
    }
    let rows: Vec<usize> = match subgroup {
        None => (0..table.n_units()).collect(),
        Some(rows) => rows.to_vec(),
    };
    if rows.is_empty() {
        return Err(PolicyError::Estimator(EstimatorError::EmptySubgroup));
    }
    for &r in &rows {
        if r >= table.n_units() {
            return Err(PolicyError::Estimator(EstimatorError::SubgroupOutOfRange {
                index: r,
                n: table.n_units(),
            }));
        }
    }
    Ok(rows)
}

/// Counterfactual value of following `assignments` (one arm per score-table
/// row): the weighted mean of each unit's score at its assigned arm —
/// exactly [`mean_response`](crate::estimators::mean_response) when the
/// assignment is constant.
pub fn evaluate_assignments(
    table: &ScoreTable,
    assignments: &[usize],
    subgroup: Option<&[usize]>,
) -> Result<Estimate, PolicyError> {
    let rows = evaluation_rows(table, assignments, subgroup)?;
    let (values, weights) = policy_column(table, assignments, &rows)?;
    Ok(combine_ratio_means(&[RatioTerm {
        values: &values,
        weights: &weights,
        coefficient: 1.0,
    }])?)
}

/// Counterfactual value of a policy over the score table's units.
///
/// `contexts` must align with the table rows (the completed units, in
/// order). Errors when the policy picks an arm that had zero logged
/// propensity for some unit.
pub fn evaluate_policy(
    policy: &Policy,
    table: &ScoreTable,
    contexts: &[CovariateContext],
    subgroup: Option<&[usize]>,
) -> Result<Estimate, PolicyError> {
    if contexts.len() != table.n_units() {
        return Err(PolicyError::LengthMismatch { a: contexts.len(), b: table.n_units() });
    }
    let application = apply_policy(policy, contexts, table.n_arms)?;
    evaluate_assignments(table, &application.assignments, subgroup)
}

/// Difference in counterfactual value between two assignment vectors on the
/// same units, with the standard error from per-unit score differences.
pub fn assignment_contrast(
    table: &ScoreTable,
    assignments_a: &[usize],
    assignments_b: &[usize],
    subgroup: Option<&[usize]>,
) -> Result<Estimate, PolicyError> {
    let rows_a = evaluation_rows(table, assignments_a, subgroup)?;
    let rows_b = evaluation_rows(table, assignments_b, subgroup)?;
    debug_assert_eq!(rows_a, rows_b);
    let (va, wa) = policy_column(table, assignments_a, &rows_a)?;
    let (vb, wb) = policy_column(table, assignments_b, &rows_b)?;
    Ok(combine_ratio_means(&[
        RatioTerm { values: &va, weights: &wa, coefficient: 1.0 },
        RatioTerm { values: &vb, weights: &wb, coefficient: -1.0 },
    ])?)
}

// ---------------------------------------------------------------------------
// On-policy tracking
// ---------------------------------------------------------------------------

/// Per-batch agreement between realized assignments and a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchShare {
    pub batch: usize,
    pub n_units: usize,
    pub share: f64,
}

/// For each batch of a learning log: the fraction of units whose realized
/// respondent-level arm matches the policy's choice. Headline levels are
/// ignored — a factorial arm is reduced to its respondent level on both
/// sides — so a respondent-level policy can be tracked through a factorial
/// log. Uses every assigned unit, censored or not.
pub fn on_policy_share(
    dataset: &Dataset,
    policy: &Policy,
) -> Result<Vec<BatchShare>, PolicyError> {
    let space = &dataset.arm_space;
    let respondent_level = |arm: usize| -> Result<usize, PolicyError> {
        match space {
            crate::model::ArmSpace::Factorial { .. } => Ok(space.cell(arm)?.respondent_level),
            crate::model::ArmSpace::Flat { .. } => Ok(arm),
        }
    };
    let mut per_batch: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for unit in &dataset.units {
        let chosen = policy.assign(&unit.context)?;
        let realized_level = respondent_level(unit.arm)?;
        let chosen_level = respondent_level(chosen)?;
        let entry = per_batch.entry(unit.batch).or_insert((0, 0));
        entry.0 += 1;
        if realized_level == chosen_level {
            entry.1 += 1;
        }
    }
    Ok(per_batch
        .into_iter()
        .map(|(batch, (n_units, matches))| BatchShare {
            batch,
            n_units,
            share: matches as f64 / n_units as f64,
        })
        .collect())
}
