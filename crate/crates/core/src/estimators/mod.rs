//! Post-experiment inference from adaptively collected data.
//!
//! Data logged by a bandit are not an i.i.d. sample: assignment
//! probabilities drifted as the posterior learned, so naive arm means are
//! biased and their usual standard errors are wrong. This module builds
//! doubly robust per-unit scores and turns them into estimates:
//!
//! 1. [`mu::fit_conditional_means`] fits out-of-sample predictions
//!    `mu_hat_i(w)` of each unit's response under every arm (ridge by
//!    default; k-NN and an honest tree ensemble are pluggable), never using
//!    a unit's own outcome for its own prediction.
//! 2. [`aipw_scores`] combines predictions with inverse-propensity
//!    residuals into scores `gamma_i(w)` whose mean is unbiased for the arm
//!    value even under adaptive assignment ([`ipw_scores`] is the
//!    no-model special case).
//! 3. [`mean_response`], [`contrast`], [`interaction_contrasts`], and
//!    [`uniform_counterfactual_value`] average those scores with optional
//!    variance-stabilizing weights ([`adaptive_weights`]) and
//!    attrition-correcting weights ([`censor::censoring_weights`]), all
//!    through one shared Hajek-ratio kernel so algebraic identities between
//!    estimators hold exactly.
//!
//! [`sweep::weight_sweep`] re-runs the scoring pipeline over a grid of
//! response weightings to show how conclusions move with the outcome
//! definition.

pub mod censor;
pub mod mu;
pub mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ArmSpace, Dataset, ModelError, OutcomeMeasure};
use crate::stats::{combine_ratio_means, Estimate, RatioTerm, StatsError};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("stats: {0}")]
    Stats(#[from] StatsError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("unit {unit_id}: zero propensity on realized arm {arm}")]
    ZeroPropensity { unit_id: String, arm: usize },
    #[error("no completed units to score")]
    NoCompletedUnits,
    #[error("subgroup is empty")]
    EmptySubgroup,
    #[error("subgroup index {index} out of range for {n} scored units")]
    SubgroupOutOfRange { index: usize, n: usize },
    #[error("arm {arm} out of range for {n_arms} arms")]
    ArmOutOfRange { arm: usize, n_arms: usize },
    #[error("contrast arms must differ, got {0} twice")]
    IdenticalArms(usize),
    #[error("cross-fitting requires at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("cross-fitting with {folds} folds needs at least {folds} units, got {n}")]
    TooFewUnits { folds: usize, n: usize },
    #[error("batch {batch} has no usable history to fit on")]
    NoHistory { batch: usize },
    #[error("conditional-mean model: {0}")]
    MuFit(String),
    #[error("censoring model: {0}")]
    CensorFit(String),
    #[error("interaction contrasts need a factorial arm space")]
    NotFactorial,
    #[error("mu predictions: expected {expected} units x {arms} arms, got {got}")]
    MuShape { expected: usize, arms: usize, got: usize },
    #[error("non-finite {what} for unit {unit_id}")]
    NonFinite { what: &'static str, unit_id: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Score tables
// ---------------------------------------------------------------------------

/// Weighting scheme for arm-value estimation on bandit data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `h_i(w) = sqrt(e_i(w))`: down-weights units scored at extreme
    /// propensities, stabilizing the variance of the weighted mean.
    StabilizedVariance,
    /// `h ≡ 1`: plain score averaging.
    Uniform,
}

/// Per-unit, per-arm doubly robust scores for the completed units of a
/// dataset, plus the weight columns the estimators consume.
///
/// Row order matches `Dataset::completed_indices()`. `adaptive` and
/// `censor` are optional; estimators treat a missing column as all-ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreTable {
    pub n_arms: usize,
    pub unit_ids: Vec<String>,
    /// Logged assignment propensities, n x K.
    pub propensities: Vec<Vec<f64>>,
    /// Realized arm per unit.
    pub arms: Vec<usize>,
    /// Batch index per unit.
    pub batches: Vec<usize>,
    /// Scores `gamma_i(w)`, n x K.
    pub scores: Vec<Vec<f64>>,
    /// Variance-stabilizing weights `h_i(w)`, n x K.
    pub adaptive: Option<Vec<Vec<f64>>>,
    /// Attrition weights `c_i` (completers only by construction).
    pub censor: Option<Vec<f64>>,
    /// Pretest strata keys `(false_stratum, true_stratum)` for subgrouping.
    pub strata: Vec<(u8, u8)>,
}

impl ScoreTable {
    pub fn n_units(&self) -> usize {
        self.scores.len()
    }

    /// Combined estimation weight for one unit and arm:
    /// `h_i(w) * c_i`, with absent columns read as one.
    fn weight(&self, i: usize, arm: usize) -> f64 {
        let h = self.adaptive.as_ref().map_or(1.0, |a| a[i][arm]);
        let c = self.censor.as_ref().map_or(1.0, |c| c[i]);
        h * c
    }

    /// Attach adaptive weights computed from the logged propensities.
    pub fn with_adaptive_weights(mut self, scheme: WeightScheme) -> Self {
        self.adaptive = Some(adaptive_weights(&self.propensities, scheme));
        self
    }

    /// Row indices whose pretest strata satisfy a predicate.
    pub fn subgroup_where(&self, keep: impl Fn(u8, u8) -> bool) -> Vec<usize> {
        (0..self.n_units())
            .filter(|&i| keep(self.strata[i].0, self.strata[i].1))
            .collect()
    }
}

/// Completed-unit responses for a dataset under an outcome measure.
///
/// Returns `(dataset unit indices, responses)` for units with a posttest.
pub fn completed_responses(
    dataset: &Dataset,
    measure: &OutcomeMeasure,
) -> Result<(Vec<usize>, Vec<f64>), EstimatorError> {
    let indices = dataset.completed_indices();
    let mut responses = Vec::with_capacity(indices.len());
    for &i in &indices {
        responses.push(measure.value(&dataset.units[i].outcome)?);
    }
    Ok((indices, responses))
}

/// Doubly robust scores: `gamma_i(w) = mu_i(w) + 1{W_i = w} / e_i(w) * (Y_i - mu_i(w))`.
///
/// `mu` must hold predictions for the completed units in
/// `completed_indices` order, one row per unit, K entries per row, with a
/// unit's own outcome excluded from its own prediction (see [`mu`]).
pub fn aipw_scores(
    dataset: &Dataset,
    measure: &OutcomeMeasure,
    mu: &mu::MuHat,
) -> Result<ScoreTable, EstimatorError> {
    let (indices, responses) = completed_responses(dataset, measure)?;
    if indices.is_empty() {
        return Err(EstimatorError::NoCompletedUnits);
    }
    let k = dataset.n_arms();
    if mu.fitted.len() != indices.len() {
        return Err(EstimatorError::MuShape {
            expected: indices.len(),
            arms: k,
            got: mu.fitted.len(),
        });
    }
    let n = indices.len();
    let mut table = ScoreTable {
        n_arms: k,
        unit_ids: Vec::with_capacity(n),
        propensities: Vec::with_capacity(n),
        arms: Vec::with_capacity(n),
        batches: Vec::with_capacity(n),
        scores: Vec::with_capacity(n),
        adaptive: None,
        censor: None,
        strata: Vec::with_capacity(n),
    };
    for (row, (&idx, &y)) in indices.iter().zip(&responses).enumerate() {
        let unit = &dataset.units[idx];
        let preds = &mu.fitted[row];
        if preds.len() != k {
            return Err(EstimatorError::MuShape { expected: n, arms: k, got: preds.len() });
        }
        let realized = unit.arm;
        let e = unit.propensities[realized];
        if e <= 0.0 {
            return Err(EstimatorError::ZeroPropensity {
                unit_id: unit.unit_id.clone(),
                arm: realized,
            });
        }
        let mut gamma = Vec::with_capacity(k);
        for (w, &m) in preds.iter().enumerate() {
            if !m.is_finite() {
                return Err(EstimatorError::NonFinite {
                    what: "mu prediction",
                    unit_id: unit.unit_id.clone(),
                });
            }
            let score = if w == realized { m + (y - m) / e } else { m };
            gamma.push(score);
        }
        table.unit_ids.push(unit.unit_id.clone());
        table.propensities.push(unit.propensities.clone());
        table.arms.push(realized);
        table.batches.push(unit.batch);
        table.scores.push(gamma);
        table.strata.push((
            unit.context.pretest_false_stratum,
            unit.context.pretest_true_stratum,
        ));
    }
    Ok(table)
}

/// Inverse-propensity scores: [`aipw_scores`] with `mu ≡ 0`, so
/// `gamma_i(w) = 1{W_i = w} * Y_i / e_i(w)`.
pub fn ipw_scores(
    dataset: &Dataset,
    measure: &OutcomeMeasure,
) -> Result<ScoreTable, EstimatorError> {
    let n = dataset.completed_indices().len();
    let zero = mu::MuHat { fitted: vec![vec![0.0; dataset.n_arms()]; n] };
    aipw_scores(dataset, measure, &zero)
}

/// Per-unit, per-arm estimation weights from logged propensities.
pub fn adaptive_weights(propensities: &[Vec<f64>], scheme: WeightScheme) -> Vec<Vec<f64>> {
    propensities
        .iter()
        .map(|row| {
            row.iter()
                .map(|&e| match scheme {
                    WeightScheme::StabilizedVariance => e.max(0.0).sqrt(),
                    WeightScheme::Uniform => 1.0,
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Estimates from scores
// ---------------------------------------------------------------------------

fn resolve_subgroup(
    table: &ScoreTable,
    subgroup: Option<&[usize]>,
) -> Result<Vec<usize>, EstimatorError> {
    let n = table.n_units();
    match subgroup {
        None => {
            if n == 0 {
                return Err(EstimatorError::NoCompletedUnits);
            }
            Ok((0..n).collect())
        }
        Some(rows) => {
            if rows.is_empty() {
                return Err(EstimatorError::EmptySubgroup);
            }
            for &r in rows {
                if r >= n {
                    return Err(EstimatorError::SubgroupOutOfRange { index: r, n });
                }
            }
            Ok(rows.to_vec())
        }
    }
}

fn check_arm(table: &ScoreTable, arm: usize) -> Result<(), EstimatorError> {
    if arm >= table.n_arms {
        return Err(EstimatorError::ArmOutOfRange { arm, n_arms: table.n_arms });
    }
    Ok(())
}

fn arm_column(table: &ScoreTable, rows: &[usize], arm: usize) -> (Vec<f64>, Vec<f64>) {
    let values: Vec<f64> = rows.iter().map(|&i| table.scores[i][arm]).collect();
    let weights: Vec<f64> = rows.iter().map(|&i| table.weight(i, arm)).collect();
    (values, weights)
}

/// Weighted estimate of one arm's mean response: the Hajek ratio
/// `sum_i h_i(w) c_i gamma_i(w) / sum_i h_i(w) c_i` with a score-variability
/// standard error. Without weight columns this is the plain score mean with
/// `SE = sd / sqrt(n)`.
pub fn mean_response(
    table: &ScoreTable,
    arm: usize,
    subgroup: Option<&[usize]>,
) -> Result<Estimate, EstimatorError> {
    check_arm(table, arm)?;
    let rows = resolve_subgroup(table, subgroup)?;
    let (values, weights) = arm_column(table, &rows, arm);
    Ok(combine_ratio_means(&[RatioTerm {
        values: &values,
        weights: &weights,
        coefficient: 1.0,
    }])?)
}

/// Difference of two arm means on the same units,
/// `mean_response(arm_a) - mean_response(arm_b)`, with the standard error
/// taken from the per-unit combination of both score columns so within-unit
/// correlation is respected.
pub fn contrast(
    table: &ScoreTable,
    arm_a: usize,
    arm_b: usize,
    subgroup: Option<&[usize]>,
) -> Result<Estimate, EstimatorError> {
    check_arm(table, arm_a)?;
    check_arm(table, arm_b)?;
    if arm_a == arm_b {
        return Err(EstimatorError::IdenticalArms(arm_a));
    }
    let rows = resolve_subgroup(table, subgroup)?;
    let (va, wa) = arm_column(table, &rows, arm_a);
    let (vb, wb) = arm_column(table, &rows, arm_b);
    Ok(combine_ratio_means(&[
        RatioTerm { values: &va, weights: &wa, coefficient: 1.0 },
        RatioTerm { values: &vb, weights: &wb, coefficient: -1.0 },
    ])?)
}

/// Value of assigning every unit uniformly at random: the per-unit mean of
/// `gamma_i(w)` across arms, averaged with the per-unit mean of the arm
/// weights (times the censor weight) as Hajek weight.
pub fn uniform_counterfactual_value(
    table: &ScoreTable,
    subgroup: Option<&[usize]>,
) -> Result<Estimate, EstimatorError> {
    let rows = resolve_subgroup(table, subgroup)?;
    let k = table.n_arms as f64;
    let mut values = Vec::with_capacity(rows.len());
    let mut weights = Vec::with_capacity(rows.len());
    for &i in &rows {
        values.push(table.scores[i].iter().sum::<f64>() / k);
        let w: f64 = (0..table.n_arms).map(|arm| table.weight(i, arm)).sum();
        weights.push(w / k);
    }
    Ok(combine_ratio_means(&[RatioTerm {
        values: &values,
        weights: &weights,
        coefficient: 1.0,
    }])?)
}

/// One cell of the factor-interaction report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionCell {
    pub respondent_level: usize,
    pub headline_level: usize,
    pub estimate: Estimate,
}

/// For every factorial cell `(r, c)`: how much the cell's value deviates
/// from the column's average across respondent-factor levels,
/// `Q(r, c) - mean_{r'} Q(r', c)`. Entries in one column sum to zero by
/// construction; with a single respondent level every entry is zero.
pub fn interaction_contrasts(
    table: &ScoreTable,
    arm_space: &ArmSpace,
    subgroup: Option<&[usize]>,
) -> Result<Vec<InteractionCell>, EstimatorError> {
    let (n_rows, n_cols) = match arm_space {
        ArmSpace::Factorial { respondent_levels, headline_levels } => {
            (*respondent_levels, *headline_levels)
        }
        ArmSpace::Flat { .. } => return Err(EstimatorError::NotFactorial),
    };
    if arm_space.n_arms() != table.n_arms {
        return Err(EstimatorError::ArmOutOfRange {
            arm: arm_space.n_arms() - 1,
            n_arms: table.n_arms,
        });
    }
    let rows = resolve_subgroup(table, subgroup)?;
    let mut cells = Vec::with_capacity(n_rows * n_cols);
    for r in 0..n_rows {
        for c in 0..n_cols {
            // Q(r,c) - (1/R) sum_{r'} Q(r',c), sharing units across terms.
            let mut columns: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(n_rows + 1);
            let target = arm_space
                .index_of(crate::model::Arm { respondent_level: r, headline_level: c })
                .map_err(EstimatorError::Model)?;
            let (tv, tw) = arm_column(table, &rows, target);
            columns.push((tv, tw, 1.0));
            let share = -1.0 / n_rows as f64;
            for r_prime in 0..n_rows {
                let arm = arm_space
                    .index_of(crate::model::Arm { respondent_level: r_prime, headline_level: c })
                    .map_err(EstimatorError::Model)?;
                let (v, w) = arm_column(table, &rows, arm);
                columns.push((v, w, share));
            }
            let terms: Vec<RatioTerm<'_>> = columns
                .iter()
                .map(|(v, w, coef)| RatioTerm { values: v, weights: w, coefficient: *coef })
                .collect();
            let estimate = combine_ratio_means(&terms)?;
            cells.push(InteractionCell {
                respondent_level: r,
                headline_level: c,
                estimate,
            });
        }
    }
    Ok(cells)
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

/// Write a score table as CSV: `unit_id, batch, arm, stratum_false,
/// stratum_true, e_0..e_{K-1}, gamma_0..gamma_{K-1}[, h_0..h_{K-1}][, censor]`.
pub fn write_score_table_csv<W: std::io::Write>(
    table: &ScoreTable,
    writer: W,
) -> Result<(), EstimatorError> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    let k = table.n_arms;
    let mut header: Vec<String> =
        ["unit_id", "batch", "arm", "stratum_false", "stratum_true"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    header.extend((0..k).map(|w| format!("e_{w}")));
    header.extend((0..k).map(|w| format!("gamma_{w}")));
    if table.adaptive.is_some() {
        header.extend((0..k).map(|w| format!("h_{w}")));
    }
    if table.censor.is_some() {
        header.push("censor".into());
    }
    csv_writer.write_record(&header)?;
    for i in 0..table.n_units() {
        let mut record: Vec<String> = vec![
            table.unit_ids[i].clone(),
            table.batches[i].to_string(),
            table.arms[i].to_string(),
            table.strata[i].0.to_string(),
            table.strata[i].1.to_string(),
        ];
        record.extend(table.propensities[i].iter().map(|v| format!("{v}")));
        record.extend(table.scores[i].iter().map(|v| format!("{v}")));
        if let Some(adaptive) = &table.adaptive {
            record.extend(adaptive[i].iter().map(|v| format!("{v}")));
        }
        if let Some(censor) = &table.censor {
            record.push(format!("{}", censor[i]));
        }
        csv_writer.write_record(&record)?;
    }
    csv_writer.flush()?;
    Ok(())
}
