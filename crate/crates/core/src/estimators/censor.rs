//! Attrition correction for units that never returned a posttest.
//!
//! Units that drop out between assignment and measurement are not missing
//! at random in general, so completers are reweighted by the inverse of
//! their estimated completion probability: a unit that looked 80% likely to
//! return stands in for 1.25 units like it. The completion model is a
//! ridge-regularized logistic regression on pretreatment covariates and arm
//! indicators (either block can be switched off); weights are clipped to
//! `[1, 50]` so a degenerate fit cannot blow up the estimates. When nothing
//! is censored the weights are exactly one and no model is fit.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::model::Dataset;

/// Configuration for the completion-probability model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorConfig {
    /// Include pretreatment covariates (and stratum features) as inputs.
    pub include_features: bool,
    /// Include arm indicators as inputs.
    pub include_arm: bool,
    /// Ridge penalty on all coefficients except the intercept.
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for CensorConfig {
    fn default() -> Self {
        CensorConfig {
            include_features: true,
            include_arm: true,
            ridge: 1e-4,
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

/// Clip bounds for completer weights `1 / p_hat`.
pub const CENSOR_CLIP: (f64, f64) = (1.0, 50.0);

/// Clip a raw inverse-probability weight to the documented bounds.
pub fn clip_censor_weight(raw: f64) -> f64 {
    raw.clamp(CENSOR_CLIP.0, CENSOR_CLIP.1)
}

/// Estimate completion weights for every unit of a dataset.
///
/// Returns one entry per dataset unit: `Some(c_i)` with
/// `c_i = clip(1 / p_hat_i)` for completers, `None` for censored units
/// (they are dropped from scoring, not reweighted). With no censored units
/// every weight is exactly 1.
pub fn censoring_weights(
    dataset: &Dataset,
    config: &CensorConfig,
) -> Result<Vec<Option<f64>>, EstimatorError> {
    let n = dataset.units.len();
    if n == 0 {
        return Err(EstimatorError::NoCompletedUnits);
    }
    let completed: Vec<bool> = dataset.units.iter().map(|u| u.outcome.completed()).collect();
    let n_complete = completed.iter().filter(|&&c| c).count();
    if n_complete == 0 {
        return Err(EstimatorError::CensorFit("all units censored".into()));
    }
    if n_complete == n {
        return Ok(vec![Some(1.0); n]);
    }

    let k = dataset.n_arms();
    let design: Vec<Vec<f64>> = dataset
        .units
        .iter()
        .map(|unit| {
            let mut row = vec![1.0];
            if config.include_features {
                row.extend_from_slice(&unit.context.features);
            }
            if config.include_arm {
                // Arm dummies, level 0 as reference.
                for w in 1..k {
                    row.push(if unit.arm == w { 1.0 } else { 0.0 });
                }
            }
            row
        })
        .collect();
    let labels: Vec<f64> = completed.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
    let beta = fit_logistic(&design, &labels, config)?;

    let weights = dataset
        .units
        .iter()
        .zip(&design)
        .zip(&completed)
        .map(|((_, row), &is_complete)| {
            if !is_complete {
                return None;
            }
            let eta: f64 = row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
            let p = sigmoid(eta);
            Some(clip_censor_weight(1.0 / p.max(f64::MIN_POSITIVE)))
        })
        .collect();
    Ok(weights)
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Ridge-penalized logistic regression via iteratively reweighted least
/// squares. The intercept is unpenalized.
fn fit_logistic(
    design: &[Vec<f64>],
    labels: &[f64],
    config: &CensorConfig,
) -> Result<DVector<f64>, EstimatorError> {
    let n = design.len();
    let d = design[0].len();
    if !(config.ridge.is_finite() && config.ridge >= 0.0) {
        return Err(EstimatorError::CensorFit(format!("bad ridge penalty {}", config.ridge)));
    }
    let mut beta = DVector::<f64>::zeros(d);
    for _ in 0..config.max_iter.max(1) {
        let mut hessian = DMatrix::<f64>::zeros(d, d);
        let mut gradient = DVector::<f64>::zeros(d);
        for i in 0..n {
            let row = &design[i];
            let eta: f64 = row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
            let p = sigmoid(eta);
            let weight = (p * (1.0 - p)).max(1e-10);
            let resid = labels[i] - p;
            for a in 0..d {
                gradient[a] += row[a] * resid;
                for b in 0..d {
                    hessian[(a, b)] += weight * row[a] * row[b];
                }
            }
        }
        for a in 1..d {
            hessian[(a, a)] += config.ridge;
            gradient[a] -= config.ridge * beta[a];
        }
        // Tiny intercept jitter keeps the system invertible when p saturates.
        hessian[(0, 0)] += 1e-10;
        let step = Cholesky::new(hessian)
            .map(|c| c.solve(&gradient))
            .ok_or_else(|| EstimatorError::CensorFit("singular IRLS system".into()))?;
        let shift = step.amax();
        beta += &step;
        if !beta.iter().all(|b| b.is_finite()) {
            return Err(EstimatorError::CensorFit("diverged".into()));
        }
        if shift < config.tol {
            break;
        }
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArmSpace, CovariateContext, DatasetUnit, OutcomeRecord, Posttest};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn unit(id: usize, arm: usize, features: Vec<f64>, complete: bool) -> DatasetUnit {
        DatasetUnit {
            unit_id: format!("u{id}"),
            batch: 0,
            arm,
            propensities: vec![0.5, 0.5],
            context: CovariateContext {
                features,
                pretest_false_stratum: 0,
                pretest_true_stratum: 0,
            },
            outcome: OutcomeRecord {
                m_pre: 0,
                t_pre: 0,
                channel_pre: None,
                posttest: complete.then_some(Posttest { m_post: 1, t_post: 1, channel: None }),
            },
        }
    }

    fn dataset(units: Vec<DatasetUnit>, n_features: usize) -> Dataset {
        Dataset {
            arm_space: ArmSpace::Flat { labels: vec!["a".into(), "b".into()] },
            n_features,
            units,
        }
    }

    #[test]
    fn no_censoring_gives_exact_ones() {
        let units: Vec<DatasetUnit> =
            (0..10).map(|i| unit(i, i % 2, vec![i as f64], true)).collect();
        let weights = censoring_weights(&dataset(units, 1), &CensorConfig::default()).unwrap();
        assert!(weights.iter().all(|w| *w == Some(1.0)));
    }

    #[test]
    fn intercept_only_model_recovers_the_completion_rate() {
        // 90% completion independent of covariates: c = 1 / 0.9.
        let units: Vec<DatasetUnit> =
            (0..200).map(|i| unit(i, i % 2, vec![], i % 10 != 0)).collect();
        let config = CensorConfig {
            include_features: false,
            include_arm: false,
            ..CensorConfig::default()
        };
        let weights = censoring_weights(&dataset(units, 0), &config).unwrap();
        for (i, w) in weights.iter().enumerate() {
            if i % 10 == 0 {
                assert!(w.is_none());
            } else {
                close(w.unwrap(), 1.0 / 0.9, 1e-3);
            }
        }
    }

    #[test]
    fn extreme_probabilities_clip_at_fifty() {
        close(clip_censor_weight(1.0 / 0.01), 50.0, 0.0);
        close(clip_censor_weight(0.5), 1.0, 0.0); // p_hat > 1 impossible; clip anyway
        close(clip_censor_weight(2.5), 2.5, 0.0);
    }

    #[test]
    fn covariate_dependent_attrition_is_tracked() {
        // Completion depends on x: x = 1 completes 95%, x = 0 completes 60%.
        let mut units = Vec::new();
        let mut id = 0;
        for &(x, rate, count) in &[(1.0, 0.95, 200usize), (0.0, 0.60, 200)] {
            for i in 0..count {
                let complete = (i as f64 + 0.5) / count as f64 <= rate;
                units.push(unit(id, id % 2, vec![x], complete));
                id += 1;
            }
        }
        let weights = censoring_weights(&dataset(units, 1), &CensorConfig::default()).unwrap();
        // Spot-check group means of the completer weights.
        let mean_of = |x: f64| {
            let vals: Vec<f64> = weights
                .iter()
                .enumerate()
                .filter_map(|(i, w)| {
                    let group = if i < 200 { 1.0 } else { 0.0 };
                    if group == x { *w } else { None }
                })
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        close(mean_of(1.0), 1.0 / 0.95, 0.02);
        close(mean_of(0.0), 1.0 / 0.60, 0.05);
    }

    #[test]
    fn all_censored_is_an_error() {
        let units: Vec<DatasetUnit> = (0..5).map(|i| unit(i, 0, vec![], false)).collect();
        let err = censoring_weights(&dataset(units, 0), &CensorConfig::default()).unwrap_err();
        assert!(matches!(err, EstimatorError::CensorFit(_)));
    }
}
