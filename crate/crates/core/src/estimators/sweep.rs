//! Sensitivity of treatment contrasts to the outcome weighting.
//!
//! The scalar response mixes penalties for sharing false headlines with
//! credits for sharing true ones; the mix is a judgment call. This module
//! re-runs the full scoring pipeline — response recomputation, conditional
//! means, doubly robust scores, contrasts against a reference arm — at each
//! point of a grid of response weightings, reporting the contrast
//! t-statistic as a function of `ln(-w_false / w_true)`. The default
//! weighting (-1, 0.5) sits at abscissa `ln 2 ≈ 0.693`; equal weights sit
//! at 0.

use serde::{Deserialize, Serialize};

use super::censor::{censoring_weights, CensorConfig};
use super::mu::{fit_conditional_means, MuMethod, MuMode};
use super::{aipw_scores, contrast, EstimatorError, WeightScheme};
use crate::model::{Dataset, OutcomeMeasure, ResponseWeights};
use crate::stats::Estimate;

/// Estimation pipeline settings held fixed across the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Arm every other arm is contrasted against.
    pub reference_arm: usize,
    pub method: MuMethod,
    pub mode: MuMode,
    pub scheme: WeightScheme,
    /// Fit attrition weights when censored units are present.
    pub censor: Option<CensorConfig>,
}

/// One treatment-versus-reference contrast at one grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepContrast {
    pub arm: usize,
    pub estimate: Estimate,
}

/// All contrasts at one response-weighting grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub weights: ResponseWeights,
    /// `ln(-w_false / w_true)`: 0 means parity, larger means false-sharing
    /// weighs more.
    pub abscissa: f64,
    pub contrasts: Vec<SweepContrast>,
}

/// Recompute discernment responses and contrasts for each weighting in the
/// grid. Estimates at the default weighting are bit-identical to running
/// the pipeline directly: nothing in the pipeline is sweep-specific.
pub fn weight_sweep(
    dataset: &Dataset,
    grid: &[ResponseWeights],
    config: &SweepConfig,
) -> Result<Vec<SweepPoint>, EstimatorError> {
    let k = dataset.n_arms();
    if config.reference_arm >= k {
        return Err(EstimatorError::ArmOutOfRange { arm: config.reference_arm, n_arms: k });
    }
    let censor_column = match &config.censor {
        Some(censor_config) => Some(censoring_weights(dataset, censor_config)?),
        None => None,
    };
    let mut points = Vec::with_capacity(grid.len());
    for weights in grid {
        weights.validate().map_err(EstimatorError::Model)?;
        let measure = OutcomeMeasure::Discernment(weights.clone());
        let mu = fit_conditional_means(dataset, &measure, &config.method, &config.mode)?;
        let mut table =
            aipw_scores(dataset, &measure, &mu)?.with_adaptive_weights(config.scheme);
        if let Some(column) = &censor_column {
            // Project to completers, which is the score-table row set.
            let completed = dataset.completed_indices();
            table.censor = Some(
                completed
                    .iter()
                    .map(|&i| column[i].expect("completed unit has a censor weight"))
                    .collect(),
            );
        }
        let mut contrasts = Vec::with_capacity(k.saturating_sub(1));
        for arm in (0..k).filter(|&w| w != config.reference_arm) {
            contrasts.push(SweepContrast {
                arm,
                estimate: contrast(&table, arm, config.reference_arm, None)?,
            });
        }
        points.push(SweepPoint {
            weights: weights.clone(),
            abscissa: weights.log_ratio(),
            contrasts,
        });
    }
    Ok(points)
}
