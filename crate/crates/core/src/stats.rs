//! Shared inference primitives.
//!
//! Every estimate the engine reports — arm means, contrasts, policy values,
//! interaction cells — is a weighted ratio mean (or a linear combination of
//! them) with a standard error taken from the variability of its per-unit
//! influence contributions. Centralizing that arithmetic here keeps the
//! exact formula identical across modules, which several equalities in the
//! test suite rely on (a contrast must equal the difference of the two arm
//! means when the weights agree, a constant policy must reproduce its arm's
//! mean bit for bit, and so on).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty input: at least one observation is required")]
    EmptyInput,
    #[error("weights sum to zero")]
    ZeroWeightSum,
    #[error("negative weight {0} is not allowed")]
    NegativeWeight(f64),
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("length mismatch: values {values} vs weights {weights}")]
    LengthMismatch { values: usize, weights: usize },
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided p-value for a standard normal test statistic.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// A point estimate with its sampling uncertainty.
///
/// `ci_lower`/`ci_upper` are the conventional 95% interval
/// `value ± 1.96 · std_error`; `z` and `p_two_sided` test against zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Number of units the estimate is computed from.
    pub n: usize,
}

impl Estimate {
    /// Assemble the derived fields from a value and standard error.
    ///
    /// A zero standard error yields `z = ±inf, p = 0` for a nonzero value
    /// and `z = 0, p = 1` for an exactly-zero one.
    pub fn from_value_se(value: f64, std_error: f64, n: usize) -> Self {
        let z = if std_error > 0.0 {
            value / std_error
        } else if value == 0.0 {
            0.0
        } else {
            value.signum() * f64::INFINITY
        };
        let p_two_sided = if z.is_infinite() { 0.0 } else { two_sided_p(z) };
        Estimate {
            value,
            std_error,
            z,
            p_two_sided,
            ci_lower: value - 1.96 * std_error,
            ci_upper: value + 1.96 * std_error,
            n,
        }
    }

    /// True when the 95% interval contains `target`.
    pub fn covers(&self, target: f64) -> bool {
        self.ci_lower <= target && target <= self.ci_upper
    }
}

/// One component of a weighted-ratio-mean combination.
///
/// The combination estimates `sum_t coefficient_t * Q_t` where
/// `Q_t = sum_i w_ti v_ti / sum_i w_ti`. All terms must be aligned on the
/// same units, in the same order.
pub struct RatioTerm<'a> {
    pub values: &'a [f64],
    pub weights: &'a [f64],
    pub coefficient: f64,
}

/// Weighted ratio mean of one series: `sum w v / sum w`.
pub fn ratio_mean(values: &[f64], weights: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if values.len() != weights.len() {
        return Err(StatsError::LengthMismatch {
            values: values.len(),
            weights: weights.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&v, &w) in values.iter().zip(weights) {
        if !v.is_finite() {
            return Err(StatsError::NonFinite { what: "value" });
        }
        if !w.is_finite() {
            return Err(StatsError::NonFinite { what: "weight" });
        }
        if w < 0.0 {
            return Err(StatsError::NegativeWeight(w));
        }
        num += w * v;
        den += w;
    }
    if den == 0.0 {
        return Err(StatsError::ZeroWeightSum);
    }
    Ok(num / den)
}

/// Estimate a linear combination of weighted ratio means.
///
/// The variance is the summed squared per-unit influence,
/// `psi_i = sum_t c_t w_ti (v_ti - Q_t) / sum_j w_tj`, scaled by the
/// small-sample factor `n / (n - 1)`. With a single term and unit weights
/// this reduces to the familiar `sd / sqrt(n)`.
pub fn combine_ratio_means(terms: &[RatioTerm<'_>]) -> Result<Estimate, StatsError> {
    let n = terms.first().map_or(0, |t| t.values.len());
    if terms.is_empty() || n == 0 {
        return Err(StatsError::EmptyInput);
    }
    let mut value = 0.0;
    let mut prepared = Vec::with_capacity(terms.len());
    for term in terms {
        if term.values.len() != n || term.weights.len() != n {
            return Err(StatsError::LengthMismatch {
                values: term.values.len(),
                weights: term.weights.len(),
            });
        }
        let mean = ratio_mean(term.values, term.weights)?;
        let weight_sum: f64 = term.weights.iter().sum();
        value += term.coefficient * mean;
        prepared.push((mean, weight_sum));
    }
    let mut sum_sq = 0.0;
    for i in 0..n {
        let mut psi = 0.0;
        for (term, &(mean, weight_sum)) in terms.iter().zip(&prepared) {
            psi += term.coefficient * term.weights[i] * (term.values[i] - mean) / weight_sum;
        }
        sum_sq += psi * psi;
    }
    let std_error = if n >= 2 {
        (sum_sq * n as f64 / (n as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Estimate::from_value_se(value, std_error, n))
}

/// Convenience wrapper: a single weighted ratio mean with its uncertainty.
pub fn ratio_mean_estimate(values: &[f64], weights: &[f64]) -> Result<Estimate, StatsError> {
    combine_ratio_means(&[RatioTerm {
        values,
        weights,
        coefficient: 1.0,
    }])
}

/// Sample mean and `sd / sqrt(n)` standard error.
pub fn sample_mean_estimate(values: &[f64]) -> Result<Estimate, StatsError> {
    let weights = vec![1.0; values.len()];
    ratio_mean_estimate(values, &weights)
}

/// Sample standard deviation (denominator `n - 1`); zero for fewer than two
/// observations.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n as f64 - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn normal_cdf_reference_points() {
        close(normal_cdf(0.0), 0.5, 1e-15);
        close(normal_cdf(1.959963984540054), 0.975, 1e-9);
        close(normal_cdf(-1.0), 0.15865525393145707, 1e-9);
    }

    #[test]
    fn unweighted_mean_matches_sd_over_sqrt_n() {
        let est = sample_mean_estimate(&[1.0, 2.0, 3.0]).unwrap();
        close(est.value, 2.0, 1e-15);
        close(est.std_error, 1.0 / 3.0_f64.sqrt(), 1e-12);
        assert_eq!(est.n, 3);
        close(est.ci_lower, 2.0 - 1.96 / 3.0_f64.sqrt(), 1e-12);
    }

    #[test]
    fn identical_values_have_zero_se() {
        let est = sample_mean_estimate(&[0.7; 5]).unwrap();
        close(est.value, 0.7, 1e-15);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.p_two_sided, 0.0); // nonzero value, zero noise
        assert!(est.z.is_infinite());
    }

    #[test]
    fn zero_value_zero_se_is_null() {
        let est = Estimate::from_value_se(0.0, 0.0, 4);
        assert_eq!(est.z, 0.0);
        assert_eq!(est.p_two_sided, 1.0);
    }

    #[test]
    fn weighted_mean_is_ratio_of_sums() {
        // (2*1 + 1*4) / 3 = 2
        let est = ratio_mean_estimate(&[1.0, 4.0], &[2.0, 1.0]).unwrap();
        close(est.value, 2.0, 1e-15);
    }

    #[test]
    fn difference_of_identical_series_is_exactly_zero() {
        let v = [0.3, -0.1, 0.8, 0.4];
        let w = [1.0, 2.0, 0.5, 1.5];
        let est = combine_ratio_means(&[
            RatioTerm { values: &v, weights: &w, coefficient: 1.0 },
            RatioTerm { values: &v, weights: &w, coefficient: -1.0 },
        ])
        .unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(matches!(
            ratio_mean(&[1.0], &[-0.5]),
            Err(StatsError::NegativeWeight(_))
        ));
        assert!(matches!(
            ratio_mean(&[1.0, 2.0], &[0.0, 0.0]),
            Err(StatsError::ZeroWeightSum)
        ));
        assert!(matches!(ratio_mean(&[], &[]), Err(StatsError::EmptyInput)));
    }
}
