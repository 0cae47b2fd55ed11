//! Balanced linear Thompson sampling.
//!
//! The outcome model is Bayesian linear regression on a fixed feature map
//! over (context, arm):
//!
//! ```text
//! phi(x, w) = [ 1 | arm indicators (K-1) | x (p) | x ⊗ arm indicators (p·(K-1)) ]
//! ```
//!
//! so the coefficient dimension is `1 + (K-1) + p + p·(K-1)`. Arm 0 is the
//! reference: its indicator and interaction blocks are implicit. The prior
//! is zero-mean with an effectively flat variance on the intercept and arm
//! main effects; interaction coefficients get variance `1/lambda`, which
//! makes the posterior mode a ridge fit that shrinks only the
//! context-dependence of treatment effects (covariate main effects can
//! optionally be shrunk too).
//!
//! Refits happen from scratch at batch boundaries on all data collected so
//! far, with each observation weighted by the inverse of its logged
//! assignment probability ("balanced" Thompson sampling: the reweighting
//! undoes the sampling skew the bandit itself introduced). Assignment
//! probabilities are Monte-Carlo estimates of the posterior probability
//! that each arm has the highest predicted mean for the unit's context,
//! clipped to a per-arm floor so no arm's propensity ever reaches zero.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{chacha, mix3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BanditError {
    #[error("config: {what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("config: floor {floor} infeasible for {n_arms} arms (floor * arms must be <= 1)")]
    FloorTooLarge { floor: f64, n_arms: usize },
    #[error("config: at least one arm is required")]
    NoArms,
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("arm {arm} out of range for {n_arms} arms")]
    ArmOutOfRange { arm: usize, n_arms: usize },
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("observation weight must be positive and finite, got {0}")]
    BadWeight(f64),
    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),
    #[error("probabilities: {0}")]
    BadProbabilities(String),
}

/// Noise-variance handling for the outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseVariance {
    /// Use a fixed variance (useful for closed-form checks).
    Fixed { value: f64 },
    /// Re-estimate from weighted residuals at every refit, floored below.
    Estimated { floor: f64 },
}

impl Default for NoiseVariance {
    fn default() -> Self {
        NoiseVariance::Estimated { floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub n_arms: usize,
    pub n_features: usize,
    /// Prior variance on the intercept and arm main effects; large values
    /// approximate a flat prior while keeping the posterior proper.
    pub prior_var_main: f64,
    /// Ridge penalty `lambda` on covariate-arm interaction coefficients
    /// (prior variance `1/lambda`).
    pub ridge_penalty_interactions: f64,
    /// Prior variance on covariate main effects; defaults to
    /// `prior_var_main` (unpenalized) when absent.
    pub prior_var_covariates: Option<f64>,
    pub noise_var: NoiseVariance,
    /// Monte-Carlo draws per probability estimate.
    pub n_posterior_draws: usize,
    /// Per-arm lower bound on assignment probabilities.
    pub probability_floor: f64,
    pub seed: u64,
}

impl BanditConfig {
    /// Defaults: flat main-effect prior (1e6), interaction penalty 1,
    /// estimated noise floored at 1e-6, 1000 draws, floor 1/400.
    pub fn new(n_arms: usize, n_features: usize, seed: u64) -> Self {
        BanditConfig {
            n_arms,
            n_features,
            prior_var_main: 1e6,
            ridge_penalty_interactions: 1.0,
            prior_var_covariates: None,
            noise_var: NoiseVariance::default(),
            n_posterior_draws: 1000,
            probability_floor: 1.0 / 400.0,
            seed,
        }
    }

    /// Coefficient dimension: `1 + (K-1) + p + p·(K-1)`.
    pub fn dim(&self) -> usize {
        1 + (self.n_arms - 1) + self.n_features + self.n_features * (self.n_arms - 1)
    }

    pub fn validate(&self) -> Result<(), BanditError> {
        if self.n_arms == 0 {
            return Err(BanditError::NoArms);
        }
        for (what, value) in [
            ("prior_var_main", self.prior_var_main),
            ("ridge_penalty_interactions", self.ridge_penalty_interactions),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(BanditError::NonPositive { what, value });
            }
        }
        if let Some(v) = self.prior_var_covariates {
            if !(v.is_finite() && v > 0.0) {
                return Err(BanditError::NonPositive { what: "prior_var_covariates", value: v });
            }
        }
        match self.noise_var {
            NoiseVariance::Fixed { value } if !(value.is_finite() && value > 0.0) => {
                return Err(BanditError::NonPositive { what: "noise_var", value });
            }
            NoiseVariance::Estimated { floor } if !(floor.is_finite() && floor > 0.0) => {
                return Err(BanditError::NonPositive { what: "noise_var floor", value: floor });
            }
            _ => {}
        }
        if self.n_posterior_draws == 0 {
            return Err(BanditError::NonPositive { what: "n_posterior_draws", value: 0.0 });
        }
        if !(self.probability_floor.is_finite() && self.probability_floor >= 0.0) {
            return Err(BanditError::NonPositive {
                what: "probability_floor",
                value: self.probability_floor,
            });
        }
        if self.probability_floor * self.n_arms as f64 > 1.0 + 1e-12 {
            return Err(BanditError::FloorTooLarge {
                floor: self.probability_floor,
                n_arms: self.n_arms,
            });
        }
        Ok(())
    }
}

/// Gaussian posterior over the outcome-model coefficients, frozen between
/// batch refits.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub coef_mean: DVector<f64>,
    pub coef_cov: DMatrix<f64>,
    pub noise_var: f64,
    /// Observations the posterior was fit on.
    pub n_observed: usize,
    /// Batch the state will assign for (0 = before any data).
    pub batch_index: usize,
}

/// Flat, text-serializable form of a posterior (checkpoint/resume and the
/// event-log replay test both go through this). Field order is fixed by
/// this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSnapshot {
    pub dim: usize,
    pub coef_mean: Vec<f64>,
    /// Row-major `dim * dim` covariance.
    pub coef_cov: Vec<f64>,
    pub noise_var: f64,
    pub n_observed: usize,
    pub batch_index: usize,
}

impl From<&PosteriorState> for PosteriorSnapshot {
    fn from(state: &PosteriorState) -> Self {
        let dim = state.coef_mean.len();
        let mut cov = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                cov.push(state.coef_cov[(i, j)]);
            }
        }
        PosteriorSnapshot {
            dim,
            coef_mean: state.coef_mean.iter().copied().collect(),
            coef_cov: cov,
            noise_var: state.noise_var,
            n_observed: state.n_observed,
            batch_index: state.batch_index,
        }
    }
}

impl TryFrom<&PosteriorSnapshot> for PosteriorState {
    type Error = BanditError;

    fn try_from(snap: &PosteriorSnapshot) -> Result<Self, BanditError> {
        if snap.coef_mean.len() != snap.dim {
            return Err(BanditError::DimensionMismatch {
                what: "snapshot mean",
                expected: snap.dim,
                got: snap.coef_mean.len(),
            });
        }
        if snap.coef_cov.len() != snap.dim * snap.dim {
            return Err(BanditError::DimensionMismatch {
                what: "snapshot covariance",
                expected: snap.dim * snap.dim,
                got: snap.coef_cov.len(),
            });
        }
        let coef_cov = DMatrix::from_row_slice(snap.dim, snap.dim, &snap.coef_cov);
        Ok(PosteriorState {
            coef_mean: DVector::from_column_slice(&snap.coef_mean),
            coef_cov,
            noise_var: snap.noise_var,
            n_observed: snap.n_observed,
            batch_index: snap.batch_index,
        })
    }
}

/// One observed (context, arm, response) triple with its balance weight
/// (inverse of the logged assignment probability of the realized arm).
#[derive(Debug, Clone)]
pub struct TrainingRow {
    pub features: Vec<f64>,
    pub arm: usize,
    pub response: f64,
    pub weight: f64,
}

/// Sparse feature map `phi(x, w)` as (column, value) pairs, shared with the
/// ridge conditional-mean model so both fit the same design.
pub(crate) fn phi_entries(k: usize, p: usize, features: &[f64], arm: usize) -> Vec<(usize, f64)> {
    let mut entries = Vec::with_capacity(2 + 2 * p);
    entries.push((0, 1.0));
    if arm >= 1 {
        entries.push((arm, 1.0));
    }
    for (j, &x) in features.iter().enumerate() {
        entries.push((k + j, x));
    }
    if arm >= 1 {
        let base = k + p + (arm - 1) * p;
        for (j, &x) in features.iter().enumerate() {
            entries.push((base + j, x));
        }
    }
    entries
}

/// Diagonal prior precision (1 / prior variance per coefficient block).
pub(crate) fn prior_precision(config: &BanditConfig) -> DVector<f64> {
    let d = config.dim();
    let k = config.n_arms;
    let p = config.n_features;
    let cov_var = config.prior_var_covariates.unwrap_or(config.prior_var_main);
    let mut prec = DVector::zeros(d);
    for i in 0..d {
        prec[i] = if i < k {
            1.0 / config.prior_var_main
        } else if i < k + p {
            1.0 / cov_var
        } else {
            config.ridge_penalty_interactions
        };
    }
    prec
}

/// Fresh prior state before any data: zero mean, block-diagonal variance.
pub fn init_state(config: &BanditConfig) -> Result<PosteriorState, BanditError> {
    config.validate()?;
    let prec = prior_precision(config);
    let d = config.dim();
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        cov[(i, i)] = 1.0 / prec[i];
    }
    let noise_var = match config.noise_var {
        NoiseVariance::Fixed { value } => value,
        NoiseVariance::Estimated { .. } => 1.0,
    };
    Ok(PosteriorState {
        coef_mean: DVector::zeros(d),
        coef_cov: cov,
        noise_var,
        n_observed: 0,
        batch_index: 0,
    })
}

fn validate_rows(config: &BanditConfig, rows: &[TrainingRow]) -> Result<(), BanditError> {
    for row in rows {
        if row.arm >= config.n_arms {
            return Err(BanditError::ArmOutOfRange { arm: row.arm, n_arms: config.n_arms });
        }
        if row.features.len() != config.n_features {
            return Err(BanditError::DimensionMismatch {
                what: "row features",
                expected: config.n_features,
                got: row.features.len(),
            });
        }
        if !row.response.is_finite() {
            return Err(BanditError::NonFinite { what: "response" });
        }
        if row.features.iter().any(|x| !x.is_finite()) {
            return Err(BanditError::NonFinite { what: "features" });
        }
        if !(row.weight.is_finite() && row.weight > 0.0) {
            return Err(BanditError::BadWeight(row.weight));
        }
    }
    Ok(())
}

/// Refit the posterior from scratch on all rows collected so far.
///
/// Balance weights are normalized to mean one (only relative weights carry
/// information), the penalized point fit supplies residuals for the noise
/// variance when it is estimated, and the returned Gaussian has precision
/// `prior + X'UX / noise_var`. With no rows the prior comes back unchanged
/// apart from `batch_index`, so refitting twice on identical data is a
/// no-op.
pub fn update_posterior(
    config: &BanditConfig,
    rows: &[TrainingRow],
    batch_index: usize,
) -> Result<PosteriorState, BanditError> {
    config.validate()?;
    validate_rows(config, rows)?;
    let d = config.dim();
    let n = rows.len();
    let prec = prior_precision(config);

    if n == 0 {
        let mut state = init_state(config)?;
        state.batch_index = batch_index;
        return Ok(state);
    }

    let weight_sum: f64 = rows.iter().map(|r| r.weight).sum();
    let scale = n as f64 / weight_sum;

    let mut xtux = DMatrix::<f64>::zeros(d, d);
    let mut xtuy = DVector::<f64>::zeros(d);
    let mut entries_per_row = Vec::with_capacity(n);
    for row in rows {
        let u = row.weight * scale;
        let entries = phi_entries(config.n_arms, config.n_features, &row.features, row.arm);
        for &(ci, vi) in &entries {
            xtuy[ci] += u * vi * row.response;
            for &(cj, vj) in &entries {
                xtux[(ci, cj)] += u * vi * vj;
            }
        }
        entries_per_row.push(entries);
    }

    // Penalized point fit for residual-based noise estimation.
    let mut penalized = xtux.clone();
    for i in 0..d {
        penalized[(i, i)] += prec[i];
    }
    let chol = Cholesky::new(penalized)
        .ok_or(BanditError::NumericalFailure("penalized normal equations not positive definite"))?;
    let beta_hat = chol.solve(&xtuy);

    let noise_var = match config.noise_var {
        NoiseVariance::Fixed { value } => value,
        NoiseVariance::Estimated { floor } => {
            let mut wssr = 0.0;
            for (row, entries) in rows.iter().zip(&entries_per_row) {
                let fitted: f64 = entries.iter().map(|&(c, v)| v * beta_hat[c]).sum();
                let r = row.response - fitted;
                wssr += row.weight * scale * r * r;
            }
            let dof = (n.saturating_sub(d)).max(1) as f64;
            (wssr / dof).max(floor)
        }
    };

    let mut precision = xtux;
    precision /= noise_var;
    for i in 0..d {
        precision[(i, i)] += prec[i];
    }
    let chol = Cholesky::new(precision)
        .ok_or(BanditError::NumericalFailure("posterior precision not positive definite"))?;
    let coef_mean = chol.solve(&(&xtuy / noise_var));
    let mut coef_cov = chol.inverse();
    // Enforce exact symmetry against accumulated rounding.
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (coef_cov[(i, j)] + coef_cov[(j, i)]);
            coef_cov[(i, j)] = s;
            coef_cov[(j, i)] = s;
        }
    }
    Ok(PosteriorState { coef_mean, coef_cov, noise_var, n_observed: n, batch_index })
}

/// Posterior mean and covariance of the K predicted arm means for one
/// context: `m_w = phi(x, w)' beta`.
pub fn predictive_arm_moments(
    config: &BanditConfig,
    state: &PosteriorState,
    features: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>), BanditError> {
    let d = config.dim();
    if state.coef_mean.len() != d {
        return Err(BanditError::DimensionMismatch {
            what: "posterior state",
            expected: d,
            got: state.coef_mean.len(),
        });
    }
    if features.len() != config.n_features {
        return Err(BanditError::DimensionMismatch {
            what: "context features",
            expected: config.n_features,
            got: features.len(),
        });
    }
    if features.iter().any(|x| !x.is_finite()) {
        return Err(BanditError::NonFinite { what: "context features" });
    }
    let k = config.n_arms;
    let rows: Vec<Vec<(usize, f64)>> =
        (0..k).map(|w| phi_entries(k, config.n_features, features, w)).collect();
    let mut means = DVector::zeros(k);
    for (w, entries) in rows.iter().enumerate() {
        means[w] = entries.iter().map(|&(c, v)| v * state.coef_mean[c]).sum();
    }
    // t_w = Sigma * phi_w, assembled column-by-column from the sparse map.
    let mut t = DMatrix::zeros(d, k);
    for (w, entries) in rows.iter().enumerate() {
        let mut col = t.column_mut(w);
        for &(c, v) in entries {
            col.axpy(v, &state.coef_cov.column(c), 1.0);
        }
    }
    let mut cov = DMatrix::zeros(k, k);
    for v in 0..k {
        for w in v..k {
            let s: f64 = rows[v].iter().map(|&(c, val)| val * t[(c, w)]).sum();
            cov[(v, w)] = s;
            cov[(w, v)] = s;
        }
    }
    if means.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
        return Err(BanditError::NonFinite { what: "predictive moments" });
    }
    Ok((means, cov))
}

/// Square-root factor of a symmetric PSD matrix: Cholesky when it is
/// positive definite, otherwise an eigenvalue factor with negative
/// eigenvalues clipped to zero (covers degenerate posteriors).
fn psd_factor(matrix: DMatrix<f64>) -> DMatrix<f64> {
    let k = matrix.nrows();
    match Cholesky::new(matrix.clone()) {
        Some(chol) => chol.l(),
        None => {
            let eigen = SymmetricEigen::new(matrix);
            let mut scaled = eigen.eigenvectors;
            for j in 0..k {
                let s = eigen.eigenvalues[j].max(0.0).sqrt();
                scaled.column_mut(j).scale_mut(s);
            }
            scaled
        }
    }
}

/// Monte-Carlo posterior probability that each arm has the highest
/// predicted mean for this context, floored and renormalized.
///
/// `stream` selects the random sub-stream: callers pass a value derived
/// from the batch and context so that equal contexts in the same batch get
/// identical vectors, and replays reproduce the run bit for bit. Ties in a
/// draw go to the lowest arm index.
///
/// A state fit on zero observations assigns uniformly: the reference-cell
/// parameterization gives the baseline arm a smaller prior predictive
/// variance than the others, so sampling from the raw prior would skew
/// away from it despite carrying no information.
pub fn assignment_probabilities(
    config: &BanditConfig,
    state: &PosteriorState,
    features: &[f64],
    stream: u64,
) -> Result<Vec<f64>, BanditError> {
    config.validate()?;
    let (means, cov) = predictive_arm_moments(config, state, features)?;
    let k = config.n_arms;
    if k == 1 {
        return Ok(vec![1.0]);
    }
    if state.n_observed == 0 {
        return Ok(vec![1.0 / k as f64; k]);
    }
    let factor = psd_factor(cov);
    let n_draws = config.n_posterior_draws;
    let mut rng = chacha(mix3(config.seed, 0x70726F62, stream)); // probability stream tag
    let z = DMatrix::from_fn(k, n_draws, |_, _| rng.sample::<f64, _>(StandardNormal));
    let shocks = &factor * z;
    let mut counts = vec![0usize; k];
    for j in 0..n_draws {
        let mut best = 0usize;
        let mut best_val = means[0] + shocks[(0, j)];
        for w in 1..k {
            let val = means[w] + shocks[(w, j)];
            if val > best_val {
                best = w;
                best_val = val;
            }
        }
        counts[best] += 1;
    }
    let raw: Vec<f64> = counts.iter().map(|&c| c as f64 / n_draws as f64).collect();
    apply_floor(&raw, config.probability_floor)
}

/// Clip probabilities to a floor and renormalize.
///
/// Entries below the floor are pinned to it exactly; the remaining mass is
/// redistributed proportionally over the free entries, repeating if the
/// rescale pushes further entries under (each pass pins at least one more,
/// so at most K passes run). Free entries keep their relative order and the
/// argmax survives whenever the maximum already clears the floor.
pub fn apply_floor(probs: &[f64], floor: f64) -> Result<Vec<f64>, BanditError> {
    let k = probs.len();
    if k == 0 {
        return Err(BanditError::BadProbabilities("empty vector".into()));
    }
    if !(floor.is_finite() && floor >= 0.0) {
        return Err(BanditError::BadProbabilities(format!("bad floor {floor}")));
    }
    if floor * k as f64 > 1.0 + 1e-12 {
        return Err(BanditError::FloorTooLarge { floor, n_arms: k });
    }
    let mut sum = 0.0;
    for &p in probs {
        if !(p.is_finite() && p >= 0.0) {
            return Err(BanditError::BadProbabilities(format!("entry {p}")));
        }
        sum += p;
    }
    if sum <= 0.0 {
        return Err(BanditError::BadProbabilities("probabilities sum to zero".into()));
    }
    let mut p: Vec<f64> = probs.iter().map(|&v| v / sum).collect();
    let mut pinned = vec![false; k];
    loop {
        let mut newly_pinned = false;
        for i in 0..k {
            if !pinned[i] && p[i] < floor {
                pinned[i] = true;
                newly_pinned = true;
            }
        }
        let n_pinned = pinned.iter().filter(|&&x| x).count();
        let free_target = 1.0 - floor * n_pinned as f64;
        let free_sum: f64 = (0..k).filter(|&i| !pinned[i]).map(|i| p[i]).sum();
        for i in 0..k {
            if pinned[i] {
                p[i] = floor;
            } else if free_sum > 0.0 {
                p[i] *= free_target / free_sum;
            }
        }
        if !newly_pinned {
            break;
        }
    }
    // Exact-sum fixup: push the rounding residue onto the largest free
    // entry (or the overall largest if everything is pinned).
    let residue = 1.0 - p.iter().sum::<f64>();
    if residue != 0.0 {
        let target = (0..k)
            .filter(|&i| !pinned[i])
            .max_by(|&a, &b| p[a].total_cmp(&p[b]))
            .or_else(|| (0..k).max_by(|&a, &b| p[a].total_cmp(&p[b])))
            .unwrap();
        p[target] += residue;
    }
    Ok(p)
}

/// Sample an arm index from a probability vector.
pub fn draw_assignment<R: Rng>(probs: &[f64], rng: &mut R) -> Result<usize, BanditError> {
    if probs.is_empty() {
        return Err(BanditError::BadProbabilities("empty vector".into()));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !(p.is_finite() && p >= 0.0) {
            return Err(BanditError::BadProbabilities(format!("entry {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(BanditError::BadProbabilities(format!("sum {sum} != 1")));
    }
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cum += p;
        if u < cum {
            return Ok(i);
        }
    }
    Ok(last_positive)
}

/// Predicted arm means under the posterior mean (diagnostics).
pub fn predicted_arm_means(
    config: &BanditConfig,
    state: &PosteriorState,
    features: &[f64],
) -> Result<Vec<f64>, BanditError> {
    let (means, _) = predictive_arm_moments(config, state, features)?;
    Ok(means.iter().copied().collect())
}
