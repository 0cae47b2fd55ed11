//! Synthetic populations and end-to-end pipeline runs.
//!
//! The data-generating process works on the per-question scale: each of
//! the four false-headline questions (2 stimuli x 2 channels) is shared
//! with probability `p_f(x, w)` and each true-headline question with
//! `p_t(x, w)`, where
//!
//! `p(x, w) = clamp(base + x . coefs + shift[w] + het[w] * sign(x[h]))`
//!
//! Questions of a type share a per-stimulus latent factor (a Gaussian
//! copula with correlation `channel_correlation`), which changes joint
//! statistics like "shared on at least one channel" but leaves every
//! marginal exactly `p`. All oracle quantities therefore have closed
//! forms: a count expectation is `4p`, the weighted composite response is
//! `4(w_false p_f + w_true p_t)`, and any-channel rates come from a 1-D
//! integral over the shared factor ([`any_channel_prob`]).
//!
//! Potential outcomes are materialized for every arm using common random
//! numbers: one set of latent draws per unit, thresholded at each arm's
//! probability, so arm contrasts are monotone couplings and cross-design
//! comparisons are noise-free. Attrition is arm-independent.

pub mod report;

use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use thiserror::Error;

use crate::estimators::EstimatorError;
use crate::experiment::{
    AssignmentMode, BatchSchedule, Experiment, ExperimentConfig, ExperimentError,
};
use crate::model::{
    ArmSpace, ChannelGrid, CovariateContext, ModelError, OutcomeMeasure, OutcomeRecord, Posttest,
    ResponseWeights, N_STIMULI,
};
use crate::policy::{Policy, PolicyError};
use crate::rng::{chacha, mix3};
use crate::stats::normal_cdf;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("experiment: {0}")]
    Experiment(#[from] ExperimentError),
    #[error("estimator: {0}")]
    Estimator(#[from] EstimatorError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("dgp: {0}")]
    BadSpec(String),
    #[error("unit {0:?} is not in the generating population")]
    UnknownUnit(String),
    #[error("design covers {design} arms but the population has {dgp}")]
    ArmMismatch { design: usize, dgp: usize },
}

// ---------------------------------------------------------------------------
// DGP specification
// ---------------------------------------------------------------------------

/// Arm-independent survey-completion model:
/// `P(complete | x) = sigmoid(intercept + x . coefs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttritionSpec {
    pub intercept: f64,
    pub coefs: Vec<f64>,
}

/// Ground truth for a synthetic population. See the module docs for the
/// probability model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub n_arms: usize,
    pub n_features: usize,
    /// Equicorrelation of the standard-normal covariates, in [0, 1).
    pub covariate_correlation: f64,
    /// Within-stimulus correlation of the two channel questions' latent
    /// variables, in [0, 1). Zero makes all questions independent.
    pub channel_correlation: f64,
    /// Control-arm per-question share probabilities.
    pub base_false: f64,
    pub base_true: f64,
    /// Covariate effects on the per-question probabilities (prognostic).
    pub false_coefs: Vec<f64>,
    pub true_coefs: Vec<f64>,
    /// Per-arm additive shifts (index 0 is conventionally zero).
    pub arm_false_shift: Vec<f64>,
    pub arm_true_shift: Vec<f64>,
    /// Effect modification: per-arm amplitude multiplying the sign of one
    /// feature. `None` disables heterogeneity.
    pub het_feature: Option<usize>,
    pub arm_false_het: Vec<f64>,
    pub arm_true_het: Vec<f64>,
    /// Probabilities are clamped to this interval after summing terms.
    pub prob_clamp: (f64, f64),
    pub attrition: Option<AttritionSpec>,
    pub seed: u64,
}

impl DgpSpec {
    /// A null DGP: identical arms, no covariate effects, independent
    /// questions, no attrition. A convenient base to tweak.
    pub fn flat(n_arms: usize, n_features: usize, seed: u64) -> Self {
        DgpSpec {
            n_arms,
            n_features,
            covariate_correlation: 0.0,
            channel_correlation: 0.0,
            base_false: 0.272,
            base_true: 0.304,
            false_coefs: vec![0.0; n_features],
            true_coefs: vec![0.0; n_features],
            arm_false_shift: vec![0.0; n_arms],
            arm_true_shift: vec![0.0; n_arms],
            het_feature: None,
            arm_false_het: vec![0.0; n_arms],
            arm_true_het: vec![0.0; n_arms],
            prob_clamp: (0.005, 0.995),
            attrition: None,
            seed,
        }
    }

    /// A population with survey-realistic magnitudes: control any-channel
    /// false-share rate 0.47, control weighted response -0.48, arm
    /// improvements ramping up to +0.07 on the weighted-response scale,
    /// correlated channels, mild covariate effects, and ~7% attrition.
    pub fn calibrated(n_arms: usize, seed: u64) -> Self {
        let n_features = 4;
        let channel_correlation = 0.3;
        // Per-question false probability hitting the any-channel target.
        let base_false = solve_per_question_prob(0.47, channel_correlation);
        // Weighted response -0.48 = -4 p_f + 2 p_t under default weights.
        let base_true = (4.0 * base_false - 0.48) / 2.0;
        let mut spec = DgpSpec::flat(n_arms, n_features, seed);
        spec.covariate_correlation = 0.2;
        spec.channel_correlation = channel_correlation;
        spec.base_false = base_false;
        spec.base_true = base_true;
        spec.false_coefs = vec![0.03, -0.02, 0.01, 0.0];
        spec.true_coefs = vec![-0.01, 0.02, 0.0, 0.015];
        for w in 1..n_arms {
            // Response effect e(w) ramps linearly to 0.07 for the last arm,
            // split 60/40 between fewer false shares and more true shares:
            // -4(-0.6e/4) + 2(0.4e/2) = e.
            let effect = 0.07 * w as f64 / (n_arms - 1).max(1) as f64;
            spec.arm_false_shift[w] = -0.6 * effect / 4.0;
            spec.arm_true_shift[w] = 0.4 * effect / 2.0;
        }
        spec.attrition = Some(AttritionSpec {
            intercept: 2.6,
            coefs: vec![-0.15, 0.1, 0.0, 0.0],
        });
        spec
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |message: String| Err(SimError::BadSpec(message));
        if self.n_arms == 0 {
            return fail("n_arms must be at least 1".into());
        }
        for (name, len) in [
            ("false_coefs", self.false_coefs.len()),
            ("true_coefs", self.true_coefs.len()),
        ] {
            if len != self.n_features {
                return fail(format!("{name} has {len} entries for {} features", self.n_features));
            }
        }
        for (name, len) in [
            ("arm_false_shift", self.arm_false_shift.len()),
            ("arm_true_shift", self.arm_true_shift.len()),
            ("arm_false_het", self.arm_false_het.len()),
            ("arm_true_het", self.arm_true_het.len()),
        ] {
            if len != self.n_arms {
                return fail(format!("{name} has {len} entries for {} arms", self.n_arms));
            }
        }
        for (name, value) in [
            ("covariate_correlation", self.covariate_correlation),
            ("channel_correlation", self.channel_correlation),
        ] {
            if !(0.0..1.0).contains(&value) {
                return fail(format!("{name} = {value} outside [0, 1)"));
            }
        }
        let (lo, hi) = self.prob_clamp;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return fail(format!("prob_clamp ({lo}, {hi}) is not a subinterval of [0, 1]"));
        }
        for (name, value) in [("base_false", self.base_false), ("base_true", self.base_true)] {
            if !(0.0..=1.0).contains(&value) {
                return fail(format!("{name} = {value} outside [0, 1]"));
            }
        }
        if let Some(h) = self.het_feature {
            if h >= self.n_features {
                return fail(format!("het_feature {h} out of range for {} features", self.n_features));
            }
        }
        if let Some(attrition) = &self.attrition {
            if attrition.coefs.len() != self.n_features {
                return fail(format!(
                    "attrition has {} coefficients for {} features",
                    attrition.coefs.len(),
                    self.n_features
                ));
            }
        }
        Ok(())
    }

    fn het_sign(&self, features: &[f64]) -> f64 {
        match self.het_feature {
            None => 0.0,
            Some(h) => {
                let x = features[h];
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// True per-question probabilities `(p_false, p_true)` for one
    /// context and arm.
    pub fn probs(&self, features: &[f64], arm: usize) -> (f64, f64) {
        let (lo, hi) = self.prob_clamp;
        let sign = self.het_sign(features);
        let dot = |coefs: &[f64]| -> f64 {
            coefs.iter().zip(features).map(|(c, x)| c * x).sum()
        };
        let p_f = (self.base_false
            + dot(&self.false_coefs)
            + self.arm_false_shift[arm]
            + self.arm_false_het[arm] * sign)
            .clamp(lo, hi);
        let p_t = (self.base_true
            + dot(&self.true_coefs)
            + self.arm_true_shift[arm]
            + self.arm_true_het[arm] * sign)
            .clamp(lo, hi);
        (p_f, p_t)
    }

    /// Exact expected value of `measure` for one context and arm.
    pub fn oracle_value(&self, features: &[f64], arm: usize, measure: &OutcomeMeasure) -> f64 {
        let (p_f, p_t) = self.probs(features, arm);
        let n_q = f64::from(crate::model::N_QUESTIONS_PER_TYPE);
        match measure {
            OutcomeMeasure::Discernment(w) => n_q * (w.w_false * p_f + w.w_true * p_t),
            OutcomeMeasure::FalseAny => any_channel_prob(p_f, self.channel_correlation),
            OutcomeMeasure::TrueAny => any_channel_prob(p_t, self.channel_correlation),
            OutcomeMeasure::FalseTimeline | OutcomeMeasure::FalseMessenger => p_f,
            OutcomeMeasure::TrueTimeline | OutcomeMeasure::TrueMessenger => p_t,
        }
    }
}

/// Solve for the per-question probability whose any-channel share rate is
/// `target` at the given within-stimulus correlation (bisection; the rate
/// is strictly increasing in the per-question probability).
fn solve_per_question_prob(target: f64, rho: f64) -> f64 {
    let (mut lo, mut hi) = (1e-6, 1.0 - 1e-6);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if any_channel_prob(mid, rho) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Probability that a stimulus is shared on at least one of its two
/// channels, when each channel's question is a Bernoulli(`p`) driven by a
/// Gaussian latent with shared-factor correlation `rho`.
///
/// Marginals don't depend on `rho`; this joint quantity does. Computed by
/// integrating over the shared factor u: given u the channels are
/// independent with probability `q(u) = PHI((t - sqrt(rho) u) / sqrt(1 -
/// rho))`, `t = PHI^-1(p)`, so P(neither) = E[(1 - q(U))^2] (Simpson's
/// rule on [-10, 10], exact to ~1e-12 for these smooth integrands).
pub fn any_channel_prob(p: f64, rho: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    if rho == 0.0 {
        return 1.0 - (1.0 - p) * (1.0 - p);
    }
    let t = probit(p);
    let scale = (1.0 - rho).sqrt();
    let sq = rho.sqrt();
    let neither = |u: f64| {
        let q = normal_cdf((t - sq * u) / scale);
        let miss = 1.0 - q;
        standard_normal_pdf(u) * miss * miss
    };
    1.0 - simpson(neither, -10.0, 10.0, 2000)
}

fn standard_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn probit(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        statrs::distribution::Normal::new(0.0, 1.0)
            .expect("unit normal")
            .inverse_cdf(p)
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2) & !1; // even
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += weight * f(a + h * i as f64);
    }
    sum * h / 3.0
}

// ---------------------------------------------------------------------------
// Population generation
// ---------------------------------------------------------------------------

/// One synthetic participant with materialized potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimUnit {
    pub unit_id: String,
    pub context: CovariateContext,
    /// Realized pretest answers (control-arm probabilities).
    pub pretest: ChannelGrid,
    /// Whether the unit would complete the posttest (arm-independent).
    pub completes: bool,
    /// Realized posttest under each arm (common random numbers).
    pub potential: Vec<Posttest>,
}

impl SimUnit {
    /// The outcome record the experiment would receive if this unit were
    /// assigned `arm`.
    pub fn outcome_under(&self, arm: usize) -> OutcomeRecord {
        OutcomeRecord {
            m_pre: self.pretest.false_sum(),
            t_pre: self.pretest.true_sum(),
            channel_pre: Some(self.pretest),
            posttest: self.completes.then(|| self.potential[arm]),
        }
    }
}

/// A generated population plus the spec that made it (oracle access).
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub spec: DgpSpec,
    pub units: Vec<SimUnit>,
}

impl Population {
    pub fn contexts(&self) -> Vec<CovariateContext> {
        self.units.iter().map(|u| u.context.clone()).collect()
    }

    /// Population average of the exact conditional mean under one arm.
    pub fn oracle_mean(&self, arm: usize, measure: &OutcomeMeasure) -> f64 {
        let total: f64 = self
            .units
            .iter()
            .map(|u| self.spec.oracle_value(&u.context.features, arm, measure))
            .sum();
        total / self.units.len().max(1) as f64
    }

    /// Arm with the best population-average oracle mean under the
    /// measure's orientation (ties to the lowest index).
    pub fn best_arm(&self, measure: &OutcomeMeasure) -> usize {
        let sign = if measure.higher_is_better() { 1.0 } else { -1.0 };
        let mut best = 0;
        let mut best_value = sign * self.oracle_mean(0, measure);
        for arm in 1..self.spec.n_arms {
            let value = sign * self.oracle_mean(arm, measure);
            if value > best_value {
                best = arm;
                best_value = value;
            }
        }
        best
    }
}

/// Latent draws for one question battery: a shared factor per stimulus
/// plus an idiosyncratic term per cell.
struct TypeLatents {
    shared: [f64; N_STIMULI],
    cells: [[f64; 2]; N_STIMULI],
}

fn draw_latents<R: Rng>(rng: &mut R) -> TypeLatents {
    let mut shared = [0.0; N_STIMULI];
    for s in shared.iter_mut() {
        *s = rng.sample(StandardNormal);
    }
    let mut cells = [[0.0; 2]; N_STIMULI];
    for row in cells.iter_mut() {
        for cell in row.iter_mut() {
            *cell = rng.sample(StandardNormal);
        }
    }
    TypeLatents { shared, cells }
}

impl TypeLatents {
    /// Threshold the latents at `t = probit(p)`: cell = 1 iff its latent
    /// (shared-factor mix) falls below t. Marginal share rate is exactly
    /// `p`; `rho` induces within-stimulus dependence.
    fn grid_cells(&self, rho: f64, t: f64) -> [[u8; 2]; N_STIMULI] {
        let sq = rho.sqrt();
        let scale = (1.0 - rho).sqrt();
        let mut out = [[0u8; 2]; N_STIMULI];
        for s in 0..N_STIMULI {
            for c in 0..2 {
                let z = sq * self.shared[s] + scale * self.cells[s][c];
                out[s][c] = u8::from(z < t);
            }
        }
        out
    }
}

/// Generate `n` units. Each unit consumes a fixed number of draws from
/// its own seeded stream, so populations are reproducible and two specs
/// differing only in effect sizes share their randomness (common random
/// numbers across designs as well as across arms).
pub fn generate_population(spec: &DgpSpec, n: usize) -> Result<Population, SimError> {
    spec.validate()?;
    let p = spec.n_features;
    let mut units = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = chacha(mix3(spec.seed, 0x73696D75, i as u64)); // unit stream tag
        // Covariates: equicorrelated standard normals.
        let shared: f64 = rng.sample(StandardNormal);
        let sq = spec.covariate_correlation.sqrt();
        let scale = (1.0 - spec.covariate_correlation).sqrt();
        let features: Vec<f64> = (0..p)
            .map(|_| sq * shared + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        // Pretest (control-arm probabilities), posttest latents, attrition.
        let pre_false = draw_latents(&mut rng);
        let pre_true = draw_latents(&mut rng);
        let post_false = draw_latents(&mut rng);
        let post_true = draw_latents(&mut rng);
        let attrition_draw: f64 = rng.gen();

        let (pf0, pt0) = spec.probs(&features, 0);
        let pretest = ChannelGrid {
            false_cells: pre_false.grid_cells(spec.channel_correlation, probit(pf0)),
            true_cells: pre_true.grid_cells(spec.channel_correlation, probit(pt0)),
        };
        let completes = match &spec.attrition {
            None => true,
            Some(a) => {
                let logit: f64 =
                    a.intercept + a.coefs.iter().zip(&features).map(|(c, x)| c * x).sum::<f64>();
                attrition_draw < 1.0 / (1.0 + (-logit).exp())
            }
        };
        let potential: Vec<Posttest> = (0..spec.n_arms)
            .map(|arm| {
                let (p_f, p_t) = spec.probs(&features, arm);
                let grid = ChannelGrid {
                    false_cells: post_false.grid_cells(spec.channel_correlation, probit(p_f)),
                    true_cells: post_true.grid_cells(spec.channel_correlation, probit(p_t)),
                };
                Posttest {
                    m_post: grid.false_sum(),
                    t_post: grid.true_sum(),
                    channel: Some(grid),
                }
            })
            .collect();
        units.push(SimUnit {
            unit_id: format!("u{i:06}"),
            context: CovariateContext {
                features,
                pretest_false_stratum: pretest.false_sum(),
                pretest_true_stratum: pretest.true_sum(),
            },
            pretest,
            completes,
            potential,
        });
    }
    Ok(Population { spec: spec.clone(), units })
}

// ---------------------------------------------------------------------------
// Pipeline runs
// ---------------------------------------------------------------------------

/// Run a learning-stage experiment over a population in arrival order:
/// assign, report the realized potential outcome (masked by attrition),
/// and close each batch as it fills. The final partial batch stays open.
pub fn simulate_learning(
    population: &Population,
    config: ExperimentConfig,
) -> Result<Experiment, SimError> {
    if config.arm_space.n_arms() != population.spec.n_arms {
        return Err(SimError::ArmMismatch {
            design: config.arm_space.n_arms(),
            dgp: population.spec.n_arms,
        });
    }
    if config.n_features != population.spec.n_features {
        return Err(SimError::BadSpec(format!(
            "design expects {} features, population has {}",
            config.n_features, population.spec.n_features
        )));
    }
    let mut experiment = Experiment::new(config)?;
    let n = population.units.len();
    for (i, unit) in population.units.iter().enumerate() {
        let event = experiment.assign(&unit.unit_id, unit.context.clone())?;
        experiment.record_outcome(&unit.unit_id, unit.outcome_under(event.arm))?;
        let target = experiment.config().schedule.target(experiment.batch());
        if experiment.assigned_in_batch() == target && i + 1 < n {
            experiment.advance_batch(false)?;
        }
    }
    Ok(experiment)
}

/// One condition of an evaluation-stage design: either a fixed cell of
/// the underlying arm space or a policy resolved per unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionSpec {
    Cell { arm: usize },
    Policy { policy: Policy },
}

impl ConditionSpec {
    fn label(&self, index: usize) -> String {
        match self {
            ConditionSpec::Cell { arm } => format!("{index}:cell{arm}"),
            ConditionSpec::Policy { .. } => format!("{index}:policy"),
        }
    }
}

/// An evaluation-stage run: conditions assigned with equal probability in
/// one batch. `resolved_arms` maps each assigned unit (in arrival order)
/// to the underlying arm its condition produced.
#[derive(Debug)]
pub struct EvaluationRun {
    pub experiment: Experiment,
    pub condition_labels: Vec<String>,
    pub resolved_arms: Vec<usize>,
}

/// Run an evaluation stage over a population: every condition equally
/// likely, a single batch, outcomes drawn from the potential outcome of
/// the resolved arm. The exported dataset's arm column is the condition
/// index (the arm space is the flat condition list).
pub fn simulate_evaluation(
    population: &Population,
    conditions: &[ConditionSpec],
    measure: OutcomeMeasure,
    seed: u64,
) -> Result<EvaluationRun, SimError> {
    if conditions.is_empty() {
        return Err(SimError::BadSpec("evaluation needs at least one condition".into()));
    }
    let k = population.spec.n_arms;
    for condition in conditions {
        if let ConditionSpec::Cell { arm } = condition {
            if *arm >= k {
                return Err(SimError::ArmMismatch { design: *arm + 1, dgp: k });
            }
        }
    }
    let labels: Vec<String> =
        conditions.iter().enumerate().map(|(i, c)| c.label(i)).collect();
    let n = population.units.len();
    let config = ExperimentConfig {
        arm_space: ArmSpace::Flat { labels: labels.clone() },
        n_features: population.spec.n_features,
        schedule: BatchSchedule {
            first_batch_size: n.max(1),
            subsequent_batch_size: n.max(1),
            max_units: n.max(1),
        },
        mode: AssignmentMode::Uniform,
        measure,
        seed,
    };
    let mut experiment = Experiment::new(config)?;
    let mut resolved_arms = Vec::with_capacity(n);
    for unit in &population.units {
        let event = experiment.assign(&unit.unit_id, unit.context.clone())?;
        let resolved = match &conditions[event.arm] {
            ConditionSpec::Cell { arm } => *arm,
            ConditionSpec::Policy { policy } => {
                let arm = policy.assign(&unit.context)?;
                if arm >= k {
                    return Err(SimError::ArmMismatch { design: arm + 1, dgp: k });
                }
                arm
            }
        };
        resolved_arms.push(resolved);
        experiment.record_outcome(&unit.unit_id, unit.outcome_under(resolved))?;
    }
    Ok(EvaluationRun { experiment, condition_labels: labels, resolved_arms })
}

/// Default response weights, re-exported for sim configs.
pub fn default_weights() -> ResponseWeights {
    ResponseWeights::default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::{BanditConfig, NoiseVariance};
    use crate::experiment::EventRecord;
    use crate::model::Phase;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn generation_is_deterministic_and_sized() {
        let spec = DgpSpec::calibrated(3, 99);
        let a = generate_population(&spec, 50).unwrap();
        let b = generate_population(&spec, 50).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.units.len(), 50);
        assert!(generate_population(&spec, 0).unwrap().units.is_empty());
        // Prefix stability: the first 20 units of a bigger draw match.
        let c = generate_population(&spec, 80).unwrap();
        assert_eq!(&c.units[..50], &a.units[..]);
    }

    #[test]
    fn null_dgp_has_equal_oracle_means_and_identical_potentials() {
        let spec = DgpSpec::flat(4, 2, 5);
        let population = generate_population(&spec, 40).unwrap();
        let measure = OutcomeMeasure::Discernment(Default::default());
        let m0 = population.oracle_mean(0, &measure);
        for arm in 1..4 {
            assert_eq!(population.oracle_mean(arm, &measure), m0);
        }
        for unit in &population.units {
            for arm in 1..4 {
                assert_eq!(unit.potential[arm], unit.potential[0]);
            }
        }
    }

    #[test]
    fn calibrated_control_rates_match_their_targets() {
        let spec = DgpSpec::calibrated(2, 31);
        let population = generate_population(&spec, 10_000).unwrap();
        // Oracle targets hold exactly on average over contexts only when
        // covariate effects cancel; they do here because coefficients act
        // on symmetric standard normals, so check empirically.
        let mut false_any = 0.0;
        let mut weighted = 0.0;
        for unit in &population.units {
            let post = &unit.potential[0];
            let r = crate::model::channel_responses(&OutcomeRecord {
                m_pre: 0,
                t_pre: 0,
                channel_pre: None,
                posttest: Some(*post),
            })
            .unwrap();
            false_any += r.false_any;
            weighted += crate::model::discernment(
                &OutcomeRecord {
                    m_pre: 0,
                    t_pre: 0,
                    channel_pre: None,
                    posttest: Some(*post),
                },
                Default::default(),
                Phase::Post,
            )
            .unwrap();
        }
        let n = population.units.len() as f64;
        close(false_any / n, 0.47, 0.02);
        close(weighted / n, -0.48, 0.03);
    }

    #[test]
    fn oracle_means_agree_with_empirical_posttest_means() {
        // Generator self-consistency: the closed-form conditional mean
        // matches a Monte-Carlo average of the generated counts.
        let mut spec = DgpSpec::flat(2, 1, 77);
        spec.false_coefs = vec![0.05];
        spec.arm_false_shift = vec![0.0, -0.08];
        spec.arm_true_shift = vec![0.0, 0.05];
        spec.channel_correlation = 0.4;
        let population = generate_population(&spec, 20_000).unwrap();
        let measure = OutcomeMeasure::Discernment(Default::default());
        for arm in 0..2 {
            let oracle = population.oracle_mean(arm, &measure);
            let empirical: f64 = population
                .units
                .iter()
                .map(|u| {
                    measure.value(&u.outcome_under(arm)).unwrap()
                })
                .sum::<f64>()
                / population.units.len() as f64;
            close(empirical, oracle, 0.02);
        }
    }

    #[test]
    fn weighted_oracle_is_the_count_formula_applied_to_question_probs() {
        // Two code paths for m(x, w) must agree on a grid: the oracle
        // accessor vs the formula 4 (w_f p_f + w_t p_t) from raw
        // per-question probabilities.
        let spec = DgpSpec::calibrated(5, 1);
        let weights = ResponseWeights::default();
        let measure = OutcomeMeasure::Discernment(weights);
        for &x0 in &[-2.0, -0.5, 0.0, 0.5, 2.0] {
            for &x1 in &[-1.0, 1.0] {
                let features = vec![x0, x1, 0.3, -0.2];
                for arm in 0..5 {
                    let (p_f, p_t) = spec.probs(&features, arm);
                    let direct = 4.0 * (weights.w_false * p_f + weights.w_true * p_t);
                    assert_eq!(spec.oracle_value(&features, arm, &measure), direct);
                }
            }
        }
    }

    #[test]
    fn channel_correlation_leaves_marginals_exact() {
        // Timeline share rate equals the per-question probability no
        // matter the within-stimulus correlation.
        for &rho in &[0.0, 0.5, 0.9] {
            let mut spec = DgpSpec::flat(1, 0, 123);
            spec.channel_correlation = rho;
            spec.base_false = 0.3;
            let population = generate_population(&spec, 20_000).unwrap();
            let rate: f64 = population
                .units
                .iter()
                .map(|u| {
                    f64::from(u.potential[0].channel.unwrap().false_cells[0][0])
                })
                .sum::<f64>()
                / population.units.len() as f64;
            close(rate, 0.3, 0.015);
        }
    }

    #[test]
    fn any_channel_prob_reference_points() {
        // Independent channels: complement product, exactly.
        close(any_channel_prob(0.272, 0.0), 1.0 - 0.728 * 0.728, 1e-15);
        // Perfectly extreme probabilities.
        assert_eq!(any_channel_prob(0.0, 0.5), 0.0);
        assert_eq!(any_channel_prob(1.0, 0.5), 1.0);
        // Correlation shrinks the any-channel rate toward the marginal.
        let independent = any_channel_prob(0.3, 0.0);
        let correlated = any_channel_prob(0.3, 0.6);
        assert!(correlated < independent);
        assert!(correlated > 0.3);
        // Against a Monte-Carlo evaluation of the same quantity.
        let mut spec = DgpSpec::flat(1, 0, 2024);
        spec.channel_correlation = 0.6;
        spec.base_false = 0.3;
        let population = generate_population(&spec, 30_000).unwrap();
        let mc: f64 = population
            .units
            .iter()
            .map(|u| {
                let cells = u.potential[0].channel.unwrap().false_cells;
                f64::from(cells[0][0] == 1 || cells[0][1] == 1)
            })
            .sum::<f64>()
            / population.units.len() as f64;
        close(mc, correlated, 0.01);
    }

    #[test]
    fn common_random_numbers_couple_arms_monotonically() {
        // A uniformly better arm (lower false threshold) can never share
        // MORE false headlines than control for the same unit.
        let mut spec = DgpSpec::flat(2, 0, 8);
        spec.arm_false_shift = vec![0.0, -0.1];
        let population = generate_population(&spec, 2000).unwrap();
        for unit in &population.units {
            assert!(unit.potential[1].m_post <= unit.potential[0].m_post);
        }
    }

    #[test]
    fn attrition_rate_tracks_the_logistic_model() {
        let mut spec = DgpSpec::flat(1, 0, 55);
        spec.attrition = Some(AttritionSpec { intercept: 1.0, coefs: vec![] });
        let population = generate_population(&spec, 20_000).unwrap();
        let rate = population.units.iter().filter(|u| u.completes).count() as f64
            / population.units.len() as f64;
        close(rate, 1.0 / (1.0 + (-1.0f64).exp()), 0.01); // sigmoid(1) = 0.731
        // No attrition spec: everyone completes.
        let spec = DgpSpec::flat(1, 0, 55);
        let population = generate_population(&spec, 500).unwrap();
        assert!(population.units.iter().all(|u| u.completes));
    }

    #[test]
    fn spec_validation_catches_inconsistencies() {
        let mut spec = DgpSpec::flat(3, 2, 0);
        spec.arm_false_shift = vec![0.0; 2];
        assert!(matches!(generate_population(&spec, 5), Err(SimError::BadSpec(_))));
        let mut spec = DgpSpec::flat(3, 2, 0);
        spec.het_feature = Some(2);
        assert!(matches!(generate_population(&spec, 5), Err(SimError::BadSpec(_))));
        let mut spec = DgpSpec::flat(3, 2, 0);
        spec.channel_correlation = 1.0;
        assert!(matches!(generate_population(&spec, 5), Err(SimError::BadSpec(_))));
    }

    fn small_learning_config(k: usize, p: usize, first: usize, later: usize) -> ExperimentConfig {
        ExperimentConfig {
            arm_space: ArmSpace::Flat {
                labels: (0..k).map(|i| format!("arm{i}")).collect(),
            },
            n_features: p,
            schedule: BatchSchedule {
                first_batch_size: first,
                subsequent_batch_size: later,
                max_units: usize::MAX,
            },
            mode: AssignmentMode::Blts {
                bandit: BanditConfig {
                    n_posterior_draws: 300,
                    noise_var: NoiseVariance::Fixed { value: 1.0 },
                    ..BanditConfig::new(k, p, 17)
                },
            },
            measure: OutcomeMeasure::Discernment(Default::default()),
            seed: 41,
        }
    }

    #[test]
    fn learning_run_advances_batches_on_schedule_and_replays() {
        let mut spec = DgpSpec::flat(3, 2, 10);
        spec.arm_true_shift = vec![0.0, 0.1, 0.2];
        let population = generate_population(&spec, 120).unwrap();
        let experiment =
            simulate_learning(&population, small_learning_config(3, 2, 40, 25)).unwrap();
        // 120 units with batches (40, 25): advances at 40, 65, 90, 115.
        assert_eq!(experiment.batch(), 4);
        assert_eq!(experiment.n_assigned(), 120);
        let advances: Vec<usize> = experiment
            .events()
            .iter()
            .filter_map(|e| match e {
                EventRecord::BatchAdvance { new_batch, .. } => Some(*new_batch),
                _ => None,
            })
            .collect();
        assert_eq!(advances, vec![1, 2, 3, 4]);
        // The log replays to an identical experiment.
        let replayed = crate::experiment::Experiment::replay(
            experiment.config().clone(),
            experiment.events(),
        )
        .unwrap();
        assert_eq!(replayed.events(), experiment.events());
        // And the exported dataset validates.
        experiment.export_dataset().validate().unwrap();
    }

    #[test]
    fn exact_batch_boundary_does_not_trigger_a_trailing_refit() {
        let spec = DgpSpec::flat(2, 0, 3);
        let population = generate_population(&spec, 40).unwrap();
        let experiment =
            simulate_learning(&population, small_learning_config(2, 0, 20, 20)).unwrap();
        // Second batch fills exactly at unit 40; no advance afterwards.
        assert_eq!(experiment.batch(), 1);
        assert_eq!(experiment.assigned_in_batch(), 20);
    }

    #[test]
    fn zero_attrition_learning_data_is_fully_complete() {
        let spec = DgpSpec::flat(2, 1, 13);
        let population = generate_population(&spec, 60).unwrap();
        let experiment =
            simulate_learning(&population, small_learning_config(2, 1, 30, 30)).unwrap();
        let dataset = experiment.export_dataset();
        assert!(dataset.units.iter().all(|u| u.outcome.completed()));
    }

    #[test]
    fn evaluation_run_spreads_conditions_evenly_and_resolves_policies() {
        let mut spec = DgpSpec::flat(3, 1, 21);
        spec.arm_true_shift = vec![0.0, 0.05, 0.1];
        let population = generate_population(&spec, 300).unwrap();
        let conditions = vec![
            ConditionSpec::Cell { arm: 0 },
            ConditionSpec::Cell { arm: 2 },
            ConditionSpec::Policy { policy: Policy::Constant { arm: 1 } },
            ConditionSpec::Cell { arm: 1 },
            ConditionSpec::Cell { arm: 2 },
            ConditionSpec::Policy { policy: Policy::Constant { arm: 0 } },
        ];
        let run = simulate_evaluation(
            &population,
            &conditions,
            OutcomeMeasure::Discernment(Default::default()),
            5,
        )
        .unwrap();
        let dataset = run.experiment.export_dataset();
        assert_eq!(dataset.n_arms(), 6);
        for unit in &dataset.units {
            for &p in &unit.propensities {
                close(p, 1.0 / 6.0, 1e-15);
            }
        }
        // Policies resolve to their constant arms; cells to themselves.
        for (i, event) in run
            .experiment
            .events()
            .iter()
            .filter_map(|e| match e {
                EventRecord::Assignment(a) => Some(a),
                _ => None,
            })
            .enumerate()
        {
            let expected = match &conditions[event.arm] {
                ConditionSpec::Cell { arm } => *arm,
                ConditionSpec::Policy { policy } => match policy {
                    Policy::Constant { arm } => *arm,
                    _ => unreachable!(),
                },
            };
            assert_eq!(run.resolved_arms[i], expected);
        }
        assert_eq!(run.condition_labels[0], "0:cell0");
        assert_eq!(run.condition_labels[2], "2:policy");
    }

    #[test]
    fn evaluation_outcomes_come_from_the_resolved_arm() {
        // With a deterministic contrast between arms (clamp bounds 0/1),
        // the recorded posttest must match the resolved arm's potential.
        let mut spec = DgpSpec::flat(2, 0, 9);
        spec.prob_clamp = (0.0, 1.0);
        spec.base_false = 0.0;
        spec.base_true = 1.0;
        spec.arm_false_shift = vec![0.0, 1.0]; // arm 1 shares everything false
        spec.arm_true_shift = vec![0.0, -1.0];
        let population = generate_population(&spec, 100).unwrap();
        let conditions = vec![
            ConditionSpec::Cell { arm: 0 },
            ConditionSpec::Cell { arm: 1 },
        ];
        let run = simulate_evaluation(
            &population,
            &conditions,
            OutcomeMeasure::Discernment(Default::default()),
            2,
        )
        .unwrap();
        let dataset = run.experiment.export_dataset();
        for unit in &dataset.units {
            let post = unit.outcome.posttest.unwrap();
            match unit.arm {
                0 => {
                    assert_eq!(post.m_post, 0);
                    assert_eq!(post.t_post, 4);
                }
                1 => {
                    assert_eq!(post.m_post, 4);
                    assert_eq!(post.t_post, 0);
                }
                _ => unreachable!(),
            }
        }
    }
}
