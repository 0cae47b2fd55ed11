//! Design-level diagnostics computed against the generating truth:
//! realized value of an adaptive run versus counterfactual allocations,
//! and confidence-interval coverage of post-experiment estimators over
//! repeated simulated experiments.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::{generate_population, simulate_learning, DgpSpec, Population, SimError};
use crate::bandit::BanditConfig;
use crate::estimators::mu::{fit_conditional_means, MuMethod, MuMode};
use crate::estimators::{aipw_scores, mean_response, WeightScheme};
use crate::experiment::{
    AssignmentMode, BatchSchedule, EventRecord, Experiment, ExperimentConfig,
};
use crate::model::{ArmSpace, OutcomeMeasure};
use crate::rng::mix3;
use crate::stats::{sample_sd, Estimate};

// ---------------------------------------------------------------------------
// Regret accounting
// ---------------------------------------------------------------------------

/// Assignment quality within one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchShareRow {
    pub batch: usize,
    pub n_units: usize,
    /// Mean assignment probability placed on the oracle-best arm.
    pub mean_best_arm_probability: f64,
    /// Fraction of realized assignments that hit the oracle-best arm.
    pub best_arm_share: f64,
}

/// How much response the adaptive allocation earned, measured with the
/// generating truth (no sampling noise in the comparison).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// Arm with the best population oracle mean under the measure's
    /// orientation.
    pub best_arm: usize,
    /// Oracle conditional mean of each realized assignment, averaged.
    pub in_experiment_mean: f64,
    /// Oracle mean had the same units been assigned uniformly at random.
    pub uniform_counterfactual: f64,
    /// Oracle mean had every unit received the best arm.
    pub best_arm_mean: f64,
    /// `in_experiment_mean - uniform_counterfactual`, signed so that
    /// positive is better under the measure's orientation.
    pub oriented_advantage: f64,
    pub by_batch: Vec<BatchShareRow>,
}

/// Score a learning run's assignments against the generating truth. The
/// experiment's arms must be the population's arms (learning stage, not a
/// condition-space evaluation stage).
pub fn regret_report(
    population: &Population,
    experiment: &Experiment,
    measure: &OutcomeMeasure,
) -> Result<RegretReport, SimError> {
    let k = population.spec.n_arms;
    let design_arms = experiment.config().arm_space.n_arms();
    if design_arms != k {
        return Err(SimError::ArmMismatch { design: design_arms, dgp: k });
    }
    let by_id: HashMap<&str, &super::SimUnit> =
        population.units.iter().map(|u| (u.unit_id.as_str(), u)).collect();
    let best_arm = population.best_arm(measure);

    let mut realized_sum = 0.0;
    let mut uniform_sum = 0.0;
    let mut best_sum = 0.0;
    let mut n = 0usize;
    #[derive(Default)]
    struct BatchAccumulator {
        n: usize,
        prob_sum: f64,
        hits: usize,
    }
    let mut batches: Vec<BatchAccumulator> = Vec::new();
    for event in experiment.events() {
        let EventRecord::Assignment(a) = event else { continue };
        let unit = by_id
            .get(a.unit_id.as_str())
            .ok_or_else(|| SimError::UnknownUnit(a.unit_id.clone()))?;
        let features = &unit.context.features;
        realized_sum += population.spec.oracle_value(features, a.arm, measure);
        uniform_sum += (0..k)
            .map(|w| population.spec.oracle_value(features, w, measure))
            .sum::<f64>()
            / k as f64;
        best_sum += population.spec.oracle_value(features, best_arm, measure);
        n += 1;
        if batches.len() <= a.batch_index {
            batches.resize_with(a.batch_index + 1, BatchAccumulator::default);
        }
        let acc = &mut batches[a.batch_index];
        acc.n += 1;
        acc.prob_sum += a.probabilities[best_arm];
        acc.hits += usize::from(a.arm == best_arm);
    }
    if n == 0 {
        return Err(SimError::BadSpec("regret report needs at least one assignment".into()));
    }
    let nf = n as f64;
    let in_experiment_mean = realized_sum / nf;
    let uniform_counterfactual = uniform_sum / nf;
    let sign = if measure.higher_is_better() { 1.0 } else { -1.0 };
    Ok(RegretReport {
        best_arm,
        in_experiment_mean,
        uniform_counterfactual,
        best_arm_mean: best_sum / nf,
        oriented_advantage: sign * (in_experiment_mean - uniform_counterfactual),
        by_batch: batches
            .into_iter()
            .enumerate()
            .filter(|(_, acc)| acc.n > 0)
            .map(|(batch, acc)| BatchShareRow {
                batch,
                n_units: acc.n,
                mean_best_arm_probability: acc.prob_sum / acc.n as f64,
                best_arm_share: acc.hits as f64 / acc.n as f64,
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Coverage experiments
// ---------------------------------------------------------------------------

/// Assignment design simulated inside a coverage experiment. The bandit
/// seed (and the experiment seed) are re-derived per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum CoverageDesign {
    Uniform,
    Blts { bandit: BanditConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageConfig {
    /// Generating truth; its seed is re-derived per replication.
    pub spec: DgpSpec,
    pub design: CoverageDesign,
    pub schedule: BatchSchedule,
    pub n_units: usize,
    pub n_reps: usize,
    pub measure: OutcomeMeasure,
    /// Conditional-mean model for the doubly robust estimators.
    pub mu_method: MuMethod,
    pub mu_mode: MuMode,
    pub seed: u64,
}

impl CoverageConfig {
    pub fn new(
        spec: DgpSpec,
        design: CoverageDesign,
        schedule: BatchSchedule,
        n_units: usize,
        n_reps: usize,
        seed: u64,
    ) -> Self {
        CoverageConfig {
            spec,
            design,
            schedule,
            n_units,
            n_reps,
            measure: OutcomeMeasure::Discernment(Default::default()),
            mu_method: MuMethod::default(),
            mu_mode: MuMode::Historical,
            seed,
        }
    }
}

pub const COVERAGE_ESTIMATORS: [&str; 3] = ["naive", "aipw_uniform", "aipw_stabilized"];

/// One estimator x arm summary over the replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub estimator: String,
    pub arm: usize,
    /// Share of computable replications whose 95% interval covered the
    /// replication's own oracle mean.
    pub coverage: f64,
    pub mean_ci_width: f64,
    pub mean_error: f64,
    /// Replications where the estimator produced an estimate.
    pub n_evaluated: usize,
}

/// Repeatedly simulate (population, experiment, estimate) and count how
/// often each estimator's 95% interval covers the replication's oracle
/// arm mean. The naive estimator is the unweighted sample mean over the
/// arm's completed units; the doubly robust estimators differ in their
/// adaptive weighting.
pub fn coverage_experiment(config: &CoverageConfig) -> Result<Vec<CoverageCell>, SimError> {
    config.spec.validate()?;
    if config.n_reps == 0 {
        return Err(SimError::BadSpec("coverage needs at least one replication".into()));
    }
    if config.n_units == 0 {
        return Err(SimError::BadSpec("coverage needs at least one unit".into()));
    }
    let k = config.spec.n_arms;
    #[derive(Default, Clone)]
    struct Tally {
        covered: usize,
        width_sum: f64,
        error_sum: f64,
        n: usize,
    }
    let mut tallies = vec![vec![Tally::default(); k]; COVERAGE_ESTIMATORS.len()];

    for rep in 0..config.n_reps {
        let rep64 = rep as u64;
        let mut spec = config.spec.clone();
        spec.seed = mix3(config.seed, 0x706F7075, rep64); // population stream
        let population = generate_population(&spec, config.n_units)?;

        let mode = match &config.design {
            CoverageDesign::Uniform => AssignmentMode::Uniform,
            CoverageDesign::Blts { bandit } => {
                let mut bandit = bandit.clone();
                bandit.seed = mix3(config.seed, 0x62616E64, rep64); // bandit stream
                AssignmentMode::Blts { bandit }
            }
        };
        let mut schedule = config.schedule.clone();
        schedule.max_units = schedule.max_units.max(config.n_units);
        let experiment_config = ExperimentConfig {
            arm_space: ArmSpace::Flat {
                labels: (0..k).map(|w| format!("arm{w}")).collect(),
            },
            n_features: spec.n_features,
            schedule,
            mode,
            measure: config.measure.clone(),
            seed: mix3(config.seed, 0x65787065, rep64), // experiment stream
        };
        let experiment = simulate_learning(&population, experiment_config)?;
        let dataset = experiment.export_dataset();

        let truths: Vec<f64> =
            (0..k).map(|w| population.oracle_mean(w, &config.measure)).collect();

        // Naive: per-arm unweighted sample mean of completed responses.
        for arm in 0..k {
            let values: Vec<f64> = dataset
                .units
                .iter()
                .filter(|u| u.arm == arm && u.outcome.completed())
                .map(|u| config.measure.value(&u.outcome).expect("completed unit"))
                .collect();
            if values.is_empty() {
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let se = sample_sd(&values) / (values.len() as f64).sqrt();
            let estimate = Estimate::from_value_se(mean, se, values.len());
            record(&mut tallies[0][arm], &estimate, truths[arm]);
        }

        // Doubly robust, with and without stabilizing weights.
        let mu = fit_conditional_means(&dataset, &config.measure, &config.mu_method, &config.mu_mode)?;
        let table = aipw_scores(&dataset, &config.measure, &mu)?;
        let stabilized = table.clone().with_adaptive_weights(WeightScheme::StabilizedVariance);
        for arm in 0..k {
            record(&mut tallies[1][arm], &mean_response(&table, arm, None)?, truths[arm]);
            record(&mut tallies[2][arm], &mean_response(&stabilized, arm, None)?, truths[arm]);
        }
    }

    let mut cells = Vec::with_capacity(COVERAGE_ESTIMATORS.len() * k);
    for (e, name) in COVERAGE_ESTIMATORS.iter().enumerate() {
        for (arm, tally) in tallies[e].iter().enumerate() {
            let nf = tally.n.max(1) as f64;
            cells.push(CoverageCell {
                estimator: (*name).to_string(),
                arm,
                coverage: tally.covered as f64 / nf,
                mean_ci_width: tally.width_sum / nf,
                mean_error: tally.error_sum / nf,
                n_evaluated: tally.n,
            });
        }
    }
    return Ok(cells);

    fn record(tally: &mut Tally, estimate: &Estimate, truth: f64) {
        tally.n += 1;
        tally.covered += usize::from(estimate.covers(truth));
        tally.width_sum += estimate.ci_upper - estimate.ci_lower;
        tally.error_sum += estimate.value - truth;
    }
}

/// Pick the coverage cell for one estimator and arm.
pub fn coverage_cell<'a>(
    cells: &'a [CoverageCell],
    estimator: &str,
    arm: usize,
) -> Option<&'a CoverageCell> {
    cells.iter().find(|c| c.estimator == estimator && c.arm == arm)
}

#[cfg(test)]
mod tests {
    use super::super::{ConditionSpec, simulate_evaluation};
    use super::*;
    use crate::bandit::NoiseVariance;

    fn measure() -> OutcomeMeasure {
        OutcomeMeasure::Discernment(Default::default())
    }

    fn schedule(first: usize, later: usize) -> BatchSchedule {
        BatchSchedule { first_batch_size: first, subsequent_batch_size: later, max_units: usize::MAX }
    }

    fn learning_config(k: usize, p: usize, first: usize, later: usize, draws: usize) -> ExperimentConfig {
        ExperimentConfig {
            arm_space: ArmSpace::Flat { labels: (0..k).map(|i| format!("arm{i}")).collect() },
            n_features: p,
            schedule: schedule(first, later),
            mode: AssignmentMode::Blts {
                bandit: BanditConfig {
                    n_posterior_draws: draws,
                    noise_var: NoiseVariance::Fixed { value: 1.0 },
                    ..BanditConfig::new(k, p, 23)
                },
            },
            measure: measure(),
            seed: 97,
        }
    }

    #[test]
    fn null_dgp_has_exactly_zero_regret() {
        let spec = DgpSpec::flat(3, 1, 44);
        let population = generate_population(&spec, 90).unwrap();
        let experiment =
            simulate_learning(&population, learning_config(3, 1, 30, 30, 200)).unwrap();
        let report = regret_report(&population, &experiment, &measure()).unwrap();
        // Identical arms: every allocation earns the same oracle value.
        assert_eq!(report.in_experiment_mean, report.uniform_counterfactual);
        assert_eq!(report.in_experiment_mean, report.best_arm_mean);
        assert_eq!(report.oriented_advantage, 0.0);
        assert_eq!(report.best_arm, 0);
        let total: usize = report.by_batch.iter().map(|b| b.n_units).sum();
        assert_eq!(total, 90);
    }

    #[test]
    fn strong_effect_gives_positive_advantage_and_rising_share() {
        let mut spec = DgpSpec::flat(2, 0, 61);
        // Arm 1 hugely better on the weighted response.
        spec.arm_false_shift = vec![0.0, -0.15];
        spec.arm_true_shift = vec![0.0, 0.15];
        let population = generate_population(&spec, 600).unwrap();
        let experiment =
            simulate_learning(&population, learning_config(2, 0, 100, 100, 400)).unwrap();
        let report = regret_report(&population, &experiment, &measure()).unwrap();
        assert_eq!(report.best_arm, 1);
        assert!(report.oriented_advantage > 0.0, "{report:?}");
        let first = &report.by_batch[0];
        let last = report.by_batch.last().unwrap();
        assert!((first.mean_best_arm_probability - 0.5).abs() < 1e-12);
        assert!(last.mean_best_arm_probability > 0.75, "{report:?}");
        assert!(report.in_experiment_mean <= report.best_arm_mean + 1e-12);
    }

    #[test]
    fn lower_is_better_measures_orient_the_advantage() {
        let mut spec = DgpSpec::flat(2, 0, 29);
        spec.arm_false_shift = vec![0.0, -0.2]; // arm 1 shares less false content
        let population = generate_population(&spec, 400).unwrap();
        let mut config = learning_config(2, 0, 100, 100, 400);
        config.measure = OutcomeMeasure::FalseTimeline;
        let experiment = simulate_learning(&population, config).unwrap();
        let report = regret_report(&population, &experiment, &OutcomeMeasure::FalseTimeline).unwrap();
        assert_eq!(report.best_arm, 1);
        // in-experiment false-share rate is LOWER than uniform, so the
        // oriented advantage is positive.
        assert!(report.in_experiment_mean < report.uniform_counterfactual);
        assert!(report.oriented_advantage > 0.0);
    }

    #[test]
    fn regret_report_rejects_condition_space_experiments() {
        let spec = DgpSpec::flat(3, 0, 8);
        let population = generate_population(&spec, 30).unwrap();
        let run = simulate_evaluation(
            &population,
            &[ConditionSpec::Cell { arm: 0 }, ConditionSpec::Cell { arm: 1 }],
            measure(),
            4,
        )
        .unwrap();
        let err = regret_report(&population, &run.experiment, &measure()).unwrap_err();
        assert!(matches!(err, SimError::ArmMismatch { design: 2, dgp: 3 }));
    }

    #[test]
    fn uniform_coverage_is_near_nominal_on_a_small_run() {
        let mut spec = DgpSpec::flat(2, 0, 0);
        spec.arm_true_shift = vec![0.0, 0.05];
        let config = CoverageConfig::new(
            spec,
            CoverageDesign::Uniform,
            schedule(200, 200),
            200,
            60,
            314,
        );
        let cells = coverage_experiment(&config).unwrap();
        assert_eq!(cells.len(), 6); // 3 estimators x 2 arms
        for cell in &cells {
            assert_eq!(cell.n_evaluated, 60);
            // Loose band: 60 reps of a nominal-0.95 interval.
            assert!(cell.coverage >= 0.80, "{cell:?}");
            assert!(cell.mean_ci_width > 0.0);
        }
        // Determinism.
        let again = coverage_experiment(&config).unwrap();
        assert_eq!(cells, again);
    }

    #[test]
    fn degenerate_noiseless_outcomes_give_naive_point_intervals() {
        // Clamp bounds at {0, 1} with extreme bases: within an arm every
        // unit answers identically. The per-arm sample mean is then a
        // zero-width interval sitting exactly on the truth. The doubly
        // robust estimators keep finite widths: their first-batch
        // conditional-mean model pools across arms, so the correction
        // term varies with the realized assignment.
        let mut spec = DgpSpec::flat(2, 0, 5);
        spec.prob_clamp = (0.0, 1.0);
        spec.base_false = 0.0;
        spec.base_true = 1.0;
        spec.arm_false_shift = vec![0.0, 1.0];
        spec.arm_true_shift = vec![0.0, -1.0];
        let config = CoverageConfig::new(
            spec,
            CoverageDesign::Uniform,
            schedule(100, 100),
            100,
            5,
            77,
        );
        let cells = coverage_experiment(&config).unwrap();
        for cell in cells {
            assert_eq!(cell.n_evaluated, 5, "{cell:?}");
            if cell.estimator == "naive" {
                assert_eq!(cell.coverage, 1.0, "{cell:?}");
                assert!(cell.mean_ci_width.abs() < 1e-9, "{cell:?}");
                assert!(cell.mean_error.abs() < 1e-12, "{cell:?}");
            } else {
                assert!(cell.mean_ci_width > 0.0, "{cell:?}");
            }
        }
    }

    #[test]
    fn blts_coverage_runs_and_reports_all_cells() {
        let mut spec = DgpSpec::flat(2, 0, 3);
        spec.arm_true_shift = vec![0.0, 0.08];
        let bandit = BanditConfig {
            n_posterior_draws: 300,
            noise_var: NoiseVariance::Fixed { value: 1.0 },
            ..BanditConfig::new(2, 0, 1)
        };
        let config = CoverageConfig::new(
            spec,
            CoverageDesign::Blts { bandit },
            schedule(60, 60),
            180,
            8,
            2718,
        );
        let cells = coverage_experiment(&config).unwrap();
        assert_eq!(cells.len(), 6);
        for name in COVERAGE_ESTIMATORS {
            for arm in 0..2 {
                let cell = coverage_cell(&cells, name, arm).unwrap();
                assert_eq!(cell.n_evaluated, 8, "{cell:?}");
            }
        }
    }
}
