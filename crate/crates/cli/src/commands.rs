//! The subcommand bodies. Each takes its parsed config plus the output
//! directory, writes its artifact files atomically, and returns a one-line
//! JSON summary for standard output.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use adex_core::estimators::censor::censoring_weights;
use adex_core::estimators::mu::{fit_conditional_means, fit_mu_predictor};
use adex_core::estimators::sweep::{weight_sweep, SweepConfig};
use adex_core::estimators::{aipw_scores, contrast, mean_response, ScoreTable};
use adex_core::experiment::{write_event_log, AssignmentMode, Experiment, ExperimentConfig};
use adex_core::model::{
    meta_path, read_dataset_csv, write_dataset_csv, CovariateContext, Dataset, DatasetMeta,
    OutcomeMeasure, ResponseWeights,
};
use adex_core::policy::rate::toc_rate;
use adex_core::policy::{
    apply_policy, evaluate_policy, learn_greedy_policy, learn_restricted_policy, on_policy_share,
    overlap, BatchShare, Policy, RestrictedConfig,
};
use adex_core::sim::report::{coverage_experiment, regret_report, CoverageConfig, RegretReport};
use adex_core::sim::{generate_population, simulate_evaluation, simulate_learning, ConditionSpec};
use adex_core::stats::Estimate;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    require_seed, ConditionConfig, CoverageCmdConfig, DesignConfig, EstimateConfig,
    PolicyCmdConfig, PriorityConfig, RateCmdConfig, RuleConfig, SimulateConfig, SweepCmdConfig,
};
use crate::error::CliError;
use crate::output::{
    atomic_write, build_csv, estimate_cells, fmt_f64, measure_label, write_json,
    ESTIMATE_CELL_HEADERS,
};

// ---------------------------------------------------------------------------
// Shared input handling
// ---------------------------------------------------------------------------

/// Load a dataset CSV plus its metadata sidecar (`<dataset>.meta.json`
/// unless overridden) and validate it.
pub fn load_dataset(dataset: &Path, meta: &Option<PathBuf>) -> Result<Dataset, CliError> {
    let meta_file = meta.clone().unwrap_or_else(|| meta_path(dataset));
    let meta = DatasetMeta::read_from(&meta_file).map_err(|e| {
        CliError::Data(format!("cannot read dataset metadata {}: {e}", meta_file.display()))
    })?;
    let file = File::open(dataset).map_err(|e| {
        CliError::Data(format!("cannot read dataset {}: {e}", dataset.display()))
    })?;
    let dataset = read_dataset_csv(BufReader::new(file), meta.arm_space)?;
    dataset.validate()?;
    Ok(dataset)
}

/// Load a policy JSON file written by the `policy` subcommand.
pub fn load_policy(path: &Path) -> Result<Policy, CliError> {
    let file = File::open(path).map_err(|e| {
        CliError::Data(format!("cannot read policy file {}: {e}", path.display()))
    })?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Data(format!("bad policy file {}: {e}", path.display())))
}

fn dataset_meta(experiment: &Experiment) -> DatasetMeta {
    let config = experiment.config();
    DatasetMeta {
        arm_space: config.arm_space.clone(),
        n_features: config.n_features,
        response_weights: match config.measure {
            OutcomeMeasure::Discernment(w) => Some(w),
            _ => None,
        },
    }
}

/// Write the three artifacts every simulation produces: the replayable
/// event log, the analysis dataset, and its metadata sidecar.
fn write_run_files(experiment: &Experiment, out: &Path) -> Result<Value, CliError> {
    let events_path = out.join("events.jsonl");
    let mut buffer = Vec::new();
    write_event_log(&mut buffer, experiment.events())?;
    atomic_write(&events_path, &buffer)?;

    let dataset_path = out.join("dataset.csv");
    let dataset = experiment.export_dataset();
    let mut csv_bytes = Vec::new();
    write_dataset_csv(&dataset, &mut csv_bytes)?;
    atomic_write(&dataset_path, &csv_bytes)?;
    write_json(&meta_path(&dataset_path), &dataset_meta(experiment))?;

    Ok(json!({
        "events": events_path,
        "dataset": dataset_path,
        "meta": meta_path(&dataset_path),
    }))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct EvaluationReport {
    condition_labels: Vec<String>,
    /// Units assigned to each condition.
    n_per_condition: Vec<usize>,
    /// Share of units whose resolved underlying arm was each arm of the
    /// generating process.
    resolved_arm_share: Vec<f64>,
}

pub fn cmd_simulate(
    config: SimulateConfig,
    seed_flag: Option<u64>,
    out: &Path,
) -> Result<Value, CliError> {
    let spec = config.dgp.build()?;
    let seed = require_seed(seed_flag, config.seed)?;
    let population = generate_population(&spec, config.n_units)?;
    log::info!("population of {} units drawn ({} arms)", config.n_units, spec.n_arms);

    let (experiment, report): (Experiment, Value) = match &config.design {
        DesignConfig::Learning { arm_space, schedule, bandit } => {
            let experiment_config = ExperimentConfig {
                arm_space: arm_space.clone(),
                n_features: spec.n_features,
                schedule: *schedule,
                mode: AssignmentMode::Blts { bandit: bandit.clone() },
                measure: config.measure,
                seed,
            };
            let experiment = simulate_learning(&population, experiment_config)?;
            let report = regret_report(&population, &experiment, &config.measure)?;
            (experiment, serde_json::to_value(&report).map_err(internal)?)
        }
        DesignConfig::Uniform { arm_space, schedule } => {
            let experiment_config = ExperimentConfig {
                arm_space: arm_space.clone(),
                n_features: spec.n_features,
                schedule: *schedule,
                mode: AssignmentMode::Uniform,
                measure: config.measure,
                seed,
            };
            let experiment = simulate_learning(&population, experiment_config)?;
            let report = regret_report(&population, &experiment, &config.measure)?;
            (experiment, serde_json::to_value(&report).map_err(internal)?)
        }
        DesignConfig::Evaluation { conditions } => {
            let conditions: Vec<ConditionSpec> = conditions
                .iter()
                .map(|c| match c {
                    ConditionConfig::Cell { arm } => Ok(ConditionSpec::Cell { arm: *arm }),
                    ConditionConfig::PolicyFile { path } => {
                        Ok(ConditionSpec::Policy { policy: load_policy(path)? })
                    }
                })
                .collect::<Result<_, CliError>>()?;
            let run = simulate_evaluation(&population, &conditions, config.measure, seed)?;
            let dataset = run.experiment.export_dataset();
            let n_conditions = conditions.len();
            let mut n_per_condition = vec![0usize; n_conditions];
            for unit in &dataset.units {
                n_per_condition[unit.arm] += 1;
            }
            let mut resolved_counts = vec![0usize; spec.n_arms];
            for &arm in &run.resolved_arms {
                resolved_counts[arm] += 1;
            }
            let total = run.resolved_arms.len().max(1) as f64;
            let report = EvaluationReport {
                condition_labels: run.condition_labels.clone(),
                n_per_condition,
                resolved_arm_share: resolved_counts.iter().map(|&c| c as f64 / total).collect(),
            };
            (run.experiment, serde_json::to_value(&report).map_err(internal)?)
        }
    };

    let files = write_run_files(&experiment, out)?;
    let report_path = out.join("report.json");
    write_json(&report_path, &report)?;

    Ok(json!({
        "command": "simulate",
        "n_assigned": experiment.n_assigned(),
        "n_completed": experiment.n_completed(),
        "n_batches": experiment.batch() + 1,
        "files": files,
        "report": report_path,
    }))
}

fn internal<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct EstimateRow {
    treatment: String,
    arm: usize,
    reference_arm: usize,
    measure: String,
    estimate: Estimate,
}

/// Build the weighted score table for one measure under the shared
/// estimation options.
fn score_table(
    dataset: &Dataset,
    measure: &OutcomeMeasure,
    mu: &adex_core::estimators::mu::MuMethod,
    mu_mode: &adex_core::estimators::mu::MuMode,
    scheme: adex_core::estimators::WeightScheme,
    censor_column: &Option<Vec<Option<f64>>>,
) -> Result<ScoreTable, CliError> {
    let mu_hat = fit_conditional_means(dataset, measure, mu, mu_mode)?;
    let mut table = aipw_scores(dataset, measure, &mu_hat)?.with_adaptive_weights(scheme);
    if let Some(column) = censor_column {
        let completed = dataset.completed_indices();
        table.censor = Some(
            completed
                .iter()
                .map(|&i| column[i].expect("completed unit has a censor weight"))
                .collect(),
        );
    }
    Ok(table)
}

pub fn cmd_estimate(config: EstimateConfig, out: &Path) -> Result<Value, CliError> {
    let dataset = load_dataset(&config.dataset, &config.meta)?;
    let k = dataset.n_arms();
    if config.reference_arm >= k {
        return Err(CliError::Data(format!(
            "reference_arm {} out of range for {k} arms",
            config.reference_arm
        )));
    }
    if config.measures.is_empty() {
        return Err(CliError::Data("measures must name at least one outcome".into()));
    }
    let censor_column = match &config.censor {
        Some(censor_config) => Some(censoring_weights(&dataset, censor_config)?),
        None => None,
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut json_rows: Vec<EstimateRow> = Vec::new();
    for measure in &config.measures {
        let table = score_table(
            &dataset,
            measure,
            &config.mu,
            &config.mu_mode,
            config.scheme,
            &censor_column,
        )?;
        for arm in (0..k).filter(|&w| w != config.reference_arm) {
            let estimate = contrast(&table, arm, config.reference_arm, None)?;
            let mut row = vec![dataset.arm_space.label(arm), measure_label(measure)];
            row.extend(estimate_cells(&estimate));
            rows.push(row);
            json_rows.push(EstimateRow {
                treatment: dataset.arm_space.label(arm),
                arm,
                reference_arm: config.reference_arm,
                measure: measure_label(measure),
                estimate,
            });
        }
    }

    let mut header = vec!["treatment", "measure"];
    header.extend(ESTIMATE_CELL_HEADERS);
    let csv_path = out.join("estimate.csv");
    atomic_write(&csv_path, &build_csv(&header, &rows)?)?;
    let json_path = out.join("estimates.json");
    write_json(&json_path, &json_rows)?;

    Ok(json!({
        "command": "estimate",
        "n_rows": rows.len(),
        "n_units": dataset.units.len(),
        "files": { "csv": csv_path, "json": json_path },
    }))
}

// ---------------------------------------------------------------------------
// policy
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct PolicyReport {
    rule: &'static str,
    n_arms: usize,
    /// Completed units the policy was applied to.
    n_contexts: usize,
    /// Fraction of contexts sent to each arm.
    shares: Vec<f64>,
    /// Counterfactual value of the policy on the score table.
    value: Estimate,
    best_constant_arm: usize,
    best_constant_label: String,
    best_constant_value: Estimate,
    /// Point-estimate gain of the policy over the best constant arm,
    /// oriented so positive is better under the configured measure.
    oriented_gain_over_best_constant: f64,
    /// Fraction of contexts where the policy agrees with the best
    /// constant arm.
    overlap_with_best_constant: f64,
    /// Per-batch agreement between the dataset's realized assignments and
    /// this policy.
    on_policy_share_by_batch: Vec<BatchShare>,
}

pub fn cmd_policy(config: PolicyCmdConfig, out: &Path) -> Result<Value, CliError> {
    let dataset = load_dataset(&config.dataset, &config.meta)?;
    let k = dataset.n_arms();
    let measure = config.measure;

    let (rule_name, policy): (&'static str, Policy) = match &config.rule {
        RuleConfig::Greedy { arm_subset } => {
            let subset: Vec<usize> = arm_subset.clone().unwrap_or_else(|| (0..k).collect());
            let predictor = fit_mu_predictor(&dataset, &measure, &config.mu)?;
            ("greedy", learn_greedy_policy(predictor, &subset, &measure)?)
        }
        RuleConfig::Restricted { pair, cate } => {
            let restricted_config = RestrictedConfig {
                cate_method: cate.clone().unwrap_or_else(|| config.mu.clone()),
                mu_method: config.mu.clone(),
                mu_mode: config.mu_mode.clone(),
            };
            let policy =
                learn_restricted_policy(&dataset, (pair[0], pair[1]), &measure, &restricted_config)?;
            ("restricted", policy)
        }
        RuleConfig::Constant { arm } => {
            if *arm >= k {
                return Err(CliError::Data(format!("constant arm {arm} out of range for {k} arms")));
            }
            ("constant", Policy::Constant { arm: *arm })
        }
    };

    // Evaluate the policy and the constant-arm baselines on one table.
    let table = score_table(&dataset, &measure, &config.mu, &config.mu_mode, config.scheme, &None)?;
    let completed = dataset.completed_indices();
    let contexts: Vec<CovariateContext> =
        completed.iter().map(|&i| dataset.units[i].context.clone()).collect();
    let application = apply_policy(&policy, &contexts, k)?;
    let value = evaluate_policy(&policy, &table, &contexts, None)?;

    let sign = if measure.higher_is_better() { 1.0 } else { -1.0 };
    let mut best: Option<(usize, Estimate)> = None;
    for arm in 0..k {
        // Arms with no realized units cannot be estimated; skip them.
        let Ok(estimate) = mean_response(&table, arm, None) else { continue };
        let better = match &best {
            Some((_, current)) => sign * estimate.value > sign * current.value,
            None => true,
        };
        if better {
            best = Some((arm, estimate));
        }
    }
    let (best_arm, best_value) =
        best.ok_or_else(|| CliError::Data("no arm has any completed units".into()))?;

    let report = PolicyReport {
        rule: rule_name,
        n_arms: k,
        n_contexts: contexts.len(),
        shares: application.shares.clone(),
        value: value.clone(),
        best_constant_arm: best_arm,
        best_constant_label: dataset.arm_space.label(best_arm),
        best_constant_value: best_value.clone(),
        oriented_gain_over_best_constant: sign * (value.value - best_value.value),
        overlap_with_best_constant: overlap(
            &application.assignments,
            &vec![best_arm; application.assignments.len()],
        )?,
        on_policy_share_by_batch: on_policy_share(&dataset, &policy)?,
    };

    let policy_path = out.join("policy.json");
    write_json(&policy_path, &policy)?;
    let report_path = out.join("report.json");
    write_json(&report_path, &report)?;

    Ok(json!({
        "command": "policy",
        "rule": rule_name,
        "value": value.value,
        "best_constant_arm": best_arm,
        "oriented_gain_over_best_constant": report.oriented_gain_over_best_constant,
        "files": { "policy": policy_path, "report": report_path },
    }))
}

// ---------------------------------------------------------------------------
// rate
// ---------------------------------------------------------------------------

pub fn cmd_rate(
    config: RateCmdConfig,
    seed_flag: Option<u64>,
    out: &Path,
) -> Result<Value, CliError> {
    let dataset = load_dataset(&config.dataset, &config.meta)?;
    let pair = (config.pair[0], config.pair[1]);
    let mu_hat = fit_conditional_means(&dataset, &config.measure, &config.mu, &config.mu_mode)?;
    let table = aipw_scores(&dataset, &config.measure, &mu_hat)?;
    let completed = dataset.completed_indices();

    let priorities: Vec<f64> = match &config.priority {
        PriorityConfig::Feature { index, sign } => {
            if *index >= dataset.n_features {
                return Err(CliError::Data(format!(
                    "priority feature index {index} out of range ({} features)",
                    dataset.n_features
                )));
            }
            completed
                .iter()
                .map(|&i| sign * dataset.units[i].context.features[*index])
                .collect()
        }
        PriorityConfig::PolicyFile { path } => {
            let policy = load_policy(path)?;
            let Policy::Restricted { pair: policy_pair, cate, higher_is_better } = policy else {
                return Err(CliError::Data(
                    "priority policy must be a restricted (two-arm effect) rule".into(),
                ));
            };
            // The effect model predicts value(pair.0) - value(pair.1) in
            // raw measure units; orient it so that higher priority means
            // "assign the rate pair's first arm earlier".
            let orient = if higher_is_better { 1.0 } else { -1.0 };
            let flip = if policy_pair == pair {
                1.0
            } else if (policy_pair.1, policy_pair.0) == pair {
                -1.0
            } else {
                return Err(CliError::Data(format!(
                    "rate pair ({}, {}) does not match the policy's pair ({}, {})",
                    pair.0, pair.1, policy_pair.0, policy_pair.1
                )));
            };
            completed
                .iter()
                .map(|&i| orient * flip * cate.predict(&dataset.units[i].context.features, 0))
                .collect()
        }
    };

    let mut rate_config = config.rate.clone();
    if let Some(seed) = seed_flag {
        rate_config.seed = seed;
    }
    let curve = toc_rate(&table, pair, &priorities, &rate_config)?;

    let csv_path = out.join("toc.csv");
    atomic_write(&csv_path, curve.to_csv().as_bytes())?;
    let json_path = out.join("rate.json");
    write_json(&json_path, &curve)?;

    Ok(json!({
        "command": "rate",
        "rate": curve.rate.value,
        "std_error": curve.rate.std_error,
        "degenerate_priorities": curve.degenerate_priorities,
        "files": { "toc": csv_path, "rate": json_path },
    }))
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

pub fn cmd_sweep(config: SweepCmdConfig, out: &Path) -> Result<Value, CliError> {
    let dataset = load_dataset(&config.dataset, &config.meta)?;
    if config.grid.is_empty() {
        return Err(CliError::Data("sweep grid must contain at least one weighting".into()));
    }
    let grid: Vec<ResponseWeights> = config
        .grid
        .iter()
        .map(|&[w_false, w_true]| ResponseWeights::new(w_false, w_true))
        .collect::<Result<_, _>>()?;
    let sweep_config = SweepConfig {
        reference_arm: config.reference_arm,
        method: config.mu.clone(),
        mode: config.mu_mode.clone(),
        scheme: config.scheme,
        censor: config.censor.clone(),
    };
    let points = weight_sweep(&dataset, &grid, &sweep_config)?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for point in &points {
        for c in &point.contrasts {
            let mut row = vec![
                fmt_f64(point.weights.w_false),
                fmt_f64(point.weights.w_true),
                fmt_f64(point.abscissa),
                dataset.arm_space.label(c.arm),
            ];
            row.extend(estimate_cells(&c.estimate));
            rows.push(row);
        }
    }
    let mut header = vec!["w_false", "w_true", "abscissa", "treatment"];
    header.extend(ESTIMATE_CELL_HEADERS);
    let csv_path = out.join("sweep.csv");
    atomic_write(&csv_path, &build_csv(&header, &rows)?)?;
    let json_path = out.join("sweep.json");
    write_json(&json_path, &points)?;

    Ok(json!({
        "command": "sweep",
        "n_points": points.len(),
        "n_rows": rows.len(),
        "files": { "csv": csv_path, "json": json_path },
    }))
}

// ---------------------------------------------------------------------------
// coverage
// ---------------------------------------------------------------------------

pub fn cmd_coverage(
    config: CoverageCmdConfig,
    seed_flag: Option<u64>,
    out: &Path,
) -> Result<Value, CliError> {
    if config.n_reps < 50 {
        return Err(CliError::Data(format!(
            "n_reps must be at least 50 for a meaningful coverage fraction, got {}",
            config.n_reps
        )));
    }
    let spec = config.dgp.build()?;
    let seed = require_seed(seed_flag, config.seed)?;
    let coverage_config = CoverageConfig {
        spec,
        design: config.design.clone(),
        schedule: config.schedule,
        n_units: config.n_units,
        n_reps: config.n_reps,
        measure: config.measure,
        mu_method: config.mu.clone(),
        mu_mode: config.mu_mode.clone(),
        seed,
    };
    let cells = coverage_experiment(&coverage_config)?;

    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|cell| {
            vec![
                cell.estimator.clone(),
                cell.arm.to_string(),
                fmt_f64(cell.coverage),
                fmt_f64(cell.mean_ci_width),
                fmt_f64(cell.mean_error),
                cell.n_evaluated.to_string(),
            ]
        })
        .collect();
    let header = ["estimator", "arm", "coverage", "mean_ci_width", "mean_error", "n_evaluated"];
    let csv_path = out.join("coverage.csv");
    atomic_write(&csv_path, &build_csv(&header, &rows)?)?;
    let json_path = out.join("coverage.json");
    write_json(&json_path, &cells)?;

    Ok(json!({
        "command": "coverage",
        "n_cells": cells.len(),
        "files": { "csv": csv_path, "json": json_path },
    }))
}

// ---------------------------------------------------------------------------
// Regret summary type re-export for callers that read report.json
// ---------------------------------------------------------------------------

/// The learning-stage report type written to `report.json` (re-exported so
/// tooling can deserialize it without depending on the core crate).
pub type LearningReport = RegretReport;
