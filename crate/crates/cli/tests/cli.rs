//! End-to-end tests of the binary: simulation determinism, the
//! estimate/sweep consistency contract, the policy -> rate -> evaluation
//! chain, coverage output shape, exit codes, and the help/config drift
//! check.

mod common;

use std::collections::BTreeSet;
use std::path::Path;

use common::{adex, adex_in, read_bytes, read_csv, write};

// ---------------------------------------------------------------------------
// Config fixtures
// ---------------------------------------------------------------------------

const LEARNING_SIMULATE: &str = r#"
n_units = 120

[measure]
kind = "discernment"
w_false = -1.0
w_true = 0.5

[dgp]
preset = "flat"
n_arms = 3
n_features = 1
seed = 11
arm_true_shift = [0.0, 0.02, 0.05]
false_coefs = [0.02]
true_coefs = [0.01]

[dgp.attrition]
intercept = 2.5
coefs = [0.1]

[design]
kind = "learning"

[design.arm_space]
kind = "flat"
labels = ["a", "b", "c"]

[design.schedule]
first_batch_size = 50
subsequent_batch_size = 35
max_units = 120

[design.bandit]
n_arms = 3
n_features = 1
prior_var_main = 1e6
ridge_penalty_interactions = 1.0
n_posterior_draws = 200
probability_floor = 0.0025
seed = 7

[design.bandit.noise_var]
kind = "estimated"
floor = 1e-6
"#;

const UNIFORM_SIMULATE: &str = r#"
n_units = 200
seed = 9

[dgp]
preset = "flat"
n_arms = 5
n_features = 1
seed = 21
arm_true_shift = [0.0, 0.01, 0.02, 0.03, 0.04]
arm_false_shift = [0.0, -0.01, -0.02, -0.03, -0.04]
false_coefs = [0.03]
true_coefs = [-0.02]

[design]
kind = "uniform"

[design.arm_space]
kind = "factorial"
respondent_levels = 5
headline_levels = 1

[design.schedule]
first_batch_size = 100
subsequent_batch_size = 50
max_units = 200
"#;

/// Heterogeneous two-arm training data for policy learning.
const HET_SIMULATE: &str = r#"
n_units = 400
seed = 31

[dgp]
preset = "flat"
n_arms = 2
n_features = 1
seed = 41
het_feature = 0
arm_false_het = [0.0, -0.04]
arm_true_het = [0.0, 0.06]

[design]
kind = "uniform"

[design.arm_space]
kind = "flat"
labels = ["ctl", "trt"]

[design.schedule]
first_batch_size = 200
subsequent_batch_size = 100
max_units = 400
"#;

fn simulate_into(dir: &Path, config_text: &str, extra_args: &[&str]) -> serde_json::Value {
    let config = dir.join("simulate.toml");
    write(&config, config_text);
    let out = dir.join("out");
    let mut args =
        vec!["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra_args);
    let run = adex(&args);
    assert_eq!(run.code, 0, "simulate failed: {}", run.stderr);
    run.summary()
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[test]
fn simulate_is_deterministic_per_seed_and_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    // The config carries no seed; pass it by flag twice, then change it.
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let config = dir.path().join("simulate.toml");
    write(&config, LEARNING_SIMULATE);
    for (out, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let run = adex(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out.path().to_str().unwrap(),
        ]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        let summary = run.summary();
        assert_eq!(summary["n_assigned"], 120);
        assert_eq!(summary["n_batches"], 3);
    }
    for file in ["events.jsonl", "dataset.csv", "dataset.csv.meta.json", "report.json"] {
        assert_eq!(
            read_bytes(&a.path().join(file)),
            read_bytes(&b.path().join(file)),
            "{file} differs between identical seeded runs"
        );
    }
    assert_ne!(
        read_bytes(&a.path().join("events.jsonl")),
        read_bytes(&c.path().join("events.jsonl")),
        "different seeds must give different assignment draws"
    );
}

#[test]
fn learning_simulation_writes_a_regret_report() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), LEARNING_SIMULATE, &["--seed", "5"]);
    let report: serde_json::Value =
        serde_json::from_slice(&read_bytes(&dir.path().join("out/report.json"))).unwrap();
    assert!(report["best_arm"].is_number());
    assert_eq!(report["by_batch"].as_array().unwrap().len(), 3);
    // Batch 0 is uniform: mean probability on the best arm is exactly 1/3.
    let first = &report["by_batch"][0];
    assert!((first["mean_best_arm_probability"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

// ---------------------------------------------------------------------------
// estimate + sweep consistency
// ---------------------------------------------------------------------------

#[test]
fn sweep_grid_point_matches_estimate_rows_exactly() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), UNIFORM_SIMULATE, &[]);
    let dataset = dir.path().join("out/dataset.csv");

    let estimate_config = dir.path().join("estimate.toml");
    write(
        &estimate_config,
        &format!(
            r#"
dataset = "{}"
reference_arm = 0
measures = [{{ kind = "discernment", w_false = -1.0, w_true = 0.5 }}, {{ kind = "false_any" }}]
scheme = "stabilized_variance"

[mu]
method = "ridge"
lambda = 1.0

[mu_mode]
mode = "historical"
"#,
            dataset.display()
        ),
    );
    let estimate_out = dir.path().join("est");
    let run = adex(&[
        "estimate",
        "--config",
        estimate_config.to_str().unwrap(),
        "--out",
        estimate_out.to_str().unwrap(),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.summary()["n_rows"], 8); // 4 treatments x 2 measures

    let sweep_config = dir.path().join("sweep.toml");
    write(
        &sweep_config,
        &format!(
            r#"
dataset = "{}"
grid = [[-2.0, 0.5], [-1.0, 0.5]]
reference_arm = 0
scheme = "stabilized_variance"

[mu]
method = "ridge"
lambda = 1.0

[mu_mode]
mode = "historical"
"#,
            dataset.display()
        ),
    );
    let sweep_out = dir.path().join("sweep");
    let run = adex(&[
        "sweep",
        "--config",
        sweep_config.to_str().unwrap(),
        "--out",
        sweep_out.to_str().unwrap(),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);

    let (estimate_header, estimate_rows) = read_csv(&estimate_out.join("estimate.csv"));
    let (sweep_header, sweep_rows) = read_csv(&sweep_out.join("sweep.csv"));
    assert_eq!(estimate_header[2..], sweep_header[4..], "shared estimate columns");

    // Every sweep row at (-1, 0.5) must reproduce the discernment estimate
    // row for the same treatment, cell for cell.
    let default_rows: Vec<&Vec<String>> =
        sweep_rows.iter().filter(|r| r[0] == "-1" && r[1] == "0.5").collect();
    assert_eq!(default_rows.len(), 4);
    let ln2 = format!("{}", std::f64::consts::LN_2);
    for row in &default_rows {
        assert_eq!(row[2], ln2, "abscissa of the default weighting is ln 2");
        let treatment = &row[3];
        let estimate_row = estimate_rows
            .iter()
            .find(|r| &r[0] == treatment && r[1] == "discernment[-1|0.5]")
            .expect("matching estimate row");
        assert_eq!(row[4..], estimate_row[2..], "estimate cells for {treatment}");
    }
}

// ---------------------------------------------------------------------------
// policy -> rate -> evaluation chain
// ---------------------------------------------------------------------------

#[test]
fn policy_rate_and_evaluation_chain_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), HET_SIMULATE, &[]);
    let dataset = dir.path().join("out/dataset.csv");

    // Learn a restricted two-arm rule.
    let policy_config = dir.path().join("policy.toml");
    write(
        &policy_config,
        &format!(
            r#"
dataset = "{}"

[rule]
kind = "restricted"
pair = [1, 0]
"#,
            dataset.display()
        ),
    );
    let policy_out = dir.path().join("policy");
    let run = adex(&[
        "policy",
        "--config",
        policy_config.to_str().unwrap(),
        "--out",
        policy_out.to_str().unwrap(),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.summary()["rule"], "restricted");

    let policy_file = policy_out.join("policy.json");
    let policy: adex_core::policy::Policy =
        serde_json::from_slice(&read_bytes(&policy_file)).unwrap();
    let adex_core::policy::Policy::Restricted { pair, .. } = &policy else {
        panic!("expected a restricted policy, got {policy:?}");
    };
    assert_eq!(*pair, (1, 0));

    let report: serde_json::Value =
        serde_json::from_slice(&read_bytes(&policy_out.join("report.json"))).unwrap();
    let shares: Vec<f64> =
        report["shares"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(shares.len(), 2);
    assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // The heterogeneity is real, so the rule should split the population.
    assert!(shares.iter().all(|&s| s > 0.05), "degenerate shares: {shares:?}");
    assert_eq!(report["on_policy_share_by_batch"].as_array().unwrap().len(), 3);

    // Rank units by the learned effect model and by a raw feature.
    for priority in [
        format!("kind = \"policy_file\"\npath = \"{}\"", policy_file.display()),
        "kind = \"feature\"\nindex = 0\nsign = 1.0".to_string(),
    ] {
        let rate_config = dir.path().join("rate.toml");
        write(
            &rate_config,
            &format!(
                r#"
dataset = "{}"
pair = [1, 0]

[priority]
{priority}

[rate]
grid_size = 20
weighting = "autoc"
n_bootstrap = 50
seed = 3
"#,
                dataset.display()
            ),
        );
        let rate_out = dir.path().join("rate");
        let run = adex(&[
            "rate",
            "--config",
            rate_config.to_str().unwrap(),
            "--out",
            rate_out.to_str().unwrap(),
        ]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        assert_eq!(run.summary()["degenerate_priorities"], false);

        let (header, rows) = read_csv(&rate_out.join("toc.csv"));
        assert_eq!(header, vec!["q", "value", "se"]);
        assert_eq!(rows.len(), 20);
        let last = rows.last().unwrap();
        assert_eq!(last[0], "1", "grid ends at q = 1");
        assert_eq!(last[1], "0", "the full-population point of the curve is zero");
    }

    // Use the policy as one condition of an evaluation-stage simulation.
    let evaluation_config = dir.path().join("evaluation.toml");
    write(
        &evaluation_config,
        &format!(
            r#"
n_units = 150
seed = 77

[dgp]
preset = "flat"
n_arms = 2
n_features = 1
seed = 41
het_feature = 0
arm_false_het = [0.0, -0.04]
arm_true_het = [0.0, 0.06]

[design]
kind = "evaluation"

[[design.conditions]]
kind = "cell"
arm = 0

[[design.conditions]]
kind = "cell"
arm = 1

[[design.conditions]]
kind = "policy_file"
path = "{}"
"#,
            policy_file.display()
        ),
    );
    let evaluation_out = dir.path().join("eval");
    let run = adex(&[
        "simulate",
        "--config",
        evaluation_config.to_str().unwrap(),
        "--out",
        evaluation_out.to_str().unwrap(),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let summary = run.summary();
    assert_eq!(summary["n_assigned"], 150);
    assert_eq!(summary["n_batches"], 1);

    let report: serde_json::Value =
        serde_json::from_slice(&read_bytes(&evaluation_out.join("report.json"))).unwrap();
    assert_eq!(
        report["condition_labels"],
        serde_json::json!(["0:cell0", "1:cell1", "2:policy"])
    );
    let (header, rows) = read_csv(&evaluation_out.join("dataset.csv"));
    assert_eq!(rows.len(), 150);
    // Every condition is equally likely: all logged propensities are 1/3.
    let third = format!("{}", 1.0 / 3.0);
    let prop_columns: Vec<usize> =
        (0..header.len()).filter(|&i| header[i].starts_with("prop_")).collect();
    assert_eq!(prop_columns.len(), 3);
    for row in &rows {
        for &column in &prop_columns {
            assert_eq!(row[column], third);
        }
    }
}

// ---------------------------------------------------------------------------
// coverage
// ---------------------------------------------------------------------------

#[test]
fn coverage_writes_one_row_per_estimator_and_arm() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("coverage.toml");
    write(
        &config,
        r#"
n_units = 60
n_reps = 50
seed = 99

[dgp]
preset = "flat"
n_arms = 2
n_features = 0
seed = 4

[design]
kind = "uniform"

[schedule]
first_batch_size = 60
subsequent_batch_size = 60
max_units = 60
"#,
    );
    let out = dir.path().join("out");
    let run = adex(&["coverage", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.code, 0, "{}", run.stderr);

    let (header, rows) = read_csv(&out.join("coverage.csv"));
    assert_eq!(
        header,
        vec!["estimator", "arm", "coverage", "mean_ci_width", "mean_error", "n_evaluated"]
    );
    assert_eq!(rows.len(), 6, "3 estimators x 2 arms");
    let mut estimators: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    estimators.dedup();
    assert_eq!(estimators, vec!["naive", "aipw_uniform", "aipw_stabilized"]);
    for row in &rows {
        let coverage: f64 = row[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&coverage), "coverage {coverage} out of range");
        assert_eq!(row[5], "50", "every replication evaluated");
    }
}

// ---------------------------------------------------------------------------
// exit codes and error lines
// ---------------------------------------------------------------------------

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let run = adex(&["frobnicate"]);
    assert_eq!(run.code, 1);
    assert_eq!(run.error_line()["error"], "usage");
}

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"][..], &["estimate", "--help"][..]] {
        let run = adex(args);
        assert_eq!(run.code, 0, "{args:?}");
        assert!(run.stderr.is_empty());
        assert!(!run.stdout.is_empty());
    }
}

#[test]
fn missing_config_file_is_a_data_error() {
    let run = adex(&["estimate", "--config", "/nonexistent/estimate.toml"]);
    assert_eq!(run.code, 2);
    let line = run.error_line();
    assert_eq!(line["error"], "data");
    assert!(line["message"].as_str().unwrap().contains("estimate.toml"));
}

#[test]
fn unknown_config_key_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("estimate.toml");
    write(&config, "dataset = \"d.csv\"\nreferense_arm = 0\n");
    let run = adex(&["estimate", "--config", config.to_str().unwrap()]);
    assert_eq!(run.code, 2);
    assert!(
        run.error_line()["message"].as_str().unwrap().contains("referense_arm"),
        "typo key not named: {}",
        run.stderr
    );
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("estimate.toml");
    write(&config, "dataset = \"missing.csv\"\n");
    let run = adex_in(Some(dir.path()), &["estimate", "--config", "estimate.toml"]);
    assert_eq!(run.code, 2);
    assert_eq!(run.error_line()["error"], "data");
}

#[test]
fn simulate_without_a_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("simulate.toml");
    write(&config, LEARNING_SIMULATE);
    let run = adex(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(run.code, 2);
    assert!(run.error_line()["message"].as_str().unwrap().contains("--seed"));
}

#[test]
fn coverage_rejects_too_few_replications() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("coverage.toml");
    write(
        &config,
        r#"
n_units = 60
n_reps = 10
seed = 1
[dgp]
preset = "flat"
n_arms = 2
n_features = 0
seed = 4
[design]
kind = "uniform"
[schedule]
first_batch_size = 60
subsequent_batch_size = 60
max_units = 60
"#,
    );
    let run = adex(&["coverage", "--config", config.to_str().unwrap()]);
    assert_eq!(run.code, 2);
    assert!(run.error_line()["message"].as_str().unwrap().contains("n_reps"));
}

// ---------------------------------------------------------------------------
// help / config drift
// ---------------------------------------------------------------------------

fn collect_keys(value: &toml::Value, keys: &mut BTreeSet<String>) {
    match value {
        toml::Value::Table(map) => {
            for (key, nested) in map {
                keys.insert(key.clone());
                collect_keys(nested, keys);
            }
        }
        toml::Value::Array(items) => {
            for nested in items {
                collect_keys(nested, keys);
            }
        }
        _ => {}
    }
}

fn assert_help_covers<T: serde::Serialize>(subcommand: &str, samples: &[T]) {
    let help = adex(&[subcommand, "--help"]);
    assert_eq!(help.code, 0);
    let mut keys = BTreeSet::new();
    for sample in samples {
        let value = toml::Value::try_from(sample).expect("sample serializes to TOML");
        collect_keys(&value, &mut keys);
    }
    assert!(!keys.is_empty());
    let missing: Vec<&String> =
        keys.iter().filter(|key| !help.stdout.contains(key.as_str())).collect();
    assert!(
        missing.is_empty(),
        "`adex {subcommand} --help` does not document config keys {missing:?}"
    );
}

#[test]
fn every_config_key_appears_in_help() {
    use adex_cli::config::*;
    use adex_core::bandit::{BanditConfig, NoiseVariance};
    use adex_core::estimators::censor::CensorConfig;
    use adex_core::estimators::mu::{MuMethod, MuMode};
    use adex_core::estimators::WeightScheme;
    use adex_core::experiment::{BatchSchedule, ExperimentConfig};
    use adex_core::model::{ArmSpace, OutcomeMeasure, ResponseWeights};
    use adex_core::policy::rate::{RateConfig, RateWeighting};
    use adex_core::sim::report::CoverageDesign;
    use adex_core::sim::{AttritionSpec, DgpSpec};

    let schedule = BatchSchedule { first_batch_size: 10, subsequent_batch_size: 5, max_units: 20 };
    let attrition = AttritionSpec { intercept: 2.0, coefs: vec![0.1] };
    let flat_dgp = DgpConfig::Flat {
        n_arms: 2,
        n_features: 1,
        seed: 1,
        arm_false_shift: Some(vec![0.0, -0.01]),
        arm_true_shift: Some(vec![0.0, 0.01]),
        false_coefs: Some(vec![0.01]),
        true_coefs: Some(vec![0.01]),
        het_feature: Some(0),
        arm_false_het: Some(vec![0.0, 0.01]),
        arm_true_het: Some(vec![0.0, 0.01]),
        attrition: Some(attrition.clone()),
    };
    let mut full_spec = DgpSpec::flat(2, 1, 3);
    full_spec.attrition = Some(attrition);
    full_spec.het_feature = Some(0);
    let bandit = BanditConfig {
        noise_var: NoiseVariance::Fixed { value: 1.0 },
        prior_var_covariates: Some(1e6),
        ..BanditConfig::new(2, 1, 5)
    };
    let estimated = NoiseVariance::Estimated { floor: 1e-6 };
    let mut bandit_estimated = bandit.clone();
    bandit_estimated.noise_var = estimated;
    let forest = MuMethod::HonestForest { n_trees: 10, min_leaf: 2, max_depth: 4, seed: 1 };
    let crossfit = MuMode::Crossfit { folds: 5, seed: 2 };
    let discernment = OutcomeMeasure::Discernment(ResponseWeights::default());

    assert_help_covers(
        "simulate",
        &[
            SimulateConfig {
                dgp: flat_dgp.clone(),
                n_units: 20,
                design: DesignConfig::Learning {
                    arm_space: ArmSpace::Factorial { respondent_levels: 2, headline_levels: 1 },
                    schedule,
                    bandit: bandit_estimated,
                },
                seed: Some(1),
                measure: discernment,
            },
            SimulateConfig {
                dgp: DgpConfig::Full { spec: full_spec.clone() },
                n_units: 20,
                design: DesignConfig::Evaluation {
                    conditions: vec![
                        ConditionConfig::Cell { arm: 0 },
                        ConditionConfig::PolicyFile { path: "p.json".into() },
                    ],
                },
                seed: Some(1),
                measure: OutcomeMeasure::FalseAny,
            },
            SimulateConfig {
                dgp: DgpConfig::Calibrated { n_arms: 2, seed: 1 },
                n_units: 20,
                design: DesignConfig::Uniform {
                    arm_space: ArmSpace::Flat { labels: vec!["a".into(), "b".into()] },
                    schedule,
                },
                seed: Some(1),
                measure: OutcomeMeasure::TrueAny,
            },
        ],
    );

    assert_help_covers(
        "estimate",
        &[EstimateConfig {
            dataset: "d.csv".into(),
            meta: Some("m.json".into()),
            reference_arm: 0,
            measures: vec![discernment, OutcomeMeasure::FalseTimeline],
            mu: forest.clone(),
            mu_mode: crossfit.clone(),
            scheme: WeightScheme::StabilizedVariance,
            censor: Some(CensorConfig::default()),
        }],
    );

    let policy_base = PolicyCmdConfig {
        dataset: "d.csv".into(),
        meta: Some("m.json".into()),
        measure: discernment,
        rule: RuleConfig::Constant { arm: 0 },
        mu: MuMethod::Ridge { lambda: 1.0 },
        mu_mode: MuMode::Historical,
        scheme: WeightScheme::Uniform,
    };
    assert_help_covers(
        "policy",
        &[
            PolicyCmdConfig { rule: RuleConfig::Greedy { arm_subset: Some(vec![0, 1]) }, ..policy_base.clone() },
            PolicyCmdConfig {
                rule: RuleConfig::Restricted { pair: [1, 0], cate: Some(forest.clone()) },
                ..policy_base.clone()
            },
            policy_base.clone(),
        ],
    );

    let rate_base = RateCmdConfig {
        dataset: "d.csv".into(),
        meta: Some("m.json".into()),
        measure: discernment,
        pair: [1, 0],
        priority: PriorityConfig::Feature { index: 0, sign: -1.0 },
        mu: MuMethod::Knn { k: 5 },
        mu_mode: crossfit.clone(),
        rate: RateConfig {
            grid_size: 10,
            weighting: RateWeighting::Qini,
            n_bootstrap: 10,
            seed: 0,
        },
    };
    assert_help_covers(
        "rate",
        &[
            RateCmdConfig {
                priority: PriorityConfig::PolicyFile { path: "p.json".into() },
                ..rate_base.clone()
            },
            rate_base,
        ],
    );

    assert_help_covers(
        "sweep",
        &[SweepCmdConfig {
            dataset: "d.csv".into(),
            meta: Some("m.json".into()),
            grid: vec![[-1.0, 0.5]],
            reference_arm: 0,
            mu: forest,
            mu_mode: crossfit,
            scheme: WeightScheme::StabilizedVariance,
            censor: Some(CensorConfig::default()),
        }],
    );

    assert_help_covers(
        "coverage",
        &[CoverageCmdConfig {
            dgp: flat_dgp,
            design: CoverageDesign::Blts { bandit: bandit.clone() },
            schedule,
            n_units: 20,
            n_reps: 50,
            measure: discernment,
            mu: MuMethod::Ridge { lambda: 1.0 },
            mu_mode: MuMode::Historical,
            seed: Some(1),
        }],
    );

    assert_help_covers(
        "serve",
        &[ServeConfig {
            addr: "127.0.0.1:0".into(),
            experiment: ExperimentConfig {
                arm_space: ArmSpace::Factorial { respondent_levels: 2, headline_levels: 1 },
                n_features: 1,
                schedule,
                mode: adex_core::experiment::AssignmentMode::Blts { bandit },
                measure: discernment,
                seed: 1,
            },
        }],
    );
}
