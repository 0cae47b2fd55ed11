//! Long-help text for each subcommand. The CONFIG KEYS sections enumerate
//! every key the subcommand's TOML config accepts; an integration test
//! serializes fully populated sample configs and fails if any key is
//! missing here, so this documentation cannot drift from the structs.

/// Keys shared by the blocks below, written once.
const MEASURE_KEYS: &str = "\
  measure.kind                      discernment | false_any | false_timeline | false_messenger |
                                    true_any | true_timeline | true_messenger
  measure.w_false, measure.w_true   response weights (discernment only; default -1, 0.5)";

const MU_KEYS: &str = "\
  mu.method                         ridge | knn | honest_forest
  mu.lambda                         ridge penalty (ridge)
  mu.k                              neighbor count (knn)
  mu.n_trees, mu.min_leaf, mu.max_depth, mu.seed
                                    forest shape and seed (honest_forest)
  mu_mode.mode                      historical | crossfit
  mu_mode.folds, mu_mode.seed       fold count and shuffle seed (crossfit)";

const CENSOR_KEYS: &str = "\
  censor.include_features           covariates enter the completion model
  censor.include_arm                arm indicators enter the completion model
  censor.ridge, censor.max_iter, censor.tol
                                    completion-model fitting controls";

const DGP_KEYS: &str = "\
  dgp.preset                        flat | calibrated | full
  dgp.n_arms, dgp.n_features, dgp.seed
                                    population shape and seed (flat, calibrated)
  dgp.arm_false_shift, dgp.arm_true_shift
                                    per-arm shifts of the sharing probabilities (flat override)
  dgp.false_coefs, dgp.true_coefs   covariate effects on sharing (flat override)
  dgp.het_feature, dgp.arm_false_het, dgp.arm_true_het
                                    sign-of-feature effect heterogeneity (flat override)
  dgp.attrition.intercept, dgp.attrition.coefs
                                    posttest-completion logit (flat override)
  dgp.spec.*                        full explicit specification (preset = full): n_arms,
                                    n_features, covariate_correlation, channel_correlation,
                                    base_false, base_true, false_coefs, true_coefs,
                                    arm_false_shift, arm_true_shift, het_feature,
                                    arm_false_het, arm_true_het, prob_clamp, attrition, seed";

const BANDIT_KEYS: &str = "\
    .n_arms, .n_features            must match the arm space and covariate width
    .prior_var_main                 prior variance on intercept and arm effects
    .ridge_penalty_interactions     penalty on covariate-arm interactions
    .prior_var_covariates           prior variance on covariate mains (optional)
    .noise_var.kind                 fixed | estimated
    .noise_var.value, .noise_var.floor
                                    fixed value, or floor for the running estimate
    .n_posterior_draws              Monte-Carlo draws per probability vector
    .probability_floor              per-arm lower bound on assignment probabilities
    .seed                           probability-stream seed";

const SCHEDULE_KEYS: &str = "\
    .first_batch_size               units assigned uniformly before the first refit
    .subsequent_batch_size          units per later batch
    .max_units                      assignment stops here";

pub fn simulate_help() -> String {
    format!(
        "CONFIG KEYS (TOML):
  seed                              engine seed for assignment draws (or --seed); required
  n_units                           population size to draw and run
{MEASURE_KEYS}
{DGP_KEYS}
  design.kind                       learning | uniform | evaluation
  design.arm_space.kind             factorial | flat
  design.arm_space.respondent_levels, design.arm_space.headline_levels
                                    factorial grid dimensions
  design.arm_space.labels           flat condition labels
  design.schedule{SCHEDULE_KEYS_INLINE}
  design.bandit{BANDIT_KEYS_INLINE}
  design.conditions                 evaluation conditions, each:
  design.conditions[].kind          cell | policy_file
  design.conditions[].arm           cell index into the generating process's arms
  design.conditions[].path          policy JSON written by `adex policy`

OUTPUTS: events.jsonl (replayable log), dataset.csv (+ dataset.csv.meta.json),
report.json (regret report for learning/uniform, condition shares for evaluation).",
        SCHEDULE_KEYS_INLINE = indent_block(SCHEDULE_KEYS),
        BANDIT_KEYS_INLINE = indent_block(BANDIT_KEYS),
    )
}

fn indent_block(block: &str) -> String {
    let mut out = String::from(":\n");
    out.push_str(block);
    out
}

pub fn estimate_help() -> String {
    format!(
        "CONFIG KEYS (TOML):
  dataset                           dataset CSV written by `adex simulate`
  meta                              metadata sidecar (default: <dataset>.meta.json)
  reference_arm                     arm the treatment rows are contrasted against
  measures                          list of outcome measures, one row block each
{MEASURE_KEYS}
{MU_KEYS}
  scheme                            stabilized_variance | uniform (adaptive weights)
{CENSOR_KEYS}

OUTPUTS: estimate.csv (one row per treatment x measure: estimate, std_error,
ci_lower, ci_upper, z, p_value, n), estimates.json."
    )
}

pub fn policy_help() -> String {
    format!(
        "CONFIG KEYS (TOML):
  dataset, meta                     learning-stage dataset (as in estimate)
{MEASURE_KEYS}
  rule.kind                         greedy | restricted | constant
  rule.arm_subset                   candidate arms for greedy (default: all)
  rule.pair                         the two arms a restricted rule chooses between
  rule.cate                         effect-model regressor (restricted; defaults to mu)
  rule.arm                          fixed arm (constant)
{MU_KEYS}
  scheme                            stabilized_variance | uniform (for the value estimates)

OUTPUTS: policy.json (loadable by `adex simulate` evaluation conditions and
`adex rate`), report.json (arm shares, counterfactual value, best constant
arm, overlap, per-batch on-policy share)."
    )
}

pub fn rate_help() -> String {
    format!(
        "CONFIG KEYS (TOML):
  dataset, meta                     dataset (as in estimate)
{MEASURE_KEYS}
  pair                              contrast pair[0] - pair[1] along the curve
  priority.kind                     feature | policy_file
  priority.index, priority.sign     rank completed units by sign * x[index]
  priority.path                     restricted-policy JSON; its effect model ranks units
{MU_KEYS}
  rate.grid_size                    targeting-fraction grid resolution
  rate.weighting                    autoc | qini
  rate.n_bootstrap                  half-sample bootstrap replicates
  rate.seed                         bootstrap seed (or --seed)

OUTPUTS: toc.csv (q,value,se rows), rate.json (full curve + rate estimate)."
    )
}

pub fn sweep_help() -> String {
    format!(
        "CONFIG KEYS (TOML):
  dataset, meta                     dataset (as in estimate)
  grid                              response weightings to sweep, each [w_false, w_true]
  reference_arm                     arm the contrasts are against
{MU_KEYS}
  scheme                            stabilized_variance | uniform
{CENSOR_KEYS}

OUTPUTS: sweep.csv (w_false, w_true, abscissa = ln(-w_false/w_true), then the
same estimate columns as `estimate`), sweep.json."
    )
}

pub fn coverage_help() -> String {
    format!(
        "CONFIG KEYS (TOML):
{DGP_KEYS}
  design.kind                       uniform | blts
  design.bandit{BANDIT_KEYS_INLINE}
  schedule{SCHEDULE_KEYS_INLINE}
  n_units                           units per replication
  n_reps                            replications (>= 50)
{MEASURE_KEYS}
{MU_KEYS}
  seed                              master seed for the replication streams (or --seed); required

OUTPUTS: coverage.csv (estimator, arm, coverage, mean_ci_width, mean_error,
n_evaluated), coverage.json. Estimators: naive per-arm sample mean,
aipw_uniform, aipw_stabilized.",
        SCHEDULE_KEYS_INLINE = indent_block(SCHEDULE_KEYS),
        BANDIT_KEYS_INLINE = indent_block(BANDIT_KEYS),
    )
}

pub fn serve_help() -> String {
    format!(
        "CONFIG KEYS (TOML):
  addr                              bind address (default 127.0.0.1:8080; port 0 = pick free)
  experiment.arm_space.kind         factorial | flat
  experiment.arm_space.respondent_levels, experiment.arm_space.headline_levels,
  experiment.arm_space.labels      the arm space
  experiment.n_features             covariate vector length
  experiment.schedule{SCHEDULE_KEYS_INLINE}
  experiment.mode.kind              uniform | blts
  experiment.mode.bandit{BANDIT_KEYS_INLINE}
{MEASURE_KEYS_PREFIXED}
  experiment.seed                   engine seed for assignment draws (or --seed)

ENDPOINTS:
  POST /assign        {{unit_id, covariates}} -> {{arm, probabilities, batch}}
  POST /outcome       {{unit_id, counts, channel_detail}} -> state summary
  POST /advance-batch {{force}} -> state summary
  GET  /state         -> {{batch, n_assigned, n_completed}}

On startup one JSON line with the bound address is printed; every event is
appended to <out>/events.jsonl before its response is sent.",
        SCHEDULE_KEYS_INLINE = indent_block(SCHEDULE_KEYS),
        BANDIT_KEYS_INLINE = indent_block(BANDIT_KEYS),
        MEASURE_KEYS_PREFIXED = MEASURE_KEYS.replace("measure.", "experiment.measure."),
    )
}
