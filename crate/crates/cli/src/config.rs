//! Run configurations: one TOML file per subcommand, deserialized into the
//! structures here. Unknown keys are rejected with the key named in the
//! error. Keys shared across subcommands mean the same thing everywhere:
//! `dataset` points at a CSV written by `simulate` (with its `.meta.json`
//! sidecar next to it), `mu`/`mu_mode` configure the conditional-mean model
//! behind doubly robust scores, `scheme` picks the adaptive weighting.

use std::path::{Path, PathBuf};

use adex_core::bandit::BanditConfig;
use adex_core::estimators::censor::CensorConfig;
use adex_core::estimators::mu::{MuMethod, MuMode};
use adex_core::estimators::WeightScheme;
use adex_core::experiment::{BatchSchedule, ExperimentConfig};
use adex_core::model::{ArmSpace, OutcomeMeasure};
use adex_core::policy::rate::RateConfig;
use adex_core::sim::{AttritionSpec, DgpSpec};
use adex_core::sim::report::CoverageDesign;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// Read and parse a TOML config file.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Data(format!("cannot read config file {}: {e}", path.display()))
    })?;
    toml::from_str(&text).map_err(|e| {
        CliError::Data(format!("bad config {}: {e}", path.display()))
    })
}

fn default_measure() -> OutcomeMeasure {
    OutcomeMeasure::default_discernment()
}

fn default_mu_mode() -> MuMode {
    MuMode::Historical
}

fn default_scheme() -> WeightScheme {
    WeightScheme::StabilizedVariance
}

/// Resolve the seed for subcommands where it is mandatory: the `--seed`
/// flag wins over the config key; having neither is an error.
pub fn require_seed(flag: Option<u64>, config_key: Option<u64>) -> Result<u64, CliError> {
    flag.or(config_key).ok_or_else(|| {
        CliError::Data("a seed is required: set the `seed` config key or pass --seed".into())
    })
}

// ---------------------------------------------------------------------------
// Generating-process presets
// ---------------------------------------------------------------------------

/// How a synthetic population's ground truth is specified: a neutral flat
/// preset with optional overrides, the calibrated preset (magnitudes in the
/// range reported for accuracy-prompt field experiments), or a fully
/// explicit specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum DgpConfig {
    /// `DgpSpec::flat` plus any overrides present.
    Flat {
        n_arms: usize,
        n_features: usize,
        seed: u64,
        #[serde(default)]
        arm_false_shift: Option<Vec<f64>>,
        #[serde(default)]
        arm_true_shift: Option<Vec<f64>>,
        #[serde(default)]
        false_coefs: Option<Vec<f64>>,
        #[serde(default)]
        true_coefs: Option<Vec<f64>>,
        #[serde(default)]
        het_feature: Option<usize>,
        #[serde(default)]
        arm_false_het: Option<Vec<f64>>,
        #[serde(default)]
        arm_true_het: Option<Vec<f64>>,
        #[serde(default)]
        attrition: Option<AttritionSpec>,
    },
    /// `DgpSpec::calibrated`: realistic base rates, effect sizes, and
    /// attrition at any arm count.
    Calibrated { n_arms: usize, seed: u64 },
    /// Every field spelled out.
    Full { spec: DgpSpec },
}

impl DgpConfig {
    pub fn build(&self) -> Result<DgpSpec, CliError> {
        let spec = match self {
            DgpConfig::Flat {
                n_arms,
                n_features,
                seed,
                arm_false_shift,
                arm_true_shift,
                false_coefs,
                true_coefs,
                het_feature,
                arm_false_het,
                arm_true_het,
                attrition,
            } => {
                let mut spec = DgpSpec::flat(*n_arms, *n_features, *seed);
                if let Some(v) = arm_false_shift {
                    spec.arm_false_shift = v.clone();
                }
                if let Some(v) = arm_true_shift {
                    spec.arm_true_shift = v.clone();
                }
                if let Some(v) = false_coefs {
                    spec.false_coefs = v.clone();
                }
                if let Some(v) = true_coefs {
                    spec.true_coefs = v.clone();
                }
                if het_feature.is_some() {
                    spec.het_feature = *het_feature;
                }
                if let Some(v) = arm_false_het {
                    spec.arm_false_het = v.clone();
                }
                if let Some(v) = arm_true_het {
                    spec.arm_true_het = v.clone();
                }
                if attrition.is_some() {
                    spec.attrition = attrition.clone();
                }
                spec
            }
            DgpConfig::Calibrated { n_arms, seed } => DgpSpec::calibrated(*n_arms, *seed),
            DgpConfig::Full { spec } => spec.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// One condition of an evaluation design: a fixed cell of the generating
/// process's arm space, or a policy loaded from a JSON file written by the
/// `policy` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionConfig {
    Cell { arm: usize },
    PolicyFile { path: PathBuf },
}

/// Assignment design for a simulated run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignConfig {
    /// Adaptive learning stage: batched Thompson sampling.
    Learning {
        arm_space: ArmSpace,
        schedule: BatchSchedule,
        bandit: BanditConfig,
    },
    /// Plain randomized experiment on the same engine.
    Uniform {
        arm_space: ArmSpace,
        schedule: BatchSchedule,
    },
    /// Evaluation stage: conditions (cells and/or policies) assigned with
    /// equal probability in a single batch.
    Evaluation { conditions: Vec<ConditionConfig> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub dgp: DgpConfig,
    /// Population size to draw and run through the design.
    pub n_units: usize,
    pub design: DesignConfig,
    /// Engine seed (assignment draws). Mandatory here or via --seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Response the adaptive design optimizes and reports regret on.
    #[serde(default = "default_measure")]
    pub measure: OutcomeMeasure,
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

fn default_measures() -> Vec<OutcomeMeasure> {
    vec![OutcomeMeasure::default_discernment()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Dataset CSV (written by `simulate`); its arm space is read from the
    /// `<dataset>.meta.json` sidecar unless `meta` overrides the path.
    pub dataset: PathBuf,
    #[serde(default)]
    pub meta: Option<PathBuf>,
    /// Arm every treatment is contrasted against (default 0).
    #[serde(default)]
    pub reference_arm: usize,
    /// One block of output rows per measure, in this order.
    #[serde(default = "default_measures")]
    pub measures: Vec<OutcomeMeasure>,
    #[serde(default)]
    pub mu: MuMethod,
    #[serde(default = "default_mu_mode")]
    pub mu_mode: MuMode,
    #[serde(default = "default_scheme")]
    pub scheme: WeightScheme,
    /// Fit attrition weights when censored units are present.
    #[serde(default)]
    pub censor: Option<CensorConfig>,
}

// ---------------------------------------------------------------------------
// policy
// ---------------------------------------------------------------------------

/// Which policy to learn (or fix).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleConfig {
    /// Highest predicted response among `arm_subset` (default: all arms).
    Greedy {
        #[serde(default)]
        arm_subset: Option<Vec<usize>>,
    },
    /// Two-arm rule driven by the sign of a fitted effect model.
    Restricted {
        pair: [usize; 2],
        /// Regressor for the effect model; defaults to `mu`.
        #[serde(default)]
        cate: Option<MuMethod>,
    },
    /// Fixed arm for everyone (a baseline to compare against).
    Constant { arm: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCmdConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub meta: Option<PathBuf>,
    #[serde(default = "default_measure")]
    pub measure: OutcomeMeasure,
    pub rule: RuleConfig,
    #[serde(default)]
    pub mu: MuMethod,
    #[serde(default = "default_mu_mode")]
    pub mu_mode: MuMode,
    #[serde(default = "default_scheme")]
    pub scheme: WeightScheme,
}

// ---------------------------------------------------------------------------
// rate
// ---------------------------------------------------------------------------

fn one() -> f64 {
    1.0
}

/// Where the per-unit targeting priorities come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorityConfig {
    /// `sign * feature[index]` of each completed unit's covariates.
    Feature {
        index: usize,
        #[serde(default = "one")]
        sign: f64,
    },
    /// The fitted effect model inside a restricted policy JSON file,
    /// oriented so higher priority means "treat with `pair[0]` first".
    PolicyFile { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCmdConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub meta: Option<PathBuf>,
    #[serde(default = "default_measure")]
    pub measure: OutcomeMeasure,
    /// Contrast `pair[0] - pair[1]` along the targeting curve.
    pub pair: [usize; 2],
    pub priority: PriorityConfig,
    #[serde(default)]
    pub mu: MuMethod,
    #[serde(default = "default_mu_mode")]
    pub mu_mode: MuMode,
    /// Grid size, weighting (autoc/qini), bootstrap count, bootstrap seed.
    #[serde(default)]
    pub rate: RateConfig,
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCmdConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub meta: Option<PathBuf>,
    /// Response weightings to sweep, each `[w_false, w_true]`.
    pub grid: Vec<[f64; 2]>,
    #[serde(default)]
    pub reference_arm: usize,
    #[serde(default)]
    pub mu: MuMethod,
    #[serde(default = "default_mu_mode")]
    pub mu_mode: MuMode,
    #[serde(default = "default_scheme")]
    pub scheme: WeightScheme,
    #[serde(default)]
    pub censor: Option<CensorConfig>,
}

// ---------------------------------------------------------------------------
// coverage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageCmdConfig {
    pub dgp: DgpConfig,
    /// `{ kind = "uniform" }` or `{ kind = "blts", bandit = {...} }`.
    pub design: CoverageDesign,
    pub schedule: BatchSchedule,
    /// Units per replication.
    pub n_units: usize,
    /// Replications (at least 50 for a meaningful coverage fraction).
    pub n_reps: usize,
    #[serde(default = "default_measure")]
    pub measure: OutcomeMeasure,
    #[serde(default)]
    pub mu: MuMethod,
    #[serde(default = "default_mu_mode")]
    pub mu_mode: MuMode,
    /// Master seed for the replication streams. Mandatory here or --seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

fn default_addr() -> String {
    "127.0.0.1:8080".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    /// Bind address; port 0 picks a free port (printed on startup).
    #[serde(default = "default_addr")]
    pub addr: String,
    /// Full experiment configuration (arm space, schedule, mode, measure,
    /// engine seed).
    pub experiment: ExperimentConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_preset_applies_overrides() {
        let toml_text = r#"
            preset = "flat"
            n_arms = 3
            n_features = 2
            seed = 9
            arm_true_shift = [0.0, 0.01, 0.02]
            het_feature = 1
            arm_true_het = [0.0, 0.0, 0.05]
            [attrition]
            intercept = 2.0
            coefs = [0.0, 0.1]
        "#;
        let config: DgpConfig = toml::from_str(toml_text).unwrap();
        let spec = config.build().unwrap();
        assert_eq!(spec.n_arms, 3);
        assert_eq!(spec.arm_true_shift, vec![0.0, 0.01, 0.02]);
        assert_eq!(spec.het_feature, Some(1));
        assert_eq!(spec.attrition.as_ref().unwrap().intercept, 2.0);
        // Untouched fields keep the flat defaults.
        assert_eq!(spec.arm_false_shift, vec![0.0; 3]);
    }

    #[test]
    fn calibrated_preset_builds_and_validates() {
        let config: DgpConfig =
            toml::from_str("preset = \"calibrated\"\nn_arms = 5\nseed = 1").unwrap();
        let spec = config.build().unwrap();
        assert_eq!(spec.n_arms, 5);
        assert!(spec.attrition.is_some());
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_named() {
        let toml_text = r#"
            dataset = "d.csv"
            reference_arm = 0
            not_a_key = 1
        "#;
        let err = toml::from_str::<EstimateConfig>(toml_text).unwrap_err();
        assert!(err.to_string().contains("not_a_key"), "{err}");
    }

    #[test]
    fn simulate_config_round_trips_through_toml() {
        let text = r#"
            n_units = 100
            seed = 7
            [dgp]
            preset = "flat"
            n_arms = 2
            n_features = 0
            seed = 3
            [design]
            kind = "uniform"
            [design.arm_space]
            kind = "flat"
            labels = ["control", "treated"]
            [design.schedule]
            first_batch_size = 50
            subsequent_batch_size = 50
            max_units = 100
        "#;
        let config: SimulateConfig = toml::from_str(text).unwrap();
        assert_eq!(config.n_units, 100);
        assert_eq!(config.seed, Some(7));
        let DesignConfig::Uniform { arm_space, schedule } = &config.design else {
            panic!("expected uniform design");
        };
        assert_eq!(arm_space.n_arms(), 2);
        assert_eq!(schedule.first_batch_size, 50);
        // Measure defaulted.
        assert_eq!(config.measure, OutcomeMeasure::default_discernment());
    }

    #[test]
    fn seed_resolution_prefers_the_flag() {
        assert_eq!(require_seed(Some(5), Some(9)).unwrap(), 5);
        assert_eq!(require_seed(None, Some(9)).unwrap(), 9);
        assert!(require_seed(None, None).is_err());
    }
}
