//! Domain types shared across the engine.
//!
//! An experiment shows each respondent a pretest and a posttest battery of
//! share/don't-share questions: 2 false-news stimuli and 2 true-news
//! stimuli, each asked for 2 channels (public timeline, private messenger).
//! `M` counts affirmative false-stimulus answers and `T` affirmative
//! true-stimulus answers, so both live in `0..=4`. The scalar response used
//! for learning and estimation is the weighted combination
//! `w_false * M + w_true * T` ("sharing discernment" under the default
//! weights `(-1, 0.5)`).
//!
//! Treatments form either a factorial grid (respondent-level intervention x
//! headline-level intervention) or a flat list of conditions; both are
//! represented by [`ArmSpace`] and addressed by a dense arm index.

mod schema;
pub use schema::{
    encode_context, CovariateKind, CovariateSchema, CovariateValue, FieldSpec, SkipPolicy,
    N_STRATUM_FEATURES,
};
mod dataset;
pub use dataset::{
    meta_path, read_dataset_csv, write_dataset_csv, DataError, Dataset, DatasetMeta, DatasetUnit,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Channel index of the public-timeline question within a [`ChannelGrid`] row.
pub const TIMELINE: usize = 0;
/// Channel index of the private-messenger question within a [`ChannelGrid`] row.
pub const MESSENGER: usize = 1;
/// Stimuli per type (false/true) in each battery.
pub const N_STIMULI: usize = 2;
/// Questions per stimulus type: stimuli x channels.
pub const N_QUESTIONS_PER_TYPE: u8 = (N_STIMULI * 2) as u8;

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("share count {name}={value} outside 0..={max}")]
    CountOutOfRange { name: &'static str, value: u8, max: u8 },
    #[error("channel cells must be 0/1, found {0}")]
    CellOutOfRange(u8),
    #[error("{phase} {kind} channel cells sum to {cell_sum} but the count column says {count}")]
    ChannelSumMismatch {
        phase: &'static str,
        kind: &'static str,
        cell_sum: u8,
        count: u8,
    },
    #[error("posttest is censored: the unit did not complete the survey")]
    Censored,
    #[error("record carries only coarse counts; channel detail is missing")]
    MissingChannelDetail,
    #[error("response weights must have w_false < 0 and w_true > 0, got ({w_false}, {w_true})")]
    BadResponseWeights { w_false: f64, w_true: f64 },
    #[error("arm index {index} out of range for {n_arms} arms")]
    ArmOutOfRange { index: usize, n_arms: usize },
    #[error("cell ({respondent}, {headline}) outside a {respondent_levels}x{headline_levels} grid")]
    CellOutOfGrid {
        respondent: usize,
        headline: usize,
        respondent_levels: usize,
        headline_levels: usize,
    },
    #[error("arm space must have at least one arm")]
    EmptyArmSpace,
    #[error("operation requires a factorial arm space")]
    NotFactorial,
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("covariate `{field}` has value {value} outside {levels} categorical levels")]
    CategoricalOutOfRange { field: String, value: f64, levels: usize },
    #[error("covariate `{field}` must be finite")]
    NonFiniteCovariate { field: String },
    #[error("feature vector has length {got}, schema expects {expected}")]
    FeatureLengthMismatch { expected: usize, got: usize },
    #[error("pretest stratum {0} outside 0..=4")]
    StratumOutOfRange(u8),
    #[error("duplicate covariate field `{0}` in schema")]
    DuplicateField(String),
    #[error("covariate `{field}`: standard deviation must be positive, got {sd}")]
    BadStandardization { field: String, sd: f64 },
}

// ── Arms ────────────────────────────────────────────────────────────────

/// A cell of a factorial design: one respondent-level and one
/// headline-level intervention (level 0 = the factor's control).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arm {
    pub respondent_level: usize,
    pub headline_level: usize,
}

/// The set of assignable treatments, indexed densely from 0.
///
/// Factorial spaces order cells respondent-major:
/// `index = respondent_level * headline_levels + headline_level`, so index 0
/// is the all-control cell. Flat spaces are an explicit list of labelled
/// conditions (used e.g. for an evaluation stage where a learned policy is
/// itself one of the conditions).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArmSpace {
    Factorial {
        respondent_levels: usize,
        headline_levels: usize,
    },
    Flat { labels: Vec<String> },
}

impl ArmSpace {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_arms() == 0 {
            return Err(ModelError::EmptyArmSpace);
        }
        Ok(())
    }

    pub fn n_arms(&self) -> usize {
        match self {
            ArmSpace::Factorial { respondent_levels, headline_levels } => {
                respondent_levels * headline_levels
            }
            ArmSpace::Flat { labels } => labels.len(),
        }
    }

    /// Decode a dense index into its factorial cell.
    pub fn cell(&self, index: usize) -> Result<Arm, ModelError> {
        match self {
            ArmSpace::Factorial { headline_levels, .. } => {
                if index >= self.n_arms() {
                    return Err(ModelError::ArmOutOfRange { index, n_arms: self.n_arms() });
                }
                Ok(Arm {
                    respondent_level: index / headline_levels,
                    headline_level: index % headline_levels,
                })
            }
            ArmSpace::Flat { .. } => Err(ModelError::NotFactorial),
        }
    }

    /// Dense index of a factorial cell.
    pub fn index_of(&self, arm: Arm) -> Result<usize, ModelError> {
        match self {
            ArmSpace::Factorial { respondent_levels, headline_levels } => {
                if arm.respondent_level >= *respondent_levels
                    || arm.headline_level >= *headline_levels
                {
                    return Err(ModelError::CellOutOfGrid {
                        respondent: arm.respondent_level,
                        headline: arm.headline_level,
                        respondent_levels: *respondent_levels,
                        headline_levels: *headline_levels,
                    });
                }
                Ok(arm.respondent_level * headline_levels + arm.headline_level)
            }
            ArmSpace::Flat { .. } => Err(ModelError::NotFactorial),
        }
    }

    /// Human-readable label for reports.
    pub fn label(&self, index: usize) -> String {
        match self {
            ArmSpace::Factorial { .. } => match self.cell(index) {
                Ok(arm) => format!("r{}h{}", arm.respondent_level, arm.headline_level),
                Err(_) => format!("arm{index}"),
            },
            ArmSpace::Flat { labels } => labels
                .get(index)
                .cloned()
                .unwrap_or_else(|| format!("arm{index}")),
        }
    }

    pub fn check_index(&self, index: usize) -> Result<(), ModelError> {
        if index >= self.n_arms() {
            return Err(ModelError::ArmOutOfRange { index, n_arms: self.n_arms() });
        }
        Ok(())
    }
}

// ── Response weights ────────────────────────────────────────────────────

/// Weights attached to false- and true-stimulus share counts when collapsing
/// them to a scalar response. The default `(-1, 0.5)` penalizes sharing a
/// false item twice as hard as it rewards sharing a true one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseWeights {
    pub w_false: f64,
    pub w_true: f64,
}

impl Default for ResponseWeights {
    fn default() -> Self {
        ResponseWeights { w_false: -1.0, w_true: 0.5 }
    }
}

impl ResponseWeights {
    pub fn new(w_false: f64, w_true: f64) -> Result<Self, ModelError> {
        if !(w_false.is_finite() && w_true.is_finite() && w_false < 0.0 && w_true > 0.0) {
            return Err(ModelError::BadResponseWeights { w_false, w_true });
        }
        Ok(ResponseWeights { w_false, w_true })
    }

    /// Check bounds on weights that skipped [`ResponseWeights::new`]
    /// (deserialized configs).
    pub fn validate(&self) -> Result<(), ModelError> {
        Self::new(self.w_false, self.w_true).map(|_| ())
    }

    /// Abscissa used when sweeping weights: `ln(-w_false / w_true)`.
    pub fn log_ratio(&self) -> f64 {
        (-self.w_false / self.w_true).ln()
    }
}

// ── Outcomes ────────────────────────────────────────────────────────────

/// Per-question 0/1 answers for one battery: `false_cells[stimulus][channel]`
/// and `true_cells[stimulus][channel]`, with channel 0 = timeline and
/// channel 1 = messenger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelGrid {
    pub false_cells: [[u8; 2]; N_STIMULI],
    pub true_cells: [[u8; 2]; N_STIMULI],
}

impl ChannelGrid {
    pub fn false_sum(&self) -> u8 {
        self.false_cells.iter().flatten().sum()
    }

    pub fn true_sum(&self) -> u8 {
        self.true_cells.iter().flatten().sum()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for &cell in self.false_cells.iter().flatten().chain(self.true_cells.iter().flatten()) {
            if cell > 1 {
                return Err(ModelError::CellOutOfRange(cell));
            }
        }
        Ok(())
    }
}

/// Posttest answers; present only for units that completed the survey.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posttest {
    pub m_post: u8,
    pub t_post: u8,
    /// Per-question detail; `None` for coarse (counts-only) records.
    pub channel: Option<ChannelGrid>,
}

/// One unit's measured outcomes: pretest counts (always observed — they are
/// collected before treatment) and the posttest, which is `None` when the
/// unit attrited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub m_pre: u8,
    pub t_pre: u8,
    pub channel_pre: Option<ChannelGrid>,
    pub posttest: Option<Posttest>,
}

impl OutcomeRecord {
    /// Whether the posttest was observed.
    pub fn completed(&self) -> bool {
        self.posttest.is_some()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_count("m_pre", self.m_pre)?;
        check_count("t_pre", self.t_pre)?;
        if let Some(grid) = &self.channel_pre {
            grid.validate()?;
            check_grid_sums("pre", grid, self.m_pre, self.t_pre)?;
        }
        if let Some(post) = &self.posttest {
            check_count("m_post", post.m_post)?;
            check_count("t_post", post.t_post)?;
            if let Some(grid) = &post.channel {
                grid.validate()?;
                check_grid_sums("post", grid, post.m_post, post.t_post)?;
            }
        }
        Ok(())
    }
}

fn check_count(name: &'static str, value: u8) -> Result<(), ModelError> {
    if value > N_QUESTIONS_PER_TYPE {
        return Err(ModelError::CountOutOfRange { name, value, max: N_QUESTIONS_PER_TYPE });
    }
    Ok(())
}

fn check_grid_sums(
    phase: &'static str,
    grid: &ChannelGrid,
    m: u8,
    t: u8,
) -> Result<(), ModelError> {
    if grid.false_sum() != m {
        return Err(ModelError::ChannelSumMismatch {
            phase,
            kind: "false",
            cell_sum: grid.false_sum(),
            count: m,
        });
    }
    if grid.true_sum() != t {
        return Err(ModelError::ChannelSumMismatch {
            phase,
            kind: "true",
            cell_sum: grid.true_sum(),
            count: t,
        });
    }
    Ok(())
}

/// Which battery a scalar response is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pre,
    Post,
}

/// Weighted share-count response: `w_false * M + w_true * T`.
///
/// Errors when asked for the posttest of a censored record; the pretest is
/// always available.
pub fn discernment(
    record: &OutcomeRecord,
    weights: ResponseWeights,
    phase: Phase,
) -> Result<f64, ModelError> {
    let (m, t) = match phase {
        Phase::Pre => (record.m_pre, record.t_pre),
        Phase::Post => {
            let post = record.posttest.as_ref().ok_or(ModelError::Censored)?;
            (post.m_post, post.t_post)
        }
    };
    check_count("m", m)?;
    check_count("t", t)?;
    Ok(weights.w_false * f64::from(m) + weights.w_true * f64::from(t))
}

/// Per-type sharing rates split by channel, each the share of stimuli
/// (0, 0.5, or 1 with two stimuli) answered affirmatively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelResponses {
    pub false_any: f64,
    pub false_timeline: f64,
    pub false_messenger: f64,
    pub true_any: f64,
    pub true_timeline: f64,
    pub true_messenger: f64,
}

/// Channel-level posttest sharing rates.
///
/// "any" counts a stimulus as shared if either channel's question was
/// affirmative. Errors on censored records and on coarse records without
/// channel detail.
pub fn channel_responses(record: &OutcomeRecord) -> Result<ChannelResponses, ModelError> {
    let post = record.posttest.as_ref().ok_or(ModelError::Censored)?;
    let grid = post.channel.as_ref().ok_or(ModelError::MissingChannelDetail)?;
    grid.validate()?;
    let rate = |cells: &[[u8; 2]; N_STIMULI], pick: &dyn Fn(&[u8; 2]) -> u8| -> f64 {
        let total: u8 = cells.iter().map(|row| pick(row)).sum();
        f64::from(total) / N_STIMULI as f64
    };
    let any = |row: &[u8; 2]| u8::from(row[TIMELINE] == 1 || row[MESSENGER] == 1);
    let timeline = |row: &[u8; 2]| row[TIMELINE];
    let messenger = |row: &[u8; 2]| row[MESSENGER];
    Ok(ChannelResponses {
        false_any: rate(&grid.false_cells, &any),
        false_timeline: rate(&grid.false_cells, &timeline),
        false_messenger: rate(&grid.false_cells, &messenger),
        true_any: rate(&grid.true_cells, &any),
        true_timeline: rate(&grid.true_cells, &timeline),
        true_messenger: rate(&grid.true_cells, &messenger),
    })
}

// ── Outcome measures ────────────────────────────────────────────────────

/// A scalar outcome computed from a record's posttest, selectable wherever
/// the estimators need "the" response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeMeasure {
    Discernment(ResponseWeights),
    FalseAny,
    FalseTimeline,
    FalseMessenger,
    TrueAny,
    TrueTimeline,
    TrueMessenger,
}

impl OutcomeMeasure {
    pub fn default_discernment() -> Self {
        OutcomeMeasure::Discernment(ResponseWeights::default())
    }

    /// Evaluate the measure on a completed record.
    pub fn value(&self, record: &OutcomeRecord) -> Result<f64, ModelError> {
        match self {
            OutcomeMeasure::Discernment(w) => discernment(record, *w, Phase::Post),
            _ => {
                let r = channel_responses(record)?;
                Ok(match self {
                    OutcomeMeasure::FalseAny => r.false_any,
                    OutcomeMeasure::FalseTimeline => r.false_timeline,
                    OutcomeMeasure::FalseMessenger => r.false_messenger,
                    OutcomeMeasure::TrueAny => r.true_any,
                    OutcomeMeasure::TrueTimeline => r.true_timeline,
                    OutcomeMeasure::TrueMessenger => r.true_messenger,
                    OutcomeMeasure::Discernment(_) => unreachable!(),
                })
            }
        }
    }

    /// Stable name for report columns.
    pub fn label(&self) -> &'static str {
        match self {
            OutcomeMeasure::Discernment(_) => "discernment",
            OutcomeMeasure::FalseAny => "false_any",
            OutcomeMeasure::FalseTimeline => "false_timeline",
            OutcomeMeasure::FalseMessenger => "false_messenger",
            OutcomeMeasure::TrueAny => "true_any",
            OutcomeMeasure::TrueTimeline => "true_timeline",
            OutcomeMeasure::TrueMessenger => "true_messenger",
        }
    }

    /// Orientation of the measure: `true` when larger values are desirable
    /// (discernment, true-stimulus sharing), `false` when smaller values are
    /// (false-stimulus sharing).
    pub fn higher_is_better(&self) -> bool {
        !matches!(
            self,
            OutcomeMeasure::FalseAny | OutcomeMeasure::FalseTimeline | OutcomeMeasure::FalseMessenger
        )
    }
}

// ── Covariate context ───────────────────────────────────────────────────

/// Encoded covariates for one unit: the model-ready feature vector plus the
/// pretest share counts kept as raw strata (0..=4 each) for exact-strata
/// adjustments and stratified reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateContext {
    pub features: Vec<f64>,
    pub pretest_false_stratum: u8,
    pub pretest_true_stratum: u8,
}

impl CovariateContext {
    pub fn new(
        features: Vec<f64>,
        pretest_false_stratum: u8,
        pretest_true_stratum: u8,
    ) -> Result<Self, ModelError> {
        if pretest_false_stratum > N_QUESTIONS_PER_TYPE {
            return Err(ModelError::StratumOutOfRange(pretest_false_stratum));
        }
        if pretest_true_stratum > N_QUESTIONS_PER_TYPE {
            return Err(ModelError::StratumOutOfRange(pretest_true_stratum));
        }
        for f in &features {
            if !f.is_finite() {
                return Err(ModelError::NonFiniteCovariate { field: "feature".into() });
            }
        }
        Ok(CovariateContext { features, pretest_false_stratum, pretest_true_stratum })
    }

    /// Stable fingerprint for caching and table policies.
    pub fn fingerprint(&self) -> u64 {
        crate::rng::context_fingerprint(
            &self.features,
            self.pretest_false_stratum,
            self.pretest_true_stratum,
        )
    }
}
