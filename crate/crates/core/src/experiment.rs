//! Batch lifecycle and assignment service: the operational wrapper a
//! survey front end would call.
//!
//! An [`Experiment`] owns a frozen posterior, hands out arms one unit at a
//! time, collects outcome reports, and refits when a batch closes:
//!
//! 1. [`Experiment::assign`] draws an arm for a new unit from the current
//!    batch's probabilities (uniform in batch 0) and logs the event.
//! 2. [`Experiment::record_outcome`] attaches the unit's survey responses
//!    (a missing posttest marks attrition).
//! 3. [`Experiment::advance_batch`] refits the posterior on all completed
//!    outcomes so far and freezes it for the next batch.
//!
//! Within a batch, a unit's probability vector is a pure function of its
//! covariates: the Monte-Carlo stream is seeded from (batch, context
//! fingerprint), so two identical contexts get bitwise-identical vectors
//! no matter when they arrive. The realized draw uses a separate stream
//! keyed by the unit counter.
//!
//! Every state change appends an [`EventRecord`] to an in-memory log
//! (JSONL on disk via [`write_event_log`]); [`Experiment::replay`] rebuilds
//! an experiment from that log alone and verifies that every recomputed
//! assignment matches what was logged, which doubles as the
//! crash-recovery path and a determinism check.

use std::collections::HashMap;
use std::io::{BufRead, Write as IoWrite};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{
    assignment_probabilities, draw_assignment, init_state, update_posterior, BanditConfig,
    BanditError, PosteriorState, TrainingRow,
};
use crate::model::{
    ArmSpace, CovariateContext, Dataset, DatasetUnit, ModelError, OutcomeMeasure, OutcomeRecord,
};
use crate::rng::{chacha, mix2, mix3};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("bandit: {0}")]
    Bandit(#[from] BanditError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("experiment is closed: all {0} units assigned")]
    Closed(usize),
    #[error("context has {got} features, experiment expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("unit id {0:?} was already assigned")]
    DuplicateUnit(String),
    #[error("unknown unit id {0:?}")]
    UnknownUnit(String),
    #[error("unit {0:?} already has an outcome")]
    DuplicateOutcome(String),
    #[error(
        "unit {unit_id:?}: outcome pretest ({m_pre}, {t_pre}) disagrees with \
         assignment-time strata ({false_stratum}, {true_stratum})"
    )]
    PretestMismatch {
        unit_id: String,
        m_pre: u8,
        t_pre: u8,
        false_stratum: u8,
        true_stratum: u8,
    },
    #[error("batch {batch} has {assigned}/{target} units; pass force to advance early")]
    BatchNotFull { batch: usize, assigned: usize, target: usize },
    #[error("config: {0}")]
    BadConfig(String),
    #[error("replay diverged at event {index}: {message}")]
    ReplayDivergence { index: usize, message: String },
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// When batches close, by assigned-unit count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSchedule {
    /// Units assigned uniformly before the first refit.
    pub first_batch_size: usize,
    /// Units per batch thereafter.
    pub subsequent_batch_size: usize,
    /// Assignment stops after this many units.
    pub max_units: usize,
}

impl Default for BatchSchedule {
    fn default() -> Self {
        BatchSchedule { first_batch_size: 2300, subsequent_batch_size: 800, max_units: usize::MAX }
    }
}

impl BatchSchedule {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.first_batch_size == 0 || self.subsequent_batch_size == 0 {
            return Err(ExperimentError::BadConfig("batch sizes must be at least 1".into()));
        }
        if self.max_units == 0 {
            return Err(ExperimentError::BadConfig("max_units must be at least 1".into()));
        }
        Ok(())
    }

    /// Scheduled size of a given batch.
    pub fn target(&self, batch: usize) -> usize {
        if batch == 0 {
            self.first_batch_size
        } else {
            self.subsequent_batch_size
        }
    }
}

/// How arms are chosen after batch 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssignmentMode {
    /// Equal probabilities in every batch (an evaluation stage, or a
    /// plain randomized experiment).
    Uniform,
    /// Thompson-sampling probabilities from a refit posterior.
    Blts { bandit: BanditConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub arm_space: ArmSpace,
    /// Length of every unit's covariate vector.
    pub n_features: usize,
    pub schedule: BatchSchedule,
    pub mode: AssignmentMode,
    /// Response the adaptive mode optimizes. Lower-is-better measures are
    /// negated before they reach the bandit, which always maximizes.
    pub measure: OutcomeMeasure,
    /// Experiment-level seed; drives realized draws (the bandit config's
    /// own seed drives probability computation).
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.arm_space.validate()?;
        self.schedule.validate()?;
        if let AssignmentMode::Blts { bandit } = &self.mode {
            bandit.validate()?;
            if bandit.n_arms != self.arm_space.n_arms() {
                return Err(ExperimentError::BadConfig(format!(
                    "bandit covers {} arms but the arm space has {}",
                    bandit.n_arms,
                    self.arm_space.n_arms()
                )));
            }
            if bandit.n_features != self.n_features {
                return Err(ExperimentError::BadConfig(format!(
                    "bandit expects {} features but the experiment takes {}",
                    bandit.n_features, self.n_features
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

/// One assignment, exactly as served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentEvent {
    pub unit_id: String,
    /// Logical clock (event count), not wall time: replays are exact.
    pub timestamp: u64,
    pub batch_index: usize,
    pub context: CovariateContext,
    /// Full probability vector over all arms at assignment time.
    pub probabilities: Vec<f64>,
    /// Realized arm index.
    pub arm: usize,
    /// Value of the unit counter consumed by the realized draw.
    pub rng_counter: u64,
}

/// Append-only log entry; one JSON object per line on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventRecord {
    Assignment(AssignmentEvent),
    Outcome {
        unit_id: String,
        timestamp: u64,
        outcome: OutcomeRecord,
    },
    BatchAdvance {
        timestamp: u64,
        new_batch: usize,
        forced: bool,
        /// Completed outcomes the refit saw.
        n_completed: usize,
    },
}

/// Write a log as JSON lines.
pub fn write_event_log<W: IoWrite>(mut w: W, events: &[EventRecord]) -> Result<(), ExperimentError> {
    for event in events {
        serde_json::to_writer(&mut w, event)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a JSONL event log.
pub fn read_event_log<R: BufRead>(r: R) -> Result<Vec<EventRecord>, ExperimentError> {
    let mut events = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line)?);
    }
    Ok(events)
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct UnitSlot {
    event_index: usize,
    outcome: Option<OutcomeRecord>,
}

/// A running batched experiment. See the module docs for the lifecycle.
#[derive(Debug)]
pub struct Experiment {
    config: ExperimentConfig,
    /// Posterior frozen for the current batch (Blts mode only).
    state: Option<PosteriorState>,
    batch: usize,
    assigned_in_batch: usize,
    clock: u64,
    /// Assignment counter (also the draw-stream key for the next unit).
    counter: u64,
    log: Vec<EventRecord>,
    units: HashMap<String, UnitSlot>,
    /// Assignment order (log indices of assignment events).
    order: Vec<usize>,
    n_completed: usize,
    /// Within-batch probability cache keyed by context fingerprint.
    memo: HashMap<u64, Vec<f64>>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let state = match &config.mode {
            AssignmentMode::Uniform => None,
            AssignmentMode::Blts { bandit } => Some(init_state(bandit)?),
        };
        Ok(Experiment {
            config,
            state,
            batch: 0,
            assigned_in_batch: 0,
            clock: 0,
            counter: 0,
            log: Vec::new(),
            units: HashMap::new(),
            order: Vec::new(),
            n_completed: 0,
            memo: HashMap::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn n_assigned(&self) -> usize {
        self.order.len()
    }

    pub fn n_completed(&self) -> usize {
        self.n_completed
    }

    /// Units assigned in the currently open batch.
    pub fn assigned_in_batch(&self) -> usize {
        self.assigned_in_batch
    }

    /// The posterior frozen for the current batch (None in uniform mode).
    pub fn posterior(&self) -> Option<&PosteriorState> {
        self.state.as_ref()
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.log
    }

    fn tick(&mut self) -> u64 {
        let t = self.clock;
        self.clock += 1;
        t
    }

    /// Probability vector the current batch would hand this context.
    pub fn preview_probabilities(
        &mut self,
        context: &CovariateContext,
    ) -> Result<Vec<f64>, ExperimentError> {
        if context.features.len() != self.config.n_features {
            return Err(ExperimentError::SchemaMismatch {
                expected: self.config.n_features,
                got: context.features.len(),
            });
        }
        let k = self.config.arm_space.n_arms();
        match (&self.config.mode, self.batch) {
            (AssignmentMode::Uniform, _) | (AssignmentMode::Blts { .. }, 0) => {
                Ok(vec![1.0 / k as f64; k])
            }
            (AssignmentMode::Blts { bandit }, batch) => {
                let key = context.fingerprint();
                if let Some(cached) = self.memo.get(&key) {
                    return Ok(cached.clone());
                }
                let state = self.state.as_ref().expect("Blts mode carries a posterior");
                let stream = mix2(batch as u64, key);
                let probs =
                    assignment_probabilities(bandit, state, &context.features, stream)?;
                self.memo.insert(key, probs.clone());
                Ok(probs)
            }
        }
    }

    /// Assign an arm to a new unit and log the event.
    pub fn assign(
        &mut self,
        unit_id: &str,
        context: CovariateContext,
    ) -> Result<AssignmentEvent, ExperimentError> {
        if self.order.len() >= self.config.schedule.max_units {
            return Err(ExperimentError::Closed(self.config.schedule.max_units));
        }
        if self.units.contains_key(unit_id) {
            return Err(ExperimentError::DuplicateUnit(unit_id.to_string()));
        }
        let probabilities = self.preview_probabilities(&context)?;
        let rng_counter = self.counter;
        let mut rng = chacha(mix3(self.config.seed, 0x64726177, rng_counter)); // draw stream tag
        let arm = draw_assignment(&probabilities, &mut rng)?;
        let event = AssignmentEvent {
            unit_id: unit_id.to_string(),
            timestamp: self.tick(),
            batch_index: self.batch,
            context,
            probabilities,
            arm,
            rng_counter,
        };
        self.counter += 1;
        self.assigned_in_batch += 1;
        let event_index = self.log.len();
        self.log.push(EventRecord::Assignment(event.clone()));
        self.order.push(event_index);
        self.units.insert(unit_id.to_string(), UnitSlot { event_index, outcome: None });
        Ok(event)
    }

    /// Attach a unit's survey responses. A record without a posttest is
    /// accepted and marks the unit as attrited. The record's pretest
    /// counts must equal the strata logged with the unit's context: both
    /// describe the same pretest answers.
    pub fn record_outcome(
        &mut self,
        unit_id: &str,
        outcome: OutcomeRecord,
    ) -> Result<(), ExperimentError> {
        outcome.validate()?;
        let slot = self
            .units
            .get(unit_id)
            .ok_or_else(|| ExperimentError::UnknownUnit(unit_id.to_string()))?;
        if slot.outcome.is_some() {
            return Err(ExperimentError::DuplicateOutcome(unit_id.to_string()));
        }
        let EventRecord::Assignment(event) = &self.log[slot.event_index] else {
            unreachable!("unit slots index assignment events");
        };
        if outcome.m_pre != event.context.pretest_false_stratum
            || outcome.t_pre != event.context.pretest_true_stratum
        {
            return Err(ExperimentError::PretestMismatch {
                unit_id: unit_id.to_string(),
                m_pre: outcome.m_pre,
                t_pre: outcome.t_pre,
                false_stratum: event.context.pretest_false_stratum,
                true_stratum: event.context.pretest_true_stratum,
            });
        }
        let slot = self.units.get_mut(unit_id).expect("slot just looked up");
        if outcome.completed() {
            self.n_completed += 1;
        }
        slot.outcome = Some(outcome.clone());
        let timestamp = self.tick();
        self.log.push(EventRecord::Outcome { unit_id: unit_id.to_string(), timestamp, outcome });
        Ok(())
    }

    /// Close the current batch: refit the posterior on every completed
    /// outcome to date (attrited units are skipped) and freeze it for the
    /// next batch. Errors if the batch hasn't reached its scheduled size,
    /// unless `force` is set. Returns the new batch index.
    pub fn advance_batch(&mut self, force: bool) -> Result<usize, ExperimentError> {
        let target = self.config.schedule.target(self.batch);
        if self.assigned_in_batch < target && !force {
            return Err(ExperimentError::BatchNotFull {
                batch: self.batch,
                assigned: self.assigned_in_batch,
                target,
            });
        }
        let mut n_completed = 0;
        if let AssignmentMode::Blts { bandit } = &self.config.mode {
            let rows = self.training_rows()?;
            n_completed = rows.len();
            self.state = Some(update_posterior(bandit, &rows, self.batch + 1)?);
        }
        self.batch += 1;
        self.assigned_in_batch = 0;
        self.memo.clear();
        let timestamp = self.tick();
        self.log.push(EventRecord::BatchAdvance {
            timestamp,
            new_batch: self.batch,
            forced: force,
            n_completed,
        });
        Ok(self.batch)
    }

    /// Completed units as bandit training rows, in assignment order, with
    /// inverse-propensity balance weights and the measure oriented so the
    /// bandit maximizes it.
    fn training_rows(&self) -> Result<Vec<TrainingRow>, ExperimentError> {
        let sign = if self.config.measure.higher_is_better() { 1.0 } else { -1.0 };
        let mut rows = Vec::new();
        for &event_index in &self.order {
            let EventRecord::Assignment(event) = &self.log[event_index] else {
                unreachable!("order indexes assignment events");
            };
            let Some(slot) = self.units.get(&event.unit_id) else { continue };
            let Some(outcome) = &slot.outcome else { continue };
            if !outcome.completed() {
                continue;
            }
            let response = sign * self.config.measure.value(outcome)?;
            rows.push(TrainingRow {
                features: event.context.features.clone(),
                arm: event.arm,
                response,
                weight: 1.0 / event.probabilities[event.arm],
            });
        }
        Ok(rows)
    }

    /// Everything assigned so far as an analysis dataset, sorted by unit
    /// id. Units that never reported back get an empty pretest and no
    /// posttest (censored); their assignment info is still exact.
    pub fn export_dataset(&self) -> Dataset {
        let mut units: Vec<DatasetUnit> = self
            .order
            .iter()
            .map(|&event_index| {
                let EventRecord::Assignment(event) = &self.log[event_index] else {
                    unreachable!("order indexes assignment events");
                };
                let outcome = self
                    .units
                    .get(&event.unit_id)
                    .and_then(|slot| slot.outcome.clone())
                    .unwrap_or(OutcomeRecord {
                        // Never reported back: the context strata still
                        // pin down the pretest counts.
                        m_pre: event.context.pretest_false_stratum,
                        t_pre: event.context.pretest_true_stratum,
                        channel_pre: None,
                        posttest: None,
                    });
                DatasetUnit {
                    unit_id: event.unit_id.clone(),
                    batch: event.batch_index,
                    arm: event.arm,
                    propensities: event.probabilities.clone(),
                    context: event.context.clone(),
                    outcome,
                }
            })
            .collect();
        units.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
        Dataset {
            arm_space: self.config.arm_space.clone(),
            n_features: self.config.n_features,
            units,
        }
    }

    /// Rebuild an experiment from its event log, re-deriving every
    /// assignment and checking it against what was logged. Any mismatch
    /// (different config, edited log, nondeterminism) is an error.
    pub fn replay(
        config: ExperimentConfig,
        events: &[EventRecord],
    ) -> Result<Experiment, ExperimentError> {
        let mut experiment = Experiment::new(config)?;
        for (index, event) in events.iter().enumerate() {
            let diverged = |message: String| ExperimentError::ReplayDivergence { index, message };
            match event {
                EventRecord::Assignment(logged) => {
                    let replayed =
                        experiment.assign(&logged.unit_id, logged.context.clone())?;
                    if replayed != *logged {
                        return Err(diverged(format!(
                            "recomputed assignment {replayed:?} != logged {logged:?}"
                        )));
                    }
                }
                EventRecord::Outcome { unit_id, outcome, .. } => {
                    experiment.record_outcome(unit_id, outcome.clone())?;
                }
                EventRecord::BatchAdvance { new_batch, forced, .. } => {
                    let batch = experiment.advance_batch(*forced)?;
                    if batch != *new_batch {
                        return Err(diverged(format!(
                            "advance reached batch {batch}, log says {new_batch}"
                        )));
                    }
                }
            }
        }
        Ok(experiment)
    }
}
