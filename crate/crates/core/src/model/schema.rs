//! Covariate encoding.
//!
//! Survey covariates arrive as named values, any of which a respondent may
//! have skipped. The schema fixes, per field, how values map into the model
//! feature vector:
//!
//! - continuous fields are standardized with frozen constants,
//! - categoricals become level indicators (level 0 is the reference),
//! - index fields (already-scaled composite scores) pass through unchanged.
//!
//! Skipped values are imputed to zero; fields with [`SkipPolicy::Flag`] also
//! get a trailing 0/1 "was skipped" indicator so the model can separate
//! "zero" from "unanswered". Index fields default to plain zero-coding with
//! no flag. The pretest share counts ride along both as raw strata on
//! [`CovariateContext`] and, when `include_strata` is set, as stratum
//! indicators at the end of the feature vector.
//!
//! Layout: `[field encodings...][skip flags...][stratum indicators...]`,
//! fields in schema order. The layout is frozen by the schema alone, so two
//! raw maps encode to the same-length vectors always.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CovariateContext, ModelError, N_QUESTIONS_PER_TYPE};

/// Width of the stratum-indicator block: levels 1..=4 for each of the false
/// and true pretest counts (level 0 is the reference).
pub const N_STRATUM_FEATURES: usize = 2 * N_QUESTIONS_PER_TYPE as usize;

/// How a field's raw value turns into feature slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    /// One slot: `(v - mean) / sd` with frozen constants.
    Continuous { mean: f64, sd: f64 },
    /// `levels - 1` indicator slots for levels `1..levels`.
    Categorical { levels: usize },
    /// One slot, passed through as-is (pre-scaled composite scores).
    Index,
}

/// What to do when a field was skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipPolicy {
    /// Impute zero and raise a dedicated skip indicator.
    Flag,
    /// Impute zero silently.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: CovariateKind,
    pub skip: SkipPolicy,
}

impl FieldSpec {
    /// Continuous field with identity standardization until fitted.
    pub fn continuous(name: &str) -> Self {
        FieldSpec {
            name: name.into(),
            kind: CovariateKind::Continuous { mean: 0.0, sd: 1.0 },
            skip: SkipPolicy::Flag,
        }
    }

    pub fn categorical(name: &str, levels: usize) -> Self {
        FieldSpec { name: name.into(), kind: CovariateKind::Categorical { levels }, skip: SkipPolicy::Flag }
    }

    pub fn index(name: &str) -> Self {
        FieldSpec { name: name.into(), kind: CovariateKind::Index, skip: SkipPolicy::Zero }
    }

    fn width(&self) -> usize {
        match &self.kind {
            CovariateKind::Continuous { .. } | CovariateKind::Index => 1,
            CovariateKind::Categorical { levels } => levels.saturating_sub(1),
        }
    }
}

/// A raw covariate value as it arrives from a survey or service payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Number(f64),
    /// Explicit skip; absent map keys are treated identically.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub fields: Vec<FieldSpec>,
    /// Append pretest stratum indicators to the feature vector.
    pub include_strata: bool,
}

impl CovariateSchema {
    pub fn new(fields: Vec<FieldSpec>, include_strata: bool) -> Result<Self, ModelError> {
        let schema = CovariateSchema { fields, include_strata };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = std::collections::BTreeSet::new();
        for field in &self.fields {
            if !seen.insert(field.name.as_str()) {
                return Err(ModelError::DuplicateField(field.name.clone()));
            }
            match &field.kind {
                CovariateKind::Continuous { sd, .. } => {
                    if !(sd.is_finite() && *sd > 0.0) {
                        return Err(ModelError::BadStandardization {
                            field: field.name.clone(),
                            sd: *sd,
                        });
                    }
                }
                CovariateKind::Categorical { levels } => {
                    if *levels < 2 {
                        return Err(ModelError::CategoricalOutOfRange {
                            field: field.name.clone(),
                            value: f64::NAN,
                            levels: *levels,
                        });
                    }
                }
                CovariateKind::Index => {}
            }
        }
        Ok(())
    }

    /// Total feature-vector length produced by [`CovariateSchema::encode`].
    pub fn feature_len(&self) -> usize {
        let enc: usize = self.fields.iter().map(FieldSpec::width).sum();
        let flags = self.fields.iter().filter(|f| f.skip == SkipPolicy::Flag).count();
        enc + flags + if self.include_strata { N_STRATUM_FEATURES } else { 0 }
    }

    /// Names for each feature slot, aligned with the encoded vector.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.feature_len());
        for field in &self.fields {
            match &field.kind {
                CovariateKind::Continuous { .. } | CovariateKind::Index => {
                    names.push(field.name.clone())
                }
                CovariateKind::Categorical { levels } => {
                    for level in 1..*levels {
                        names.push(format!("{}={}", field.name, level));
                    }
                }
            }
        }
        for field in &self.fields {
            if field.skip == SkipPolicy::Flag {
                names.push(format!("{}_skipped", field.name));
            }
        }
        if self.include_strata {
            for level in 1..=N_QUESTIONS_PER_TYPE {
                names.push(format!("m_pre={level}"));
            }
            for level in 1..=N_QUESTIONS_PER_TYPE {
                names.push(format!("t_pre={level}"));
            }
        }
        names
    }

    /// Encode one unit's raw covariates plus pretest counts.
    ///
    /// Keys absent from `raw` count as skipped; keys not in the schema are
    /// rejected rather than silently dropped.
    pub fn encode(
        &self,
        raw: &BTreeMap<String, CovariateValue>,
        m_pre: u8,
        t_pre: u8,
    ) -> Result<CovariateContext, ModelError> {
        self.validate()?;
        for key in raw.keys() {
            if !self.fields.iter().any(|f| &f.name == key) {
                return Err(ModelError::UnknownCovariate(key.clone()));
            }
        }
        let mut features = Vec::with_capacity(self.feature_len());
        let mut flags = Vec::new();
        for field in &self.fields {
            let value = raw.get(&field.name).copied().unwrap_or(CovariateValue::Skipped);
            let skipped = matches!(value, CovariateValue::Skipped);
            if let CovariateValue::Number(v) = value {
                if !v.is_finite() {
                    return Err(ModelError::NonFiniteCovariate { field: field.name.clone() });
                }
            }
            match (&field.kind, value) {
                (CovariateKind::Continuous { mean, sd }, CovariateValue::Number(v)) => {
                    features.push((v - mean) / sd);
                }
                (CovariateKind::Continuous { .. }, CovariateValue::Skipped) => features.push(0.0),
                (CovariateKind::Index, CovariateValue::Number(v)) => features.push(v),
                (CovariateKind::Index, CovariateValue::Skipped) => features.push(0.0),
                (CovariateKind::Categorical { levels }, CovariateValue::Number(v)) => {
                    if v.fract() != 0.0 || v < 0.0 || v >= *levels as f64 {
                        return Err(ModelError::CategoricalOutOfRange {
                            field: field.name.clone(),
                            value: v,
                            levels: *levels,
                        });
                    }
                    let level = v as usize;
                    for candidate in 1..*levels {
                        features.push(if candidate == level { 1.0 } else { 0.0 });
                    }
                }
                (CovariateKind::Categorical { levels }, CovariateValue::Skipped) => {
                    for _ in 1..*levels {
                        features.push(0.0);
                    }
                }
            }
            if field.skip == SkipPolicy::Flag {
                flags.push(if skipped { 1.0 } else { 0.0 });
            }
        }
        features.extend_from_slice(&flags);
        if self.include_strata {
            for level in 1..=N_QUESTIONS_PER_TYPE {
                features.push(if m_pre == level { 1.0 } else { 0.0 });
            }
            for level in 1..=N_QUESTIONS_PER_TYPE {
                features.push(if t_pre == level { 1.0 } else { 0.0 });
            }
        }
        CovariateContext::new(features, m_pre, t_pre)
    }

    /// Freeze continuous standardization constants from observed rows
    /// (skips excluded). Constant fields keep `sd = 1` so encoding stays
    /// defined.
    pub fn fit_standardization(
        &mut self,
        rows: &[BTreeMap<String, CovariateValue>],
    ) -> Result<(), ModelError> {
        for field in &mut self.fields {
            if let CovariateKind::Continuous { mean, sd } = &mut field.kind {
                let observed: Vec<f64> = rows
                    .iter()
                    .filter_map(|row| match row.get(&field.name) {
                        Some(CovariateValue::Number(v)) => Some(*v),
                        _ => None,
                    })
                    .collect();
                for v in &observed {
                    if !v.is_finite() {
                        return Err(ModelError::NonFiniteCovariate { field: field.name.clone() });
                    }
                }
                if observed.is_empty() {
                    *mean = 0.0;
                    *sd = 1.0;
                    continue;
                }
                let m = observed.iter().sum::<f64>() / observed.len() as f64;
                let var = observed.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                    / observed.len() as f64;
                *mean = m;
                *sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            }
        }
        Ok(())
    }
}

/// Encode one unit's raw covariates against a schema (free-function form).
pub fn encode_context(
    schema: &CovariateSchema,
    raw: &BTreeMap<String, CovariateValue>,
    m_pre: u8,
    t_pre: u8,
) -> Result<CovariateContext, ModelError> {
    schema.encode(raw, m_pre, t_pre)
}
