//! On-disk dataset interchange.
//!
//! A dataset is one CSV row per assigned unit with a fixed column order:
//!
//! ```text
//! unit_id, batch, arm_respondent, arm_headline,
//! prop_0..prop_{K-1},                 # full logged assignment probabilities
//! m_pre, t_pre, m_post, t_post,
//! pre_false_0_timeline .. post_true_1_messenger,   # 16 channel 0/1 cells
//! completed,
//! x_0..x_{p-1}                        # encoded covariate features
//! ```
//!
//! For flat arm spaces, `arm_respondent` carries the flat condition index
//! and `arm_headline` is written as 0. Censored units leave every posttest
//! column empty; records without channel detail leave the corresponding
//! cell block empty. Floats are written in shortest round-trip form, so
//! writing the same in-memory dataset twice produces identical bytes.
//!
//! A JSON sidecar ([`DatasetMeta`], conventionally `<file>.meta.json`)
//! carries the arm space and feature count so downstream commands need no
//! separate configuration to reopen a dataset.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Arm, ArmSpace, ChannelGrid, CovariateContext, ModelError, OutcomeRecord, Posttest,
    ResponseWeights, N_STIMULI,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("header: {0}")]
    Header(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One assigned unit as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetUnit {
    pub unit_id: String,
    pub batch: usize,
    /// Dense arm index into the dataset's arm space.
    pub arm: usize,
    /// Full assignment-probability vector logged at assignment time.
    pub propensities: Vec<f64>,
    pub context: CovariateContext,
    pub outcome: OutcomeRecord,
}

/// An analysis-ready collection of units under one arm space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub arm_space: ArmSpace,
    pub n_features: usize,
    pub units: Vec<DatasetUnit>,
}

/// Sidecar metadata that makes a dataset CSV self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub arm_space: ArmSpace,
    pub n_features: usize,
    /// Response weights the collecting experiment optimized, if any.
    pub response_weights: Option<ResponseWeights>,
}

impl Dataset {
    pub fn n_arms(&self) -> usize {
        self.arm_space.n_arms()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.arm_space.validate()?;
        let k = self.n_arms();
        for (row, unit) in self.units.iter().enumerate() {
            let fail = |message: String| DataError::Row { row, message };
            if unit.arm >= k {
                return Err(fail(format!("arm {} out of range for {k} arms", unit.arm)));
            }
            if unit.propensities.len() != k {
                return Err(fail(format!(
                    "{} propensities for {k} arms",
                    unit.propensities.len()
                )));
            }
            let mut sum = 0.0;
            for &p in &unit.propensities {
                if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                    return Err(fail(format!("propensity {p} outside [0, 1]")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(fail(format!("propensities sum to {sum}, expected 1")));
            }
            if unit.context.features.len() != self.n_features {
                return Err(fail(format!(
                    "{} features, dataset declares {}",
                    unit.context.features.len(),
                    self.n_features
                )));
            }
            unit.outcome.validate()?;
            if unit.outcome.m_pre != unit.context.pretest_false_stratum
                || unit.outcome.t_pre != unit.context.pretest_true_stratum
            {
                return Err(fail(
                    "pretest counts disagree with context strata".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// Indices of units whose posttest was observed.
    pub fn completed_indices(&self) -> Vec<usize> {
        self.units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.outcome.completed())
            .map(|(i, _)| i)
            .collect()
    }

    /// Batch indices present, ascending.
    pub fn batches(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.units.iter().map(|u| u.batch).collect();
        b.sort_unstable();
        b.dedup();
        b
    }
}

const CHANNEL_COLUMNS: [(&str, usize); 2] = [("timeline", 0), ("messenger", 1)];

fn channel_headers() -> Vec<String> {
    let mut headers = Vec::with_capacity(16);
    for phase in ["pre", "post"] {
        for kind in ["false", "true"] {
            for stimulus in 0..N_STIMULI {
                for (channel, _) in CHANNEL_COLUMNS {
                    headers.push(format!("{phase}_{kind}_{stimulus}_{channel}"));
                }
            }
        }
    }
    headers
}

fn grid_cells(grid: &ChannelGrid) -> [u8; 8] {
    let mut cells = [0u8; 8];
    let mut i = 0;
    for source in [&grid.false_cells, &grid.true_cells] {
        for row in source {
            for &cell in row {
                cells[i] = cell;
                i += 1;
            }
        }
    }
    cells
}

fn grid_from_cells(cells: &[Option<u8>]) -> Result<Option<ChannelGrid>, String> {
    debug_assert_eq!(cells.len(), 8);
    if cells.iter().all(Option::is_none) {
        return Ok(None);
    }
    if cells.iter().any(Option::is_none) {
        return Err("channel block is partially filled".to_string());
    }
    let v: Vec<u8> = cells.iter().map(|c| c.unwrap()).collect();
    Ok(Some(ChannelGrid {
        false_cells: [[v[0], v[1]], [v[2], v[3]]],
        true_cells: [[v[4], v[5]], [v[6], v[7]]],
    }))
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Write a dataset in the fixed interchange layout.
pub fn write_dataset_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    dataset.validate()?;
    let k = dataset.n_arms();
    let mut out = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = vec![
        "unit_id".into(),
        "batch".into(),
        "arm_respondent".into(),
        "arm_headline".into(),
    ];
    for w in 0..k {
        header.push(format!("prop_{w}"));
    }
    header.extend(["m_pre".into(), "t_pre".into(), "m_post".into(), "t_post".into()]);
    header.extend(channel_headers());
    header.push("completed".into());
    for j in 0..dataset.n_features {
        header.push(format!("x_{j}"));
    }
    out.write_record(&header)?;

    for unit in &dataset.units {
        let (arm_respondent, arm_headline) = match &dataset.arm_space {
            ArmSpace::Factorial { .. } => {
                let arm = dataset.arm_space.cell(unit.arm)?;
                (arm.respondent_level, arm.headline_level)
            }
            ArmSpace::Flat { .. } => (unit.arm, 0),
        };
        let mut record: Vec<String> = vec![
            unit.unit_id.clone(),
            unit.batch.to_string(),
            arm_respondent.to_string(),
            arm_headline.to_string(),
        ];
        record.extend(unit.propensities.iter().map(|&p| fmt_f64(p)));
        record.push(unit.outcome.m_pre.to_string());
        record.push(unit.outcome.t_pre.to_string());
        match &unit.outcome.posttest {
            Some(post) => {
                record.push(post.m_post.to_string());
                record.push(post.t_post.to_string());
            }
            None => {
                record.push(String::new());
                record.push(String::new());
            }
        }
        for grid in [
            &unit.outcome.channel_pre,
            &unit.outcome.posttest.as_ref().and_then(|p| p.channel),
        ] {
            match grid {
                Some(g) => record.extend(grid_cells(g).iter().map(u8::to_string)),
                None => record.extend(std::iter::repeat_n(String::new(), 8)),
            }
        }
        record.push(if unit.outcome.completed() { "1".into() } else { "0".into() });
        record.extend(unit.context.features.iter().map(|&x| fmt_f64(x)));
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a dataset written by [`write_dataset_csv`]. The arm space comes from
/// the caller (usually the [`DatasetMeta`] sidecar); the propensity-column
/// count must match it.
pub fn read_dataset_csv<R: Read>(reader: R, arm_space: ArmSpace) -> Result<Dataset, DataError> {
    arm_space.validate()?;
    let k = arm_space.n_arms();
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected_prefix = ["unit_id", "batch", "arm_respondent", "arm_headline"];
    for (i, name) in expected_prefix.iter().enumerate() {
        if headers.get(i) != Some(*name) {
            return Err(DataError::Header(format!(
                "column {i} must be `{name}`, found `{}`",
                headers.get(i).unwrap_or("")
            )));
        }
    }
    let n_props = headers
        .iter()
        .skip(4)
        .take_while(|h| h.starts_with("prop_"))
        .count();
    if n_props != k {
        return Err(DataError::Header(format!(
            "{n_props} propensity columns for an arm space of {k} arms"
        )));
    }
    let fixed = 4 + k + 4 + 16 + 1;
    let n_features = headers.len().saturating_sub(fixed);
    if headers.len() < fixed {
        return Err(DataError::Header("too few columns".into()));
    }

    let mut units = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let fail = |message: String| DataError::Row { row: row_idx, message };
        let get = |i: usize| record.get(i).unwrap_or("");
        let parse_usize = |i: usize, name: &str| -> Result<usize, DataError> {
            get(i)
                .parse::<usize>()
                .map_err(|e| DataError::Row { row: row_idx, message: format!("{name}: {e}") })
        };
        let unit_id = get(0).to_string();
        let batch = parse_usize(1, "batch")?;
        let arm_respondent = parse_usize(2, "arm_respondent")?;
        let arm_headline = parse_usize(3, "arm_headline")?;
        let arm = match &arm_space {
            ArmSpace::Factorial { .. } => arm_space.index_of(Arm {
                respondent_level: arm_respondent,
                headline_level: arm_headline,
            })?,
            ArmSpace::Flat { .. } => arm_respondent,
        };
        let mut propensities = Vec::with_capacity(k);
        for w in 0..k {
            let raw = get(4 + w);
            let p: f64 = raw
                .parse()
                .map_err(|e| DataError::Row { row: row_idx, message: format!("prop_{w}: {e}") })?;
            propensities.push(p);
        }
        let base = 4 + k;
        let parse_count = |i: usize, name: &str| -> Result<Option<u8>, DataError> {
            let raw = get(i);
            if raw.is_empty() {
                return Ok(None);
            }
            raw.parse::<u8>()
                .map(Some)
                .map_err(|e| DataError::Row { row: row_idx, message: format!("{name}: {e}") })
        };
        let m_pre = parse_count(base, "m_pre")?
            .ok_or_else(|| fail("m_pre is required".into()))?;
        let t_pre = parse_count(base + 1, "t_pre")?
            .ok_or_else(|| fail("t_pre is required".into()))?;
        let m_post = parse_count(base + 2, "m_post")?;
        let t_post = parse_count(base + 3, "t_post")?;
        let mut cells = Vec::with_capacity(16);
        for j in 0..16 {
            cells.push(parse_count(base + 4 + j, "channel cell")?);
        }
        let channel_pre = grid_from_cells(&cells[..8]).map_err(|m| fail(m))?;
        let channel_post = grid_from_cells(&cells[8..]).map_err(|m| fail(m))?;
        let completed = match get(base + 20) {
            "1" => true,
            "0" => false,
            other => return Err(fail(format!("completed must be 0/1, found `{other}`"))),
        };
        let posttest = if completed {
            let m_post = m_post.ok_or_else(|| fail("completed row missing m_post".into()))?;
            let t_post = t_post.ok_or_else(|| fail("completed row missing t_post".into()))?;
            Some(Posttest { m_post, t_post, channel: channel_post })
        } else {
            if m_post.is_some() || t_post.is_some() || channel_post.is_some() {
                return Err(fail("censored row carries posttest values".into()));
            }
            None
        };
        let mut features = Vec::with_capacity(n_features);
        for j in 0..n_features {
            let raw = get(base + 21 + j);
            let x: f64 = raw
                .parse()
                .map_err(|e| DataError::Row { row: row_idx, message: format!("x_{j}: {e}") })?;
            features.push(x);
        }
        let context = CovariateContext::new(features, m_pre, t_pre)?;
        let outcome = OutcomeRecord { m_pre, t_pre, channel_pre, posttest };
        units.push(DatasetUnit { unit_id, batch, arm, propensities, context, outcome });
    }
    let dataset = Dataset { arm_space, n_features, units };
    dataset.validate()?;
    Ok(dataset)
}

/// Conventional sidecar path: `<dataset path>.meta.json`.
pub fn meta_path(dataset_path: &Path) -> PathBuf {
    let mut name = dataset_path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    dataset_path.with_file_name(name)
}

impl DatasetMeta {
    pub fn write_to(&self, path: &Path) -> Result<(), DataError> {
        let mut file = File::create(path)?;
        serde_json::to_writer_pretty(&mut file, self)?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }
}
