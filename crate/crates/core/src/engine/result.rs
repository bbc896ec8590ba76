use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EngineConfig, Reason};
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::signal::{EventInterval, WindowGeometry};
use crate::trainer::TrainReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub reason: Reason,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// Window whose selection (or schedule) triggered the update.
    pub trigger_index: usize,
    pub trigger_time_s: f64,
    /// Windows labeled for this update.
    pub n_labeled: usize,
    pub n_labeled_seizure: usize,
    /// `(non-seizure, seizure)` in the buffer when training started.
    pub buffer_counts: (usize, usize),
    pub report: Option<TrainReport>,
    /// Set when fine-tuning failed; the previous model stayed in place.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage0Record {
    pub n_windows: usize,
    pub n_seizure: usize,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub n_windows: usize,
    pub origin_s: f64,
    pub geometry: WindowGeometry,
    /// First window that is predicted and scored.
    pub first_scored: usize,
    pub duration_s: f64,
}

impl StreamInfo {
    pub fn stream_days(&self) -> f64 {
        self.duration_s / crate::scoring::SECONDS_PER_DAY
    }
}

/// Everything a run produced. The per-window prediction log is kept in memory
/// and written to a separate binary file; the JSON form refers to it by path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub config: EngineConfig,
    pub stream: StreamInfo,
    pub stage0: Option<Stage0Record>,
    pub updates: Vec<UpdateRecord>,
    pub selections: Vec<Selection>,
    /// Union of labeled window spans after initial adaptation.
    pub labeled_intervals: Vec<EventInterval>,
    pub labeled_windows: usize,
    /// Selections still waiting for an update when the stream ended (discarded).
    pub pending_at_end: Vec<usize>,
    pub oracle_queries: usize,
    pub stage0_queries: usize,
    pub predictions_file: Option<String>,
    pub checkpoint: Option<String>,
    /// Positive-class probability per scored window.
    #[serde(skip)]
    pub p1: Vec<f32>,
    /// Predicted label per scored window.
    #[serde(skip)]
    pub labels: Vec<u8>,
    /// Number of updates applied before each scored window was predicted.
    #[serde(skip)]
    pub model_version: Vec<u32>,
    #[serde(skip)]
    pub final_model: Option<Classifier<f32>>,
}

impl RunResult {
    /// Counted selections (neighbors excluded).
    pub fn counted_selections(&self) -> usize {
        self.selections.iter().filter(|s| s.reason.counts()).count()
    }

    /// Equality of everything except wall-clock timings.
    pub fn same_outcome(&self, other: &RunResult) -> bool {
        let strip = |r: &RunResult| {
            let mut v = serde_json::to_value(r).expect("serializes");
            for key in ["stage0"] {
                if let Some(s) = v.get_mut(key).and_then(|s| s.get_mut("report")) {
                    s["wall_time_s"] = 0.into();
                }
            }
            if let Some(us) = v.get_mut("updates").and_then(|u| u.as_array_mut()) {
                for u in us {
                    if let Some(rep) = u.get_mut("report").filter(|r| !r.is_null()) {
                        rep["wall_time_s"] = 0.into();
                    }
                }
            }
            v
        };
        strip(self) == strip(other) && self.p1 == other.p1 && self.labels == other.labels && self.final_model == other.final_model
    }
}

/// Positive-class probabilities as little-endian f32, one per window.
pub fn write_p1(path: &Path, p1: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 * p1.len());
    for p in p1 {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_p1(path: &Path) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{} is not a whole number of f32 values", path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}
