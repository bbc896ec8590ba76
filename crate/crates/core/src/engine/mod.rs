//! The streaming loop: predict each window, pick windows worth labeling,
//! and fine-tune once enough have accumulated. Baselines and ablations share
//! the same loop and differ only in how windows are selected.

mod oracle;
mod result;
mod runner;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use oracle::AnnotationOracle;
pub use result::{read_p1, write_p1, RunResult, Selection, Stage0Record, StreamInfo, UpdateRecord};
pub use runner::{run, Engine};

use crate::buffer::DEFAULT_CAPACITY;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Entropy- and prediction-gated selection with a count-triggered update.
    #[serde(rename = "episMART", alias = "epismart")]
    EpiSmart,
    /// The pretrained model, never adapted.
    #[serde(rename = "no_update")]
    NoUpdate,
    /// Label everything and fine-tune once per hour.
    #[serde(rename = "update_every_hour")]
    UpdateEveryHour,
    /// Uniformly random selection at a fixed rate.
    #[serde(rename = "random_update")]
    RandomUpdate,
    /// Random selection plus every predicted event.
    #[serde(rename = "random_update_plus_seizure")]
    RandomUpdatePlusSeizure,
    /// Like the main strategy, also labeling the windows around each selection.
    #[serde(rename = "episMART_with_neighborhood", alias = "epismart_with_neighborhood")]
    EpiSmartWithNeighborhood,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::EpiSmart,
        Strategy::NoUpdate,
        Strategy::UpdateEveryHour,
        Strategy::RandomUpdate,
        Strategy::RandomUpdatePlusSeizure,
        Strategy::EpiSmartWithNeighborhood,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::EpiSmart => "episMART",
            Strategy::NoUpdate => "no_update",
            Strategy::UpdateEveryHour => "update_every_hour",
            Strategy::RandomUpdate => "random_update",
            Strategy::RandomUpdatePlusSeizure => "random_update_plus_seizure",
            Strategy::EpiSmartWithNeighborhood => "episMART_with_neighborhood",
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, Strategy::RandomUpdate | Strategy::RandomUpdatePlusSeizure)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown strategy {s:?}")))
    }
}

/// Why a window was selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Entropy,
    PredictedSeizure,
    Random,
    /// Labeled alongside a nearby selection; does not count toward an update.
    Neighborhood,
}

impl Reason {
    pub fn counts(self) -> bool {
        self != Reason::Neighborhood
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub strategy: Strategy,
    /// Entropy threshold in nats; selection needs strictly more.
    pub tau_e: f64,
    /// Counted selections that trigger an update.
    pub tau_u: usize,
    /// Total width of the neighborhood around a selection.
    pub neighborhood_s: f64,
    pub initial_adaptation_s: f64,
    /// Scheduled update period for the hourly baseline.
    pub update_interval_s: f64,
    pub buffer_capacity: usize,
    pub train: TrainConfig,
    pub seed: u64,
    /// Per-window selection probability for the random strategies.
    pub random_rate: Option<f64>,
    /// Give the never-updating baseline the initial adaptation too.
    pub no_update_with_stage0: bool,
    pub overlap_fraction: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::EpiSmart,
            tau_e: 1e-5,
            tau_u: 15,
            neighborhood_s: 60.0,
            initial_adaptation_s: 3600.0,
            update_interval_s: 3600.0,
            buffer_capacity: DEFAULT_CAPACITY,
            train: TrainConfig::default(),
            seed: 0,
            random_rate: None,
            no_update_with_stage0: false,
            overlap_fraction: 0.0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_e >= 0.0) {
            return Err(Error::config(format!("tau_e must be non-negative, got {}", self.tau_e)));
        }
        if self.tau_u == 0 {
            return Err(Error::config("tau_u must be at least 1"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::config("buffer capacity must be at least 1"));
        }
        if !(self.initial_adaptation_s >= 0.0) || !(self.update_interval_s > 0.0) || !(self.neighborhood_s >= 0.0) {
            return Err(Error::config("durations must be non-negative (update interval positive)"));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::config("overlap_fraction must lie in [0, 1)"));
        }
        if self.strategy.is_random() {
            match self.random_rate {
                Some(q) if (0.0..=1.0).contains(&q) => {}
                Some(q) => return Err(Error::config(format!("random_rate must lie in [0, 1], got {q}"))),
                None => return Err(Error::config(format!("{} needs random_rate", self.strategy))),
            }
        }
        self.train.validate()
    }

    /// Whether the strategy runs the one-time first-hour adaptation.
    pub fn runs_stage0(&self) -> bool {
        self.strategy != Strategy::NoUpdate || self.no_update_with_stage0
    }
}
