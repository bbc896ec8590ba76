//! Experiment orchestration: pool pretraining, strategy comparisons over
//! repeated seeds, threshold sweeps, and CSV aggregation.

pub mod bench;
mod experiment;
pub mod pretrain;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

pub use bench::{prepare, ArtifactFamily, BenchmarkSpec, PreparedStream};
pub use experiment::{score_run, Cell, CellRun, ExperimentOutcome, ExperimentSpec, Harness, StreamChoice, SweepOutcome, SweepPoint, SweepSpec};
pub use pretrain::{pretrain_pool, PoolConfig, PretrainReport};
pub use report::{aggregate, report, Aggregate, Report, RunRow};

use crate::engine::{EngineConfig, Strategy};
use crate::error::Result;
use crate::model::{checkpoint, Classifier};
use crate::trainer::TrainConfig;

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "EPISMART_OUT";

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV).map_or_else(|| PathBuf::from("epismart-out"), PathBuf::from)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn atomic_write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, &serde_json::to_vec_pretty(value)?)
}

/// Loads the checkpoint at `path`, or pretrains on the pool and saves it there
/// (with `pretrain.json` alongside) when it does not exist yet.
pub fn load_or_pretrain(path: &Path, pool: &PoolConfig) -> Result<Classifier<f32>> {
    if path.is_file() {
        return checkpoint::load(path);
    }
    info!("no checkpoint at {}, pretraining on a pool of {} subjects", path.display(), pool.n_subjects);
    let (model, report) = pretrain_pool(pool)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    atomic_write(path, &checkpoint::encode(&model))?;
    atomic_write_json(&path.with_file_name("pretrain.json"), &report)?;
    Ok(model)
}

/// Entropy threshold for the desk model. After a few updates its median
/// window entropy is near 1e-2, far above a full-size model's, so 1e-5 would
/// select most of the stream. 0.05 sits just above the adapted model's 99th
/// percentile, so steady-state selections come mostly from predicted events.
pub const DESK_TAU_E: f64 = 0.05;

/// Fine-tuning budget for desk runs.
pub fn desk_train() -> TrainConfig {
    TrainConfig { max_epochs: 8, early_stop_patience: 3, plateau_patience: 2, lr0: 1e-3, batch_size: 32, ..TrainConfig::default() }
}

/// Engine settings for the desk benchmark.
pub fn desk_engine(strategy: Strategy) -> EngineConfig {
    EngineConfig { strategy, tau_e: DESK_TAU_E, buffer_capacity: 256, train: desk_train(), ..EngineConfig::default() }
}
