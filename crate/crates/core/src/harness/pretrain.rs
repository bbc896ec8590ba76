//! The subject-independent starting model, trained on a pool of synthetic subjects.

use log::info;
use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bench::{prepare, BenchmarkSpec};
use crate::buffer::BufferEntry;
use crate::error::{Error, Result};
use crate::model::{Architecture, Classifier};
use crate::signal::{span_label, EventInterval, WindowSource};
use crate::trainer::{fine_tune, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    /// Pool size; the last subject is held out for validation.
    pub n_subjects: usize,
    pub subject: BenchmarkSpec,
    pub train: TrainConfig,
    /// Background windows sampled per training subject, on top of every
    /// event window and every artifact window.
    pub normal_per_subject: usize,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            n_subjects: 4,
            subject: BenchmarkSpec::pool(),
            train: TrainConfig { max_epochs: 25, early_stop_patience: 5, plateau_patience: 3, lr0: 1e-3, ..TrainConfig::default() },
            normal_per_subject: 1500,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub config: PoolConfig,
    /// `(non-seizure, seizure)` windows gathered from the training subjects.
    pub entries: (usize, usize),
    pub train: TrainReport,
    /// Window-level scores on the held-out pool subject.
    pub heldout_precision: f64,
    pub heldout_recall: f64,
    pub heldout_f1: f64,
}

/// Seed of pool subject `i`; kept apart from benchmark subject seeds.
pub fn pool_subject_seed(seed: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(21);
    rng.set_word_pos(2 * i as u128);
    rng.next_u64()
}

/// Synthesizes `n_subjects` subjects with their own drift schedules, trains on
/// the pooled windows of all but the last, and scores the last.
pub fn pretrain_pool(cfg: &PoolConfig) -> Result<(Classifier<f32>, PretrainReport)> {
    if cfg.n_subjects < 2 {
        return Err(Error::config(format!("the pool needs at least 2 subjects (one is held out), got {}", cfg.n_subjects)));
    }
    cfg.train.validate()?;
    let bench = &cfg.subject;
    let window_n = bench.geometry.window_samples(bench.rate_hz)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::new();
    for i in 0..cfg.n_subjects - 1 {
        let s = pool_subject_seed(cfg.seed, i);
        let p = prepare(&bench.stream_spec(s)?, s, bench.geometry)?;
        gather(&p.stream, &p.reference, &p.artifacts, cfg.normal_per_subject, &mut rng, &mut entries);
    }
    let n_seizure = entries.iter().filter(|e| e.label == 1).count();
    let counts = (entries.len() - n_seizure, n_seizure);
    info!("pretraining on {} windows ({} seizure)", entries.len(), n_seizure);

    let model = Classifier::new(Architecture::desk(bench.channels, window_n), cfg.seed)?;
    let (model, train) = fine_tune(&model, &entries, &cfg.train, None)?;

    let s = pool_subject_seed(cfg.seed, cfg.n_subjects - 1);
    let held = prepare(&bench.stream_spec(s)?, s, bench.geometry)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for i in 0..held.stream.len() {
        let truth = span_label(&held.stream.span(i), &held.reference, 0.0);
        let pred = model.predict(&held.stream.window(i))?.label;
        match (pred, truth) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    info!("held-out window F1 {f1:.3} (precision {precision:.3}, recall {recall:.3})");
    let report = PretrainReport { config: cfg.clone(), entries: counts, train, heldout_precision: precision, heldout_recall: recall, heldout_f1: f1 };
    Ok((model, report))
}

fn gather(
    stream: &dyn WindowSource,
    reference: &[EventInterval],
    artifacts: &[EventInterval],
    n_normal: usize,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<BufferEntry>,
) {
    let mut normal = Vec::new();
    for i in 0..stream.len() {
        let span = stream.span(i);
        if span_label(&span, reference, 0.0) == 1 {
            out.push(BufferEntry { window: stream.window(i), label: 1, insert_step: out.len() as u64 });
        } else if span_label(&span, artifacts, 0.0) == 1 {
            out.push(BufferEntry { window: stream.window(i), label: 0, insert_step: out.len() as u64 });
        } else {
            normal.push(i);
        }
    }
    let mut picked = sample(rng, normal.len(), n_normal.min(normal.len())).into_vec();
    picked.sort_unstable();
    for j in picked {
        out.push(BufferEntry { window: stream.window(normal[j]), label: 0, insert_step: out.len() as u64 });
    }
}
