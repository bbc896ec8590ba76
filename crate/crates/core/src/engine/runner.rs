use log::{debug, warn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::result::{RunResult, Selection, Stage0Record, StreamInfo, UpdateRecord};
use super::{AnnotationOracle, EngineConfig, Reason, Strategy};
use crate::buffer::ReplayBuffer;
use crate::error::{Error, Result};
use crate::model::{Classifier, Mode};
use crate::signal::{EventInterval, WindowSource};
use crate::trainer::{fine_tune, TrainConfig};

const STREAM_BUFFER: u64 = 1;
const STREAM_SELECTION: u64 = 2;
const STREAM_TRAIN: u64 = 3;

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One stream, one model, advanced a window at a time.
///
/// Every scored window is predicted with the model as it stands on arrival;
/// an update the window triggers only affects later windows.
pub struct Engine<'a> {
    cfg: EngineConfig,
    source: &'a dyn WindowSource,
    oracle: AnnotationOracle,
    model: Classifier<f32>,
    buffer: ReplayBuffer,
    selection_rng: ChaCha8Rng,
    train_seeds: ChaCha8Rng,
    first_scored: usize,
    cursor: usize,
    stage0_done: bool,
    counter: usize,
    pending: Vec<usize>,
    /// Pending or already labeled after initial adaptation.
    touched: Vec<bool>,
    labeled: Vec<bool>,
    neighbor_until: Option<usize>,
    last_update_end: usize,
    stage0: Option<Stage0Record>,
    updates: Vec<UpdateRecord>,
    selections: Vec<Selection>,
    p1: Vec<f32>,
    labels: Vec<u8>,
    model_version: Vec<u32>,
}

impl<'a> Engine<'a> {
    pub fn new(cfg: EngineConfig, model: Classifier<f32>, source: &'a dyn WindowSource, oracle: AnnotationOracle) -> Result<Self> {
        cfg.validate()?;
        let mut model = model;
        model.set_mode(Mode::Eval);
        let n = source.len();
        let first_scored = source.geometry().windows_ending_by(cfg.initial_adaptation_s).min(n);
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity, substream(cfg.seed, STREAM_BUFFER).next_u64())?,
            selection_rng: substream(cfg.seed, STREAM_SELECTION),
            train_seeds: substream(cfg.seed, STREAM_TRAIN),
            cfg,
            source,
            oracle,
            model,
            first_scored,
            cursor: first_scored,
            stage0_done: false,
            counter: 0,
            pending: Vec::new(),
            touched: vec![false; n],
            labeled: vec![false; n],
            neighbor_until: None,
            last_update_end: first_scored,
            stage0: None,
            updates: Vec::new(),
            selections: Vec::new(),
            p1: Vec::with_capacity(n - first_scored),
            labels: Vec::with_capacity(n - first_scored),
            model_version: Vec::with_capacity(n - first_scored),
        })
    }

    pub fn model(&self) -> &Classifier<f32> {
        &self.model
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn oracle(&self) -> &AnnotationOracle {
        &self.oracle
    }

    /// Counted selections since the last update.
    pub fn counter(&self) -> usize {
        self.counter
    }

    pub fn pending(&self) -> &[usize] {
        &self.pending
    }

    /// Index of the next window `step` will consume.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn first_scored(&self) -> usize {
        self.first_scored
    }

    pub fn updates(&self) -> &[UpdateRecord] {
        &self.updates
    }

    /// Labels the first hour, fills the buffer and fine-tunes once. Not charged
    /// to any cost. A no-op for strategies that skip it.
    pub fn initial_adaptation(&mut self) -> Result<()> {
        if self.stage0_done {
            return Ok(());
        }
        self.stage0_done = true;
        if !self.cfg.runs_stage0() {
            return Ok(());
        }
        let mut n_seizure = 0;
        for i in 0..self.first_scored {
            let label = self.oracle.label_stage0(&self.source.span(i));
            n_seizure += usize::from(label);
            self.buffer.insert(self.source.window(i), label)?;
        }
        if n_seizure == 0 {
            return Err(Error::config(format!(
                "no reference event in the first {} s; initial adaptation needs at least one",
                self.cfg.initial_adaptation_s
            )));
        }
        let train = self.train_config();
        let (model, report) = fine_tune(&self.model, &self.buffer.snapshot(), &train, Some(self.source))?;
        debug!("initial adaptation: {} windows, {} seizure, best epoch {}", self.first_scored, n_seizure, report.best_epoch);
        self.model = model;
        self.stage0 = Some(Stage0Record { n_windows: self.first_scored, n_seizure, report });
        Ok(())
    }

    /// Consumes one window. Returns `false` once the stream is exhausted.
    pub fn step(&mut self) -> Result<bool> {
        if !self.stage0_done {
            self.initial_adaptation()?;
        }
        let k = self.cursor;
        if k >= self.source.len() {
            return Ok(false);
        }
        self.cursor += 1;

        let pred = self.model.predict(&self.source.window(k))?;
        self.p1.push(pred.probs[1] as f32);
        self.labels.push(pred.label);
        self.model_version.push(self.updates.len() as u32);

        // drawn every window so the selection stream does not depend on predictions
        let u: f64 = self.selection_rng.gen();
        let reason = match self.cfg.strategy {
            Strategy::EpiSmart | Strategy::EpiSmartWithNeighborhood => {
                if pred.entropy > self.cfg.tau_e {
                    Some(Reason::Entropy)
                } else if pred.label == 1 {
                    Some(Reason::PredictedSeizure)
                } else {
                    None
                }
            }
            Strategy::RandomUpdate => (u < self.rate()).then_some(Reason::Random),
            Strategy::RandomUpdatePlusSeizure => {
                if pred.label == 1 {
                    Some(Reason::PredictedSeizure)
                } else {
                    (u < self.rate()).then_some(Reason::Random)
                }
            }
            Strategy::NoUpdate => None,
            Strategy::UpdateEveryHour => {
                let per_update = (self.cfg.update_interval_s / self.source.geometry().stride_s).round().max(1.0) as usize;
                if (k - self.first_scored + 1) % per_update == 0 {
                    self.pending = (self.last_update_end..=k).filter(|&i| !self.touched[i]).collect();
                    self.update(k)?;
                }
                return Ok(true);
            }
        };

        match reason {
            Some(reason) => {
                self.select(k, reason);
                if self.cfg.strategy == Strategy::EpiSmartWithNeighborhood {
                    self.add_neighbors(k);
                }
                self.counter += 1;
                if self.counter >= self.cfg.tau_u {
                    self.update(k)?;
                }
            }
            None => {
                if self.neighbor_until.is_some_and(|end| k <= end) {
                    self.select(k, Reason::Neighborhood);
                }
            }
        }
        Ok(true)
    }

    /// Runs stage 0 if needed and then every remaining window.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.step()? {}
        Ok(())
    }

    pub fn finish(self) -> RunResult {
        let g = self.source.geometry();
        let n = self.source.len();
        let mut labeled_intervals: Vec<EventInterval> = Vec::new();
        let mut labeled_windows = 0;
        for i in (0..n).filter(|&i| self.labeled[i]) {
            labeled_windows += 1;
            let span = self.source.span(i);
            match labeled_intervals.last_mut() {
                Some(last) if span.start_s <= last.end_s => last.end_s = last.end_s.max(span.end_s),
                _ => labeled_intervals.push(span),
            }
        }
        let origin_s = self.source.origin_s();
        let duration_s = if n == 0 { 0.0 } else { self.source.span(n - 1).end_s - origin_s };
        RunResult {
            stream: StreamInfo { n_windows: n, origin_s, geometry: g, first_scored: self.first_scored, duration_s },
            stage0: self.stage0,
            updates: self.updates,
            selections: self.selections,
            labeled_intervals,
            labeled_windows,
            pending_at_end: self.pending,
            oracle_queries: self.oracle.queried.len(),
            stage0_queries: self.oracle.stage0_queries,
            predictions_file: None,
            checkpoint: None,
            p1: self.p1,
            labels: self.labels,
            model_version: self.model_version,
            final_model: Some(self.model),
            config: self.cfg,
        }
    }

    fn rate(&self) -> f64 {
        self.cfg.random_rate.unwrap_or(0.0)
    }

    fn select(&mut self, k: usize, reason: Reason) {
        let span = self.source.span(k);
        self.selections.push(Selection { index: k, reason, start_s: span.start_s, end_s: span.end_s });
        self.touched[k] = true;
        self.pending.push(k);
    }

    /// Past neighbors join the pending list now; future ones as they arrive.
    fn add_neighbors(&mut self, k: usize) {
        let r = (self.cfg.neighborhood_s / 2.0 / self.source.geometry().stride_s).round() as usize;
        if r == 0 {
            return;
        }
        for j in k.saturating_sub(r).max(self.first_scored)..k {
            if !self.touched[j] {
                self.select(j, Reason::Neighborhood);
            }
        }
        let end = (k + r).min(self.source.len() - 1);
        self.neighbor_until = Some(self.neighbor_until.map_or(end, |e| e.max(end)));
    }

    fn train_config(&mut self) -> TrainConfig {
        TrainConfig { seed: self.train_seeds.next_u64(), ..self.cfg.train.clone() }
    }

    fn update(&mut self, trigger: usize) -> Result<()> {
        let mut batch = std::mem::take(&mut self.pending);
        batch.sort_unstable();
        let mut n_seizure = 0;
        for &i in &batch {
            let label = self.oracle.label(i, &self.source.span(i));
            n_seizure += usize::from(label);
            self.touched[i] = true;
            self.labeled[i] = true;
            self.buffer.insert(self.source.window(i), label)?;
        }
        self.counter = 0;
        self.last_update_end = trigger + 1;
        let buffer_counts = self.buffer.class_counts();
        let train = self.train_config();
        let mut record = UpdateRecord {
            trigger_index: trigger,
            trigger_time_s: self.source.span(trigger).end_s,
            n_labeled: batch.len(),
            n_labeled_seizure: n_seizure,
            buffer_counts,
            report: None,
            error: None,
        };
        match fine_tune(&self.model, &self.buffer.snapshot(), &train, Some(self.source)) {
            Ok((model, report)) => {
                self.model = model;
                record.report = Some(report);
            }
            Err(e @ Error::TrainingDiverged { .. }) => {
                warn!("update at window {trigger} diverged, keeping the previous model: {e}");
                record.error = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
        self.updates.push(record);
        Ok(())
    }
}

/// Stage 0 (when the strategy uses it) followed by every remaining window.
pub fn run(source: &dyn WindowSource, reference: &[EventInterval], cfg: &EngineConfig, model: &Classifier<f32>) -> Result<RunResult> {
    let oracle = AnnotationOracle::new(reference.to_vec(), cfg.overlap_fraction);
    let mut engine = Engine::new(cfg.clone(), model.clone(), source, oracle)?;
    engine.initial_adaptation()?;
    engine.run_to_end()?;
    Ok(engine.finish())
}
