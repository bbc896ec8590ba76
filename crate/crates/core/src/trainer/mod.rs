//! Fine-tuning from a buffer snapshot: balancing, split, Adam, early stopping,
//! and a reduce-on-plateau learning rate.

mod adam;
pub mod augment;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use augment::{augment, Augmented};

use crate::buffer::BufferEntry;
use crate::error::{Error, Result};
use crate::model::{Classifier, Mode};
use crate::signal::{Window, WindowSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr0: f64,
    /// Stagnant epochs before the learning rate drops.
    pub plateau_patience: usize,
    /// The learning rate is divided by this on a plateau.
    pub lr_factor: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            early_stop_patience: 15,
            lr0: 1e-4,
            plateau_patience: 10,
            lr_factor: 10.0,
            batch_size: 32,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config(format!("val_fraction must be in (0, 1), got {}", self.val_fraction)));
        }
        if self.early_stop_patience == 0 || self.plateau_patience == 0 {
            return Err(Error::config("patience values must be at least 1"));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("max_epochs and batch_size must be at least 1"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) || !(self.lr_factor > 1.0) {
            return Err(Error::config("lr0 must be positive and lr_factor greater than 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Zero-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_lr: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Learning rate used in each epoch.
    pub lr: Vec<f64>,
    pub n_train: usize,
    pub n_val: usize,
    /// `(non-seizure, seizure)` in the training set after balancing.
    pub train_counts: (usize, usize),
    /// True when nothing was trained and the model was returned unchanged.
    pub skipped: bool,
    pub wall_time_s: f64,
}

impl TrainReport {
    fn skipped(n: usize) -> Self {
        Self {
            epochs_run: 0,
            best_epoch: 0,
            best_val_loss: f64::NAN,
            final_lr: 0.0,
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            lr: Vec::new(),
            n_train: n,
            n_val: 0,
            train_counts: (0, 0),
            skipped: true,
            wall_time_s: 0.0,
        }
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &TrainReport) -> bool {
        let strip = |r: &TrainReport| TrainReport { wall_time_s: 0.0, ..r.clone() };
        let (a, b) = (strip(self), strip(other));
        // NaN best loss on skipped reports
        a.skipped && b.skipped && a.n_train == b.n_train || a == b
    }
}

/// Stratified split: each class contributes `round(n * val_fraction)` entries
/// to validation, but never all of them and at least one when it has two or more.
pub fn stratified_split(entries: &[BufferEntry], val_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<BufferEntry>, Vec<BufferEntry>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in 0..=1u8 {
        let mut idx: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].label == label).collect();
        idx.shuffle(rng);
        let n = idx.len();
        let n_val = if n >= 2 { ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1) } else { 0 };
        let (v, t) = idx.split_at(n_val);
        let mut v = v.to_vec();
        let mut t = t.to_vec();
        v.sort_unstable();
        t.sort_unstable();
        val.extend(v.into_iter().map(|i| entries[i].clone()));
        train.extend(t.into_iter().map(|i| entries[i].clone()));
    }
    (train, val)
}

/// Class-balanced mean cross-entropy: the average of the per-class mean losses
/// over the classes present. Evaluated in eval mode.
pub fn balanced_loss(model: &Classifier<f32>, entries: &[BufferEntry]) -> Result<f64> {
    let mut per_class = [(0.0f64, 0usize); 2];
    for chunk in entries.chunks(256) {
        let windows: Vec<&Window> = chunk.iter().map(|e| &e.window).collect();
        let logits = model.forward_batch(&windows)?;
        for (l, e) in logits.iter().zip(chunk) {
            let (a, b) = (l[0] as f64, l[1] as f64);
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            let target = if e.label == 1 { b } else { a };
            let c = &mut per_class[usize::from(e.label)];
            c.0 += lse - target;
            c.1 += 1;
        }
    }
    let present: Vec<f64> = per_class.iter().filter(|c| c.1 > 0).map(|c| c.0 / c.1 as f64).collect();
    if present.is_empty() {
        return Err(Error::input("no entries to evaluate"));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Fine-tunes a copy of `model` on `entries` and returns the best-validation
/// checkpoint in eval mode.
///
/// Validation entries are drawn from the given entries before balancing, so
/// shifted copies of a validation window never appear in training. When one
/// class is missing the model comes back unchanged with `skipped` set. A
/// non-finite loss aborts with [`Error::TrainingDiverged`]; the caller still
/// holds the untouched input model.
pub fn fine_tune(
    model: &Classifier<f32>,
    entries: &[BufferEntry],
    cfg: &TrainConfig,
    source: Option<&dyn WindowSource>,
) -> Result<(Classifier<f32>, TrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train, val) = stratified_split(entries, cfg.val_fraction, &mut rng);
    let balanced = augment(&train, source);
    if entries.is_empty() || balanced.single_class {
        let mut m = model.clone();
        m.set_mode(Mode::Eval);
        return Ok((m, TrainReport::skipped(entries.len())));
    }
    let train = balanced.entries;
    let n_seizure = train.iter().filter(|e| e.label == 1).count();
    // with a single entry per class nothing is left to validate on; monitor training loss instead
    let monitor: &[BufferEntry] = if val.is_empty() { &train } else { &val };

    let mut current = model.clone();
    let mut best = model.clone();
    best.set_mode(Mode::Eval);
    let mut adam = Adam::new(current.param_count());
    let mut lr = cfg.lr0;
    let mut report = TrainReport {
        epochs_run: 0,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        final_lr: lr,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        lr: Vec::new(),
        n_train: train.len(),
        n_val: val.len(),
        train_counts: (train.len() - n_seizure, n_seizure),
        skipped: false,
        wall_time_s: 0.0,
    };
    let mut since_best = 0;
    let mut since_drop = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.max_epochs {
        current.set_mode(Mode::Train);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Window, u8)> = chunk.iter().map(|&i| (&train[i].window, train[i].label)).collect();
            let g = current.backward(&batch).map_err(|e| with_epoch(e, epoch))?;
            loss_sum += g.loss as f64 * chunk.len() as f64;
            current.absorb_stats(&g.stats);
            adam.step(current.params_mut(), &g.grads, lr);
        }
        current.set_mode(Mode::Eval);
        let val_loss = balanced_loss(&current, monitor)?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: val_loss });
        }
        report.train_loss.push(loss_sum / train.len() as f64);
        report.val_loss.push(val_loss);
        report.lr.push(lr);
        report.epochs_run = epoch + 1;

        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best.copy_state_from(&current);
            since_best = 0;
            since_drop = 0;
        } else {
            since_best += 1;
            since_drop += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
            if since_drop >= cfg.plateau_patience {
                lr /= cfg.lr_factor;
                since_drop = 0;
            }
        }
    }
    report.final_lr = lr;
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((best, report))
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::TrainingDiverged { loss, .. } => Error::TrainingDiverged { epoch, loss },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ConvBlock};
    use rand::Rng;

    fn arch() -> Architecture {
        Architecture {
            in_channels: 2,
            input_len: 32,
            blocks: vec![ConvBlock::new(4, 3, 1, 2), ConvBlock::new(4, 3, 1, 2)],
            head_hidden: 8,
            head_relu: true,
        }
    }

    /// Windows whose mean is positive for class 1 and negative for class 0.
    fn toy(n: usize, seed: u64) -> Vec<BufferEntry> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let mean = if label == 1 { 1.0 } else { -1.0 };
                let data = (0..64).map(|_| mean + rng.gen_range(-0.5f32..0.5)).collect();
                BufferEntry { window: Window { index: i, start_time_s: i as f64, duration_s: 4.0, channels: 2, data }, label, insert_step: i as u64 }
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig { lr0: 1e-2, batch_size: 16, ..TrainConfig::default() }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let model = Classifier::new(arch(), 1).unwrap();
        let (_, r) = fine_tune(&model, &toy(1000, 2), &TrainConfig::default(), None).unwrap();
        assert!(r.best_val_loss < 0.1, "{r:?}");
        assert!(r.epochs_run <= 100);
    }

    #[test]
    fn single_class_is_skipped_bit_identically() {
        let model = Classifier::new(arch(), 1).unwrap();
        let entries: Vec<_> = toy(40, 3).into_iter().filter(|e| e.label == 0).collect();
        let (m, r) = fine_tune(&model, &entries, &cfg(), None).unwrap();
        assert!(r.skipped);
        assert_eq!(m.params(), model.params());
        assert_eq!(m.running(), model.running());
    }

    #[test]
    fn deterministic_given_seed() {
        let model = Classifier::new(arch(), 4).unwrap();
        let entries = toy(60, 5);
        let c = TrainConfig { max_epochs: 8, ..cfg() };
        let (m1, r1) = fine_tune(&model, &entries, &c, None).unwrap();
        let (m2, r2) = fine_tune(&model, &entries, &c, None).unwrap();
        assert!(r1.same_outcome(&r2));
        assert_eq!(m1, m2);
    }

    #[test]
    fn schedule_and_checkpoint_invariants() {
        let model = Classifier::new(arch(), 6).unwrap();
        let entries = toy(80, 7);
        let c = TrainConfig { max_epochs: 60, early_stop_patience: 6, plateau_patience: 2, lr0: 5e-2, ..cfg() };
        let (best, r) = fine_tune(&model, &entries, &c, None).unwrap();
        let min = r.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_val_loss, min);
        assert_eq!(r.val_loss[r.best_epoch], min);
        assert!(r.epochs_run <= r.best_epoch + c.early_stop_patience + 1);
        for w in r.lr.windows(2) {
            assert!(w[1] == w[0] || (w[1] - w[0] / c.lr_factor).abs() < 1e-15);
        }
        // returned parameters reproduce the reported loss on the same split
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let (_, val) = stratified_split(&entries, c.val_fraction, &mut rng);
        assert!((balanced_loss(&best, &val).unwrap() - r.best_val_loss).abs() < 1e-6);
    }

    #[test]
    fn split_is_stratified() {
        let entries = toy(50, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, val) = stratified_split(&entries, 0.2, &mut rng);
        assert_eq!(train.len() + val.len(), 50);
        assert_eq!(val.iter().filter(|e| e.label == 1).count(), 5);
        assert_eq!(val.iter().filter(|e| e.label == 0).count(), 5);
    }

    #[test]
    fn bad_config_is_rejected() {
        let model = Classifier::new(arch(), 1).unwrap();
        let bad = TrainConfig { val_fraction: 1.0, ..cfg() };
        assert!(fine_tune(&model, &toy(10, 1), &bad, None).unwrap_err().is_config());
    }
}
