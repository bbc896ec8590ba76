use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::bench::{prepare, BenchmarkSpec, PreparedStream};
use super::report::{aggregate, write_rows, Aggregate, RunRow};
use super::{atomic_write, atomic_write_json};
use crate::engine::{run, write_p1, EngineConfig, RunResult, Strategy};
use crate::error::{Error, Result};
use crate::model::{checkpoint, Classifier};
use crate::scoring::{score, MetricsReport, ScoreInput, ScoringConfig, WindowTiming, SECONDS_PER_DAY};
use crate::signal::StreamSpec;

/// Where a cell's stream comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamChoice {
    /// A fresh synthetic subject per repeat.
    Benchmark(BenchmarkSpec),
    /// A fixed spec (synthetic or recorded), synthesized with the repeat seed.
    Spec(StreamSpec),
}

impl Default for StreamChoice {
    fn default() -> Self {
        StreamChoice::Benchmark(BenchmarkSpec::desk())
    }
}

impl StreamChoice {
    fn resolve(&self, seed: u64) -> Result<(StreamSpec, crate::signal::WindowGeometry)> {
        match self {
            StreamChoice::Benchmark(b) => Ok((b.stream_spec(seed)?, b.geometry)),
            StreamChoice::Spec(s) => Ok((s.clone(), crate::signal::WindowGeometry::default())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: String,
    #[serde(default)]
    pub stream: StreamChoice,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
}

impl Cell {
    pub fn new(id: impl Into<String>, stream: StreamChoice, engine: EngineConfig) -> Self {
        Self { id: id.into(), stream, engine, scoring: ScoringConfig::default() }
    }
}

fn default_repeats() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub cells: Vec<Cell>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed_base: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("repeats must be at least 1"));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.cells {
            if c.id.is_empty() || c.id.contains(['/', '\\']) {
                return Err(Error::config(format!("cell id {:?} is not a usable directory name", c.id)));
            }
            if !seen.insert(&c.id) {
                return Err(Error::config(format!("duplicate cell id {:?}", c.id)));
            }
            c.scoring.validate()?;
            // the random rate may be left for the harness to match
            let mut e = c.engine.clone();
            if e.strategy.is_random() && e.random_rate.is_none() {
                e.random_rate = Some(0.0);
            }
            e.validate()?;
        }
        Ok(())
    }
}

/// One finished run.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub row: RunRow,
    pub metrics: MetricsReport,
    pub result: Rc<RunResult>,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub runs: Vec<CellRun>,
    /// `(cell id, repeat, error)` for runs that failed; other runs carry on.
    pub failures: Vec<(String, usize, String)>,
}

impl ExperimentOutcome {
    pub fn rows(&self) -> Vec<RunRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }

    pub fn of(&self, cell: &str) -> Vec<&CellRun> {
        self.runs.iter().filter(|r| r.row.cell == cell).collect()
    }
}

/// Runs cells against one pretrained model and writes every artifact under `out_dir`.
///
/// Prepared streams and finished runs are memoized in memory, keyed by the
/// exact stream and engine configuration, so a cell repeated across
/// experiments (or the episMART run paired with a random baseline) runs once.
pub struct Harness {
    out_dir: PathBuf,
    model: Classifier<f32>,
    streams: HashMap<String, Rc<PreparedStream>>,
    runs: HashMap<String, Rc<RunResult>>,
    /// Prepared streams kept at most; older ones are dropped first.
    pub stream_cache: usize,
}

impl Harness {
    pub fn new(out_dir: impl Into<PathBuf>, model: Classifier<f32>) -> Self {
        Self { out_dir: out_dir.into(), model, streams: HashMap::new(), runs: HashMap::new(), stream_cache: 4 }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn model(&self) -> &Classifier<f32> {
        &self.model
    }

    pub fn stream(&mut self, choice: &StreamChoice, seed: u64) -> Result<Rc<PreparedStream>> {
        let (spec, geometry) = choice.resolve(seed)?;
        let key = format!("{}#{seed}", serde_json::to_string(&spec)?);
        if let Some(p) = self.streams.get(&key) {
            return Ok(p.clone());
        }
        if self.streams.len() >= self.stream_cache {
            self.streams.clear();
        }
        let p = Rc::new(prepare(&spec, seed, geometry)?);
        self.streams.insert(key, p.clone());
        Ok(p)
    }

    fn engine_run(&mut self, choice: &StreamChoice, cfg: &EngineConfig, seed: u64) -> Result<Rc<RunResult>> {
        let key = format!("{}|{}#{seed}", serde_json::to_string(choice)?, serde_json::to_string(cfg)?);
        if let Some(r) = self.runs.get(&key) {
            return Ok(r.clone());
        }
        let p = self.stream(choice, seed)?;
        let t = Instant::now();
        let r = Rc::new(run(&p.stream, &p.reference, cfg, &self.model)?);
        info!(
            "{} seed {seed}: {} updates, {} selections in {:.1} s",
            cfg.strategy,
            r.updates.len(),
            r.selections.len(),
            t.elapsed().as_secs_f64()
        );
        self.runs.insert(key, r.clone());
        Ok(r)
    }

    /// Selection probability matching a paired episMART run on the same stream and seed.
    pub fn matched_rate(&mut self, cell: &Cell, seed: u64) -> Result<f64> {
        let paired = EngineConfig { strategy: Strategy::EpiSmart, random_rate: None, ..cell.engine.clone() };
        let r = self.engine_run(&cell.stream, &paired, seed)?;
        let scored = r.stream.n_windows - r.stream.first_scored;
        Ok(if scored == 0 { 0.0 } else { r.counted_selections() as f64 / scored as f64 })
    }

    /// Runs one cell at one repeat (seed = `seed_base + repeat`), scores it, and
    /// writes `result.json`, `p1.bin`, `metrics.json`, `model.ckpt`, and `row.csv`.
    pub fn run_cell(&mut self, cell: &Cell, repeat: usize, seed_base: u64, group: &str) -> Result<CellRun> {
        let seed = seed_base + repeat as u64;
        let mut cfg = cell.engine.clone();
        cfg.seed = seed;
        if cfg.strategy.is_random() && cfg.random_rate.is_none() {
            cfg.random_rate = Some(self.matched_rate(cell, seed)?);
        }
        cfg.validate()?;
        cell.scoring.validate()?;
        let result = self.engine_run(&cell.stream, &cfg, seed)?;
        let p = self.stream(&cell.stream, seed)?;
        let metrics = score_run(&result, &p.reference, &cell.scoring);

        let dir = self.out_dir.join("runs").join(&cell.id).join(format!("r{repeat}"));
        std::fs::create_dir_all(&dir)?;
        let mut stored = (*result).clone();
        let tmp = dir.join("p1.bin.tmp");
        write_p1(&tmp, &result.p1)?;
        std::fs::rename(&tmp, dir.join("p1.bin"))?;
        stored.predictions_file = Some("p1.bin".into());
        if let Some(m) = &result.final_model {
            atomic_write(&dir.join("model.ckpt"), &checkpoint::encode(m))?;
            stored.checkpoint = Some("model.ckpt".into());
        }
        atomic_write_json(&dir.join("result.json"), &stored)?;
        atomic_write_json(&dir.join("metrics.json"), &metrics)?;
        let row = RunRow::new(&cell.id, group, repeat, &cfg, &result, &metrics);
        write_rows(&dir.join("row.csv"), std::slice::from_ref(&row))?;
        Ok(CellRun { row, metrics, result, dir })
    }

    /// Every cell at every repeat; failures are collected, not fatal.
    pub fn run_experiment(&mut self, spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
        spec.validate()?;
        std::fs::create_dir_all(&self.out_dir)?;
        atomic_write_json(&self.out_dir.join("experiment.json"), spec)?;
        let mut out = ExperimentOutcome::default();
        for cell in &spec.cells {
            for r in 0..spec.repeats {
                match self.run_cell(cell, r, spec.seed_base, "") {
                    Ok(run) => out.runs.push(run),
                    Err(e) => {
                        warn!("cell {} repeat {r} failed: {e}", cell.id);
                        out.failures.push((cell.id.clone(), r, e.to_string()));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Runs the `(tau_e, tau_u)` grid around `spec.base` and writes `sweep.csv`
    /// in long format (one line per grid point and metric).
    pub fn sweep(&mut self, spec: &SweepSpec) -> Result<SweepOutcome> {
        spec.validate()?;
        std::fs::create_dir_all(&self.out_dir)?;
        let mut outcome = SweepOutcome::default();
        for &tau_e in &spec.tau_e {
            for &tau_u in &spec.tau_u {
                let cell = spec.cell_at(tau_e, tau_u);
                let mut rows = Vec::new();
                for r in 0..spec.repeats {
                    match self.run_cell(&cell, r, spec.seed_base, "sweep") {
                        Ok(run) => rows.push(run.row),
                        Err(e) => {
                            warn!("sweep point tau_e={tau_e} tau_u={tau_u} repeat {r} failed: {e}");
                            outcome.failures.push((tau_e, tau_u, r, e.to_string()));
                        }
                    }
                }
                if !rows.is_empty() {
                    outcome.points.push(SweepPoint { tau_e, tau_u, summary: aggregate(&cell.id, &rows) });
                }
                outcome.rows.extend(rows);
            }
        }
        write_sweep_csv(&self.out_dir.join("sweep.csv"), &outcome.points)?;
        Ok(outcome)
    }
}

/// Scores a run against the reference events that end inside the scored region.
pub fn score_run(result: &RunResult, reference: &[crate::signal::EventInterval], cfg: &ScoringConfig) -> MetricsReport {
    let timing = WindowTiming { origin_s: result.stream.origin_s, first_index: result.stream.first_scored, geometry: result.stream.geometry };
    let scored_from = timing.span(0).start_s;
    let reference: Vec<_> = reference.iter().filter(|e| e.end_s > scored_from).copied().collect();
    let input = ScoreInput {
        labels: &result.labels,
        timing,
        reference: &reference,
        labeled: &result.labeled_intervals,
        labeled_naive_s: result.labeled_windows as f64 * result.stream.geometry.duration_s,
        n_updates: result.updates.len(),
        stream_days: result.stream.duration_s / SECONDS_PER_DAY,
    };
    score(&input, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: Cell,
    pub tau_e: Vec<f64>,
    pub tau_u: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed_base: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tau_e.is_empty() || self.tau_u.is_empty() {
            return Err(Error::config("the sweep grid is empty"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats must be at least 1"));
        }
        for &e in &self.tau_e {
            for &u in &self.tau_u {
                let c = self.cell_at(e, u);
                c.engine.validate()?;
            }
        }
        Ok(())
    }

    pub fn cell_at(&self, tau_e: f64, tau_u: usize) -> Cell {
        let mut cell = self.base.clone();
        cell.id = format!("{}_tauE{tau_e:e}_tauU{tau_u}", self.base.id);
        cell.engine.tau_e = tau_e;
        cell.engine.tau_u = tau_u;
        cell
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub tau_e: f64,
    pub tau_u: usize,
    pub summary: Aggregate,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub rows: Vec<RunRow>,
    pub failures: Vec<(f64, usize, usize, String)>,
}

impl SweepOutcome {
    pub fn point(&self, tau_e: f64, tau_u: usize) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.tau_e == tau_e && p.tau_u == tau_u)
    }
}

#[derive(Debug, Serialize)]
struct SweepLine<'a> {
    tau_e: f64,
    tau_u: usize,
    metric: &'a str,
    mean: f64,
    std: f64,
    n: usize,
}

pub(crate) fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        for m in &p.summary.metrics {
            w.serialize(SweepLine { tau_e: p.tau_e, tau_u: p.tau_u, metric: &m.metric, mean: m.mean, std: m.std, n: p.summary.n })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    atomic_write(path, &bytes)
}
