//! Per-run CSV rows and their aggregation. Aggregates are recomputed from the
//! stored rows alone.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::atomic_write;
use super::experiment::{write_sweep_csv, ExperimentSpec, SweepPoint};
use crate::engine::{EngineConfig, RunResult};
use crate::error::{Error, Result};
use crate::scoring::MetricsReport;

/// One run as a flat CSV record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub cell: String,
    /// `sweep` for grid points, empty otherwise.
    pub group: String,
    pub strategy: String,
    pub repeat: usize,
    pub seed: u64,
    pub tau_e: f64,
    pub tau_u: usize,
    pub random_rate: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub far: f64,
    pub labeling_cost: f64,
    pub labeling_cost_naive: f64,
    pub update_cost: f64,
    pub stream_days: f64,
    pub n_updates: usize,
    pub n_selections: usize,
}

impl RunRow {
    pub fn new(cell: &str, group: &str, repeat: usize, cfg: &EngineConfig, r: &RunResult, m: &MetricsReport) -> Self {
        Self {
            cell: cell.into(),
            group: group.into(),
            strategy: cfg.strategy.name().into(),
            repeat,
            seed: cfg.seed,
            tau_e: cfg.tau_e,
            tau_u: cfg.tau_u,
            random_rate: cfg.random_rate,
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            far: m.far,
            labeling_cost: m.labeling_cost,
            labeling_cost_naive: m.labeling_cost_naive,
            update_cost: m.update_cost,
            stream_days: m.stream_days,
            n_updates: r.updates.len(),
            n_selections: r.selections.len(),
        }
    }

    /// The aggregated metrics, in report order.
    pub fn metrics(&self) -> [(&'static str, f64); 8] {
        [
            ("f1", self.f1),
            ("precision", self.precision),
            ("recall", self.recall),
            ("far", self.far),
            ("labeling_cost", self.labeling_cost),
            ("labeling_cost_naive", self.labeling_cost_naive),
            ("update_cost", self.update_cost),
            ("n_selections", self.n_selections as f64),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (zero for a single run).
    pub std: f64,
}

/// Mean and spread of every metric over the runs of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cell: String,
    pub strategy: String,
    pub n: usize,
    pub metrics: Vec<MetricSummary>,
}

impl Aggregate {
    pub fn mean(&self, metric: &str) -> f64 {
        self.metrics.iter().find(|m| m.metric == metric).map_or(f64::NAN, |m| m.mean)
    }

    pub fn std(&self, metric: &str) -> f64 {
        self.metrics.iter().find(|m| m.metric == metric).map_or(f64::NAN, |m| m.std)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    (mean, std)
}

pub fn aggregate(cell: &str, rows: &[RunRow]) -> Aggregate {
    let names = rows.first().map(|r| r.metrics().map(|(n, _)| n)).unwrap_or_default();
    let metrics = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let values: Vec<f64> = rows.iter().map(|r| r.metrics()[i].1).collect();
            let (mean, std) = mean_std(&values);
            MetricSummary { metric: (*name).into(), mean, std }
        })
        .collect();
    Aggregate { cell: cell.into(), strategy: rows.first().map(|r| r.strategy.clone()).unwrap_or_default(), n: rows.len(), metrics }
}

pub fn write_rows(path: &Path, rows: &[RunRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    atomic_write(path, &bytes)
}

pub fn read_rows(path: &Path) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub rows: Vec<RunRow>,
    /// Non-sweep cells, one aggregate each.
    pub strategies: Vec<Aggregate>,
    pub sweep: Vec<SweepPoint>,
    /// Runs an `experiment.json` asked for that have no row, as `cell/r<k>`.
    pub missing: Vec<String>,
}

/// Gathers every `runs/*/r*/row.csv` under `out_dir` and writes
/// `results.csv` (all rows), `summary.csv` (per cell), and `sweep.csv`.
pub fn report(out_dir: &Path) -> Result<Report> {
    let mut rows = Vec::new();
    let runs = out_dir.join("runs");
    if runs.is_dir() {
        let mut cells: Vec<_> = std::fs::read_dir(&runs)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
        cells.sort();
        for cell in cells {
            let mut reps: Vec<_> = std::fs::read_dir(&cell)?.filter_map(|e| e.ok()).map(|e| e.path().join("row.csv")).filter(|p| p.is_file()).collect();
            reps.sort();
            for p in reps {
                match read_rows(&p) {
                    Ok(r) => rows.extend(r),
                    Err(e) => warn!("skipping unreadable {}: {e}", p.display()),
                }
            }
        }
    }
    rows.sort_by(|a, b| (&a.group, &a.cell, a.repeat).cmp(&(&b.group, &b.cell, b.repeat)));

    let mut by_cell: BTreeMap<&str, Vec<RunRow>> = BTreeMap::new();
    for r in &rows {
        by_cell.entry(&r.cell).or_default().push(r.clone());
    }
    let mut strategies = Vec::new();
    let mut sweep = Vec::new();
    for (cell, rs) in &by_cell {
        let agg = aggregate(cell, rs);
        if rs[0].group == "sweep" {
            sweep.push(SweepPoint { tau_e: rs[0].tau_e, tau_u: rs[0].tau_u, summary: agg });
        } else {
            strategies.push(agg);
        }
    }
    sweep.sort_by(|a, b| a.tau_e.total_cmp(&b.tau_e).then(a.tau_u.cmp(&b.tau_u)));

    let mut missing = Vec::new();
    let spec_path = out_dir.join("experiment.json");
    if spec_path.is_file() {
        let spec: ExperimentSpec = serde_json::from_slice(&std::fs::read(&spec_path)?)?;
        for c in &spec.cells {
            for k in 0..spec.repeats {
                if !rows.iter().any(|r| r.cell == c.id && r.repeat == k) {
                    missing.push(format!("{}/r{k}", c.id));
                }
            }
        }
    }

    if !rows.is_empty() {
        write_rows(&out_dir.join("results.csv"), &rows)?;
        write_summary(&out_dir.join("summary.csv"), &strategies)?;
    }
    if !sweep.is_empty() {
        write_sweep_csv(&out_dir.join("sweep.csv"), &sweep)?;
    }
    Ok(Report { rows, strategies, sweep, missing })
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    cell: &'a str,
    strategy: &'a str,
    n: usize,
    metric: &'a str,
    mean: f64,
    std: f64,
}

fn write_summary(path: &Path, aggs: &[Aggregate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for a in aggs {
        for m in &a.metrics {
            w.serialize(SummaryLine { cell: &a.cell, strategy: &a.strategy, n: a.n, metric: &m.metric, mean: m.mean, std: m.std })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    atomic_write(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(cell: &str, repeat: usize, f1: f64) -> RunRow {
        RunRow {
            cell: cell.into(),
            group: String::new(),
            strategy: "episMART".into(),
            repeat,
            seed: repeat as u64,
            tau_e: 1e-5,
            tau_u: 15,
            random_rate: None,
            tp: 1,
            fp: 0,
            fn_: 0,
            precision: 1.0,
            recall: 1.0,
            f1,
            far: 0.0,
            labeling_cost: 0.0,
            labeling_cost_naive: 0.0,
            update_cost: 0.0,
            stream_days: 2.0,
            n_updates: 0,
            n_selections: 0,
        }
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn rows_round_trip_and_reaggregate() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row("a", 0, 0.5), RunRow { random_rate: Some(0.01), ..row("a", 1, 0.7) }];
        let p = dir.path().join("rows.csv");
        write_rows(&p, &rows).unwrap();
        let back = read_rows(&p).unwrap();
        assert_eq!(back, rows);
        let agg = aggregate("a", &back);
        assert_eq!(agg.n, 2);
        assert!((agg.mean("f1") - 0.6).abs() < 1e-12);
    }

    #[test]
    fn empty_directory_gives_an_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(dir.path()).unwrap();
        assert!(r.rows.is_empty() && r.strategies.is_empty() && r.missing.is_empty());
    }

    #[test]
    fn report_groups_by_cell_and_lists_missing_runs() {
        let dir = tempfile::tempdir().unwrap();
        for (cell, reps) in [("s1", 3), ("s2", 3), ("s3", 3), ("s4", 2)] {
            for k in 0..reps {
                let d = dir.path().join("runs").join(cell).join(format!("r{k}"));
                std::fs::create_dir_all(&d).unwrap();
                write_rows(&d.join("row.csv"), &[row(cell, k, 0.1 * k as f64)]).unwrap();
            }
        }
        let cells = ["s1", "s2", "s3", "s4"].map(|id| super::super::experiment::Cell::new(id, Default::default(), Default::default()));
        let spec = ExperimentSpec { cells: cells.to_vec(), repeats: 3, seed_base: 0 };
        std::fs::write(dir.path().join("experiment.json"), serde_json::to_vec(&spec).unwrap()).unwrap();
        let r = report(dir.path()).unwrap();
        assert_eq!(r.strategies.len(), 4);
        assert_eq!(r.rows.len(), 11);
        assert_eq!(r.missing, vec!["s4/r2".to_string()]);
        assert!(dir.path().join("results.csv").is_file() && dir.path().join("summary.csv").is_file());
        assert_eq!(read_rows(&dir.path().join("results.csv")).unwrap(), r.rows);
    }
}
