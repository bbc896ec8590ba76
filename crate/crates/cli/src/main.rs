//! `epismart`: pretrain, run strategy comparisons, sweep thresholds, aggregate
//! results, and emit synthetic streams.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use epismart::harness::{
    self, atomic_write, atomic_write_json, load_or_pretrain, pretrain_pool, BenchmarkSpec, Cell, ExperimentSpec, Harness, PoolConfig,
    StreamChoice, SweepSpec, OUTPUT_ENV,
};
use epismart::model::checkpoint;
use epismart::signal::{io, synthesize};
use epismart::{Error, Strategy};
use log::{info, warn};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "epismart", version, about = "Selective on-device adaptation for seizure detection")]
struct Cli {
    /// Output root (defaults to $EPISMART_OUT, then ./epismart-out).
    #[arg(long, global = true, env = OUTPUT_ENV)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the subject-independent starting model on a synthetic pool.
    Pretrain {
        /// Pool configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// Run every cell of an experiment at every repeat.
    Run {
        /// Experiment configuration (JSON). Without one, all strategies run on the desk benchmark.
        config: Option<PathBuf>,
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        repeats: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run a (tau_e, tau_u) grid around a base cell.
    Sweep {
        /// Sweep configuration (JSON). Without one, episMART on the desk benchmark.
        config: Option<PathBuf>,
        /// Entropy thresholds, comma separated (replaces the configured grid axis).
        #[arg(long, value_delimiter = ',')]
        tau_e: Vec<f64>,
        /// Update thresholds, comma separated (replaces the configured grid axis).
        #[arg(long, value_delimiter = ',')]
        tau_u: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repeats: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Aggregate the per-run rows under the output root into summary tables.
    Report,
    /// Write one synthetic subject to files.
    Synth {
        /// Benchmark subject recipe (JSON); the desk benchmark when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        hours: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Bin)]
        format: Format,
    },
}

#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    tau_e: Option<f64>,
    #[arg(long)]
    tau_u: Option<usize>,
    /// Seed base; repeat k runs with seed + k.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Starting model. Defaults to `<out>/model.ckpt`, pretrained there if missing.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let out = cli.out.clone().unwrap_or_else(harness::default_output_root);
    match dispatch(cli.cmd, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn dispatch(cmd: Command, out: &Path) -> Result<(), Failure> {
    match cmd {
        Command::Pretrain { config, seed, subjects } => {
            let mut pool: PoolConfig = config.as_deref().map(read_config).transpose()?.unwrap_or_default();
            if let Some(s) = seed {
                pool.seed = s;
            }
            if let Some(n) = subjects {
                pool.n_subjects = n;
            }
            let (model, report) = pretrain_pool(&pool)?;
            std::fs::create_dir_all(out).map_err(Error::from)?;
            atomic_write(&out.join("model.ckpt"), &checkpoint::encode(&model))?;
            atomic_write_json(&out.join("pretrain.json"), &report)?;
            println!("held-out window F1 {:.3} (precision {:.3}, recall {:.3})", report.heldout_f1, report.heldout_precision, report.heldout_recall);
            println!("checkpoint written to {}", out.join("model.ckpt").display());
        }
        Command::Run { config, over, repeats, model } => {
            let mut spec: ExperimentSpec = match config {
                Some(p) => read_config(&p)?,
                None => default_experiment(),
            };
            for cell in &mut spec.cells {
                if let Some(s) = over.strategy {
                    cell.engine.strategy = s;
                }
                if let Some(t) = over.tau_e {
                    cell.engine.tau_e = t;
                }
                if let Some(t) = over.tau_u {
                    cell.engine.tau_u = t;
                }
            }
            if let Some(s) = over.seed {
                spec.seed_base = s;
            }
            if let Some(r) = repeats {
                spec.repeats = r;
            }
            spec.validate()?;
            let mut h = Harness::new(out, starting_model(out, &model)?);
            let outcome = h.run_experiment(&spec)?;
            for c in &spec.cells {
                let runs = outcome.of(&c.id);
                if runs.is_empty() {
                    continue;
                }
                let rows: Vec<_> = runs.iter().map(|r| r.row.clone()).collect();
                print_aggregate(&harness::aggregate(&c.id, &rows));
            }
            finish_report(out, outcome.failures.len())?;
        }
        Command::Sweep { config, tau_e, tau_u, seed, repeats, model } => {
            let mut spec: SweepSpec = match config {
                Some(p) => read_config(&p)?,
                None => default_sweep(),
            };
            if !tau_e.is_empty() {
                spec.tau_e = tau_e;
            }
            if !tau_u.is_empty() {
                spec.tau_u = tau_u;
            }
            if let Some(s) = seed {
                spec.seed_base = s;
            }
            if let Some(r) = repeats {
                spec.repeats = r;
            }
            spec.validate()?;
            let mut h = Harness::new(out, starting_model(out, &model)?);
            let outcome = h.sweep(&spec)?;
            println!("{:>10} {:>6} {:>8} {:>10} {:>10} {:>8}", "tau_e", "tau_u", "f1", "lab_min/d", "upd/d", "far/d");
            for p in &outcome.points {
                let s = &p.summary;
                println!(
                    "{:>10.1e} {:>6} {:>8.3} {:>10.2} {:>10.2} {:>8.2}",
                    p.tau_e,
                    p.tau_u,
                    s.mean("f1"),
                    s.mean("labeling_cost"),
                    s.mean("update_cost"),
                    s.mean("far")
                );
            }
            finish_report(out, outcome.failures.len())?;
        }
        Command::Report => {
            let r = harness::report(out)?;
            if r.rows.is_empty() {
                warn!("no run rows under {}", out.display());
                return Ok(());
            }
            for a in &r.strategies {
                print_aggregate(a);
            }
            if !r.sweep.is_empty() {
                println!("{} sweep points written to {}", r.sweep.len(), out.join("sweep.csv").display());
            }
            for m in &r.missing {
                warn!("missing run {m}");
            }
        }
        Command::Synth { config, seed, hours, format } => {
            let mut bench: BenchmarkSpec = config.as_deref().map(read_config).transpose()?.unwrap_or_default();
            if let Some(h) = hours {
                bench = bench.with_hours(h);
            }
            let spec = bench.stream_spec(seed)?;
            let s = synthesize(&spec, seed)?;
            std::fs::create_dir_all(out).map_err(Error::from)?;
            let name = match format {
                Format::Csv => "stream.csv",
                Format::Bin => "stream.bin",
            };
            io::write_stream(&out.join(name), &s.block)?;
            io::write_annotations(&out.join("reference.tsv"), &s.reference_events)?;
            io::write_annotations(&out.join("artifacts.tsv"), &s.artifacts)?;
            atomic_write_json(&out.join("stream_spec.json"), &spec)?;
            println!(
                "{} samples x {} channels, {} events, {} artifact bursts written to {}",
                s.block.len(),
                s.block.channels,
                s.reference_events.len(),
                s.artifacts.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn starting_model(out: &Path, args: &ModelArgs) -> Result<epismart::Classifier<f32>, Failure> {
    match &args.checkpoint {
        Some(p) => Ok(checkpoint::load(p)?),
        None => {
            let p = out.join("model.ckpt");
            if !p.is_file() {
                info!("pretraining a starting model into {}", p.display());
            }
            Ok(load_or_pretrain(&p, &PoolConfig::default())?)
        }
    }
}

fn default_experiment() -> ExperimentSpec {
    let stream = StreamChoice::Benchmark(BenchmarkSpec::desk());
    let cells = Strategy::ALL.iter().map(|&s| Cell::new(s.name(), stream.clone(), harness::desk_engine(s))).collect();
    ExperimentSpec { cells, repeats: 3, seed_base: 0 }
}

fn default_sweep() -> SweepSpec {
    let base = Cell::new("episMART", StreamChoice::Benchmark(BenchmarkSpec::desk()), harness::desk_engine(Strategy::EpiSmart));
    let e = harness::DESK_TAU_E;
    SweepSpec { base, tau_e: vec![e / 10.0, e, e * 10.0], tau_u: vec![5, 15, 45], repeats: 3, seed_base: 0 }
}

fn print_aggregate(a: &harness::Aggregate) {
    println!(
        "{:<32} n={} f1 {:.3}±{:.3} far {:.2}±{:.2}/day labeling {:.2} min/day updates {:.2}/day",
        a.cell,
        a.n,
        a.mean("f1"),
        a.std("f1"),
        a.mean("far"),
        a.std("far"),
        a.mean("labeling_cost"),
        a.mean("update_cost")
    );
}

fn finish_report(out: &Path, failures: usize) -> Result<(), Failure> {
    harness::report(out)?;
    if failures > 0 {
        return Err(Failure::Runtime(format!("{failures} run(s) failed; see the log above")));
    }
    Ok(())
}
