use std::path::Path;
use std::process::{Command, Output};

fn epismart(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epismart"))
        .args(args)
        .env("EPISMART_OUT", out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(path: &Path, json: serde_json::Value) {
    std::fs::write(path, serde_json::to_vec_pretty(&json).unwrap()).unwrap();
}

#[test]
fn report_on_an_empty_directory_succeeds_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let o = epismart(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no run rows"));
}

#[test]
fn usage_errors_exit_with_the_config_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(epismart(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(epismart(dir.path(), &["run", "--tau-u", "many"]).status.code(), Some(2));
    assert_eq!(epismart(dir.path(), &["run", "--strategy", "sometimes"]).status.code(), Some(2));
    assert_eq!(epismart(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn bad_configurations_exit_with_the_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(epismart(dir.path(), &["run", missing.to_str().unwrap()]).status.code(), Some(2));

    let garbled = dir.path().join("garbled.json");
    std::fs::write(&garbled, "{ not json").unwrap();
    assert_eq!(epismart(dir.path(), &["sweep", garbled.to_str().unwrap()]).status.code(), Some(2));

    // rejected before any model is loaded or trained
    assert_eq!(epismart(dir.path(), &["run", "--tau-u", "0"]).status.code(), Some(2));
    assert_eq!(epismart(dir.path(), &["pretrain", "--subjects", "1"]).status.code(), Some(2));
    assert_eq!(epismart(dir.path(), &["sweep", "--tau-e", "-1"]).status.code(), Some(2));
    assert!(!dir.path().join("model.ckpt").exists());
}

#[test]
fn an_unreadable_checkpoint_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("broken.ckpt");
    std::fs::write(&ckpt, b"definitely not a model").unwrap();
    let o = epismart(dir.path(), &["run", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_writes_a_stream_that_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = epismart(dir.path(), &["synth", "--hours", "1", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(2), "three regime changes do not fit in an hour");
    let o = epismart(dir.path(), &["synth", "--hours", "2", "--seed", "4", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let block = epismart::signal::io::read_stream(&dir.path().join("stream.csv")).unwrap();
    assert_eq!((block.channels, block.len()), (4, 7200 * 64));
    let events = epismart::signal::io::read_annotations(&dir.path().join("reference.tsv")).unwrap();
    assert!(!events.is_empty());
    assert!(dir.path().join("stream_spec.json").is_file());
}

#[test]
fn pretrain_run_and_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let pool = out.join("pool.json");
    let mut subject = serde_json::to_value(epismart::harness::BenchmarkSpec::pool().with_hours(1.0)).unwrap();
    subject["drift_changes"] = 0.into();
    write(
        &pool,
        serde_json::json!({
            "n_subjects": 2,
            "subject": subject,
            "normal_per_subject": 100,
            "train": { "max_epochs": 2, "early_stop_patience": 2, "lr0": 1e-3, "plateau_patience": 2,
                       "lr_factor": 10.0, "batch_size": 32, "val_fraction": 0.2, "seed": 0 },
            "seed": 3
        }),
    );
    let o = epismart(out, &["pretrain", "--config", pool.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("model.ckpt").is_file() && out.join("pretrain.json").is_file());

    let mut bench = serde_json::to_value(epismart::harness::BenchmarkSpec::desk().with_hours(2.0)).unwrap();
    bench["drift_changes"] = 1.into();
    let cell = |id: &str, strategy: &str| {
        serde_json::json!({
            "id": id,
            "stream": { "benchmark": bench },
            "engine": { "strategy": strategy, "tau_e": 0.6, "buffer_capacity": 64,
                        "train": { "max_epochs": 1, "early_stop_patience": 1, "lr0": 1e-3, "plateau_patience": 1,
                                   "lr_factor": 10.0, "batch_size": 32, "val_fraction": 0.2, "seed": 0 } }
        })
    };
    let exp = out.join("exp.json");
    write(&exp, serde_json::json!({ "cells": [cell("frozen", "no_update"), cell("adaptive", "episMART")], "repeats": 2 }));
    let o = epismart(out, &["run", exp.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for cell in ["frozen", "adaptive"] {
        for r in ["r0", "r1"] {
            let d = out.join("runs").join(cell).join(r);
            for f in ["result.json", "metrics.json", "row.csv", "p1.bin"] {
                assert!(d.join(f).is_file(), "{}/{f}", d.display());
            }
        }
    }
    let rows = epismart::harness::report::read_rows(&out.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.seed == 5 + r.repeat as u64));
    let frozen: Vec<_> = rows.iter().filter(|r| r.cell == "frozen").collect();
    assert!(frozen.iter().all(|r| r.labeling_cost == 0.0 && r.update_cost == 0.0));

    std::fs::remove_file(out.join("results.csv")).unwrap();
    let o = epismart(out, &["report"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(epismart::harness::report::read_rows(&out.join("results.csv")).unwrap(), rows);
    assert!(String::from_utf8_lossy(&o.stdout).contains("adaptive"));
}
