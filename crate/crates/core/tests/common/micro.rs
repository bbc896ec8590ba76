//! Scripted micro-streams and the engine contract checks run on them.

use std::collections::BTreeSet;

use epismart::engine::{run, Engine};
use epismart::model::{Architecture, ConvBlock};
use epismart::signal::WindowList;
use epismart::{AnnotationOracle, Classifier, EngineConfig, EventInterval, Reason, RunResult, Strategy, TrainConfig, Window, WindowGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LEN: usize = 32;
/// Short initial adaptation so micro-streams stay under 200 windows.
pub const STAGE0_S: f64 = 20.0;

/// What a scripted window makes the scripted model say.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Confident non-seizure.
    Quiet,
    /// Near the boundary on the non-seizure side: entropy about 0.47 nats, label 0.
    Unsure,
    /// Confident seizure.
    Alarm,
}

impl Kind {
    fn level(self) -> f32 {
        match self {
            Kind::Quiet => -20.0,
            Kind::Unsure => -0.5,
            Kind::Alarm => 20.0,
        }
    }
}

/// Linear chain whose logit difference equals the window mean.
pub fn script_arch() -> Architecture {
    let mut b = ConvBlock::new(1, 1, 1, 1);
    b.batch_norm = false;
    b.relu = false;
    Architecture { in_channels: 1, input_len: LEN, blocks: vec![b], head_hidden: 1, head_relu: false }
}

pub fn script_model() -> Classifier<f32> {
    let mut m = Classifier::zeros(script_arch()).unwrap();
    let l = m.layout().clone();
    let p = m.params_mut();
    p[l.blocks[0].conv_w.start] = 1.0;
    p[l.head_w1.start] = 1.0;
    // second output row reads the hidden unit
    p[l.head_w2.start + 1] = 1.0;
    m
}

pub fn scripted_stream(kinds: &[Kind]) -> WindowList {
    let windows = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| Window { index: i, start_time_s: i as f64, duration_s: 4.0, channels: 1, data: vec![k.level(); LEN] })
        .collect();
    WindowList::new(windows, WindowGeometry::default())
}

/// Stage 0 covers windows 0..17; stage-0 windows 2..=7 overlap the event.
pub fn stage0_reference() -> Vec<EventInterval> {
    vec![EventInterval { start_s: 5.0, end_s: 8.0 }]
}

/// Random kinds after a quiet first stretch, plus a scattering of reference events.
pub fn random_script(n: usize, seed: u64) -> (Vec<Kind>, Vec<EventInterval>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = (0..n)
        .map(|i| {
            if i < 17 {
                Kind::Quiet
            } else {
                match rng.gen_range(0..10) {
                    0..=2 => Kind::Unsure,
                    3 => Kind::Alarm,
                    _ => Kind::Quiet,
                }
            }
        })
        .collect();
    let mut reference = stage0_reference();
    let mut t = 30.0;
    while t < n as f64 {
        reference.push(EventInterval { start_s: t, end_s: t + rng.gen_range(2.0..10.0) });
        t += rng.gen_range(25.0..60.0);
    }
    (kinds, reference)
}

/// Training that leaves the scripted model's decisions where they were.
pub fn frozen_train() -> TrainConfig {
    TrainConfig { max_epochs: 2, lr0: 1e-12, batch_size: 8, ..TrainConfig::default() }
}

pub fn micro_cfg(strategy: Strategy, tau_u: usize, seed: u64) -> EngineConfig {
    EngineConfig {
        strategy,
        tau_u,
        initial_adaptation_s: STAGE0_S,
        update_interval_s: STAGE0_S,
        neighborhood_s: 6.0,
        buffer_capacity: 64,
        train: frozen_train(),
        seed,
        random_rate: strategy.is_random().then_some(0.2),
        ..EngineConfig::default()
    }
}

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Each scored window is predicted with a copy of the model taken before its step.
/// Uses a real learning rate so updates move the model and the check has teeth.
pub fn check_prequential(seed: u64) -> Check {
    let (kinds, reference) = random_script(180, seed);
    let stream = scripted_stream(&kinds);
    let mut cfg = micro_cfg(Strategy::EpiSmart, 5, seed);
    cfg.train = TrainConfig { max_epochs: 3, lr0: 5e-2, batch_size: 8, seed, ..TrainConfig::default() };
    let model = Classifier::new(script_arch(), seed).unwrap();
    let mut engine = Engine::new(cfg, model, &stream, AnnotationOracle::new(reference, 0.0)).map_err(|e| e.to_string())?;
    engine.initial_adaptation().map_err(|e| e.to_string())?;
    let mut expected = Vec::new();
    let mut moved_after = 0;
    loop {
        let k = engine.cursor();
        if k >= stream.windows.len() {
            break;
        }
        let before = engine.model().clone();
        let updates_before = engine.updates().len();
        engine.step().map_err(|e| e.to_string())?;
        expected.push(before.predict(&stream.windows[k]).unwrap().probs[1] as f32);
        if engine.updates().len() > updates_before && engine.model().predict(&stream.windows[k]).unwrap().probs[1] as f32 != *expected.last().unwrap() {
            moved_after += 1;
        }
    }
    let r = engine.finish();
    ensure(r.p1.len() == stream.windows.len() - r.stream.first_scored, || "one prediction per consumed window".into())?;
    ensure(r.p1 == expected, || "a recorded prediction differs from the pre-step model's".into())?;
    ensure(!r.updates.is_empty() && moved_after > 0, || format!("updates {} never moved a trigger window's output", r.updates.len()))?;
    for (j, &v) in r.model_version.iter().enumerate() {
        let k = r.stream.first_scored + j;
        let applied = r.updates.iter().filter(|u| u.trigger_index < k).count() as u32;
        ensure(v == applied, || format!("window {k} saw model version {v}, expected {applied}"))?;
    }
    Ok(())
}

/// Counted selections between consecutive updates number exactly tau_u, and the
/// update fires at the window of the tau_u-th one.
pub fn check_tau_u_identity(r: &RunResult) -> Check {
    let tau_u = r.config.tau_u;
    let counted: Vec<usize> = r.selections.iter().filter(|s| s.reason.counts()).map(|s| s.index).collect();
    ensure(counted.len() == r.updates.len() * tau_u + r.pending_at_end.iter().filter(|i| counted.contains(i)).count(), || {
        format!("{} counted selections for {} updates at tau_u {tau_u}", counted.len(), r.updates.len())
    })?;
    for (u, chunk) in r.updates.iter().zip(counted.chunks(tau_u)) {
        ensure(chunk.len() == tau_u && *chunk.last().unwrap() == u.trigger_index, || {
            format!("update at {} does not close a block of {tau_u} selections", u.trigger_index)
        })?;
    }
    ensure(counted.len() - r.updates.len() * tau_u < tau_u, || "a full block of selections never triggered".into())
}

/// The oracle answered exactly the selected-and-flushed windows, plus stage 0.
pub fn check_parsimony(r: &RunResult, oracle_queried: &[usize]) -> Check {
    let queried: BTreeSet<usize> = oracle_queried.iter().copied().collect();
    ensure(queried.len() == oracle_queried.len(), || "a window was queried twice".into())?;
    let pending: BTreeSet<usize> = r.pending_at_end.iter().copied().collect();
    let flushed: BTreeSet<usize> = r.selections.iter().map(|s| s.index).filter(|i| !pending.contains(i)).collect();
    ensure(queried == flushed, || "queried windows differ from flushed selections".into())?;
    ensure(r.labeled_windows == queried.len(), || "labeled window count differs from queries".into())?;
    for &i in &queried {
        let span = (i as f64, i as f64 + 4.0);
        ensure(r.labeled_intervals.iter().any(|iv| iv.start_s <= span.0 && span.1 <= iv.end_s), || format!("window {i} outside labeled intervals"))?;
    }
    ensure(r.oracle_queries == queried.len(), || "query counter disagrees".into())?;
    ensure(r.stage0_queries == if r.config.runs_stage0() { r.stream.first_scored } else { 0 }, || "stage-0 queries".into())
}

/// Runs and checks the ledger identity and parsimony on a random script.
pub fn check_ledgers(strategy: Strategy, seed: u64) -> Check {
    let (kinds, reference) = random_script(190, seed);
    let stream = scripted_stream(&kinds);
    let cfg = micro_cfg(strategy, 4, seed);
    let mut engine = Engine::new(cfg, script_model(), &stream, AnnotationOracle::new(reference, 0.0)).map_err(|e| e.to_string())?;
    engine.run_to_end().map_err(|e| e.to_string())?;
    let queried = engine.oracle().queried.clone();
    let r = engine.finish();
    ensure(!r.updates.is_empty(), || "script produced no update".into())?;
    check_tau_u_identity(&r)?;
    check_parsimony(&r, &queried)
}

/// Selection disabled (tau_e above ln 2, no alarms) gives the no_update log.
pub fn check_degenerate(seed: u64) -> Check {
    let (mut kinds, reference) = random_script(150, seed);
    for k in &mut kinds {
        if *k == Kind::Alarm {
            *k = Kind::Quiet;
        }
    }
    let stream = scripted_stream(&kinds);
    let mut cfg = micro_cfg(Strategy::EpiSmart, 3, seed);
    cfg.tau_e = 1.0;
    let a = run(&stream, &reference, &cfg, &script_model()).map_err(|e| e.to_string())?;
    let mut base = micro_cfg(Strategy::NoUpdate, 3, seed);
    base.no_update_with_stage0 = true;
    let b = run(&stream, &reference, &base, &script_model()).map_err(|e| e.to_string())?;
    ensure(a.selections.is_empty() && a.updates.is_empty(), || "selections happened with selection disabled".into())?;
    ensure(a.p1 == b.p1 && a.labels == b.labels, || "prediction logs differ".into())
}

/// Same stream, config and seed give the same result; another seed changes random selection.
pub fn check_determinism(seed: u64) -> Check {
    let (kinds, reference) = random_script(160, seed);
    let stream = scripted_stream(&kinds);
    let mut cfg = micro_cfg(Strategy::RandomUpdatePlusSeizure, 4, seed);
    cfg.train = TrainConfig { max_epochs: 3, lr0: 1e-2, batch_size: 8, ..TrainConfig::default() };
    let model = Classifier::new(script_arch(), 9).unwrap();
    let a = run(&stream, &reference, &cfg, &model).map_err(|e| e.to_string())?;
    let b = run(&stream, &reference, &cfg, &model).map_err(|e| e.to_string())?;
    ensure(a.same_outcome(&b), || "two identical runs differ".into())?;
    cfg.seed += 1;
    let c = run(&stream, &reference, &cfg, &model).map_err(|e| e.to_string())?;
    let picks = |r: &RunResult| r.selections.iter().filter(|s| s.reason == Reason::Random).map(|s| s.index).collect::<Vec<_>>();
    ensure(picks(&a) != picks(&c), || "changing the seed left random selection unchanged".into())
}
