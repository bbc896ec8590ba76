use epismart::model::{Architecture, Classifier, ConvBlock, Mode};
use epismart::Window;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-3;

/// Small enough for an exhaustive check, big enough to exercise every layer kind.
pub fn grad_check_arch() -> Architecture {
    Architecture {
        in_channels: 2,
        input_len: 24,
        blocks: vec![ConvBlock::new(4, 3, 1, 2), ConvBlock::new(6, 3, 2, 2)],
        head_hidden: 8,
        head_relu: true,
    }
}

/// The same shapes with every kink removed: no ReLU, no pooling.
pub fn smooth_arch() -> Architecture {
    let mut a = grad_check_arch();
    for b in &mut a.blocks {
        b.relu = false;
        b.pool = 1;
    }
    a.head_relu = false;
    a
}

pub fn random_window(channels: usize, len: usize, rng: &mut ChaCha8Rng, index: usize) -> Window {
    Window {
        index,
        start_time_s: index as f64,
        duration_s: 4.0,
        channels,
        data: (0..channels * len).map(|_| rng.gen_range(-1.5f32..1.5)).collect(),
    }
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates whose ±ε stencil crosses a ReLU or max-pool switch.
    pub skipped_kinks: usize,
    pub worst_rel: f64,
    pub failures: usize,
}

/// Relative error, floored so near-zero coordinates are judged on absolute error
/// (central differences carry O(eps^2) truncation error regardless of gradient size).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients with central differences on every coordinate.
pub fn gradient_check(arch: Architecture, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut model = Classifier::<f64>::new(arch.clone(), seed).unwrap();
    // non-trivial batch-norm affine parameters
    for bl in model.layout().blocks.clone() {
        if let (Some(g), Some(b)) = (bl.bn_gamma, bl.bn_beta) {
            for i in g {
                model.params_mut()[i] = rng.gen_range(0.5..1.5);
            }
            for i in b {
                model.params_mut()[i] = rng.gen_range(-0.3..0.3);
            }
        }
    }
    model.set_mode(Mode::Train);
    let windows: Vec<Window> = (0..5).map(|i| random_window(arch.in_channels, arch.input_len, &mut rng, i)).collect();
    let batch: Vec<(&Window, u8)> = windows.iter().enumerate().map(|(i, w)| (w, (i % 2) as u8)).collect();
    let refs: Vec<&Window> = windows.iter().collect();
    let analytic = model.backward(&batch).unwrap().grads;
    let base_pattern = model.activation_pattern(&refs).unwrap();

    let mut out = GradCheck::default();
    for i in 0..model.param_count() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + FD_EPS;
        let up = model.loss(&batch).unwrap();
        let up_pat = model.activation_pattern(&refs).unwrap();
        model.params_mut()[i] = orig - FD_EPS;
        let down = model.loss(&batch).unwrap();
        let down_pat = model.activation_pattern(&refs).unwrap();
        model.params_mut()[i] = orig;
        if up_pat != base_pattern || down_pat != base_pattern {
            out.skipped_kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_EPS);
        let e = rel_err(analytic[i], numeric);
        out.checked += 1;
        out.worst_rel = out.worst_rel.max(e);
        if e > FD_REL_TOL {
            out.failures += 1;
        }
    }
    out
}

/// Fills a buffer with `capacity` non-seizure windows, inserts one more, and
/// records which resident was evicted; repeats `trials` times with fresh seeds.
/// Returns the chi-square p-value against the uniform distribution.
pub fn eviction_uniformity_p(capacity: usize, trials: usize, seed: u64) -> f64 {
    use epismart::ReplayBuffer;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let mut counts = vec![0usize; capacity];
    for t in 0..trials {
        let mut b = ReplayBuffer::new(capacity, seed.wrapping_mul(1_000_003).wrapping_add(t as u64)).unwrap();
        for i in 0..capacity {
            b.insert(tiny_window(i), 0).unwrap();
        }
        let ev = b.insert(tiny_window(capacity), 0).unwrap();
        assert_eq!(ev.len(), 1);
        counts[ev[0].insert_step as usize] += 1;
    }
    let expected = trials as f64 / capacity as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((capacity - 1) as f64).unwrap().cdf(stat)
}

/// Same question for a full buffer under a stream of further inserts: every
/// resident present at a step must be equally likely to go.
pub fn eviction_uniformity_rolling_p(capacity: usize, steps: usize, seed: u64) -> f64 {
    use epismart::ReplayBuffer;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let mut b = ReplayBuffer::new(capacity, seed).unwrap();
    for i in 0..capacity {
        b.insert(tiny_window(i), 0).unwrap();
    }
    // rank of the victim among residents ordered by insert step
    let mut counts = vec![0usize; capacity];
    for s in 0..steps {
        let mut residents: Vec<u64> = b.iter().map(|e| e.insert_step).collect();
        residents.sort_unstable();
        let ev = b.insert(tiny_window(capacity + s), 0).unwrap();
        let rank = residents.binary_search(&ev[0].insert_step).unwrap();
        counts[rank] += 1;
    }
    let expected = steps as f64 / capacity as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((capacity - 1) as f64).unwrap().cdf(stat)
}

pub fn tiny_window(i: usize) -> Window {
    Window { index: i, start_time_s: i as f64, duration_s: 4.0, channels: 1, data: vec![0.0; 4] }
}

/// Sorted, disjoint events with integer endpoints in `[0, horizon)`.
pub fn random_events(rng: &mut ChaCha8Rng, max_n: usize, horizon: i64) -> Vec<epismart::EventInterval> {
    let n = rng.gen_range(0..=max_n);
    let mut cuts: Vec<i64> = (0..2 * n).map(|_| rng.gen_range(0..horizon)).collect();
    cuts.sort_unstable();
    cuts.dedup();
    cuts.chunks_exact(2).map(|c| epismart::EventInterval { start_s: c[0] as f64, end_s: c[1] as f64 }).collect()
}

/// Brute-force matcher on a unit grid: two integer-endpoint intervals overlap
/// iff they share a unit cell. Returns `(tp, fp, fn)`.
pub fn brute_force_match(pred: &[epismart::EventInterval], reference: &[epismart::EventInterval], pre: i64, post: i64) -> (usize, usize, usize) {
    let cells = |a: f64, b: f64| -> std::collections::BTreeSet<i64> { (a as i64..b as i64).collect() };
    let ext: Vec<_> = reference.iter().map(|r| cells(r.start_s - pre as f64, r.end_s + post as f64)).collect();
    let pc: Vec<_> = pred.iter().map(|p| cells(p.start_s, p.end_s)).collect();
    let mut matrix = vec![vec![false; reference.len()]; pred.len()];
    for (i, p) in pc.iter().enumerate() {
        for (j, r) in ext.iter().enumerate() {
            matrix[i][j] = !p.is_disjoint(r);
        }
    }
    let tp = (0..reference.len()).filter(|&j| (0..pred.len()).any(|i| matrix[i][j])).count();
    let fp = (0..pred.len()).filter(|&i| !matrix[i].iter().any(|&m| m)).count();
    (tp, fp, reference.len() - tp)
}

pub struct ScoringOracleOutcome {
    pub trials: usize,
    pub mismatches: usize,
    pub identity_violations: usize,
}

pub fn scoring_oracle_trials(trials: usize, seed: u64) -> ScoringOracleOutcome {
    use epismart::scoring::{f1_far, match_events, ScoringConfig};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ScoringOracleOutcome { trials, mismatches: 0, identity_violations: 0 };
    for _ in 0..trials {
        let pred = random_events(&mut rng, 10, 1500);
        let reference = random_events(&mut rng, 10, 1500);
        let pre = rng.gen_range(0..60);
        let post = rng.gen_range(0..90);
        let cfg = ScoringConfig { pre_tolerance_s: pre as f64, post_tolerance_s: post as f64, ..ScoringConfig::default() };
        let got = match_events(&pred, &reference, &cfg);
        if (got.tp, got.fp, got.fn_) != brute_force_match(&pred, &reference, pre, post) {
            out.mismatches += 1;
        }
        let (p, r, f1, far) = f1_far(got, 1.0 + rng.gen_range(0.0..3.0));
        let f1_identity = if p + r > 0.0 { (f1 - 2.0 * p * r / (p + r)).abs() < 1e-12 } else { f1 == 0.0 };
        if got.tp + got.fn_ != reference.len() || !f1_identity || far < 0.0 || !(0.0..=1.0).contains(&f1) {
            out.identity_violations += 1;
        }
    }
    out
}
