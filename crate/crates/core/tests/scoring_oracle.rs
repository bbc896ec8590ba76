mod common;

use common::oracles::{random_events, scoring_oracle_trials};
use epismart::scoring::{match_events, ScoringConfig};
use epismart::EventInterval;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matcher_agrees_with_brute_force_on_random_instances() {
    let r = scoring_oracle_trials(1000, 11);
    assert_eq!(r.mismatches, 0);
    assert_eq!(r.identity_violations, 0);
}

#[test]
fn adding_a_prediction_never_loses_a_hit() {
    let cfg = ScoringConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let pred = random_events(&mut rng, 8, 2000);
        let reference = random_events(&mut rng, 8, 2000);
        let extra = random_events(&mut rng, 1, 2000);
        let before = match_events(&pred, &reference, &cfg);
        let mut more = pred.clone();
        more.extend(extra.iter().copied());
        more.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        let after = match_events(&more, &reference, &cfg);
        assert!(after.tp >= before.tp);
        let new_fp = after.fp - before.fp;
        if let Some(e) = extra.first() {
            let touches = reference.iter().any(|r| e.start_s < r.end_s + cfg.post_tolerance_s && r.start_s - cfg.pre_tolerance_s < e.end_s);
            assert_eq!(new_fp, usize::from(!touches));
        } else {
            assert_eq!(new_fp, 0);
        }
    }
}

#[test]
fn empty_reference_with_silent_model_scores_zero() {
    let none: Vec<EventInterval> = Vec::new();
    let c = match_events(&none, &none, &ScoringConfig::default());
    assert_eq!((c.tp, c.fp, c.fn_), (0, 0, 0));
}
