//! Post-processing and event-level evaluation.
//!
//! Window labels are smoothed with a trailing vote, runs of positive
//! decisions become events, and events are matched against the reference
//! with asymmetric tolerances. Two intervals overlap when they share a span of
//! positive length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{EventInterval, WindowGeometry};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    /// Trailing vote length in windows.
    pub smooth_len: usize,
    /// Minimum vote fraction for a positive decision.
    pub decision_threshold: f64,
    pub pre_tolerance_s: f64,
    pub post_tolerance_s: f64,
    /// Events closer than this are merged.
    pub merge_gap_s: f64,
    /// Events shorter than this are dropped.
    pub min_event_s: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { smooth_len: 10, decision_threshold: 0.5, pre_tolerance_s: 30.0, post_tolerance_s: 60.0, merge_gap_s: 90.0, min_event_s: 4.0 }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_len == 0 {
            return Err(Error::config("smooth_len must be at least 1"));
        }
        if self.pre_tolerance_s < 0.0 || self.post_tolerance_s < 0.0 || self.merge_gap_s < 0.0 || self.min_event_s < 0.0 {
            return Err(Error::config("tolerances and gaps must be non-negative"));
        }
        Ok(())
    }
}

/// Where scored windows sit in time: decision `k` belongs to stream window `first_index + k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowTiming {
    pub origin_s: f64,
    pub first_index: usize,
    pub geometry: WindowGeometry,
}

impl WindowTiming {
    pub fn span(&self, k: usize) -> EventInterval {
        let start = self.origin_s + (self.first_index + k) as f64 * self.geometry.stride_s;
        EventInterval { start_s: start, end_s: start + self.geometry.duration_s }
    }
}

/// Event-level counts. `fn_` is serialized as `fn`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False alarms per day.
    pub far: f64,
    /// Minutes per day of annotated signal, counting overlapping windows once.
    pub labeling_cost: f64,
    /// Minutes per day counting every labeled window in full.
    pub labeling_cost_naive: f64,
    /// Model updates per day.
    pub update_cost: f64,
    pub stream_days: f64,
}

/// Hard labels from the positive-class probability, matching the argmax rule.
pub fn labels_from_p1(p1: &[f32]) -> Vec<u8> {
    p1.iter().map(|&p| u8::from(p > 0.5)).collect()
}

/// Trailing majority vote over binary labels. Early windows vote over what is available.
pub fn smooth(labels: &[u8], cfg: &ScoringConfig) -> Vec<u8> {
    let n = cfg.smooth_len.max(1);
    let mut out = Vec::with_capacity(labels.len());
    let mut ones = 0usize;
    for k in 0..labels.len() {
        ones += usize::from(labels[k]);
        if k >= n {
            ones -= usize::from(labels[k - n]);
        }
        let count = (k + 1).min(n);
        out.push(u8::from(ones as f64 / count as f64 >= cfg.decision_threshold));
    }
    out
}

/// Runs of positive decisions, merged across short gaps, with short events dropped.
pub fn extract_events(decisions: &[u8], timing: &WindowTiming, cfg: &ScoringConfig) -> Vec<EventInterval> {
    let mut runs: Vec<EventInterval> = Vec::new();
    let mut start: Option<usize> = None;
    for k in 0..=decisions.len() {
        let on = k < decisions.len() && decisions[k] == 1;
        match (on, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                runs.push(EventInterval { start_s: timing.span(s).start_s, end_s: timing.span(k - 1).end_s });
                start = None;
            }
            _ => {}
        }
    }
    let mut merged: Vec<EventInterval> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(last) if r.start_s - last.end_s < cfg.merge_gap_s => last.end_s = last.end_s.max(r.end_s),
            _ => merged.push(r),
        }
    }
    merged.retain(|e| e.end_s - e.start_s >= cfg.min_event_s);
    merged
}

fn overlaps(a: &EventInterval, b: &EventInterval) -> bool {
    a.start_s < b.end_s && b.start_s < a.end_s
}

/// Each reference is a hit if any prediction touches its tolerance-extended
/// span; a prediction is a false alarm only if it touches no extended reference.
pub fn match_events(predicted: &[EventInterval], reference: &[EventInterval], cfg: &ScoringConfig) -> EventCounts {
    let extended: Vec<EventInterval> = reference
        .iter()
        .map(|r| EventInterval { start_s: r.start_s - cfg.pre_tolerance_s, end_s: r.end_s + cfg.post_tolerance_s })
        .collect();
    let mut hit = vec![false; reference.len()];
    let mut fp = 0;
    // both lists are sorted, so a sweep would do; the quadratic scan keeps the rule obvious
    // and event counts are small
    for p in predicted {
        let mut any = false;
        for (j, e) in extended.iter().enumerate() {
            if overlaps(p, e) {
                hit[j] = true;
                any = true;
            }
        }
        if !any {
            fp += 1;
        }
    }
    let tp = hit.iter().filter(|&&h| h).count();
    EventCounts { tp, fp, fn_: reference.len() - tp }
}

/// `(precision, recall, f1, false alarms per day)` with zero-denominator guards.
pub fn f1_far(counts: EventCounts, stream_days: f64) -> (f64, f64, f64, f64) {
    let EventCounts { tp, fp, fn_ } = counts;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let far = if stream_days > 0.0 { fp as f64 / stream_days } else { 0.0 };
    (precision, recall, f1, far)
}

/// Total length of the union of intervals, in seconds.
pub fn union_duration_s(intervals: &[EventInterval]) -> f64 {
    let mut v: Vec<&EventInterval> = intervals.iter().collect();
    v.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for e in v {
        match cur {
            Some((s, end)) if e.start_s <= end => cur = Some((s, end.max(e.end_s))),
            Some((s, end)) => {
                total += end - s;
                cur = Some((e.start_s, e.end_s));
            }
            None => cur = Some((e.start_s, e.end_s)),
        }
    }
    if let Some((s, e)) = cur {
        total += e - s;
    }
    total
}

/// Summed durations, counting overlaps once per interval.
pub fn naive_duration_s(intervals: &[EventInterval]) -> f64 {
    intervals.iter().map(|e| e.end_s - e.start_s).sum()
}

/// `(union minutes/day, naive minutes/day, updates/day)`. `naive_s` is the
/// labeled time with every window counted in full (window count × duration).
pub fn costs(labeled: &[EventInterval], naive_s: f64, n_updates: usize, stream_days: f64) -> (f64, f64, f64) {
    if stream_days <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let union = union_duration_s(labeled) / 60.0 / stream_days;
    let naive = naive_s / 60.0 / stream_days;
    (union, naive, n_updates as f64 / stream_days)
}

/// Everything needed to score one run.
pub struct ScoreInput<'a> {
    /// Window labels from the prediction log, in stream order.
    pub labels: &'a [u8],
    pub timing: WindowTiming,
    pub reference: &'a [EventInterval],
    /// Post-stage-0 labeled time, possibly merged.
    pub labeled: &'a [EventInterval],
    /// Labeled windows × window duration.
    pub labeled_naive_s: f64,
    pub n_updates: usize,
    pub stream_days: f64,
}

pub fn score(input: &ScoreInput<'_>, cfg: &ScoringConfig) -> MetricsReport {
    let decisions = smooth(input.labels, cfg);
    let predicted = extract_events(&decisions, &input.timing, cfg);
    let counts = match_events(&predicted, input.reference, cfg);
    let (precision, recall, f1, far) = f1_far(counts, input.stream_days);
    let (labeling_cost, labeling_cost_naive, update_cost) = costs(input.labeled, input.labeled_naive_s, input.n_updates, input.stream_days);
    MetricsReport {
        tp: counts.tp,
        fp: counts.fp,
        fn_: counts.fn_,
        precision,
        recall,
        f1,
        far,
        labeling_cost,
        labeling_cost_naive,
        update_cost,
        stream_days: input.stream_days,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(a: f64, b: f64) -> EventInterval {
        EventInterval { start_s: a, end_s: b }
    }

    fn cfg() -> ScoringConfig {
        ScoringConfig::default()
    }

    fn timing(duration_s: f64) -> WindowTiming {
        WindowTiming { origin_s: 0.0, first_index: 0, geometry: WindowGeometry { duration_s, stride_s: 1.0 } }
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth(&[0; 30], &cfg()), vec![0; 30]);
        let mut one = vec![0u8; 30];
        one[15] = 1;
        assert_eq!(smooth(&one, &cfg()), vec![0; 30]);
        let mut run = vec![0u8; 20];
        run.extend([1; 10]);
        run.extend([0; 20]);
        let d = smooth(&run, &cfg());
        let first = d.iter().position(|&x| x == 1).unwrap();
        assert_eq!(first, 20 + 4, "5th window of the run");
    }

    #[test]
    fn extraction_examples() {
        let t = timing(1.0);
        assert!(extract_events(&[0; 50], &t, &cfg()).is_empty());
        let mut d = vec![0u8; 200];
        // windows 100..=129 cover [100,130], 160..=169 cover [160,170]
        d[100..130].fill(1);
        d[160..170].fill(1);
        assert_eq!(extract_events(&d, &t, &cfg()), vec![ev(100.0, 170.0)]);
        let mut d = vec![0u8; 20];
        d[5] = 1;
        assert!(extract_events(&d, &t, &cfg()).is_empty());
        // a single 4 s window is long enough
        assert_eq!(extract_events(&d, &timing(4.0), &cfg()), vec![ev(5.0, 9.0)]);
    }

    #[test]
    fn matching_examples() {
        let c = cfg();
        assert_eq!(match_events(&[ev(100.0, 120.0)], &[ev(105.0, 130.0)], &c), EventCounts { tp: 1, fp: 0, fn_: 0 });
        assert_eq!(match_events(&[ev(100.0, 110.0), ev(115.0, 125.0)], &[ev(105.0, 130.0)], &c), EventCounts { tp: 1, fp: 0, fn_: 0 });
        assert_eq!(match_events(&[ev(500.0, 510.0)], &[ev(100.0, 130.0)], &c), EventCounts { tp: 0, fp: 1, fn_: 1 });
        // tolerance edges: 30 s early, 60 s late
        assert_eq!(match_events(&[ev(60.0, 70.5)], &[ev(100.0, 130.0)], &c).tp, 1);
        assert_eq!(match_events(&[ev(60.0, 70.0)], &[ev(100.0, 130.0)], &c), EventCounts { tp: 0, fp: 1, fn_: 1 });
        assert_eq!(match_events(&[ev(189.0, 200.0)], &[ev(100.0, 130.0)], &c).tp, 1);
        assert_eq!(match_events(&[ev(190.0, 200.0)], &[ev(100.0, 130.0)], &c).tp, 0);
    }

    #[test]
    fn f1_far_examples() {
        let (p, r, f, far) = f1_far(EventCounts { tp: 2, fp: 1, fn_: 1 }, 1.0);
        assert!((p - 2.0 / 3.0).abs() < 1e-12 && (r - 2.0 / 3.0).abs() < 1e-12 && (f - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(far, 1.0);
        assert_eq!(f1_far(EventCounts::default(), 1.0), (0.0, 0.0, 0.0, 0.0));
        let (_, _, f, far) = f1_far(EventCounts { tp: 3, fp: 0, fn_: 0 }, 1.5);
        assert_eq!((f, far), (1.0, 0.0));
    }

    #[test]
    fn cost_examples() {
        let windows: Vec<_> = (0..94).map(|i| ev(i as f64 * 10.0, i as f64 * 10.0 + 4.0)).collect();
        let (_, naive, _) = costs(&windows, naive_duration_s(&windows), 0, 1.0);
        assert!((naive - 94.0 * 4.0 / 60.0).abs() < 1e-12);
        assert!((naive - 6.27).abs() < 0.01);
        assert_eq!(union_duration_s(&[ev(0.0, 4.0), ev(1.0, 5.0)]), 5.0);
        let (u, n, _) = costs(&[ev(0.0, 5.0)], 8.0, 0, 1.0);
        assert!((u * 60.0 - 5.0).abs() < 1e-12 && (n * 60.0 - 8.0).abs() < 1e-12);
        assert_eq!(costs(&[], 0.0, 0, 2.0), (0.0, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn unit_smoothing_is_identity(labels in prop::collection::vec(0u8..2, 0..100)) {
            let c = ScoringConfig { smooth_len: 1, ..cfg() };
            prop_assert_eq!(smooth(&labels, &c), labels);
        }

        #[test]
        fn union_never_exceeds_naive(spans in prop::collection::vec((0.0f64..1000.0, 0.1f64..50.0), 0..30)) {
            let iv: Vec<_> = spans.iter().map(|&(s, d)| ev(s, s + d)).collect();
            let (u, n, _) = costs(&iv, naive_duration_s(&iv), 0, 1.0);
            prop_assert!(u <= n + 1e-12);
        }

        #[test]
        fn extracted_events_are_sorted_disjoint_and_long_enough(d in prop::collection::vec(0u8..2, 0..300)) {
            let c = cfg();
            let e = extract_events(&d, &timing(4.0), &c);
            prop_assert!(crate::signal::check_sorted_disjoint(&e).is_ok());
            for w in e.windows(2) {
                prop_assert!(w[1].start_s - w[0].end_s >= c.merge_gap_s);
            }
            prop_assert!(e.iter().all(|x| x.duration_s() >= c.min_event_s));
        }
    }
}
