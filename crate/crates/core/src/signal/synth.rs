//! Synthetic non-stationary streams with injected rare events.
//!
//! Background activity is per-channel AR(1) noise (coefficient 0.95) with unit
//! stationary variance, scaled by the active drift regime's gain and noise
//! scale. Rare events are tapered sinusoidal bursts on every channel; drift
//! regimes may also carry artifact bursts, which look like events to an
//! amplitude detector but are never part of the reference annotation.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_sorted_disjoint, EventInterval, SampleBlock};
use crate::error::{Error, Result};

pub const AR_COEFFICIENT: f64 = 0.95;

/// Where a stream's samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamSource {
    Synthetic,
    File {
        path: PathBuf,
        #[serde(default)]
        annotations: Option<PathBuf>,
    },
}

/// One stationary stretch of a synthetic stream, active from `start_s` until the next regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRegime {
    pub start_s: f64,
    /// Per-channel multiplicative gain.
    pub gains: Vec<f64>,
    /// Background RMS before gain.
    pub noise_scale: f64,
    #[serde(default)]
    pub artifacts: Option<ArtifactProcess>,
}

/// Non-event bursts confined to a channel subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactProcess {
    pub mean_gap_s: f64,
    pub duration_range_s: (f64, f64),
    pub band_hz: (f64, f64),
    /// Peak amplitude as a multiple of the background RMS.
    pub amplitude: f64,
    pub channels: Vec<usize>,
}

/// The rare-event process. Used only when the spec has no explicit schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventProcess {
    /// Mean gap between events; `None` means no generated events.
    pub mean_gap_s: Option<f64>,
    pub duration_range_s: (f64, f64),
    pub band_hz: (f64, f64),
    /// Peak amplitude as a multiple of the background RMS; at least 3.
    pub amplitude: f64,
    /// The first generated event starts before this time.
    pub first_within_s: f64,
    /// Smallest gap between generated events.
    pub min_gap_s: f64,
}

impl Default for EventProcess {
    fn default() -> Self {
        Self {
            mean_gap_s: None,
            duration_range_s: (10.0, 25.0),
            band_hz: (3.0, 8.0),
            amplitude: 4.0,
            first_within_s: 3600.0,
            min_gap_s: 600.0,
        }
    }
}

/// Description of one stream, recorded or synthetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub source: StreamSource,
    pub channels: usize,
    pub rate_hz: f64,
    pub duration_s: f64,
    /// Explicit event schedule; when empty, synthetic events come from `events`.
    #[serde(default)]
    pub reference_events: Vec<EventInterval>,
    #[serde(default)]
    pub drift: Vec<DriftRegime>,
    #[serde(default)]
    pub events: EventProcess,
}

impl StreamSpec {
    /// A stationary synthetic stream with unit gains and no events.
    pub fn synthetic(channels: usize, rate_hz: f64, duration_s: f64) -> Self {
        Self {
            source: StreamSource::Synthetic,
            channels,
            rate_hz,
            duration_s,
            reference_events: Vec::new(),
            drift: Vec::new(),
            events: EventProcess::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !(self.rate_hz > 0.0) || !(self.duration_s > 0.0) {
            return Err(Error::config("stream needs channels, a positive rate, and a positive duration"));
        }
        check_sorted_disjoint(&self.reference_events)?;
        if let Some(last) = self.reference_events.last() {
            if last.end_s > self.duration_s {
                return Err(Error::config("reference event extends past the end of the stream"));
            }
        }
        for pair in self.drift.windows(2) {
            if pair[1].start_s <= pair[0].start_s {
                return Err(Error::config("drift regimes must have increasing start times"));
            }
        }
        for r in &self.drift {
            if r.gains.len() != self.channels {
                return Err(Error::config(format!("drift regime at {} s needs {} gains", r.start_s, self.channels)));
            }
            if !(r.noise_scale > 0.0) || r.gains.iter().any(|g| !(*g > 0.0)) {
                return Err(Error::config("drift gains and noise scales must be positive"));
            }
            if let Some(a) = &r.artifacts {
                if a.channels.iter().any(|&c| c >= self.channels) || !(a.mean_gap_s > 0.0) {
                    return Err(Error::config("artifact process references a missing channel or has no gap"));
                }
                check_range(a.duration_range_s, "artifact duration")?;
                check_band(a.band_hz, self.rate_hz)?;
            }
        }
        let ev = &self.events;
        if ev.amplitude < 3.0 {
            return Err(Error::config(format!("event amplitude must be at least 3x background RMS, got {}", ev.amplitude)));
        }
        check_range(ev.duration_range_s, "event duration")?;
        check_band(ev.band_hz, self.rate_hz)?;
        if let Some(g) = ev.mean_gap_s {
            if !(g > 0.0) {
                return Err(Error::config("mean event gap must be positive"));
            }
        }
        Ok(())
    }

    fn regime_at(&self, t: f64) -> Option<&DriftRegime> {
        let i = self.drift.partition_point(|r| r.start_s <= t);
        if i == 0 {
            self.drift.first()
        } else {
            self.drift.get(i - 1)
        }
    }

    fn background_rms(&self, t: f64, channel: usize) -> f64 {
        self.regime_at(t).map_or(1.0, |r| r.gains[channel] * r.noise_scale)
    }
}

fn check_range(r: (f64, f64), what: &str) -> Result<()> {
    if !(r.0 > 0.0 && r.1 >= r.0) {
        return Err(Error::config(format!("{what} range {r:?} is invalid")));
    }
    Ok(())
}

fn check_band(b: (f64, f64), rate: f64) -> Result<()> {
    if !(b.0 > 0.0 && b.1 >= b.0 && b.1 < rate / 2.0) {
        return Err(Error::config(format!("band {b:?} must lie between 0 and Nyquist ({} Hz)", rate / 2.0)));
    }
    Ok(())
}

/// Output of [`synthesize`]: the raw (unfiltered) signal and its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    pub block: SampleBlock,
    pub reference_events: Vec<EventInterval>,
    /// Injected artifact bursts (diagnostic only; never annotated).
    pub artifacts: Vec<EventInterval>,
}

impl SyntheticStream {
    /// Splits the signal into consecutive blocks of `block_s` seconds (the last may be shorter).
    pub fn blocks(&self, block_s: f64) -> Vec<SampleBlock> {
        let per = ((block_s * self.block.rate_hz).round() as usize).max(1);
        let mut out = Vec::new();
        let mut rest = self.block.clone();
        while rest.len() > per {
            let (l, r) = rest.split_at(per);
            out.push(l);
            rest = r;
        }
        if !rest.is_empty() {
            out.push(rest);
        }
        out
    }
}

// independent substreams so that e.g. the event schedule does not move when artifacts change
const STREAM_BACKGROUND: u64 = 1;
const STREAM_SCHEDULE: u64 = 2;
const STREAM_WAVEFORM: u64 = 3;
const STREAM_ARTIFACT: u64 = 4;

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates a synthetic stream. Deterministic in `(spec, seed)`.
pub fn synthesize(spec: &StreamSpec, seed: u64) -> Result<SyntheticStream> {
    if spec.source != StreamSource::Synthetic {
        return Err(Error::config("synthesize needs a synthetic stream spec"));
    }
    spec.validate()?;
    let rate = spec.rate_hz;
    let n = (spec.duration_s * rate).round() as usize;
    let ch = spec.channels;
    let mut data = vec![0f32; n * ch];

    // background
    let mut rng = substream(seed, STREAM_BACKGROUND);
    let innovation = (1.0 - AR_COEFFICIENT * AR_COEFFICIENT).sqrt();
    for c in 0..ch {
        let mut x: f64 = rng.sample(StandardNormal);
        let mut regime_end = f64::NEG_INFINITY;
        let mut s = 1.0;
        for i in 0..n {
            let t = i as f64 / rate;
            if t >= regime_end {
                s = spec.background_rms(t, c);
                let next = spec.drift.iter().find(|r| r.start_s > t).map_or(f64::INFINITY, |r| r.start_s);
                regime_end = next;
            }
            let e: f64 = rng.sample(StandardNormal);
            x = AR_COEFFICIENT * x + innovation * e;
            data[c * n + i] = (s * x) as f32;
        }
    }

    let reference_events = if !spec.reference_events.is_empty() {
        spec.reference_events.clone()
    } else {
        schedule_events(spec, &mut substream(seed, STREAM_SCHEDULE))?
    };

    let mut wave_rng = substream(seed, STREAM_WAVEFORM);
    let all: Vec<usize> = (0..ch).collect();
    for ev in &reference_events {
        add_burst(spec, &mut data, n, ev, spec.events.band_hz, spec.events.amplitude, &all, &mut wave_rng);
    }

    let mut art_rng = substream(seed, STREAM_ARTIFACT);
    let mut artifacts = Vec::new();
    for (k, regime) in spec.drift.iter().enumerate() {
        let Some(a) = &regime.artifacts else { continue };
        let end = spec.drift.get(k + 1).map_or(spec.duration_s, |r| r.start_s).min(spec.duration_s);
        let exp = Exp::new(1.0 / a.mean_gap_s).map_err(|e| Error::config(e.to_string()))?;
        let mut t = regime.start_s.max(0.0) + exp.sample(&mut art_rng);
        loop {
            let d = art_rng.gen_range(a.duration_range_s.0..=a.duration_range_s.1);
            if t + d >= end {
                break;
            }
            let iv = EventInterval { start_s: t, end_s: t + d };
            add_burst(spec, &mut data, n, &iv, a.band_hz, a.amplitude, &a.channels, &mut art_rng);
            artifacts.push(iv);
            t += d + exp.sample(&mut art_rng);
        }
    }

    let block = SampleBlock { channels: ch, rate_hz: rate, start_time_s: 0.0, data };
    Ok(SyntheticStream { block, reference_events, artifacts })
}

fn schedule_events(spec: &StreamSpec, rng: &mut ChaCha8Rng) -> Result<Vec<EventInterval>> {
    let ev = &spec.events;
    let Some(mean_gap) = ev.mean_gap_s else {
        return Ok(Vec::new());
    };
    let exp = Exp::new(1.0 / mean_gap).map_err(|e| Error::config(e.to_string()))?;
    let (dmin, dmax) = ev.duration_range_s;
    let mut out = Vec::new();
    let first_hi = (ev.first_within_s / 2.0).max(60.0);
    let mut t = rng.gen_range(60.0f64.min(first_hi * 0.5)..first_hi);
    loop {
        let d = rng.gen_range(dmin..=dmax);
        if t + d > spec.duration_s - 10.0 {
            break;
        }
        out.push(EventInterval { start_s: t, end_s: t + d });
        t += d + ev.min_gap_s + exp.sample(rng);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn add_burst(
    spec: &StreamSpec,
    data: &mut [f32],
    n: usize,
    iv: &EventInterval,
    band: (f64, f64),
    amplitude: f64,
    channels: &[usize],
    rng: &mut ChaCha8Rng,
) {
    let rate = spec.rate_hz;
    let freq = rng.gen_range(band.0..=band.1);
    let ramp = (iv.duration_s() / 4.0).min(1.0);
    let i0 = (iv.start_s * rate).ceil() as usize;
    let i1 = ((iv.end_s * rate).floor() as usize).min(n);
    for &c in channels {
        let amp = amplitude * spec.background_rms(iv.start_s, c) * rng.gen_range(1.0..1.3);
        let phase = rng.gen_range(0.0..2.0 * PI);
        for i in i0..i1 {
            let t = i as f64 / rate;
            let from_edge = (t - iv.start_s).min(iv.end_s - t);
            let env = if from_edge >= ramp { 1.0 } else { 0.5 - 0.5 * (PI * from_edge / ramp).cos() };
            data[c * n + i] += (amp * env * (2.0 * PI * freq * (t - iv.start_s) + phase).sin()) as f32;
        }
    }
}
