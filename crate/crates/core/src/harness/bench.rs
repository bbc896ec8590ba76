//! Synthetic subjects for the desk-scale benchmark and the pretraining pool.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{
    io, preprocess, synthesize, ArtifactProcess, ContinuousStream, DriftRegime, EventInterval, EventProcess, PreprocessConfig, StreamSource,
    StreamSpec, WindowGeometry,
};

/// Unannotated bursts a regime may carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactFamily {
    pub mean_gap_s: f64,
    pub duration_range_s: (f64, f64),
    /// Each regime draws its burst band from this range (width `band_width_hz`).
    pub band_range_hz: (f64, f64),
    pub band_width_hz: f64,
    pub amplitude: f64,
    /// Bursts hit between 1 and this many channels.
    pub max_channels: usize,
}

/// Recipe for one synthetic subject. A subject is a stationary first stretch
/// followed by `drift_changes` regime changes, each redrawing per-channel
/// gains, the noise scale, and (optionally) an artifact process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub channels: usize,
    pub rate_hz: f64,
    pub duration_s: f64,
    pub geometry: WindowGeometry,
    pub events: EventProcess,
    /// When set, each subject's events share one band this wide, drawn from
    /// `events.band_hz`; seizures of one person tend to look alike.
    pub subject_event_band_hz: Option<f64>,
    pub drift_changes: usize,
    pub gain_range: (f64, f64),
    pub noise_scale_range: (f64, f64),
    pub artifacts: Option<ArtifactFamily>,
    /// Keep the first regime free of artifacts (the initial-adaptation hour then never sees them).
    pub clean_first_regime: bool,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl BenchmarkSpec {
    /// 4 channels at 64 Hz, 48 h, an event every 4 h on average (30 min
    /// minimum gap plus an exponential 3.5 h), 3 regime changes. The subject's
    /// seizures share a 1 Hz band; after the first regime, unannotated 9-13 Hz
    /// bursts on one or two channels fool a model trained on the pool.
    pub fn desk() -> Self {
        Self {
            channels: 4,
            rate_hz: 64.0,
            duration_s: 48.0 * 3600.0,
            geometry: WindowGeometry::default(),
            events: EventProcess {
                mean_gap_s: Some(3.5 * 3600.0),
                duration_range_s: (10.0, 25.0),
                band_hz: (3.0, 8.0),
                amplitude: 4.0,
                first_within_s: 3000.0,
                min_gap_s: 1800.0,
            },
            subject_event_band_hz: Some(1.0),
            drift_changes: 3,
            gain_range: (0.6, 1.6),
            noise_scale_range: (0.8, 1.25),
            artifacts: Some(ArtifactFamily {
                mean_gap_s: 2.0 * 3600.0,
                duration_range_s: (6.0, 20.0),
                band_range_hz: (9.0, 13.0),
                band_width_hz: 2.0,
                amplitude: 6.0,
                max_channels: 2,
            }),
            clean_first_regime: true,
        }
    }

    /// Pretraining subjects: shorter, event-rich, with out-of-band artifacts from the start.
    pub fn pool() -> Self {
        Self {
            duration_s: 4.0 * 3600.0,
            events: EventProcess { mean_gap_s: Some(900.0), min_gap_s: 300.0, ..Self::desk().events },
            subject_event_band_hz: None,
            drift_changes: 1,
            artifacts: Some(ArtifactFamily {
                mean_gap_s: 900.0,
                duration_range_s: (6.0, 20.0),
                band_range_hz: (12.0, 24.0),
                band_width_hz: 4.0,
                amplitude: 6.0,
                max_channels: 2,
            }),
            clean_first_regime: false,
            ..Self::desk()
        }
    }

    /// The desk benchmark shortened to `hours`, drift changes kept.
    pub fn with_hours(mut self, hours: f64) -> Self {
        self.duration_s = hours * 3600.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain_range.0 > 0.0 && self.gain_range.1 >= self.gain_range.0)
            || !(self.noise_scale_range.0 > 0.0 && self.noise_scale_range.1 >= self.noise_scale_range.0)
        {
            return Err(Error::config("gain and noise-scale ranges must be positive and ordered"));
        }
        if let Some(w) = self.subject_event_band_hz {
            if !(w > 0.0) || self.events.band_hz.0 + w > self.events.band_hz.1 {
                return Err(Error::config("the subject event band must fit inside the event band range"));
            }
        }
        if let Some(a) = &self.artifacts {
            if a.max_channels == 0 || a.max_channels > self.channels {
                return Err(Error::config("artifact max_channels must lie in 1..=channels"));
            }
            if !(a.band_width_hz > 0.0) || a.band_range_hz.0 + a.band_width_hz > a.band_range_hz.1 {
                return Err(Error::config("artifact band range must hold at least one band"));
            }
        }
        if self.duration_s < 3600.0 {
            return Err(Error::config("a subject needs at least one hour of signal"));
        }
        if self.drift_changes > 0 && self.duration_s < 7200.0 {
            return Err(Error::config("regime changes need at least two hours of signal (the first hour stays stationary)"));
        }
        Ok(())
    }

    /// Draws the drift schedule for one subject. Regime changes fall near
    /// evenly spaced points after the first hour, jittered by up to 10%.
    pub fn stream_spec(&self, seed: u64) -> Result<StreamSpec> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(11);
        let n = self.drift_changes;
        let span = self.duration_s - 3600.0;
        let mut starts = vec![0.0];
        for j in 1..=n {
            let centre = 3600.0 + span * j as f64 / (n + 1) as f64;
            let jitter = span / (n + 1) as f64 * 0.1;
            starts.push(centre + rng.gen_range(-jitter..=jitter));
        }
        let drift = starts
            .iter()
            .enumerate()
            .map(|(i, &start_s)| {
                let gains = (0..self.channels).map(|_| rng.gen_range(self.gain_range.0..=self.gain_range.1)).collect();
                let noise_scale = rng.gen_range(self.noise_scale_range.0..=self.noise_scale_range.1);
                let artifacts = match &self.artifacts {
                    Some(a) if i > 0 || !self.clean_first_regime => Some(self.draw_artifacts(a, &mut rng)),
                    _ => None,
                };
                DriftRegime { start_s, gains, noise_scale, artifacts }
            })
            .collect();
        let mut events = self.events.clone();
        if let Some(w) = self.subject_event_band_hz {
            let lo = rng.gen_range(events.band_hz.0..=events.band_hz.1 - w);
            events.band_hz = (lo, lo + w);
        }
        let spec = StreamSpec {
            source: StreamSource::Synthetic,
            channels: self.channels,
            rate_hz: self.rate_hz,
            duration_s: self.duration_s,
            reference_events: Vec::new(),
            drift,
            events,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn draw_artifacts(&self, a: &ArtifactFamily, rng: &mut ChaCha8Rng) -> ArtifactProcess {
        let lo = rng.gen_range(a.band_range_hz.0..=a.band_range_hz.1 - a.band_width_hz);
        let k = rng.gen_range(1..=a.max_channels);
        let mut channels: Vec<usize> = (0..self.channels).collect();
        channels.shuffle(rng);
        channels.truncate(k);
        channels.sort_unstable();
        ArtifactProcess {
            mean_gap_s: a.mean_gap_s,
            duration_range_s: a.duration_range_s,
            band_hz: (lo, lo + a.band_width_hz),
            amplitude: a.amplitude,
            channels,
        }
    }
}

/// A stream ready for the engine: cleaned signal plus its reference annotation.
pub struct PreparedStream {
    pub stream: ContinuousStream,
    pub reference: Vec<EventInterval>,
    /// Unannotated bursts (synthetic streams only).
    pub artifacts: Vec<EventInterval>,
}

/// Synthesizes (or loads) a stream and runs the cleaning chain over it.
pub fn prepare(spec: &StreamSpec, seed: u64, geometry: WindowGeometry) -> Result<PreparedStream> {
    let (block, reference, artifacts) = match &spec.source {
        StreamSource::Synthetic => {
            let s = synthesize(spec, seed)?;
            (s.block, s.reference_events, s.artifacts)
        }
        StreamSource::File { path, annotations } => {
            let block = io::read_stream(path)?;
            let reference = match annotations {
                Some(a) => io::read_annotations(a)?,
                None => spec.reference_events.clone(),
            };
            (block, reference, Vec::new())
        }
    };
    let clean = preprocess(&block, &PreprocessConfig::for_rate(block.rate_hz))?;
    Ok(PreparedStream { stream: ContinuousStream::new(clean, geometry)?, reference, artifacts })
}
