//! Time-ordered multichannel signal streams.
//!
//! Raw samples arrive as [`SampleBlock`]s, are cleaned by the Butterworth
//! filter chain in [`filter`], and are cut into overlapping fixed-length
//! [`Window`]s, the unit of inference, selection, and labeling.

pub mod filter;
pub mod io;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{butterworth_filter, preprocess, FilterKind, PreprocessConfig, Preprocessor, Sos};
pub use synth::{synthesize, ArtifactProcess, DriftRegime, EventProcess, StreamSource, StreamSpec, SyntheticStream};

/// A contiguous run of samples for all channels.
///
/// `data` is channel-major: all samples of channel 0, then channel 1, ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBlock {
    pub channels: usize,
    pub rate_hz: f64,
    pub start_time_s: f64,
    pub data: Vec<f32>,
}

impl SampleBlock {
    pub fn new(channels: usize, rate_hz: f64, start_time_s: f64, data: Vec<f32>) -> Result<Self> {
        let block = Self { channels, rate_hz, start_time_s, data };
        block.validate()?;
        Ok(block)
    }

    /// Builds a block from one vector per channel.
    pub fn from_channels(rate_hz: f64, start_time_s: f64, channels: &[Vec<f32>]) -> Result<Self> {
        let n = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::input("channels have different lengths"));
        }
        let data = channels.iter().flat_map(|c| c.iter().copied()).collect();
        Self::new(channels.len(), rate_hz, start_time_s, data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::input("sample block has zero channels"));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::input(format!("sample rate must be positive, got {}", self.rate_hz)));
        }
        if self.data.len() % self.channels != 0 {
            return Err(Error::input(format!(
                "data length {} is not divisible by {} channels",
                self.data.len(),
                self.channels
            )));
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("sample block contains non-finite amplitudes"));
        }
        Ok(())
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.data.len() / self.channels.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Concatenates contiguous blocks into one.
    pub fn concat(blocks: &[SampleBlock]) -> Result<SampleBlock> {
        let first = blocks.first().ok_or_else(|| Error::input("no blocks to concatenate"))?;
        let mut per_channel: Vec<Vec<f32>> = vec![Vec::new(); first.channels];
        for b in blocks {
            if b.channels != first.channels || b.rate_hz != first.rate_hz {
                return Err(Error::input("blocks disagree on channel count or rate"));
            }
            for (c, out) in per_channel.iter_mut().enumerate() {
                out.extend_from_slice(b.channel(c));
            }
        }
        SampleBlock::from_channels(first.rate_hz, first.start_time_s, &per_channel)
    }

    /// Splits the block at a sample offset (per channel).
    pub fn split_at(&self, at: usize) -> (SampleBlock, SampleBlock) {
        let n = self.len();
        let at = at.min(n);
        let mut left = Vec::with_capacity(at * self.channels);
        let mut right = Vec::with_capacity((n - at) * self.channels);
        for c in 0..self.channels {
            let ch = self.channel(c);
            left.extend_from_slice(&ch[..at]);
            right.extend_from_slice(&ch[at..]);
        }
        (
            SampleBlock { channels: self.channels, rate_hz: self.rate_hz, start_time_s: self.start_time_s, data: left },
            SampleBlock {
                channels: self.channels,
                rate_hz: self.rate_hz,
                start_time_s: self.start_time_s + at as f64 / self.rate_hz,
                data: right,
            },
        )
    }
}

/// A closed-open time span `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventInterval {
    pub start_s: f64,
    pub end_s: f64,
}

impl EventInterval {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        if !(end_s > start_s) || !start_s.is_finite() || !end_s.is_finite() {
            return Err(Error::input(format!("event interval [{start_s}, {end_s}] is empty or non-finite")));
        }
        Ok(Self { start_s, end_s })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Length of the intersection with `other` (zero when disjoint).
    pub fn overlap_s(&self, other: &EventInterval) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }

    pub fn overlaps(&self, other: &EventInterval) -> bool {
        self.overlap_s(other) > 0.0
    }
}

/// Checks that intervals are sorted by start and pairwise non-overlapping.
pub fn check_sorted_disjoint(events: &[EventInterval]) -> Result<()> {
    for pair in events.windows(2) {
        if pair[1].start_s < pair[0].end_s {
            return Err(Error::config(format!(
                "events [{}, {}] and [{}, {}] overlap or are out of order",
                pair[0].start_s, pair[0].end_s, pair[1].start_s, pair[1].end_s
            )));
        }
    }
    Ok(())
}

/// Window length and hop, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowGeometry {
    pub duration_s: f64,
    pub stride_s: f64,
}

impl Default for WindowGeometry {
    fn default() -> Self {
        Self { duration_s: 4.0, stride_s: 1.0 }
    }
}

fn whole_samples(seconds: f64, rate_hz: f64, what: &str) -> Result<usize> {
    let n = seconds * rate_hz;
    let r = n.round();
    if (n - r).abs() > 1e-6 || r < 1.0 {
        return Err(Error::config(format!("{what} of {seconds} s is not a whole number of samples at {rate_hz} Hz")));
    }
    Ok(r as usize)
}

impl WindowGeometry {
    pub fn window_samples(&self, rate_hz: f64) -> Result<usize> {
        whole_samples(self.duration_s, rate_hz, "window duration")
    }

    pub fn stride_samples(&self, rate_hz: f64) -> Result<usize> {
        whole_samples(self.stride_s, rate_hz, "window stride")
    }

    /// Number of complete windows in a stream of `samples` samples.
    pub fn count(&self, samples: usize, rate_hz: f64) -> Result<usize> {
        let w = self.window_samples(rate_hz)?;
        let s = self.stride_samples(rate_hz)?;
        Ok(if samples < w { 0 } else { (samples - w) / s + 1 })
    }

    /// Index of the last window that ends at or before `t_s` (relative to the stream origin), plus one.
    pub fn windows_ending_by(&self, t_s: f64) -> usize {
        if t_s < self.duration_s {
            return 0;
        }
        ((t_s - self.duration_s) / self.stride_s + 1e-9).floor() as usize + 1
    }
}

/// One fixed-duration multichannel excerpt; `data` is channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub start_time_s: f64,
    pub duration_s: f64,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Window {
    pub fn samples(&self) -> usize {
        self.data.len() / self.channels.max(1)
    }

    pub fn end_time_s(&self) -> f64 {
        self.start_time_s + self.duration_s
    }

    pub fn span(&self) -> EventInterval {
        EventInterval { start_s: self.start_time_s, end_s: self.end_time_s() }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.samples();
        &self.data[c * n..(c + 1) * n]
    }

    /// Root-mean-square amplitude over all channels.
    pub fn rms(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    /// Copy with every channel rotated left by `shift` samples.
    pub fn circular_shift(&self, shift: usize) -> Window {
        let n = self.samples();
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            let ch = self.channel(c);
            let s = if n == 0 { 0 } else { shift % n };
            data.extend_from_slice(&ch[s..]);
            data.extend_from_slice(&ch[..s]);
        }
        Window { data, ..self.clone() }
    }
}

/// Label rule backing the annotation oracle: 1 iff the window overlaps some
/// reference event by more than `overlap_fraction` of its duration.
pub fn window_label(window: &Window, reference: &[EventInterval], overlap_fraction: f64) -> u8 {
    span_label(&window.span(), reference, overlap_fraction)
}

/// [`window_label`] for a bare time span.
pub fn span_label(span: &EventInterval, reference: &[EventInterval], overlap_fraction: f64) -> u8 {
    let needed = overlap_fraction * span.duration_s();
    // reference is sorted; skip events that end before the span starts
    let first = reference.partition_point(|e| e.end_s <= span.start_s);
    for e in &reference[first..] {
        if e.start_s >= span.end_s {
            break;
        }
        if span.overlap_s(e) > needed {
            return 1;
        }
    }
    0
}

/// Incremental windowing over a stream delivered in contiguous blocks.
#[derive(Debug, Clone)]
pub struct Windower {
    geometry: WindowGeometry,
    channels: usize,
    rate_hz: f64,
    window_n: usize,
    stride_n: usize,
    origin_s: Option<f64>,
    buffered: Vec<Vec<f32>>,
    buffered_from: usize,
    received: usize,
    next_index: usize,
}

impl Windower {
    pub fn new(geometry: WindowGeometry, channels: usize, rate_hz: f64) -> Result<Self> {
        Ok(Self {
            window_n: geometry.window_samples(rate_hz)?,
            stride_n: geometry.stride_samples(rate_hz)?,
            geometry,
            channels,
            rate_hz,
            origin_s: None,
            buffered: vec![Vec::new(); channels],
            buffered_from: 0,
            received: 0,
            next_index: 0,
        })
    }

    /// Feeds one block and returns every window completed by it.
    pub fn push(&mut self, block: &SampleBlock) -> Result<Vec<Window>> {
        if block.channels != self.channels || block.rate_hz != self.rate_hz {
            return Err(Error::input("block channel count or rate differs from the stream"));
        }
        let origin = *self.origin_s.get_or_insert(block.start_time_s);
        let expected = origin + self.received as f64 / self.rate_hz;
        if (block.start_time_s - expected).abs() > 0.5 / self.rate_hz {
            return Err(Error::input(format!(
                "stream is not contiguous: block starts at {} s, expected {} s",
                block.start_time_s, expected
            )));
        }
        for (c, buf) in self.buffered.iter_mut().enumerate() {
            buf.extend_from_slice(block.channel(c));
        }
        self.received += block.len();

        let mut out = Vec::new();
        loop {
            let start = self.next_index * self.stride_n;
            if start + self.window_n > self.received {
                break;
            }
            let lo = start - self.buffered_from;
            let mut data = Vec::with_capacity(self.window_n * self.channels);
            for buf in &self.buffered {
                data.extend_from_slice(&buf[lo..lo + self.window_n]);
            }
            out.push(Window {
                index: self.next_index,
                start_time_s: origin + self.next_index as f64 * self.geometry.stride_s,
                duration_s: self.geometry.duration_s,
                channels: self.channels,
                data,
            });
            self.next_index += 1;
        }
        let keep_from = (self.next_index * self.stride_n).min(self.received);
        let drop = keep_from - self.buffered_from;
        if drop > 0 {
            for buf in &mut self.buffered {
                buf.drain(..drop);
            }
            self.buffered_from = keep_from;
        }
        Ok(out)
    }
}

/// Cuts a contiguous stream into windows; the trailing partial window is dropped.
pub fn windowize(blocks: &[SampleBlock], geometry: WindowGeometry) -> Result<Vec<Window>> {
    let Some(first) = blocks.first() else {
        return Ok(Vec::new());
    };
    let mut windower = Windower::new(geometry, first.channels, first.rate_hz)?;
    let mut out = Vec::new();
    for b in blocks {
        out.extend(windower.push(b)?);
    }
    Ok(out)
}

/// Random access to the windows of a stream.
pub trait WindowSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn window(&self, index: usize) -> Window;

    fn geometry(&self) -> WindowGeometry;

    /// Start time of the stream.
    fn origin_s(&self) -> f64 {
        0.0
    }

    /// Span of window `index` without materializing its samples.
    fn span(&self, index: usize) -> EventInterval {
        let g = self.geometry();
        let start = self.origin_s() + index as f64 * g.stride_s;
        EventInterval { start_s: start, end_s: start + g.duration_s }
    }

    /// Re-cuts window `index` shifted later by `offset_s`, when raw signal is retained.
    fn shifted(&self, _index: usize, _offset_s: f64) -> Option<Window> {
        None
    }
}

/// A fully buffered stream; windows are cut on demand so memory stays at one
/// copy of the signal.
#[derive(Debug, Clone)]
pub struct ContinuousStream {
    pub block: SampleBlock,
    pub geometry: WindowGeometry,
    window_n: usize,
    stride_n: usize,
    count: usize,
}

impl ContinuousStream {
    pub fn new(block: SampleBlock, geometry: WindowGeometry) -> Result<Self> {
        let window_n = geometry.window_samples(block.rate_hz)?;
        let stride_n = geometry.stride_samples(block.rate_hz)?;
        let count = geometry.count(block.len(), block.rate_hz)?;
        Ok(Self { block, geometry, window_n, stride_n, count })
    }

    fn cut(&self, index: usize, sample_start: usize) -> Window {
        let n = self.block.len();
        let mut data = Vec::with_capacity(self.window_n * self.block.channels);
        for c in 0..self.block.channels {
            data.extend_from_slice(&self.block.data[c * n + sample_start..c * n + sample_start + self.window_n]);
        }
        Window {
            index,
            start_time_s: self.block.start_time_s + sample_start as f64 / self.block.rate_hz,
            duration_s: self.geometry.duration_s,
            channels: self.block.channels,
            data,
        }
    }
}

impl WindowSource for ContinuousStream {
    fn len(&self) -> usize {
        self.count
    }

    fn window(&self, index: usize) -> Window {
        assert!(index < self.count, "window {index} out of range ({})", self.count);
        self.cut(index, index * self.stride_n)
    }

    fn geometry(&self) -> WindowGeometry {
        self.geometry
    }

    fn origin_s(&self) -> f64 {
        self.block.start_time_s
    }

    fn shifted(&self, index: usize, offset_s: f64) -> Option<Window> {
        let offset = (offset_s * self.block.rate_hz).round() as usize;
        let start = index * self.stride_n + offset;
        (start + self.window_n <= self.block.len()).then(|| self.cut(index, start))
    }
}

/// An explicit list of windows (micro streams, recorded excerpts).
#[derive(Debug, Clone)]
pub struct WindowList {
    pub windows: Vec<Window>,
    pub geometry: WindowGeometry,
}

impl WindowList {
    pub fn new(windows: Vec<Window>, geometry: WindowGeometry) -> Self {
        Self { windows, geometry }
    }
}

impl WindowSource for WindowList {
    fn len(&self) -> usize {
        self.windows.len()
    }

    fn window(&self, index: usize) -> Window {
        self.windows[index].clone()
    }

    fn geometry(&self) -> WindowGeometry {
        self.geometry
    }

    fn origin_s(&self) -> f64 {
        self.windows.first().map_or(0.0, |w| w.start_time_s - w.index as f64 * self.geometry.stride_s)
    }

    fn span(&self, index: usize) -> EventInterval {
        self.windows[index].span()
    }
}
