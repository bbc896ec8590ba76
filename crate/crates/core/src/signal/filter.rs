//! Butterworth IIR filters as cascaded second-order sections.
//!
//! Coefficients come from the analog Butterworth prototype mapped through the
//! bilinear transform with frequency pre-warping, so the -3 dB point lands
//! exactly on the requested cutoff. Each biquad runs in direct form II
//! transposed with `f64` state. Filtering is causal and single-pass.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::SampleBlock;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Highpass,
    Lowpass,
    /// Band-stop centred on the cutoff, `NOTCH_BANDWIDTH_HZ` wide.
    Notch,
}

/// Total width of the notch stop band.
pub const NOTCH_BANDWIDTH_HZ: f64 = 2.0;

/// One normalized biquad: `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (1.0 + self.a[0] * z_inv + self.a[1] * z2)
    }
}

/// A cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Designs an even-order Butterworth filter.
    pub fn butterworth(kind: FilterKind, cutoff_hz: f64, rate_hz: f64, order: usize) -> Result<Sos> {
        let nyquist = rate_hz / 2.0;
        if order == 0 || order % 2 != 0 {
            return Err(Error::config(format!("filter order must be even and positive, got {order}")));
        }
        let (lo, hi) = match kind {
            FilterKind::Notch => (cutoff_hz - NOTCH_BANDWIDTH_HZ / 2.0, cutoff_hz + NOTCH_BANDWIDTH_HZ / 2.0),
            _ => (cutoff_hz, cutoff_hz),
        };
        if !(lo > 0.0) || !(hi < nyquist) {
            return Err(Error::config(format!(
                "{kind:?} cutoff {cutoff_hz} Hz must lie strictly between 0 and the Nyquist frequency {nyquist} Hz"
            )));
        }

        let fs2 = 2.0 * rate_hz;
        let warp = |f: f64| fs2 * (PI * f / rate_hz).tan();
        let prototype = |n: usize| -> Vec<Complex64> {
            (0..n)
                .map(|k| Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64))
                .collect()
        };

        // analog poles, digital zero pair per section, and the frequency where gain is normalized to 1
        let (analog_poles, zero_pair, reference_hz): (Vec<Complex64>, [f64; 3], f64) = match kind {
            FilterKind::Lowpass => {
                let wc = warp(cutoff_hz);
                (prototype(order).into_iter().map(|p| p * wc).collect(), [1.0, 2.0, 1.0], 0.0)
            }
            FilterKind::Highpass => {
                let wc = warp(cutoff_hz);
                (prototype(order).into_iter().map(|p| wc / p).collect(), [1.0, -2.0, 1.0], nyquist)
            }
            FilterKind::Notch => {
                let (w1, w2) = (warp(lo), warp(hi));
                let bw = w2 - w1;
                let w0 = (w1 * w2).sqrt();
                let mut poles = Vec::with_capacity(order);
                for p in prototype(order / 2) {
                    let ph = (bw / 2.0) / p;
                    let root = (ph * ph - w0 * w0).sqrt();
                    poles.push(ph + root);
                    poles.push(ph - root);
                }
                let zero = (Complex64::new(fs2, w0)) / (Complex64::new(fs2, -w0));
                (poles, [1.0, -2.0 * zero.re, 1.0], 0.0)
            }
        };

        let digital: Vec<Complex64> = analog_poles.iter().map(|&p| (fs2 + p) / (fs2 - p)).collect();
        let upper: Vec<Complex64> = digital.iter().copied().filter(|p| p.im > 1e-12).collect();
        if upper.len() * 2 != order {
            return Err(Error::config("filter design produced real poles; order/cutoff combination unsupported"));
        }

        let z_ref = Complex64::from_polar(1.0, -2.0 * PI * reference_hz / rate_hz);
        let sections = upper
            .into_iter()
            .map(|p| {
                let mut section = Biquad { b: zero_pair, a: [-2.0 * p.re, p.norm_sqr()] };
                let g = section.response(z_ref).norm();
                for b in &mut section.b {
                    *b /= g;
                }
                section
            })
            .collect();
        Ok(Sos { sections })
    }

    /// Magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / rate_hz);
        self.sections.iter().map(|s| s.response(z_inv)).product::<Complex64>().norm()
    }

    pub fn state(&self) -> SosState {
        SosState { sos: self.clone(), z: vec![[0.0; 2]; self.sections.len()] }
    }
}

/// A filter cascade plus its delay line.
#[derive(Debug, Clone)]
pub struct SosState {
    sos: Sos,
    z: Vec<[f64; 2]>,
}

impl SosState {
    /// Pushes one sample through the cascade.
    #[inline]
    pub fn tick(&mut self, mut v: f64) -> f64 {
        for (s, z) in self.sos.sections.iter().zip(self.z.iter_mut()) {
            let y = s.b[0] * v + z[0];
            z[0] = s.b[1] * v - s.a[0] * y + z[1];
            z[1] = s.b[2] * v - s.a[1] * y;
            v = y;
        }
        v
    }

    pub fn process(&mut self, samples: &mut [f32]) {
        for x in samples {
            *x = self.tick(*x as f64) as f32;
        }
    }

    pub fn reset(&mut self) {
        self.z.iter_mut().for_each(|z| *z = [0.0; 2]);
    }
}

/// Filters every channel of `block` from zero state.
pub fn butterworth_filter(block: &SampleBlock, kind: FilterKind, cutoff_hz: f64, order: usize) -> Result<SampleBlock> {
    let sos = Sos::butterworth(kind, cutoff_hz, block.rate_hz, order)?;
    let mut out = block.clone();
    for c in 0..out.channels {
        sos.state().process(out.channel_mut(c));
    }
    Ok(out)
}

/// The cleaning chain: highpass, then lowpass, then notch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub highpass_hz: f64,
    /// `None` disables the lowpass (required below 120 Hz sampling).
    pub lowpass_hz: Option<f64>,
    /// Skipped automatically when the stop band lies above Nyquist.
    pub notch_hz: Option<f64>,
    pub order: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { highpass_hz: 0.5, lowpass_hz: Some(60.0), notch_hz: Some(50.0), order: 4 }
    }
}

impl PreprocessConfig {
    /// The standard chain with the lowpass turned off, for low-rate synthetic streams.
    pub fn without_lowpass() -> Self {
        Self { lowpass_hz: None, ..Self::default() }
    }

    /// Chooses the standard chain when the rate supports it, otherwise drops the lowpass.
    pub fn for_rate(rate_hz: f64) -> Self {
        if rate_hz > 120.0 {
            Self::default()
        } else {
            Self::without_lowpass()
        }
    }

    fn stages(&self, rate_hz: f64) -> Result<Vec<Sos>> {
        if self.lowpass_hz.is_some() && rate_hz <= 120.0 {
            return Err(Error::config(format!(
                "a lowpass stage needs a sample rate above 120 Hz (got {rate_hz}); disable it for low-rate streams"
            )));
        }
        let mut stages = vec![Sos::butterworth(FilterKind::Highpass, self.highpass_hz, rate_hz, self.order)?];
        if let Some(f) = self.lowpass_hz {
            stages.push(Sos::butterworth(FilterKind::Lowpass, f, rate_hz, self.order)?);
        }
        if let Some(f) = self.notch_hz {
            // a component above Nyquist cannot be present in the sampled signal
            if f + NOTCH_BANDWIDTH_HZ / 2.0 < rate_hz / 2.0 {
                stages.push(Sos::butterworth(FilterKind::Notch, f, rate_hz, self.order)?);
            }
        }
        Ok(stages)
    }
}

/// Applies the cleaning chain to one block from zero state.
pub fn preprocess(block: &SampleBlock, cfg: &PreprocessConfig) -> Result<SampleBlock> {
    let mut p = Preprocessor::new(cfg, block.channels, block.rate_hz)?;
    let mut out = block.clone();
    p.process(&mut out)?;
    Ok(out)
}

/// Stateful cleaning chain; carries filter state across consecutive blocks.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    rate_hz: f64,
    per_channel: Vec<Vec<SosState>>,
}

impl Preprocessor {
    pub fn new(cfg: &PreprocessConfig, channels: usize, rate_hz: f64) -> Result<Self> {
        let stages = cfg.stages(rate_hz)?;
        let per_channel = (0..channels).map(|_| stages.iter().map(Sos::state).collect()).collect();
        Ok(Self { rate_hz, per_channel })
    }

    pub fn process(&mut self, block: &mut SampleBlock) -> Result<()> {
        if block.channels != self.per_channel.len() || block.rate_hz != self.rate_hz {
            return Err(Error::input("block does not match the preprocessor's channel count or rate"));
        }
        for (c, stages) in self.per_channel.iter_mut().enumerate() {
            let ch = block.channel_mut(c);
            for s in stages.iter_mut() {
                s.process(ch);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freqs: &[(f64, f64)], seconds: f64, rate: f64) -> SampleBlock {
        let n = (seconds * rate) as usize;
        let data = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                freqs.iter().map(|(f, a)| a * (2.0 * PI * f * t).sin()).sum::<f64>() as f32
            })
            .collect();
        SampleBlock::new(1, rate, 0.0, data).unwrap()
    }

    /// Amplitude of the sinusoidal component at `f` via a single-bin DFT over the tail of `x`.
    fn dft_amplitude(x: &[f32], f: f64, rate: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let ph = 2.0 * PI * f * i as f64 / rate;
            re += v as f64 * ph.cos();
            im -= v as f64 * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / x.len() as f64
    }

    fn peak(x: &[f32]) -> f64 {
        x.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()))
    }

    #[test]
    fn highpass_removes_dc() {
        let block = SampleBlock::new(1, 256.0, 0.0, vec![1.0; 256 * 30]).unwrap();
        let out = butterworth_filter(&block, FilterKind::Highpass, 0.5, 4).unwrap();
        assert!(peak(&out.data[out.len() - 256..]) < 1e-3);
    }

    #[test]
    fn notch_attenuates_mains_by_20_db() {
        let block = tone(&[(50.0, 1.0)], 10.0, 256.0);
        let out = butterworth_filter(&block, FilterKind::Notch, 50.0, 4).unwrap();
        let ratio = peak(&out.data[out.len() - 256..]) / peak(&block.data[block.len() - 256..]);
        assert!(20.0 * ratio.log10() <= -20.0, "attenuation only {} dB", 20.0 * ratio.log10());
    }

    #[test]
    fn lowpass_passes_5hz_within_one_percent() {
        let block = tone(&[(5.0, 1.0)], 10.0, 256.0);
        let out = butterworth_filter(&block, FilterKind::Lowpass, 60.0, 4).unwrap();
        let ratio = peak(&out.data[out.len() - 256..]) / peak(&block.data[block.len() - 256..]);
        assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn cutoff_is_minus_3db() {
        for (kind, fc) in [(FilterKind::Lowpass, 60.0), (FilterKind::Highpass, 0.5), (FilterKind::Highpass, 10.0)] {
            let sos = Sos::butterworth(kind, fc, 256.0, 4).unwrap();
            assert!((sos.magnitude(fc, 256.0) - 0.5f64.sqrt()).abs() < 1e-9, "{kind:?}");
            assert_eq!(sos.sections.len(), 2);
        }
        let notch = Sos::butterworth(FilterKind::Notch, 50.0, 256.0, 4).unwrap();
        // The null sits at the geometric centre of the pre-warped band edges.
        let warp = |f: f64| (std::f64::consts::PI * f / 256.0).tan();
        let null = (warp(49.0) * warp(51.0)).sqrt().atan() * 256.0 / std::f64::consts::PI;
        assert!((null - 50.0).abs() < 0.01);
        assert!(notch.magnitude(null, 256.0) < 1e-9);
        assert!(notch.magnitude(50.0, 256.0) < 0.01);
        assert!((notch.magnitude(49.0, 256.0) - 0.5f64.sqrt()).abs() < 1e-6);
        assert!((notch.magnitude(0.0, 256.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_cutoff_at_or_above_nyquist_and_odd_orders() {
        assert!(Sos::butterworth(FilterKind::Lowpass, 32.0, 64.0, 4).unwrap_err().is_config());
        assert!(Sos::butterworth(FilterKind::Notch, 50.0, 64.0, 4).unwrap_err().is_config());
        assert!(Sos::butterworth(FilterKind::Lowpass, 10.0, 64.0, 3).unwrap_err().is_config());
    }

    #[test]
    fn preprocess_flattens_a_constant_signal() {
        let block = SampleBlock::new(2, 256.0, 0.0, vec![3.0; 2 * 256 * 30]).unwrap();
        let out = preprocess(&block, &PreprocessConfig::default()).unwrap();
        for c in 0..2 {
            assert!(peak(&out.channel(c)[out.len() - 256..]) < 1e-3);
        }
    }

    #[test]
    fn low_rate_stream_without_lowpass_runs_highpass_only() {
        let block = tone(&[(5.0, 1.0), (0.1, 2.0)], 20.0, 64.0);
        assert!(preprocess(&block, &PreprocessConfig::default()).unwrap_err().is_config());
        let out = preprocess(&block, &PreprocessConfig::without_lowpass()).unwrap();
        let hp = butterworth_filter(&block, FilterKind::Highpass, 0.5, 4).unwrap();
        assert_eq!(out, hp);
    }

    #[test]
    fn mixed_tones_keep_5hz_and_lose_50hz() {
        let block = tone(&[(5.0, 1.0), (50.0, 1.0)], 10.0, 256.0);
        let out = preprocess(&block, &PreprocessConfig::default()).unwrap();
        let tail = &out.data[out.len() - 512..];
        let a5 = dft_amplitude(tail, 5.0, 256.0);
        let a50 = dft_amplitude(tail, 50.0, 256.0);
        assert!((a5 - 1.0).abs() < 0.05, "5 Hz amplitude {a5}");
        assert!(20.0 * a50.log10() <= -20.0, "50 Hz amplitude {a50}");
    }

    #[test]
    fn stateful_preprocessor_matches_one_shot() {
        let block = tone(&[(5.0, 1.0), (50.0, 0.5)], 8.0, 256.0);
        let whole = preprocess(&block, &PreprocessConfig::default()).unwrap();
        let (a, b) = block.split_at(777);
        let mut p = Preprocessor::new(&PreprocessConfig::default(), 1, 256.0).unwrap();
        let (mut a, mut b) = (a, b);
        p.process(&mut a).unwrap();
        p.process(&mut b).unwrap();
        assert_eq!(SampleBlock::concat(&[a, b]).unwrap().data, whole.data);
    }

    proptest! {
        #[test]
        fn filtering_is_linear(
            x in proptest::collection::vec(-10.0f64..10.0, 64..256),
            y in proptest::collection::vec(-10.0f64..10.0, 256),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            kind in prop_oneof![Just(FilterKind::Highpass), Just(FilterKind::Lowpass), Just(FilterKind::Notch)],
        ) {
            let y = &y[..x.len()];
            let sos = Sos::butterworth(kind, if kind == FilterKind::Highpass { 0.5 } else { 50.0 }, 256.0, 4).unwrap();
            // f64 ticks so the check isolates the filter from f32 sample storage
            let run = |sig: Vec<f64>| -> Vec<f64> {
                let mut st = sos.state();
                sig.into_iter().map(|v| st.tick(v)).collect()
            };
            let fx = run(x.clone());
            let fy = run(y.to_vec());
            let combo = run(x.iter().zip(y).map(|(p, q)| a * p + b * q).collect());
            for i in 0..x.len() {
                let expect = a * fx[i] + b * fy[i];
                let scale = (a * fx[i]).abs() + (b * fy[i]).abs() + 1e-12;
                prop_assert!((combo[i] - expect).abs() <= 1e-9 * scale.max(1.0));
            }
        }
    }
}
