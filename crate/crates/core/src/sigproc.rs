//! EMG front end: causal digital filtering, sliding windows, Hudgins features.
//!
//! Raw 8-channel streams at 1 kHz go through a 2nd-order Butterworth high-pass
//! (20 Hz) followed by a 50 Hz notch, both realized as biquads via the bilinear
//! transform. Filtered samples are cut into 200-sample windows advancing by 50
//! samples (20 Hz feature rate), and each window is reduced to the 32-value
//! channel-major feature vector `[ch1: MAV, TWL, ZC, SLPCH, ch2: ..., ...]`.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};

pub const NUM_CHANNELS: usize = 8;
pub const SAMPLE_RATE_HZ: f64 = 1000.0;
pub const WINDOW_LEN: usize = 200;
pub const WINDOW_STEP: usize = 50;
pub const FEATURES_PER_CHANNEL: usize = 4;
pub const STATE_DIM: usize = NUM_CHANNELS * FEATURES_PER_CHANNEL;

pub const HIGHPASS_CUTOFF_HZ: f64 = 20.0;
pub const NOTCH_HZ: f64 = 50.0;
pub const NOTCH_Q: f64 = 30.0;

/// One millisecond tick of raw EMG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEmgFrame {
    #[serde(rename = "t_ms")]
    pub timestamp_ms: u64,
    #[serde(rename = "ch")]
    pub channels: Vec<f64>,
}

impl RawEmgFrame {
    pub fn new(timestamp_ms: u64, channels: [f64; NUM_CHANNELS]) -> Self {
        Self {
            timestamp_ms,
            channels: channels.to_vec(),
        }
    }
}

/// Normalized biquad coefficients (a0 = 1), transposed direct form II state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
    #[serde(skip)]
    state: [f64; 2],
}

impl Biquad {
    fn from_raw(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Self {
        Self {
            b: [b0 / a0, b1 / a0, b2 / a0],
            a: [a1 / a0, a2 / a0],
            state: [0.0; 2],
        }
    }

    /// 2nd-order Butterworth high-pass (Q = 1/sqrt 2), bilinear transform with prewarping.
    pub fn butterworth_highpass(cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate_hz;
        let alpha = w0.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let c = w0.cos();
        Self::from_raw(
            (1.0 + c) / 2.0,
            -(1.0 + c),
            (1.0 + c) / 2.0,
            1.0 + alpha,
            -2.0 * c,
            1.0 - alpha,
        )
    }

    /// 2nd-order Butterworth low-pass, same design as the high-pass.
    pub fn butterworth_lowpass(cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate_hz;
        let alpha = w0.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let c = w0.cos();
        Self::from_raw(
            (1.0 - c) / 2.0,
            1.0 - c,
            (1.0 - c) / 2.0,
            1.0 + alpha,
            -2.0 * c,
            1.0 - alpha,
        )
    }

    /// 2nd-order notch with a zero pair on the unit circle at `center_hz` and a
    /// -3 dB bandwidth of `center_hz / q`.
    pub fn notch(center_hz: f64, q: f64, sample_rate_hz: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / sample_rate_hz;
        let beta = (w0 / (2.0 * q)).tan();
        let c = w0.cos();
        Self::from_raw(1.0, -2.0 * c, 1.0, 1.0 + beta, -2.0 * c, 1.0 - beta)
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.state[0];
        self.state[0] = self.b[1] * x - self.a[0] * y + self.state[1];
        self.state[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn reset(&mut self) {
        self.state = [0.0; 2];
    }

    /// Magnitude of the transfer function at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        // H(z) evaluated at z = e^{jw}, written out in real arithmetic.
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num_re = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let num_im = self.b[1] * s1 + self.b[2] * s2;
        let den_re = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let den_im = self.a[0] * s1 + self.a[1] * s2;
        (num_re.hypot(num_im)) / (den_re.hypot(den_im))
    }
}

/// High-pass then notch, one pair of biquads per channel.
#[derive(Debug, Clone)]
pub struct FilterChain {
    highpass: Vec<Biquad>,
    notch: Vec<Biquad>,
}

impl Default for FilterChain {
    fn default() -> Self {
        Self::new(SAMPLE_RATE_HZ, NOTCH_Q)
    }
}

impl FilterChain {
    pub fn new(sample_rate_hz: f64, notch_q: f64) -> Self {
        let hp = Biquad::butterworth_highpass(HIGHPASS_CUTOFF_HZ, sample_rate_hz);
        let notch = Biquad::notch(NOTCH_HZ, notch_q, sample_rate_hz);
        Self {
            highpass: vec![hp; NUM_CHANNELS],
            notch: vec![notch; NUM_CHANNELS],
        }
    }

    pub fn reset(&mut self) {
        self.highpass.iter_mut().for_each(Biquad::reset);
        self.notch.iter_mut().for_each(Biquad::reset);
    }

    /// Combined magnitude response of the cascade.
    pub fn gain_at(&self, freq_hz: f64) -> f64 {
        self.highpass[0].gain_at(freq_hz, SAMPLE_RATE_HZ) * self.notch[0].gain_at(freq_hz, SAMPLE_RATE_HZ)
    }

    pub fn apply_frame(&mut self, frame: &RawEmgFrame) -> Result<[f64; NUM_CHANNELS]> {
        if frame.channels.len() != NUM_CHANNELS {
            return Err(Error::ChannelMismatch {
                expected: NUM_CHANNELS,
                found: frame.channels.len(),
            });
        }
        let mut out = [0.0; NUM_CHANNELS];
        for (ch, (&x, y)) in frame.channels.iter().zip(out.iter_mut()).enumerate() {
            let h = self.highpass[ch].process(x);
            *y = self.notch[ch].process(h);
        }
        Ok(out)
    }
}

/// Filters a whole frame sequence causally. Rejects the stream at the first malformed frame.
pub fn apply_filters<'a, I>(frames: I, chain: &mut FilterChain) -> Result<Vec<[f64; NUM_CHANNELS]>>
where
    I: IntoIterator<Item = &'a RawEmgFrame>,
{
    frames.into_iter().map(|f| chain.apply_frame(f)).collect()
}

/// 200 ms of filtered samples, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_ms: u64,
    pub samples: Vec<[f64; WINDOW_LEN]>,
}

/// Sliding windower: emits a window every 50 samples once 200 are buffered.
#[derive(Debug, Clone, Default)]
pub struct Windower {
    buffer: VecDeque<[f64; NUM_CHANNELS]>,
    seen: u64,
}

impl Windower {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sample: [f64; NUM_CHANNELS]) -> Option<Window> {
        self.buffer.push_back(sample);
        if self.buffer.len() > WINDOW_LEN {
            self.buffer.pop_front();
        }
        self.seen += 1;
        let ready = self.seen >= WINDOW_LEN as u64 && (self.seen - WINDOW_LEN as u64).is_multiple_of(WINDOW_STEP as u64);
        if !ready {
            return None;
        }
        let mut samples = vec![[0.0; WINDOW_LEN]; NUM_CHANNELS];
        for (t, s) in self.buffer.iter().enumerate() {
            for ch in 0..NUM_CHANNELS {
                samples[ch][t] = s[ch];
            }
        }
        Some(Window {
            start_ms: self.seen - WINDOW_LEN as u64,
            samples,
        })
    }
}

pub fn slide_windows<I>(filtered: I) -> Vec<Window>
where
    I: IntoIterator<Item = [f64; NUM_CHANNELS]>,
{
    let mut w = Windower::new();
    filtered.into_iter().filter_map(|s| w.push(s)).collect()
}

/// Number of windows produced by `n_ms` milliseconds of samples.
pub fn window_count(n_ms: usize) -> usize {
    if n_ms < WINDOW_LEN {
        0
    } else {
        (n_ms - WINDOW_LEN) / WINDOW_STEP + 1
    }
}

/// Hudgins time-domain features of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelFeatures {
    pub mav: f64,
    pub twl: f64,
    pub zc: u32,
    pub slpch: u32,
}

/// `deadband` is the threshold that differences must exceed for ZC and SLPCH to count.
pub fn channel_features(x: &[f64], deadband: f64) -> Result<ChannelFeatures> {
    if x.len() < 2 {
        return Err(Error::WindowTooShort(x.len()));
    }
    let mav = x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64;
    let mut twl = 0.0;
    let mut zc = 0;
    for pair in x.windows(2) {
        let d = pair[1] - pair[0];
        twl += d.abs();
        if pair[0] * pair[1] < 0.0 && d.abs() > deadband {
            zc += 1;
        }
    }
    let mut slpch = 0;
    for tri in x.windows(3) {
        let left = tri[1] - tri[0];
        let right = tri[1] - tri[2];
        if left * right > 0.0 && left.abs() > deadband && right.abs() > deadband {
            slpch += 1;
        }
    }
    Ok(ChannelFeatures { mav, twl, zc, slpch })
}

/// 32-dimensional stacked feature vector, channel-major `(MAV, TWL, ZC, SLPCH)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureState(#[serde(with = "state_serde")] pub [f64; STATE_DIM]);

mod state_serde {
    use super::STATE_DIM;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; STATE_DIM], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; STATE_DIM], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| D::Error::invalid_length(v.len(), &"32 features"))
    }
}

impl Default for FeatureState {
    fn default() -> Self {
        FeatureState([0.0; STATE_DIM])
    }
}

impl FeatureState {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; STATE_DIM] = v.try_into().map_err(|_| Error::Dimension {
            expected: STATE_DIM,
            found: v.len(),
        })?;
        Ok(FeatureState(arr))
    }

    pub fn from_channels(ch: &[ChannelFeatures; NUM_CHANNELS]) -> Self {
        let mut out = [0.0; STATE_DIM];
        for (i, f) in ch.iter().enumerate() {
            out[i * 4] = f.mav;
            out[i * 4 + 1] = f.twl;
            out[i * 4 + 2] = f.zc as f64;
            out[i * 4 + 3] = f.slpch as f64;
        }
        FeatureState(out)
    }

    pub fn mav(&self, channel: usize) -> f64 {
        self.0[channel * 4]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Features of all eight channels of a window.
pub fn hudgins_features(window: &Window, deadband: f64) -> Result<FeatureState> {
    if window.samples.len() != NUM_CHANNELS {
        return Err(Error::ChannelMismatch {
            expected: NUM_CHANNELS,
            found: window.samples.len(),
        });
    }
    let mut ch = [ChannelFeatures { mav: 0.0, twl: 0.0, zc: 0, slpch: 0 }; NUM_CHANNELS];
    for (out, x) in ch.iter_mut().zip(&window.samples) {
        *out = channel_features(x, deadband)?;
    }
    Ok(FeatureState::from_channels(&ch))
}

/// Stateful raw-to-feature pipeline: filter, window, extract.
#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    pub chain: FilterChain,
    windower: Windower,
    pub deadband: f64,
}

impl FeaturePipeline {
    pub fn new(deadband: f64) -> Self {
        Self {
            chain: FilterChain::default(),
            windower: Windower::new(),
            deadband,
        }
    }

    pub fn push(&mut self, frame: &RawEmgFrame) -> Result<Option<(u64, FeatureState)>> {
        let filtered = self.chain.apply_frame(frame)?;
        match self.windower.push(filtered) {
            Some(w) => Ok(Some((w.start_ms, hudgins_features(&w, self.deadband)?))),
            None => Ok(None),
        }
    }

    pub fn run(&mut self, frames: &[RawEmgFrame]) -> Result<Vec<FeatureState>> {
        let mut out = Vec::new();
        for f in frames {
            if let Some((_, s)) = self.push(f)? {
                out.push(s);
            }
        }
        Ok(out)
    }
}

pub const RAW_SCHEMA: &str = "myoloop.raw-session/1";
pub const FEATURE_SCHEMA: &str = "myoloop.feature-session/1";

/// One line of a feature session file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub t_ms: u64,
    pub features: FeatureState,
}

pub fn write_raw_session<W: Write>(w: W, frames: &[RawEmgFrame]) -> Result<()> {
    write_jsonl(w, RAW_SCHEMA, frames)
}

pub fn read_raw_session<R: BufRead>(r: R) -> Result<Vec<RawEmgFrame>> {
    read_jsonl(r, RAW_SCHEMA)
}

pub fn write_feature_session<W: Write>(w: W, records: &[FeatureRecord]) -> Result<()> {
    write_jsonl(w, FEATURE_SCHEMA, records)
}

pub fn read_feature_session<R: BufRead>(r: R) -> Result<Vec<FeatureRecord>> {
    read_jsonl(r, FEATURE_SCHEMA)
}
