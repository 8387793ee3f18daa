//! Synthetic subject: the human side of the loop.
//!
//! Each movement excites a set of channels through a fixed activation matrix;
//! per-channel activation maps to Hudgins feature means. Emitted states are those
//! means plus Gaussian noise scaled per feature kind. During pretraining the
//! subject contracts at 50-70% effort, which scales channel activation once.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::movements::{Dof, MovementId, MovementVector, NUM_MOVEMENTS};
use crate::sigproc::{Biquad, FeatureState, RawEmgFrame, NUM_CHANNELS, SAMPLE_RATE_HZ, STATE_DIM, WINDOW_LEN};

pub const PROFILE_SCHEMA: &str = "myoloop.subject/1";
/// Activation of every channel at rest.
pub const REST_ACTIVATION: f64 = 0.05;
/// Upper bound of the weak spill-over from a direction into its non-target channels.
pub const CROSSTALK: f64 = 0.15;
/// Pretraining effort range, as a fraction of gameplay effort.
pub const PRETRAIN_EFFORT: (f64, f64) = (0.5, 0.7);
/// Noise unit per feature kind (MAV, TWL, ZC, SLPCH).
pub const NOISE_UNITS: [f64; 4] = [0.25, 15.0, 4.0, 5.0];

/// Mean Hudgins features for one channel at activation `a`.
pub fn channel_means(a: f64) -> [f64; 4] {
    let sat = a / (a + 0.5);
    [a, 60.0 * a, 20.0 + 25.0 * sat, 40.0 + 30.0 * sat]
}

fn prototype_from(act: &[f64; NUM_CHANNELS]) -> FeatureState {
    let mut v = [0.0; STATE_DIM];
    for (ch, &a) in act.iter().enumerate() {
        v[ch * 4..ch * 4 + 4].copy_from_slice(&channel_means(a));
    }
    FeatureState(v)
}

/// Knobs for building a synthetic profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectParams {
    pub seed: u64,
    pub noise_scale: f64,
    pub error_rate: f64,
    pub drift_rate: f64,
    pub adaptation_rate: f64,
}

impl Default for SubjectParams {
    fn default() -> Self {
        Self {
            seed: 0,
            noise_scale: 1.0,
            error_rate: 0.05,
            drift_rate: 0.0,
            adaptation_rate: 0.0,
        }
    }
}

impl SubjectParams {
    /// Consistent subject whose gameplay MI sits near 0.5 nats, with drifting
    /// prototypes and slow adaptation.
    pub fn calibrated(seed: u64) -> Self {
        Self {
            seed,
            noise_scale: 0.55,
            error_rate: 0.05,
            drift_rate: 6.0,
            adaptation_rate: 0.03,
        }
    }

    /// Inconsistent subject: noisier, often executes the wrong movement, and does
    /// not adapt. Gameplay MI sits near 0.11 nats.
    pub fn inconsistent(seed: u64) -> Self {
        Self {
            seed,
            noise_scale: 1.0,
            error_rate: 0.4,
            drift_rate: 6.0,
            adaptation_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub schema: String,
    pub seed: u64,
    /// Per-movement channel activation at gameplay effort.
    pub activations: Vec<[f64; NUM_CHANNELS]>,
    /// Gameplay feature means, one per movement.
    pub prototypes: Vec<FeatureState>,
    /// Feature means during the pretraining recordings.
    pub pretrain_prototypes: Vec<FeatureState>,
    pub noise_scale: f64,
    pub error_rate: f64,
    pub drift_rate: f64,
    pub adaptation_rate: f64,
    /// Number of `evolve` steps applied so far.
    pub repetition: usize,
}

impl SubjectProfile {
    /// Each of the six DOF directions drives two or three channels strongly and
    /// the rest weakly; combined movements add the activations of their directions.
    pub fn synthetic(params: SubjectParams) -> Result<Self> {
        let p = &params;
        if p.noise_scale < 0.0 || p.drift_rate < 0.0 {
            return Err(Error::Config("noise scale and drift rate must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&p.error_rate) || !(0.0..=1.0).contains(&p.adaptation_rate) {
            return Err(Error::Config("error and adaptation rates must lie in [0, 1]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let channels: Vec<usize> = (0..NUM_CHANNELS).collect();
        let mut directions = [[0.0; NUM_CHANNELS]; 6];
        for row in directions.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(0.0..CROSSTALK);
            }
            let k = rng.random_range(2..=3);
            for &ch in channels.choose_multiple(&mut rng, k) {
                row[ch] = rng.random_range(0.6..1.0);
            }
        }
        let activations: Vec<[f64; NUM_CHANNELS]> = MovementId::all()
            .map(|m| {
                let bits = m.encode();
                let mut act = [REST_ACTIVATION; NUM_CHANNELS];
                for dof in Dof::ALL {
                    for (dir, bit) in [(0, dof.ext_bit()), (1, dof.flex_bit())] {
                        if bits.bit(bit) {
                            let row = &directions[dof as usize * 2 + dir];
                            for (a, d) in act.iter_mut().zip(row) {
                                *a += d;
                            }
                        }
                    }
                }
                act
            })
            .collect();
        let pretrain_act: Vec<[f64; NUM_CHANNELS]> = activations
            .iter()
            .map(|act| {
                std::array::from_fn(|ch| {
                    let effort = rng.random_range(PRETRAIN_EFFORT.0..=PRETRAIN_EFFORT.1);
                    REST_ACTIVATION + effort * (act[ch] - REST_ACTIVATION)
                })
            })
            .collect();
        let profile = Self {
            schema: PROFILE_SCHEMA.to_string(),
            seed: p.seed,
            prototypes: activations.iter().map(prototype_from).collect(),
            pretrain_prototypes: pretrain_act.iter().map(prototype_from).collect(),
            activations,
            noise_scale: p.noise_scale,
            error_rate: p.error_rate,
            drift_rate: p.drift_rate,
            adaptation_rate: p.adaptation_rate,
            repetition: 0,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, set) in [("prototypes", &self.prototypes), ("pretrain_prototypes", &self.pretrain_prototypes)] {
            if set.len() != NUM_MOVEMENTS {
                return Err(Error::Config(format!("{name}: expected 13 entries, got {}", set.len())));
            }
            let norm = |s: &FeatureState| s.0.iter().map(|v| v * v).sum::<f64>();
            let rest = norm(&set[0]);
            if set[1..].iter().any(|s| norm(s) <= rest) {
                return Err(Error::Config(format!("{name}: rest must have the smallest norm")));
            }
            for i in 0..set.len() {
                for j in i + 1..set.len() {
                    if set[i] == set[j] {
                        return Err(Error::Config(format!("{name}: movements {i} and {j} coincide")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        crate::io::check_schema(PROFILE_SCHEMA, &p.schema)?;
        p.validate()?;
        Ok(p)
    }

    /// Moves every prototype along a seeded random direction and shrinks the
    /// noise and error rate. The drift magnitude halves with each repetition.
    pub fn evolve(&self, repetition: usize) -> Result<Self> {
        if repetition == 0 {
            return Err(Error::Config("evolve starts at repetition 1".into()));
        }
        let mut next = self.clone();
        next.repetition = repetition;
        next.noise_scale *= 1.0 - self.adaptation_rate;
        next.error_rate *= 1.0 - self.adaptation_rate;
        if self.drift_rate > 0.0 {
            let decay = 0.5f64.powi(repetition as i32 - 1);
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (0xd1f7 + repetition as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            for proto in next.prototypes.iter_mut() {
                let u: [f64; STATE_DIM] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (j, v) in proto.0.iter_mut().enumerate() {
                    *v = (*v + self.drift_rate * decay * NOISE_UNITS[j % 4] * u[j] / norm).max(0.0);
                }
            }
        }
        Ok(next)
    }
}

/// Which set of feature means the subject draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effort {
    Pretraining,
    Gameplay,
}

fn noisy_state<R: Rng + ?Sized>(mean: &FeatureState, sigma: f64, rng: &mut R) -> FeatureState {
    let max_count = (WINDOW_LEN - 1) as f64;
    FeatureState(std::array::from_fn(|j| {
        let z: f64 = StandardNormal.sample(rng);
        let v = mean.0[j] + sigma * NOISE_UNITS[j % 4] * z;
        match j % 4 {
            0 | 1 => v.max(0.0),
            _ => v.round().clamp(0.0, max_count),
        }
    }))
}

/// Features for one window of `executed`, at gameplay effort.
pub fn emit_features<R: Rng + ?Sized>(profile: &SubjectProfile, executed: MovementId, rng: &mut R) -> FeatureState {
    emit_features_at(profile, executed, Effort::Gameplay, rng)
}

pub fn emit_features_at<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    executed: MovementId,
    effort: Effort,
    rng: &mut R,
) -> FeatureState {
    let mean = match effort {
        Effort::Pretraining => &profile.pretrain_prototypes[executed.index()],
        Effort::Gameplay => &profile.prototypes[executed.index()],
    };
    noisy_state(mean, profile.noise_scale, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentionEvent {
    pub intended: MovementId,
    pub executed: MovementId,
    pub tick: usize,
}

/// With probability `error_rate` the subject performs a different movement,
/// drawn uniformly from the other twelve.
pub fn execute_intention<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    intended: MovementId,
    tick: usize,
    rng: &mut R,
) -> IntentionEvent {
    let executed = if rng.random::<f64>() < profile.error_rate {
        let k = rng.random_range(0..NUM_MOVEMENTS - 1);
        MovementId::new(if k >= intended.index() { k + 1 } else { k }).expect("index in range")
    } else {
        intended
    };
    IntentionEvent { intended, executed, tick }
}

/// Synthesizes raw EMG for `executed`: per channel, low-passed Gaussian noise
/// scaled by that channel's activation.
pub fn emit_raw<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    executed: MovementId,
    duration_ms: usize,
    rng: &mut R,
) -> Result<Vec<RawEmgFrame>> {
    emit_raw_with(&profile.activations[executed.index()], duration_ms, rng)
}

/// Raw synthesis from an explicit activation vector.
pub fn emit_raw_with<R: Rng + ?Sized>(
    activation: &[f64; NUM_CHANNELS],
    duration_ms: usize,
    rng: &mut R,
) -> Result<Vec<RawEmgFrame>> {
    if duration_ms < WINDOW_LEN {
        return Err(Error::WindowTooShort(duration_ms));
    }
    let fs = SAMPLE_RATE_HZ;
    let mut shapers: Vec<[Biquad; 2]> = (0..NUM_CHANNELS)
        .map(|_| [Biquad::butterworth_highpass(30.0, fs), Biquad::butterworth_lowpass(250.0, fs)])
        .collect();
    // Band-limited noise has an amplitude below white noise; rescale so MAV tracks activation.
    let gain = (std::f64::consts::PI / 2.0).sqrt() / band_rms(30.0, 250.0, fs);
    Ok((0..duration_ms)
        .map(|t| {
            let ch: [f64; NUM_CHANNELS] = std::array::from_fn(|c| {
                let w: f64 = StandardNormal.sample(rng);
                let [hp, lp] = &mut shapers[c];
                activation[c] * gain * lp.process(hp.process(w))
            });
            RawEmgFrame::new(t as u64, ch)
        })
        .collect())
}

/// RMS of unit white noise after the shaping filters, by numerical integration.
fn band_rms(lo: f64, hi: f64, fs: f64) -> f64 {
    let hp = Biquad::butterworth_highpass(lo, fs);
    let lp = Biquad::butterworth_lowpass(hi, fs);
    let n = 4000;
    let nyq = fs / 2.0;
    let power: f64 = (0..n)
        .map(|i| {
            let f = (i as f64 + 0.5) * nyq / n as f64;
            (hp.gain_at(f, fs) * lp.gain_at(f, fs)).powi(2)
        })
        .sum::<f64>()
        / n as f64;
    power.sqrt()
}

/// Keyboard chord to DOF-direction map used by the live client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordMap {
    /// key -> bit index in the movement vector (0..6).
    pub keys: BTreeMap<String, usize>,
}

impl Default for ChordMap {
    fn default() -> Self {
        let keys = [("q", 0), ("a", 1), ("w", 2), ("s", 3), ("e", 4), ("d", 5)]
            .into_iter()
            .map(|(k, b)| (k.to_string(), b))
            .collect();
        Self { keys }
    }
}

impl ChordMap {
    /// Pressed keys to an intended movement. A DOF with both directions held is
    /// inactive, and any pattern outside the 13 movements falls back to Rest.
    pub fn intention(&self, pressed: &[String]) -> MovementId {
        let mut bits = [0u8; 7];
        for k in pressed {
            if let Some(&b) = self.keys.get(&k.to_lowercase()) {
                bits[b] = 1;
            }
        }
        MovementVector(bits).canonicalize()
    }
}

/// Turns live chords into features through the same emission path as the
/// synthetic subject, so the decoder still faces noise and slips.
#[derive(Debug, Clone)]
pub struct HumanAdapter {
    pub profile: SubjectProfile,
    pub chords: ChordMap,
    rng: ChaCha8Rng,
}

impl HumanAdapter {
    pub fn new(profile: SubjectProfile, chords: ChordMap, seed: u64) -> Self {
        Self {
            profile,
            chords,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn chord(&mut self, pressed: &[String], tick: usize) -> (IntentionEvent, FeatureState) {
        let intended = self.chords.intention(pressed);
        let ev = execute_intention(&self.profile, intended, tick, &mut self.rng);
        let s = emit_features(&self.profile, ev.executed, &mut self.rng);
        (ev, s)
    }
}
