//! Protocol orchestration: pretraining, repetitions 0..=9, Motion Tests, and
//! the report bundle.
//!
//! Every phase draws from its own rng stream derived from the global seed, so a
//! session resumed from a checkpoint reproduces an uninterrupted run exactly.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::awac::{finetune_repetition, write_train_log, AwacConfig, CriticPair, ReplayBuffer, TrainLogRow};
use crate::error::{Error, Result};
use crate::game::{build_chart, EpisodeLog, GameSession, NoteChart, TICK_HZ};
use crate::metrics::{
    action_changes, emr, f1_macro, mutual_information, psi, snr, wilcoxon_signed_rank, MiConfig, PairedSamples,
    WilcoxonResult,
};
use crate::movements::{MovementId, MovementVector};
use crate::policy::{sl_pretrain, LabeledDataset, LabeledRecord, PolicyCheckpoint, PolicyNet, SlConfig, Split, Standardizer};
use crate::sigproc::FeatureState;
use crate::subject::{emit_features, emit_features_at, execute_intention, Effort, IntentionEvent, SubjectParams, SubjectProfile};

pub const CONFIG_SCHEMA: &str = "myoloop.experiment/1";
pub const REPORT_SCHEMA: &str = "myoloop.report/1";
pub const BATCH_SCHEMA: &str = "myoloop.batch/1";
pub const CHECKPOINT_SCHEMA: &str = "myoloop.session/1";

/// Anything that maps feature states to movement vectors.
pub trait Decoder {
    fn decode(&self, states: &[FeatureState]) -> Vec<MovementVector>;
}

impl<T: crate::nn::Real> Decoder for PolicyNet<T> {
    fn decode(&self, states: &[FeatureState]) -> Vec<MovementVector> {
        self.predict_batch(states)
    }
}

/// Nearest-prototype classifier. On a noiseless, error-free subject it is an
/// oracle, which makes it a reference point for the trivial protocol checks.
#[derive(Debug, Clone)]
pub struct PrototypeDecoder {
    pub prototypes: Vec<FeatureState>,
}

impl Decoder for PrototypeDecoder {
    fn decode(&self, states: &[FeatureState]) -> Vec<MovementVector> {
        states
            .iter()
            .map(|s| {
                let d = |p: &FeatureState| p.0.iter().zip(&s.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let best = (0..self.prototypes.len())
                    .min_by(|&i, &j| d(&self.prototypes[i]).total_cmp(&d(&self.prototypes[j])))
                    .expect("non-empty prototype set");
                MovementId::new(best).expect("13 prototypes").encode()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Pretrain = 1,
    Sl,
    Familiarize,
    Play,
    Augment,
    Critics,
    Finetune,
    MotionOrder,
    MotionTest,
}

fn stream_seed(seed: u64, stream: Stream, k: u64) -> u64 {
    // splitmix64 finalizer over the packed inputs
    let mut z = seed
        .wrapping_add((stream as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(k.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: Stream, k: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSpec {
    pub recordings: usize,
    /// Feature windows per recording (3 s at 20 Hz).
    pub windows_per_recording: usize,
    /// Windows dropped at each end of a recording.
    pub trim_windows: usize,
    /// 1-based recording numbers held out for validation.
    pub val_recordings: Vec<usize>,
}

impl Default for PretrainSpec {
    fn default() -> Self {
        Self {
            recordings: 6,
            windows_per_recording: 3 * TICK_HZ,
            trim_windows: 6,
            val_recordings: vec![2, 5],
        }
    }
}

impl PretrainSpec {
    pub fn kept_windows(&self) -> std::ops::Range<usize> {
        self.trim_windows..self.windows_per_recording - self.trim_windows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTestSpec {
    pub trials_per_movement: usize,
    pub timeout_ticks: usize,
    pub success_hits: usize,
    /// Require the hits to be consecutive instead of cumulative.
    pub consecutive: bool,
}

impl Default for MotionTestSpec {
    fn default() -> Self {
        Self {
            trials_per_movement: 3,
            timeout_ticks: 10 * TICK_HZ,
            success_hits: 40,
            consecutive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectSource {
    Synthetic(SubjectParams),
    /// Path to a profile JSON, relative to the working directory.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema: String,
    /// Root of every rng stream in the session.
    pub seed: u64,
    pub chart_seed: u64,
    pub subject: SubjectSource,
    pub n_repetitions: usize,
    pub familiarization: bool,
    pub pretrain: PretrainSpec,
    /// Its `seed` field is replaced by a stream derived from `seed`.
    pub sl: SlConfig,
    pub awac: AwacConfig,
    pub motion_test: MotionTestSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.to_string(),
            seed: 0,
            chart_seed: 0,
            subject: SubjectSource::Synthetic(SubjectParams::default()),
            n_repetitions: 8,
            familiarization: true,
            pretrain: PretrainSpec::default(),
            sl: SlConfig::default(),
            awac: AwacConfig::default(),
            motion_test: MotionTestSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Full protocol with a training budget sized for a single desktop core:
    /// 100 pretraining epochs and 250 fine-tuning steps of batch 256 per repetition.
    pub fn desk(subject: SubjectParams) -> Self {
        Self {
            seed: subject.seed,
            subject: SubjectSource::Synthetic(subject),
            sl: SlConfig { epochs: 100, ..SlConfig::default() },
            awac: AwacConfig {
                grad_steps: 250,
                batch_size: 256,
                ..AwacConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::io::check_schema(CONFIG_SCHEMA, &self.schema)?;
        self.awac.validate()?;
        if self.n_repetitions == 0 {
            return Err(Error::Config("n_repetitions must be at least 1".into()));
        }
        let p = &self.pretrain;
        if p.recordings == 0 || 2 * p.trim_windows >= p.windows_per_recording {
            return Err(Error::Config("pretraining recordings leave no windows after trimming".into()));
        }
        if p.val_recordings.iter().any(|&r| r == 0 || r > p.recordings) {
            return Err(Error::Config("validation recording out of range".into()));
        }
        if p.val_recordings.len() >= p.recordings || p.val_recordings.is_empty() {
            return Err(Error::Config("need both training and validation recordings".into()));
        }
        let m = &self.motion_test;
        if m.trials_per_movement == 0 || m.success_hits == 0 || m.success_hits > m.timeout_ticks {
            return Err(Error::Config("motion test needs trials and a reachable hit target".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load_profile(&self) -> Result<SubjectProfile> {
        match &self.subject {
            SubjectSource::Synthetic(p) => SubjectProfile::synthetic(*p),
            SubjectSource::File(path) => SubjectProfile::from_json(&fs::read_to_string(path)?),
        }
    }

    /// Copy used for one member of a seed batch: the global seed and, for a
    /// synthetic subject, the subject seed both become `seed`.
    pub fn for_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        if let SubjectSource::Synthetic(p) = &mut cfg.subject {
            p.seed = seed;
        }
        cfg
    }

    /// Index of the closing repetition played with the initial policy.
    pub fn final_repetition(&self) -> usize {
        self.n_repetitions + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Familiarize,
    Play,
    Train,
    MotionTest,
    Done,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Pretrain => "pretrain",
            Phase::Familiarize => "familiarize",
            Phase::Play => "play",
            Phase::Train => "train",
            Phase::MotionTest => "motion_test",
            Phase::Done => "done",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub repetition: Option<usize>,
}

/// Protocol position. Only `advance` changes it, and it rejects anything out of
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    pub repetition: Option<usize>,
    pub motion_tests_done: usize,
    pub n_repetitions: usize,
    pub history: Vec<PhaseRecord>,
}

impl SessionState {
    pub fn new(n_repetitions: usize) -> Self {
        Self {
            phase: Phase::Pretrain,
            repetition: None,
            motion_tests_done: 0,
            n_repetitions,
            history: vec![PhaseRecord {
                phase: Phase::Pretrain,
                repetition: None,
            }],
        }
    }

    /// Policy index used while playing `repetition`: π_k for k ≤ n, π₀ for the closing one.
    pub fn policy_for(&self, repetition: usize) -> usize {
        if repetition > self.n_repetitions {
            0
        } else {
            repetition
        }
    }

    /// Phase and repetition the protocol expects next, or `None` once done.
    pub fn next(&self) -> Option<(Phase, Option<usize>)> {
        let n = self.n_repetitions;
        match (self.phase, self.repetition) {
            (Phase::Pretrain, _) => Some((Phase::Familiarize, None)),
            (Phase::Familiarize, _) => Some((Phase::Play, Some(0))),
            (Phase::Play, Some(k)) if k < n => Some((Phase::Train, Some(k))),
            (Phase::Play, Some(k)) if k == n => Some((Phase::Play, Some(n + 1))),
            (Phase::Play, _) => Some((Phase::MotionTest, None)),
            (Phase::Train, Some(k)) => Some((Phase::Play, Some(k + 1))),
            (Phase::Train, None) => None,
            (Phase::MotionTest, _) if self.motion_tests_done < 2 => Some((Phase::MotionTest, None)),
            (Phase::MotionTest, _) => Some((Phase::Done, None)),
            (Phase::Done, _) => None,
        }
    }

    pub fn advance(&mut self, to: Phase, repetition: Option<usize>) -> Result<()> {
        let allowed = self.next().is_some_and(|(p, r)| p == to && r == repetition)
            || (self.phase == Phase::Pretrain && to == Phase::Play && repetition == Some(0));
        if !allowed {
            return Err(Error::IllegalTransition {
                from: self.label(),
                to: label(to, repetition),
            });
        }
        if to == Phase::MotionTest {
            self.motion_tests_done += 1;
        }
        self.phase = to;
        self.repetition = repetition;
        self.history.push(PhaseRecord { phase: to, repetition });
        Ok(())
    }

    pub fn label(&self) -> String {
        label(self.phase, self.repetition)
    }

    /// Checks that a recorded phase history follows the protocol.
    pub fn replay(n_repetitions: usize, history: &[PhaseRecord]) -> Result<Self> {
        let mut s = Self::new(n_repetitions);
        match history.first() {
            Some(PhaseRecord { phase: Phase::Pretrain, repetition: None }) => {}
            _ => return Err(Error::Config("history must start in pretrain".into())),
        }
        for r in &history[1..] {
            s.advance(r.phase, r.repetition)?;
        }
        Ok(s)
    }
}

fn label(phase: Phase, repetition: Option<usize>) -> String {
    match repetition {
        Some(k) => format!("{phase}[{k}]"),
        None => phase.to_string(),
    }
}

/// Builds D₀: every movement recorded `recordings` times at pretraining effort,
/// trimmed at both ends, with the listed recordings held out.
pub fn pretraining_dataset(profile: &SubjectProfile, spec: &PretrainSpec, seed: u64) -> LabeledDataset {
    let mut rng = stream_rng(seed, Stream::Pretrain, 0);
    let mut records = Vec::new();
    for id in MovementId::all() {
        for rec in 1..=spec.recordings {
            let split = if spec.val_recordings.contains(&rec) { Split::Val } else { Split::Train };
            for w in 0..spec.windows_per_recording {
                let state = emit_features_at(profile, id, Effort::Pretraining, &mut rng);
                if spec.kept_windows().contains(&w) {
                    records.push(LabeledRecord {
                        state,
                        target: id.encode(),
                        split,
                    });
                }
            }
        }
    }
    LabeledDataset { records }
}

/// Subject features for one song: the subject intends the ideal movement on
/// every tick and occasionally executes a wrong one.
pub fn subject_episode(
    profile: &SubjectProfile,
    chart: &NoteChart,
    rng: &mut ChaCha8Rng,
) -> (Vec<FeatureState>, Vec<IntentionEvent>) {
    let ideal = chart.ideal_sequence();
    let mut states = Vec::with_capacity(ideal.len());
    let mut events = Vec::with_capacity(ideal.len());
    for (t, v) in ideal.iter().enumerate() {
        let ev = execute_intention(profile, v.canonicalize(), t, rng);
        states.push(emit_features(profile, ev.executed, rng));
        events.push(ev);
    }
    (states, events)
}

/// Plays the chart with `decoder` on the given states.
pub fn play_states<D: Decoder + ?Sized>(decoder: &D, states: &[FeatureState], chart: &NoteChart) -> Result<EpisodeLog> {
    let actions = decoder.decode(states);
    let mut game = GameSession::new(chart);
    for (s, a) in states.iter().zip(actions) {
        game.step(*s, a)?;
    }
    if !game.is_done() {
        return Err(Error::LengthMismatch(states.len(), chart.episode_ticks()));
    }
    Ok(game.into_log())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub movement: MovementId,
    pub trial: usize,
    pub ticks: usize,
    pub hits: usize,
    pub success: bool,
}

impl TrialOutcome {
    pub fn time_s(&self) -> f64 {
        self.ticks as f64 / TICK_HZ as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTestReport {
    pub policy: String,
    pub policy_hash: Option<String>,
    pub trials: Vec<TrialOutcome>,
    /// Exact match ratio over every tick of every trial.
    pub emr: f64,
    pub success_rate: f64,
}

/// Prompted trials of each non-rest movement in seeded random order. A trial ends
/// at the hit target or after `timeout_ticks`.
pub fn run_motion_test<D: Decoder + ?Sized>(
    decoder: &D,
    profile: &SubjectProfile,
    spec: &MotionTestSpec,
    rng: &mut ChaCha8Rng,
) -> Result<MotionTestReport> {
    let mut order: Vec<(MovementId, usize)> = MovementId::active()
        .flat_map(|m| (0..spec.trials_per_movement).map(move |t| (m, t)))
        .collect();
    order.shuffle(rng);
    let mut trials = Vec::with_capacity(order.len());
    let (mut ticks_total, mut exact_total) = (0usize, 0usize);
    for (movement, trial) in order {
        let target = movement.encode();
        let (mut hits, mut streak, mut ticks) = (0, 0, 0);
        let mut success = false;
        while ticks < spec.timeout_ticks {
            let ev = execute_intention(profile, movement, ticks, rng);
            let s = emit_features(profile, ev.executed, rng);
            let pred = decoder.decode(std::slice::from_ref(&s))[0];
            ticks += 1;
            if pred == target {
                hits += 1;
                streak += 1;
                exact_total += 1;
            } else {
                streak = 0;
            }
            let count = if spec.consecutive { streak } else { hits };
            if count >= spec.success_hits {
                success = true;
                break;
            }
        }
        ticks_total += ticks;
        trials.push(TrialOutcome {
            movement,
            trial,
            ticks,
            hits,
            success,
        });
    }
    let success_rate = trials.iter().filter(|t| t.success).count() as f64 / trials.len() as f64;
    Ok(MotionTestReport {
        policy: String::new(),
        policy_hash: None,
        trials,
        emr: exact_total as f64 / ticks_total as f64,
        success_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub train_size: usize,
    pub val_size: usize,
    pub best_epoch: usize,
    pub val_f1: f64,
    pub snr_db: Option<f64>,
    pub mi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSummary {
    pub start_return: i64,
    pub best_return: i64,
    pub best_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub repetition: usize,
    pub policy: String,
    pub policy_hash: String,
    pub total_return: i64,
    pub normalized_return: f64,
    pub final_score: u32,
    pub emr: f64,
    pub f1_macro: f64,
    pub action_changes: usize,
    pub executed_errors: usize,
    pub mi: Option<f64>,
    pub snr_db: Option<f64>,
    pub psi_vs_previous: Option<f64>,
    pub psi_vs_last_trained: Option<f64>,
    pub noise_scale: f64,
    pub error_rate: f64,
    /// Fine-tuning that followed this repetition, if any.
    pub finetune: Option<FinetuneSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub seed: u64,
    pub chart_seed: u64,
    pub subject_seed: u64,
    pub pretraining: PretrainSummary,
    pub repetitions: Vec<RepetitionReport>,
    /// In the order they were run.
    pub motion_tests: Vec<MotionTestReport>,
    pub p0_hash: String,
    pub final_policy_hash: String,
    /// The closing repetition ran with the same weights as repetition 0.
    pub p0_identity: bool,
    pub phases: Vec<PhaseRecord>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn repetition(&self, k: usize) -> Option<&RepetitionReport> {
        self.repetitions.iter().find(|r| r.repetition == k)
    }

    pub fn motion_test(&self, policy: &str) -> Option<&MotionTestReport> {
        self.motion_tests.iter().find(|m| m.policy == policy)
    }

    pub fn write_repetitions_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "repetition,policy,return,normalized_return,score,emr,f1_macro,action_changes,executed_errors,mi,snr_db,psi_vs_previous,psi_vs_last_trained"
        )?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.repetitions {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.repetition,
                r.policy,
                r.total_return,
                r.normalized_return,
                r.final_score,
                r.emr,
                r.f1_macro,
                r.action_changes,
                r.executed_errors,
                opt(r.mi),
                opt(r.snr_db),
                opt(r.psi_vs_previous),
                opt(r.psi_vs_last_trained)
            )?;
        }
        Ok(())
    }

    pub fn write_motion_tests_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "policy,movement,trial,ticks,hits,success")?;
        for m in &self.motion_tests {
            for t in &m.trials {
                writeln!(w, "{},{},{},{},{},{}", m.policy, t.movement.index(), t.trial, t.ticks, t.hits, t.success)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub repetition: usize,
    pub log: EpisodeLog,
    pub intentions: Vec<IntentionEvent>,
}

fn policy_name(k: usize) -> String {
    format!("p{k}")
}

fn feature_rows(states: &[FeatureState]) -> Vec<Vec<f64>> {
    states.iter().map(|s| s.0.to_vec()).collect()
}

/// Gameplay MI between states and ideal movement labels.
pub fn gameplay_mi(log: &EpisodeLog) -> Option<f64> {
    let labels: Vec<usize> = log.ideals().iter().map(|v| v.canonicalize().index()).collect();
    mutual_information(&feature_rows(&log.states()), &labels, &MiConfig::default()).ok()
}

fn gameplay_snr(log: &EpisodeLog) -> Option<f64> {
    let labels: Vec<MovementId> = log.ideals().iter().map(|v| v.canonicalize()).collect();
    snr(&log.states(), &labels).ok().map(|r| r.subject_db)
}

/// Whole experiment state; serializes as a resumable checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub schema: String,
    pub config: ExperimentConfig,
    pub state: SessionState,
    pub chart: NoteChart,
    pub base_profile: SubjectProfile,
    /// Subject as of the current repetition.
    pub profile: SubjectProfile,
    pub dataset: Option<LabeledDataset>,
    pub pretraining: Option<PretrainSummary>,
    /// `policies[k]` is π_k.
    pub policies: Vec<PolicyNet<f32>>,
    pub buffer: ReplayBuffer,
    critics: Option<CriticPair<f32>>,
    pub episodes: Vec<EpisodeRecord>,
    pub train_logs: Vec<Vec<TrainLogRow>>,
    pub repetitions: Vec<RepetitionReport>,
    pub motion_tests: Vec<MotionTestReport>,
}

impl Session {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let base_profile = config.load_profile()?;
        let chart = build_chart(config.chart_seed)?;
        Ok(Self {
            schema: CHECKPOINT_SCHEMA.to_string(),
            state: SessionState::new(config.n_repetitions),
            chart,
            profile: base_profile.clone(),
            base_profile,
            config,
            dataset: None,
            pretraining: None,
            policies: Vec::new(),
            buffer: ReplayBuffer::new(),
            critics: None,
            episodes: Vec::new(),
            train_logs: Vec::new(),
            repetitions: Vec::new(),
            motion_tests: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        drop(w);
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_reader(std::io::BufReader::new(fs::File::open(path)?))?;
        crate::io::check_schema(CHECKPOINT_SCHEMA, &s.schema)?;
        SessionState::replay(s.config.n_repetitions, &s.state.history)?;
        Ok(s)
    }

    fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn is_done(&self) -> bool {
        self.state.phase == Phase::Done
    }

    /// Runs the next protocol step and returns its label.
    pub fn step(&mut self) -> Result<String> {
        let (phase, rep) = self.state.next().ok_or_else(|| Error::IllegalTransition {
            from: self.state.label(),
            to: "anything".into(),
        })?;
        if self.state.phase == Phase::Pretrain && self.policies.is_empty() {
            self.pretrain()?;
            return Ok(label(Phase::Pretrain, None));
        }
        match phase {
            Phase::Familiarize if !self.config.familiarization => self.play(0)?,
            Phase::Familiarize => self.familiarize()?,
            Phase::Play => self.play(rep.expect("play has a repetition"))?,
            Phase::Train => self.train()?,
            Phase::MotionTest => self.motion_test()?,
            Phase::Done => self.state.advance(Phase::Done, None)?,
            Phase::Pretrain => unreachable!("pretrain is never a successor"),
        }
        Ok(self.state.label())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    /// Records D₀ and trains π₀ with the supervised objective.
    pub fn pretrain(&mut self) -> Result<()> {
        if self.state.phase != Phase::Pretrain || !self.policies.is_empty() {
            return Err(Error::IllegalTransition {
                from: self.state.label(),
                to: "pretrain".into(),
            });
        }
        let data = pretraining_dataset(&self.base_profile, &self.config.pretrain, self.seed());
        let st = Standardizer::fit(&data.states())?;
        let sl = SlConfig {
            seed: stream_seed(self.seed(), Stream::Sl, 0),
            ..self.config.sl
        };
        let out = sl_pretrain::<f32>(&data, st, &sl)?;
        let labels: Vec<MovementId> = data.records.iter().map(|r| r.target.canonicalize()).collect();
        let idx: Vec<usize> = labels.iter().map(|m| m.index()).collect();
        self.pretraining = Some(PretrainSummary {
            train_size: data.records.iter().filter(|r| r.split == Split::Train).count(),
            val_size: data.records.iter().filter(|r| r.split == Split::Val).count(),
            best_epoch: out.best_epoch,
            val_f1: out.best_val_f1,
            snr_db: snr(&data.states(), &labels).ok().map(|r| r.subject_db),
            mi: mutual_information(&feature_rows(&data.states()), &idx, &MiConfig::default()).ok(),
        });
        self.dataset = Some(data);
        self.policies.push(out.policy);
        Ok(())
    }

    /// One unrecorded song with π₀.
    pub fn familiarize(&mut self) -> Result<()> {
        self.state.advance(Phase::Familiarize, None)?;
        let mut rng = stream_rng(self.seed(), Stream::Familiarize, 0);
        let (states, _) = subject_episode(&self.base_profile, &self.chart, &mut rng);
        play_states(&self.policies[0], &states, &self.chart)?;
        Ok(())
    }

    pub fn play(&mut self, repetition: usize) -> Result<()> {
        self.state.advance(Phase::Play, Some(repetition))?;
        if repetition > 0 {
            self.profile = self.profile.evolve(repetition)?;
        }
        let pi = self.state.policy_for(repetition);
        let policy = self.policies.get(pi).ok_or_else(|| Error::Config(format!("policy p{pi} missing")))?;
        let mut rng = stream_rng(self.seed(), Stream::Play, repetition as u64);
        let (states, intentions) = subject_episode(&self.profile, &self.chart, &mut rng);
        let log = play_states(policy, &states, &self.chart)?;

        let preds = log.actions();
        let ideals = log.ideals();
        let previous = self.episodes.last().map(|e| feature_rows(&e.log.states()));
        let rows = feature_rows(&states);
        self.repetitions.push(RepetitionReport {
            repetition,
            policy: policy_name(pi),
            policy_hash: policy.hash(),
            total_return: log.total_return(),
            normalized_return: log.normalized_return()?,
            final_score: log.final_score(),
            emr: emr(&preds, &ideals)?,
            f1_macro: f1_macro(&preds, &ideals)?.macro_f1,
            action_changes: action_changes(&preds),
            executed_errors: intentions.iter().filter(|e| e.executed != e.intended).count(),
            mi: gameplay_mi(&log),
            snr_db: gameplay_snr(&log),
            psi_vs_previous: previous.and_then(|p| psi(&p, &rows).ok()).map(|r| r.mean),
            psi_vs_last_trained: None,
            noise_scale: self.profile.noise_scale,
            error_rate: self.profile.error_rate,
            finetune: None,
        });
        if repetition < self.config.n_repetitions {
            let mut aug = stream_rng(self.seed(), Stream::Augment, repetition as u64);
            self.buffer.append_log(&log, repetition, self.config.awac.epsilon, &mut aug)?;
        }
        self.episodes.push(EpisodeRecord {
            repetition,
            log,
            intentions,
        });
        if repetition == self.config.n_repetitions {
            self.fill_psi_vs_last(&rows);
        }
        Ok(())
    }

    fn fill_psi_vs_last(&mut self, last: &[Vec<f64>]) {
        for (rep, ep) in self.repetitions.iter_mut().zip(&self.episodes) {
            rep.psi_vs_last_trained = psi(&feature_rows(&ep.log.states()), last).ok().map(|r| r.mean);
        }
    }

    /// Fine-tunes π_k on the buffer to obtain π_{k+1}.
    pub fn train(&mut self) -> Result<()> {
        let k = self.state.repetition.ok_or_else(|| Error::Config("no repetition to train after".into()))?;
        self.state.advance(Phase::Train, Some(k))?;
        let cfg = &self.config.awac;
        let critics = self
            .critics
            .get_or_insert_with(|| CriticPair::new(cfg, stream_seed(self.config.seed, Stream::Critics, 0)));
        let mut rng = stream_rng(self.config.seed, Stream::Finetune, k as u64);
        let out = finetune_repetition(&self.buffer, &self.policies[k], critics, cfg, &mut rng)?;
        if let Some(rep) = self.repetitions.iter_mut().rev().find(|r| r.repetition == k) {
            rep.finetune = Some(FinetuneSummary {
                start_return: out.start_return,
                best_return: out.best_return,
                best_step: out.best_step,
            });
        }
        self.train_logs.push(out.log);
        self.policies.push(out.policy);
        Ok(())
    }

    /// Motion Test of π₀ or π_n, whichever the seeded coin left for this slot.
    pub fn motion_test(&mut self) -> Result<()> {
        self.state.advance(Phase::MotionTest, None)?;
        let slot = self.state.motion_tests_done - 1;
        let order = self.motion_order();
        let pi = order[slot];
        let policy = &self.policies[pi];
        let mut rng = stream_rng(self.seed(), Stream::MotionTest, pi as u64);
        let mut report = run_motion_test(policy, &self.profile, &self.config.motion_test, &mut rng)?;
        report.policy = policy_name(pi);
        report.policy_hash = Some(policy.hash());
        self.motion_tests.push(report);
        Ok(())
    }

    /// Policy indices in Motion Test order.
    pub fn motion_order(&self) -> [usize; 2] {
        let mut order = [0, self.config.n_repetitions];
        order.shuffle(&mut stream_rng(self.seed(), Stream::MotionOrder, 0));
        order
    }

    pub fn report(&self) -> Result<ExperimentReport> {
        let pretraining = self.pretraining.clone().ok_or(Error::Empty("pretraining summary"))?;
        let hash_of = |k: usize| self.repetitions.iter().find(|r| r.repetition == k).map(|r| r.policy_hash.clone());
        let p0_hash = self.policies.first().map(|p| p.hash()).unwrap_or_default();
        let final_policy_hash = self.policies.last().map(|p| p.hash()).unwrap_or_default();
        let p0_identity = match (hash_of(0), hash_of(self.config.final_repetition())) {
            (Some(a), Some(b)) => a == b && a == p0_hash,
            _ => false,
        };
        Ok(ExperimentReport {
            schema: REPORT_SCHEMA.to_string(),
            seed: self.config.seed,
            chart_seed: self.config.chart_seed,
            subject_seed: self.base_profile.seed,
            pretraining,
            repetitions: self.repetitions.clone(),
            motion_tests: self.motion_tests.clone(),
            p0_hash,
            final_policy_hash,
            p0_identity,
            phases: self.state.history.clone(),
        })
    }

    /// Writes the report bundle and every artifact needed to recompute it.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        let report = self.report()?;
        fs::create_dir_all(dir.join("policies"))?;
        fs::create_dir_all(dir.join("episodes"))?;
        fs::create_dir_all(dir.join("train"))?;
        let create = |name: &str| -> Result<BufWriter<fs::File>> { Ok(BufWriter::new(fs::File::create(dir.join(name))?)) };
        fs::write(dir.join("config.json"), self.config.to_json()?)?;
        fs::write(dir.join("report.json"), report.to_json()?)?;
        fs::write(dir.join("chart.json"), self.chart.to_json()?)?;
        fs::write(dir.join("subject.json"), self.base_profile.to_json()?)?;
        report.write_repetitions_csv(create("repetitions.csv")?)?;
        report.write_motion_tests_csv(create("motion_tests.csv")?)?;
        if let Some(d) = &self.dataset {
            d.write(create("pretraining.jsonl")?)?;
        }
        self.buffer.write(create("buffer.jsonl")?)?;
        for (k, p) in self.policies.iter().enumerate() {
            fs::write(dir.join(format!("policies/p{k}.json")), PolicyCheckpoint::new(p, k).to_json()?)?;
        }
        for ep in &self.episodes {
            ep.log.write(create(&format!("episodes/rep{}.jsonl", ep.repetition))?)?;
        }
        for (k, rows) in self.train_logs.iter().enumerate() {
            write_train_log(create(&format!("train/rep{k}.csv"))?, rows)?;
        }
        Ok(())
    }
}

/// Convenience wrapper: a fresh session run to completion.
pub fn run_full_experiment(config: &ExperimentConfig) -> Result<Session> {
    let mut s = Session::new(config.clone())?;
    s.run_to_end()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// Gameplay MI of repetition 0.
    pub mi: Option<f64>,
    pub baseline_return: f64,
    pub trained_return: f64,
    pub closing_return: f64,
    /// Trained minus closing normalized return.
    pub improvement: f64,
    pub emr_p0: f64,
    pub emr_trained: f64,
    /// Mean action changes of the π₀ episodes (first and closing).
    pub changes_p0: f64,
    pub changes_trained: f64,
    pub pretrain_val_f1: f64,
}

impl SeedSummary {
    pub fn from_report(r: &ExperimentReport, n_repetitions: usize) -> Result<Self> {
        let rep = |k: usize| r.repetition(k).ok_or(Error::Empty("repetition report"));
        let (first, trained, closing) = (rep(0)?, rep(n_repetitions)?, rep(n_repetitions + 1)?);
        let mt = |name: &str| r.motion_test(name).map(|m| m.emr).ok_or(Error::Empty("motion test"));
        Ok(Self {
            seed: r.seed,
            mi: first.mi,
            baseline_return: first.normalized_return,
            trained_return: trained.normalized_return,
            closing_return: closing.normalized_return,
            improvement: trained.normalized_return - closing.normalized_return,
            emr_p0: mt("p0")?,
            emr_trained: mt(&policy_name(n_repetitions))?,
            changes_p0: (first.action_changes + closing.action_changes) as f64 / 2.0,
            changes_trained: trained.action_changes as f64,
            pretrain_val_f1: r.pretraining.val_f1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub schema: String,
    pub seeds: Vec<SeedSummary>,
    pub mean_mi: Option<f64>,
    pub mean_closing_return: f64,
    pub mean_trained_return: f64,
    pub mean_improvement: f64,
    pub mean_emr_p0: f64,
    pub mean_emr_trained: f64,
    pub mean_changes_p0: f64,
    pub mean_changes_trained: f64,
    /// Paired test of closing (π₀) against trained returns; `None` when every pair ties.
    pub wilcoxon_return: Option<WilcoxonResult>,
    pub wilcoxon_emr: Option<WilcoxonResult>,
}

impl BatchReport {
    pub fn from_seeds(seeds: Vec<SeedSummary>) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Empty("seed batch"));
        }
        let n = seeds.len() as f64;
        let mean = |f: &dyn Fn(&SeedSummary) -> f64| seeds.iter().map(f).sum::<f64>() / n;
        let mis: Vec<f64> = seeds.iter().filter_map(|s| s.mi).collect();
        let paired = |a: &dyn Fn(&SeedSummary) -> f64, b: &dyn Fn(&SeedSummary) -> f64| {
            PairedSamples::new(seeds.iter().map(a).collect(), seeds.iter().map(b).collect())
                .and_then(|p| wilcoxon_signed_rank(&p))
                .ok()
        };
        Ok(Self {
            schema: BATCH_SCHEMA.to_string(),
            mean_mi: (!mis.is_empty()).then(|| mis.iter().sum::<f64>() / mis.len() as f64),
            mean_closing_return: mean(&|s| s.closing_return),
            mean_trained_return: mean(&|s| s.trained_return),
            mean_improvement: mean(&|s| s.improvement),
            mean_emr_p0: mean(&|s| s.emr_p0),
            mean_emr_trained: mean(&|s| s.emr_trained),
            mean_changes_p0: mean(&|s| s.changes_p0),
            mean_changes_trained: mean(&|s| s.changes_trained),
            wilcoxon_return: paired(&|s| s.closing_return, &|s| s.trained_return),
            wilcoxon_emr: paired(&|s| s.emr_p0, &|s| s.emr_trained),
            seeds,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs the full protocol once per seed; `progress` sees each summary as it lands.
pub fn run_batch(config: &ExperimentConfig, seeds: &[u64], mut progress: impl FnMut(&SeedSummary)) -> Result<BatchReport> {
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = config.for_seed(seed);
        let session = run_full_experiment(&cfg)?;
        let summary = SeedSummary::from_report(&session.report()?, cfg.n_repetitions)?;
        progress(&summary);
        out.push(summary);
    }
    BatchReport::from_seeds(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::EPISODE_TICKS;
    use crate::subject::SubjectParams;

    fn tiny_config(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            seed,
            n_repetitions: 2,
            sl: SlConfig { epochs: 3, ..Default::default() },
            awac: AwacConfig {
                grad_steps: 8,
                batch_size: 32,
                eval_interval: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn noiseless(seed: u64) -> SubjectProfile {
        SubjectProfile::synthetic(SubjectParams {
            seed,
            noise_scale: 0.0,
            error_rate: 0.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn dataset_sizes_and_trim() {
        let spec = PretrainSpec::default();
        let d = pretraining_dataset(&noiseless(0), &spec, 0);
        assert_eq!(d.records.len(), 3744);
        assert_eq!(d.split(Split::Train).0.len(), 2496);
        assert_eq!(d.split(Split::Val).0.len(), 1248);
        // 50 ms per window: kept windows lie inside [300 ms, 2700 ms)
        let kept = spec.kept_windows();
        assert_eq!(kept.len(), 48);
        assert!(kept.start * 50 >= 300 && kept.end * 50 <= 2700);
        assert!((kept.start - 1) * 50 < 300);
    }

    #[test]
    fn noiseless_subject_pretrains_to_perfect_f1() {
        let d = pretraining_dataset(&noiseless(1), &PretrainSpec::default(), 1);
        let st = Standardizer::fit(&d.states()).unwrap();
        let out = sl_pretrain::<f32>(&d, st, &SlConfig { epochs: 60, ..Default::default() }).unwrap();
        assert_eq!(out.best_val_f1, 1.0);
    }

    #[test]
    fn state_machine_follows_protocol() {
        let mut s = SessionState::new(2);
        let expected = [
            "familiarize",
            "play[0]",
            "train[0]",
            "play[1]",
            "train[1]",
            "play[2]",
            "play[3]",
            "motion_test",
            "motion_test",
            "done",
        ];
        for want in expected {
            let (p, r) = s.next().unwrap();
            s.advance(p, r).unwrap();
            assert_eq!(s.label(), want);
        }
        assert!(s.next().is_none());
        assert_eq!(s.policy_for(3), 0);
        assert_eq!(s.policy_for(2), 2);
        SessionState::replay(2, &s.history).unwrap();
    }

    #[test]
    fn illegal_transitions_rejected() {
        let mut s = SessionState::new(2);
        assert!(matches!(s.advance(Phase::Train, Some(0)), Err(Error::IllegalTransition { .. })));
        assert!(s.advance(Phase::MotionTest, None).is_err());
        s.advance(Phase::Familiarize, None).unwrap();
        assert!(s.advance(Phase::Play, Some(1)).is_err());
        s.advance(Phase::Play, Some(0)).unwrap();
        assert!(s.advance(Phase::Play, Some(1)).is_err());
        assert!(s.advance(Phase::Done, None).is_err());
        let bad = vec![
            PhaseRecord { phase: Phase::Pretrain, repetition: None },
            PhaseRecord { phase: Phase::Play, repetition: Some(3) },
        ];
        assert!(SessionState::replay(2, &bad).is_err());
    }

    #[test]
    fn oracle_decoder_plays_perfectly() {
        let p = noiseless(2);
        let chart = build_chart(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (states, events) = subject_episode(&p, &chart, &mut rng);
        assert_eq!(states.len(), EPISODE_TICKS);
        assert!(events.iter().all(|e| e.executed == e.intended));
        let oracle = PrototypeDecoder { prototypes: p.prototypes.clone() };
        let log = play_states(&oracle, &states, &chart).unwrap();
        assert_eq!(log.normalized_return().unwrap(), 1.0);
    }

    #[test]
    fn motion_test_extremes() {
        let p = noiseless(3);
        let spec = MotionTestSpec::default();
        let oracle = PrototypeDecoder { prototypes: p.prototypes.clone() };
        let r = run_motion_test(&oracle, &p, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(r.trials.len(), 36);
        assert_eq!(r.emr, 1.0);
        assert!(r.trials.iter().all(|t| t.success && t.time_s() == 2.0));

        let rest = PrototypeDecoder { prototypes: vec![p.prototypes[0]; 1] };
        let r = run_motion_test(&rest, &p, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(r.emr, 0.0);
        assert!(r.trials.iter().all(|t| !t.success && t.ticks == 200));

        let mut movements: Vec<usize> = r.trials.iter().map(|t| t.movement.index()).collect();
        assert_ne!(movements, {
            let mut s = movements.clone();
            s.sort();
            s
        });
        movements.sort();
        assert_eq!(movements, (1..=12).flat_map(|m| [m; 3]).collect::<Vec<_>>());
    }

    #[test]
    fn consecutive_mode_is_stricter() {
        let p = SubjectProfile::synthetic(SubjectParams { seed: 4, noise_scale: 0.0, error_rate: 0.3, ..Default::default() }).unwrap();
        let oracle = PrototypeDecoder { prototypes: p.prototypes.clone() };
        let run = |consecutive| {
            let spec = MotionTestSpec { consecutive, ..Default::default() };
            run_motion_test(&oracle, &p, &spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
        };
        let (cum, con) = (run(false), run(true));
        let mean_ticks = |r: &MotionTestReport| r.trials.iter().map(|t| t.ticks).sum::<usize>();
        assert!(mean_ticks(&con) > mean_ticks(&cum));
        assert!(cum.success_rate >= con.success_rate);
    }

    #[test]
    fn full_session_structure() {
        let s = run_full_experiment(&tiny_config(5)).unwrap();
        let r = s.report().unwrap();
        assert_eq!(r.repetitions.len(), 4);
        assert_eq!(r.motion_tests.len(), 2);
        assert!(r.p0_identity);
        assert_eq!(r.repetition(3).unwrap().policy, "p0");
        assert_eq!(s.policies.len(), 3);
        assert_eq!(s.buffer.num_episodes(), 2);
        let mut names: Vec<&str> = r.motion_tests.iter().map(|m| m.policy.as_str()).collect();
        names.sort();
        assert_eq!(names, ["p0", "p2"]);
        assert_eq!(r.pretraining.train_size, 2496);
        assert!(r.repetitions[0].finetune.is_some());
        assert!(r.repetitions[2].finetune.is_none());
        assert!(r.repetitions[1].psi_vs_previous.is_some());
        assert!(r.repetitions.iter().take(3).all(|x| x.psi_vs_last_trained.is_some()));
        SessionState::replay(2, &r.phases).unwrap();
    }

    #[test]
    fn motion_test_order_varies_with_seed() {
        let orders: std::collections::BTreeSet<[usize; 2]> = (0..16)
            .map(|seed| Session::new(tiny_config(seed)).unwrap().motion_order())
            .collect();
        assert_eq!(orders.len(), 2);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(6);
        let full = run_full_experiment(&cfg).unwrap();

        let mut s = Session::new(cfg).unwrap();
        let path = dir.path().join("session.json");
        while !s.is_done() {
            s.step().unwrap();
            s.save(&path).unwrap();
            s = Session::load(&path).unwrap();
        }
        assert_eq!(s.report().unwrap(), full.report().unwrap());
    }

    #[test]
    fn bundle_is_byte_identical_across_reruns() {
        let cfg = tiny_config(7);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            run_full_experiment(&cfg).unwrap().write_bundle(d.path()).unwrap();
        }
        let files = |p: &Path| {
            let mut v = Vec::new();
            for sub in ["", "policies", "episodes", "train"] {
                for e in fs::read_dir(p.join(sub)).unwrap() {
                    let e = e.unwrap();
                    if e.file_type().unwrap().is_file() {
                        v.push((format!("{sub}/{}", e.file_name().to_string_lossy()), fs::read(e.path()).unwrap()));
                    }
                }
            }
            v.sort();
            v
        };
        let (a, b) = (files(dirs[0].path()), files(dirs[1].path()));
        assert!(a.len() >= 14);
        assert_eq!(a, b);
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        let bad = ExperimentConfig {
            pretrain: PretrainSpec { val_recordings: vec![7], ..Default::default() },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(ExperimentConfig { n_repetitions: 0, ..Default::default() }.validate().is_err());
        let seeded = cfg.for_seed(9);
        assert_eq!(seeded.seed, 9);
        assert!(matches!(seeded.subject, SubjectSource::Synthetic(p) if p.seed == 9));
    }

    #[test]
    fn batch_report_statistics() {
        let mk = |seed, closing: f64, trained: f64| SeedSummary {
            seed,
            mi: Some(0.5),
            baseline_return: closing,
            trained_return: trained,
            closing_return: closing,
            improvement: trained - closing,
            emr_p0: 0.3,
            emr_trained: 0.5 + seed as f64 / 100.0,
            changes_p0: 600.0,
            changes_trained: 400.0,
            pretrain_val_f1: 0.9,
        };
        let seeds: Vec<SeedSummary> = (0..10).map(|s| mk(s, 0.4, 0.6 + s as f64 / 100.0)).collect();
        let b = BatchReport::from_seeds(seeds).unwrap();
        assert!((b.mean_improvement - 0.245).abs() < 1e-12);
        let w = b.wilcoxon_return.unwrap();
        assert!(w.significant && w.exact);
        assert!((w.p_value - 2.0 / 1024.0).abs() < 1e-12);
        // every trained return is higher, so all signed ranks are positive
        assert_eq!((w.w_plus, w.statistic), (55.0, 0.0));
        assert_eq!(b.wilcoxon_emr.unwrap().w_plus, 55.0);
    }
}
