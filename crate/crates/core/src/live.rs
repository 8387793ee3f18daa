//! Live session engine behind the WebSocket service.
//!
//! The engine is synchronous and clock-free: the caller feeds it client
//! messages and calls `tick` at 20 Hz. Messages queued between two ticks take
//! effect at the start of the next one.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::awac::{finetune_repetition, AwacConfig, CriticPair, ReplayBuffer};
use crate::error::{Error, Result};
use crate::experiment::{MotionTestSpec, Phase};
use crate::game::{reward, EpisodeLog, GameSession, NoteChart};
use crate::movements::{MovementId, NUM_BITS};
use crate::policy::PolicyNet;
use crate::subject::{HumanAdapter, IntentionEvent};

/// Server to client, once per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSnapshot {
    pub t: usize,
    pub ideal: [u8; NUM_BITS],
    pub predicted: [u8; NUM_BITS],
    pub reward: i32,
    pub score: u32,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlCmd {
    Start,
    Stop,
    Finetune,
    MotionTest,
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Chord { keys: Vec<String> },
    Control { cmd: ControlCmd },
}

impl ClientMessage {
    pub fn parse(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line.trim())?)
    }
}

impl TickSnapshot {
    /// One NDJSON line, newline included.
    pub fn to_line(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone)]
struct MotionRun {
    order: Vec<MovementId>,
    current: usize,
    ticks: usize,
    hits: usize,
    score: u32,
    t: usize,
}

/// Fine-tuning result, reported back to the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub repetition: usize,
    pub start_return: i64,
    pub best_return: i64,
    pub policy_hash: String,
}

pub struct LiveSession {
    chart: NoteChart,
    adapter: HumanAdapter,
    policy: PolicyNet<f32>,
    awac: AwacConfig,
    motion_spec: MotionTestSpec,
    critics: Option<CriticPair<f32>>,
    buffer: ReplayBuffer,
    pressed: Vec<String>,
    queue: Vec<ClientMessage>,
    game: Option<GameSession>,
    motion: Option<MotionRun>,
    phase: Phase,
    repetition: usize,
    rng: ChaCha8Rng,
    last: Option<TickSnapshot>,
    intention: Option<IntentionEvent>,
    pub finetunes: Vec<FinetuneReport>,
    pub episodes: Vec<EpisodeLog>,
}

impl LiveSession {
    pub fn new(
        chart: NoteChart,
        adapter: HumanAdapter,
        policy: PolicyNet<f32>,
        awac: AwacConfig,
        motion_spec: MotionTestSpec,
        seed: u64,
    ) -> Self {
        Self {
            chart,
            adapter,
            policy,
            awac,
            motion_spec,
            critics: None,
            buffer: ReplayBuffer::new(),
            pressed: Vec::new(),
            queue: Vec::new(),
            game: None,
            motion: None,
            phase: Phase::Done,
            repetition: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: None,
            intention: None,
            finetunes: Vec::new(),
            episodes: Vec::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn policy(&self) -> &PolicyNet<f32> {
        &self.policy
    }

    /// Latest snapshot, replayed to clients when they attach.
    pub fn last_snapshot(&self) -> Option<&TickSnapshot> {
        self.last.as_ref()
    }

    /// Intention decoded from the chord held during the latest tick.
    pub fn last_intention(&self) -> Option<&IntentionEvent> {
        self.intention.as_ref()
    }

    /// Queues a message for the next tick boundary.
    pub fn submit(&mut self, msg: ClientMessage) {
        self.queue.push(msg);
    }

    fn apply(&mut self, msg: ClientMessage) -> Result<Option<FinetuneReport>> {
        match msg {
            ClientMessage::Chord { keys } => self.pressed = keys,
            ClientMessage::Control { cmd } => match cmd {
                ControlCmd::Start => {
                    self.motion = None;
                    self.game = Some(GameSession::new(&self.chart));
                    self.phase = Phase::Play;
                }
                ControlCmd::Stop => {
                    self.game = None;
                    self.motion = None;
                    self.phase = Phase::Done;
                }
                ControlCmd::Finetune => return self.finetune().map(Some),
                ControlCmd::MotionTest => {
                    self.game = None;
                    let mut order: Vec<MovementId> = MovementId::active()
                        .flat_map(|m| std::iter::repeat_n(m, self.motion_spec.trials_per_movement))
                        .collect();
                    order.shuffle(&mut self.rng);
                    self.motion = Some(MotionRun {
                        order,
                        current: 0,
                        ticks: 0,
                        hits: 0,
                        score: 0,
                        t: 0,
                    });
                    self.phase = Phase::MotionTest;
                }
            },
        }
        Ok(None)
    }

    /// Fine-tunes the active policy on every completed live episode.
    pub fn finetune(&mut self) -> Result<FinetuneReport> {
        if self.buffer.is_empty() {
            return Err(Error::Empty("no completed episode to train on"));
        }
        self.game = None;
        self.motion = None;
        self.phase = Phase::Train;
        let seed = self.repetition as u64;
        let critics = self.critics.get_or_insert_with(|| CriticPair::new(&self.awac, seed));
        let out = finetune_repetition(&self.buffer, &self.policy, critics, &self.awac, &mut self.rng)?;
        self.policy = out.policy;
        let report = FinetuneReport {
            repetition: self.repetition,
            start_return: out.start_return,
            best_return: out.best_return,
            policy_hash: self.policy.hash(),
        };
        self.finetunes.push(report.clone());
        self.phase = Phase::Done;
        Ok(report)
    }

    /// Applies queued messages, then advances one tick. Returns the snapshot of
    /// the tick, or `None` when nothing is running.
    pub fn tick(&mut self) -> Result<Option<TickSnapshot>> {
        for msg in std::mem::take(&mut self.queue) {
            self.apply(msg)?;
        }
        let snap = match self.phase {
            Phase::Play => self.play_tick()?,
            Phase::MotionTest => self.motion_tick(),
            _ => None,
        };
        if let Some(s) = &snap {
            self.last = Some(s.clone());
        }
        Ok(snap)
    }

    fn play_tick(&mut self) -> Result<Option<TickSnapshot>> {
        let Some(game) = self.game.as_mut() else {
            return Ok(None);
        };
        let Some(ideal) = game.current_ideal() else {
            return Ok(None);
        };
        let t = game.tick();
        let (intention, state) = self.adapter.chord(&self.pressed, t);
        self.intention = Some(intention);
        let predicted = self.policy.predict(&state);
        let out = game.step(state, predicted)?;
        let snap = TickSnapshot {
            t,
            ideal: ideal.0,
            predicted: predicted.0,
            reward: out.reward,
            score: out.score,
            phase: Phase::Play,
        };
        if out.done {
            let log = self.game.take().expect("game in progress").into_log();
            self.buffer.append_log(&log, self.repetition, self.awac.epsilon, &mut self.rng)?;
            self.episodes.push(log);
            self.repetition += 1;
            self.phase = Phase::Done;
        }
        Ok(Some(snap))
    }

    fn motion_tick(&mut self) -> Option<TickSnapshot> {
        let run = self.motion.as_mut()?;
        let target = *run.order.get(run.current)?;
        let (intention, state) = self.adapter.chord(&self.pressed, run.t);
        self.intention = Some(intention);
        let predicted = self.policy.predict(&state);
        let r = reward(predicted, target.encode());
        let correct = predicted == target.encode();
        run.ticks += 1;
        if correct {
            run.hits += 1;
            run.score += 1;
        } else if self.motion_spec.consecutive {
            run.hits = 0;
        }
        let snap = TickSnapshot {
            t: run.t,
            ideal: target.encode().0,
            predicted: predicted.0,
            reward: r,
            score: run.score,
            phase: Phase::MotionTest,
        };
        run.t += 1;
        if run.hits >= self.motion_spec.success_hits || run.ticks >= self.motion_spec.timeout_ticks {
            run.current += 1;
            run.ticks = 0;
            run.hits = 0;
            if run.current == run.order.len() {
                self.motion = None;
                self.phase = Phase::Done;
            }
        }
        Some(snap)
    }

    /// Movement currently prompted in a Motion Test.
    pub fn prompt(&self) -> Option<MovementId> {
        self.motion.as_ref().and_then(|m| m.order.get(m.current).copied())
    }
}

/// Per-DOF correctness as the client colours it: a lane is correct when the
/// predicted and ideal bits agree on both of its directions.
pub fn lane_correct(snapshot: &TickSnapshot) -> [bool; 3] {
    std::array::from_fn(|d| {
        let (e, f) = (2 * d, 2 * d + 1);
        snapshot.predicted[e] == snapshot.ideal[e] && snapshot.predicted[f] == snapshot.ideal[f]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_chart, EPISODE_TICKS};
    use crate::movements::MovementVector;
    use crate::policy::Standardizer;
    use crate::subject::{ChordMap, SubjectParams, SubjectProfile};

    fn session(noise: f64) -> LiveSession {
        let profile = SubjectProfile::synthetic(SubjectParams {
            seed: 1,
            noise_scale: noise,
            error_rate: 0.0,
            ..Default::default()
        })
        .unwrap();
        let st = Standardizer::fit(&profile.prototypes).unwrap();
        let adapter = HumanAdapter::new(profile, ChordMap::default(), 2);
        let awac = AwacConfig {
            grad_steps: 6,
            batch_size: 16,
            eval_interval: 3,
            ..Default::default()
        };
        LiveSession::new(build_chart(0).unwrap(), adapter, PolicyNet::new(st, 3), awac, MotionTestSpec::default(), 4)
    }

    fn keys_for(v: MovementVector) -> Vec<String> {
        let map = ChordMap::default();
        map.keys.iter().filter(|(_, &b)| v.bit(b)).map(|(k, _)| k.clone()).collect()
    }

    #[test]
    fn wire_format() {
        let m = ClientMessage::parse(r#"{"type":"chord","keys":["a","s"]}"#).unwrap();
        assert_eq!(m, ClientMessage::Chord { keys: vec!["a".into(), "s".into()] });
        let c = ClientMessage::parse(r#"{"type":"control","cmd":"motion_test"}"#).unwrap();
        assert_eq!(c, ClientMessage::Control { cmd: ControlCmd::MotionTest });
        assert!(ClientMessage::parse(r#"{"type":"control","cmd":"explode"}"#).is_err());
        let s = TickSnapshot {
            t: 3,
            ideal: [0, 1, 0, 1, 0, 0, 0],
            predicted: [0, 0, 0, 0, 0, 0, 1],
            reward: -1,
            score: 7,
            phase: Phase::Play,
        };
        let line = s.to_line().unwrap();
        assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
        assert_eq!(
            line.trim(),
            r#"{"t":3,"ideal":[0,1,0,1,0,0,0],"predicted":[0,0,0,0,0,0,1],"reward":-1,"score":7,"phase":"play"}"#
        );
    }

    #[test]
    fn scripted_session_scores_match_engine() {
        let mut s = session(0.5);
        assert_eq!(s.tick().unwrap(), None);
        s.submit(ClientMessage::Control { cmd: ControlCmd::Start });
        let ideal = build_chart(0).unwrap().ideal_sequence();
        let mut snaps = Vec::new();
        for &target in &ideal[..EPISODE_TICKS] {
            // the chord for tick t is sent before tick t and must already apply
            s.submit(ClientMessage::Chord { keys: keys_for(target) });
            snaps.push(s.tick().unwrap().unwrap());
        }
        assert_eq!(s.tick().unwrap(), None);
        assert_eq!(s.phase(), Phase::Done);
        let log = &s.episodes[0];
        for (snap, rec) in snaps.iter().zip(&log.records) {
            assert_eq!(snap.score, rec.score);
            assert_eq!(snap.t, rec.t);
            assert_eq!(MovementVector(snap.ideal), rec.ideal);
        }
        assert_eq!(s.last_snapshot(), snaps.last());
    }

    #[test]
    fn chord_applies_within_one_tick() {
        let mut s = session(0.5);
        s.submit(ClientMessage::Control { cmd: ControlCmd::Start });
        for (t, m) in [1, 8, 8, 0, 12, 3].into_iter().enumerate() {
            let m = MovementId::new(m).unwrap();
            s.submit(ClientMessage::Chord { keys: keys_for(m.encode()) });
            let snap = s.tick().unwrap().unwrap();
            let ev = s.last_intention().unwrap();
            assert_eq!((ev.intended, ev.tick, snap.t), (m, t, t));
        }
    }

    #[test]
    fn finetune_requires_an_episode_and_updates_policy() {
        let mut s = session(0.5);
        assert!(s.finetune().is_err());
        s.submit(ClientMessage::Control { cmd: ControlCmd::Start });
        while s.tick().unwrap().is_some() {}
        s.submit(ClientMessage::Control { cmd: ControlCmd::Finetune });
        s.tick().unwrap();
        assert_eq!(s.finetunes.len(), 1);
        assert!(s.finetunes[0].best_return >= s.finetunes[0].start_return);
        assert_eq!(s.finetunes[0].policy_hash, s.policy().hash());
    }

    #[test]
    fn motion_test_runs_every_prompt() {
        let mut s = session(0.5);
        s.submit(ClientMessage::Control { cmd: ControlCmd::MotionTest });
        let mut n = 0;
        while let Some(snap) = s.tick().unwrap() {
            assert_eq!(snap.phase, Phase::MotionTest);
            assert!(MovementVector(snap.ideal).is_canonical());
            n += 1;
        }
        assert!((36 * 40..=36 * 200).contains(&n));
        assert_eq!(s.phase(), Phase::Done);
    }

    #[test]
    fn lane_colouring() {
        let snap = |ideal, predicted| TickSnapshot { t: 0, ideal, predicted, reward: 0, score: 0, phase: Phase::Play };
        let m8 = MovementId::new(8).unwrap().encode().0;
        assert_eq!(lane_correct(&snap(m8, m8)), [true, true, true]);
        let m2 = MovementId::new(2).unwrap().encode().0;
        assert_eq!(lane_correct(&snap(m8, m2)), [true, false, true]);
    }
}
