//! Rhythm-game environment: note charts, 20 Hz episodes, rewards and scoring.
//!
//! Time is measured in ticks of 50 ms. A note covers the half-open tick range
//! `[start, start + duration)`; every tick outside a note expects Rest.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::movements::{MovementId, MovementVector};
use crate::sigproc::FeatureState;

pub const TICK_HZ: usize = 20;
pub const EPISODE_S: usize = 137;
pub const FILLED_S: usize = 60;
pub const EPISODE_TICKS: usize = EPISODE_S * TICK_HZ;
pub const NOTE_TICKS: usize = FILLED_S * TICK_HZ;
pub const REST_TICKS: usize = EPISODE_TICKS - NOTE_TICKS;
pub const NUM_NOTES: usize = 48;
pub const DURATIONS_S: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
/// Shortest rest gap before, between and after notes (0.25 s).
pub const MIN_GAP_TICKS: usize = 5;

pub const MAX_RETURN: i64 = NOTE_TICKS as i64;
pub const MIN_RETURN: i64 = -(EPISODE_TICKS as i64);

pub const CHART_SCHEMA: &str = "myoloop.chart/1";
pub const EPISODE_SCHEMA: &str = "myoloop.episode/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub movement: MovementId,
    pub start_s: f64,
    pub duration_s: f64,
}

impl Note {
    pub fn start_tick(&self) -> usize {
        secs_to_ticks(self.start_s)
    }

    pub fn duration_ticks(&self) -> usize {
        secs_to_ticks(self.duration_s)
    }

    pub fn end_tick(&self) -> usize {
        self.start_tick() + self.duration_ticks()
    }
}

fn secs_to_ticks(s: f64) -> usize {
    (s * TICK_HZ as f64).round() as usize
}

fn ticks_to_secs(t: usize) -> f64 {
    t as f64 / TICK_HZ as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteChart {
    pub schema: String,
    pub seed: u64,
    /// Sorted by start time.
    pub notes: Vec<Note>,
}

impl NoteChart {
    pub fn episode_ticks(&self) -> usize {
        EPISODE_TICKS
    }

    pub fn note_time_s(&self) -> f64 {
        self.notes.iter().map(|n| n.duration_s).sum()
    }

    /// Ideal action for every tick of the episode.
    pub fn ideal_sequence(&self) -> Vec<MovementVector> {
        let mut seq = vec![MovementVector::REST; EPISODE_TICKS];
        for note in &self.notes {
            let v = note.movement.encode();
            for slot in &mut seq[note.start_tick()..note.end_tick()] {
                *slot = v;
            }
        }
        seq
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let chart: Self = serde_json::from_str(s)?;
        crate::io::check_schema(CHART_SCHEMA, &chart.schema)?;
        chart.validate()?;
        Ok(chart)
    }

    /// Checks the structural invariants of a chart.
    pub fn validate(&self) -> Result<()> {
        if self.notes.len() != NUM_NOTES {
            return Err(Error::InfeasibleChart(format!("{} notes", self.notes.len())));
        }
        let mut last_end = 0;
        for (i, n) in self.notes.iter().enumerate() {
            if n.movement.is_rest() {
                return Err(Error::InfeasibleChart(format!("note {i} is Rest")));
            }
            if !DURATIONS_S.contains(&n.duration_s) {
                return Err(Error::InfeasibleChart(format!("note {i} lasts {} s", n.duration_s)));
            }
            if n.start_tick() < last_end + MIN_GAP_TICKS {
                return Err(Error::InfeasibleChart(format!("note {i} overlaps or lacks a rest gap")));
            }
            last_end = n.end_tick();
        }
        if last_end + MIN_GAP_TICKS > EPISODE_TICKS {
            return Err(Error::InfeasibleChart("notes run past the episode end".into()));
        }
        let total: usize = self.notes.iter().map(Note::duration_ticks).sum();
        if total != NOTE_TICKS {
            return Err(Error::InfeasibleChart(format!("{total} note ticks")));
        }
        Ok(())
    }
}

/// Builds the song: each (movement, duration) pair once, in shuffled order,
/// separated by Dirichlet-distributed rest gaps of at least `MIN_GAP_TICKS`.
pub fn build_chart(seed: u64) -> Result<NoteChart> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(MovementId, f64)> = MovementId::active()
        .flat_map(|m| DURATIONS_S.iter().map(move |&d| (m, d)))
        .collect();
    pairs.shuffle(&mut rng);

    let n_gaps = NUM_NOTES + 1;
    let spare = REST_TICKS
        .checked_sub(n_gaps * MIN_GAP_TICKS)
        .ok_or_else(|| Error::InfeasibleChart("rest time below minimum gaps".into()))?;
    let gaps: Vec<usize> = dirichlet_split(spare, n_gaps, &mut rng)
        .into_iter()
        .map(|g| g + MIN_GAP_TICKS)
        .collect();

    let mut t = 0;
    let mut notes = Vec::with_capacity(NUM_NOTES);
    for (i, (movement, duration_s)) in pairs.into_iter().enumerate() {
        t += gaps[i];
        notes.push(Note {
            movement,
            start_s: ticks_to_secs(t),
            duration_s,
        });
        t += secs_to_ticks(duration_s);
    }
    t += gaps[NUM_NOTES];
    assert_eq!(t, EPISODE_TICKS, "gap distribution must fill the episode exactly");

    let chart = NoteChart {
        schema: CHART_SCHEMA.to_string(),
        seed,
        notes,
    };
    chart.validate()?;
    Ok(chart)
}

/// Splits `total` integer units into `parts` by a flat Dirichlet draw,
/// rounding with the largest-remainder method so the parts sum exactly.
fn dirichlet_split(total: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let w: Vec<f64> = (0..parts).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = w.iter().sum();
    let exact: Vec<f64> = w.iter().map(|x| x / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let short = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..parts).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}

pub fn ideal_action(chart: &NoteChart, tick: usize) -> Result<MovementVector> {
    if tick >= EPISODE_TICKS {
        return Err(Error::TickOutOfRange { tick, len: EPISODE_TICKS });
    }
    let idx = chart.notes.partition_point(|n| n.start_tick() <= tick);
    if idx > 0 {
        let note = &chart.notes[idx - 1];
        if tick < note.end_tick() {
            return Ok(note.movement.encode());
        }
    }
    Ok(MovementVector::REST)
}

/// 1 for a correct non-rest action, 0 for correctly resting, -1 otherwise.
pub fn reward(a: MovementVector, ideal: MovementVector) -> i32 {
    if a != ideal {
        -1
    } else if ideal == MovementVector::REST {
        0
    } else {
        1
    }
}

pub fn episode_return(actions: &[MovementVector], ideal: &[MovementVector]) -> Result<i64> {
    if actions.len() != ideal.len() {
        return Err(Error::LengthMismatch(actions.len(), ideal.len()));
    }
    Ok(actions.iter().zip(ideal).map(|(&a, &i)| i64::from(reward(a, i))).sum())
}

/// Maps an episode return onto [0, 1] using the attainable range.
pub fn normalized_return(g: i64) -> Result<f64> {
    if !(MIN_RETURN..=MAX_RETURN).contains(&g) {
        return Err(Error::ReturnOutOfRange(g as f64));
    }
    Ok((g - MIN_RETURN) as f64 / (MAX_RETURN - MIN_RETURN) as f64)
}

/// One logged tick of gameplay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: usize,
    pub state: FeatureState,
    pub action: MovementVector,
    pub ideal: MovementVector,
    pub reward: i32,
    pub score: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: i32,
    pub score: u32,
    pub tick: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub records: Vec<TickRecord>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_return(&self) -> i64 {
        self.records.iter().map(|r| i64::from(r.reward)).sum()
    }

    pub fn normalized_return(&self) -> Result<f64> {
        normalized_return(self.total_return())
    }

    pub fn actions(&self) -> Vec<MovementVector> {
        self.records.iter().map(|r| r.action).collect()
    }

    pub fn ideals(&self) -> Vec<MovementVector> {
        self.records.iter().map(|r| r.ideal).collect()
    }

    pub fn states(&self) -> Vec<FeatureState> {
        self.records.iter().map(|r| r.state).collect()
    }

    pub fn final_score(&self) -> u32 {
        self.records.last().map_or(0, |r| r.score)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        write_jsonl(w, EPISODE_SCHEMA, &self.records)
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        Ok(Self {
            records: read_jsonl(r, EPISODE_SCHEMA)?,
        })
    }
}

/// A single play-through of a chart, advanced one tick per `step`.
#[derive(Debug, Clone)]
pub struct GameSession {
    ideal: Vec<MovementVector>,
    tick: usize,
    score: u32,
    log: EpisodeLog,
}

impl GameSession {
    pub fn new(chart: &NoteChart) -> Self {
        Self {
            ideal: chart.ideal_sequence(),
            tick: 0,
            score: 0,
            log: EpisodeLog {
                records: Vec::with_capacity(EPISODE_TICKS),
            },
        }
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn score(&self) -> u32 {
        self.score
    }

    pub fn is_done(&self) -> bool {
        self.tick >= self.ideal.len()
    }

    /// Ideal action at the current tick, if the episode is still running.
    pub fn current_ideal(&self) -> Option<MovementVector> {
        self.ideal.get(self.tick).copied()
    }

    pub fn step(&mut self, state: FeatureState, action: MovementVector) -> Result<StepOutcome> {
        let ideal = self.current_ideal().ok_or(Error::EpisodeFinished)?;
        let r = reward(action, ideal);
        if r > 0 {
            self.score += 1;
        }
        self.log.records.push(TickRecord {
            t: self.tick,
            state,
            action,
            ideal,
            reward: r,
            score: self.score,
        });
        self.tick += 1;
        Ok(StepOutcome {
            reward: r,
            score: self.score,
            tick: self.tick,
            done: self.is_done(),
        })
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }
}
