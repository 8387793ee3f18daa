//! Advantage-weighted actor-critic fine-tuning on recorded gameplay.
//!
//! The replay buffer only ever grows: each played episode is converted into
//! transitions, its failed ticks are randomly relabelled once, and it is frozen.
//! A repetition then runs a fixed number of gradient steps (critics every step,
//! actor every `actor_interval` steps) and keeps the policy snapshot whose
//! simulated song return, summed over every recorded episode, is highest.

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::game::{reward, EpisodeLog, NoteChart, EPISODE_TICKS};
use crate::io::{read_jsonl, write_jsonl};
use crate::movements::{uniform_random_movement, MovementVector, NUM_BITS};
use crate::nn::{Adam, Grads, Mlp, Real};
use crate::policy::{PolicyNet, Standardizer};
use crate::sigproc::{FeatureState, STATE_DIM};

pub const BUFFER_SCHEMA: &str = "myoloop.replay/1";
pub const CRITIC_INPUT: usize = STATE_DIM + NUM_BITS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwacConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub policy_lr: f64,
    pub q_lr: f64,
    pub policy_weight_decay: f64,
    pub q_weight_decay: f64,
    pub tau: f64,
    pub actor_interval: usize,
    pub action_samples: usize,
    pub n_step: usize,
    pub epsilon: f64,
    pub grad_steps: usize,
    pub eval_interval: usize,
    /// Upper bound on the exponent of the advantage weight.
    pub max_weight_exponent: f64,
    pub critic_hidden: Vec<usize>,
}

impl Default for AwacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8935,
            lambda: 0.95,
            batch_size: 512,
            policy_lr: 9.844e-4,
            q_lr: 7.627e-4,
            policy_weight_decay: 1e-4,
            q_weight_decay: 0.0,
            tau: 8.948e-3,
            actor_interval: 4,
            action_samples: 1,
            n_step: 1,
            epsilon: 0.9,
            grad_steps: 2000,
            eval_interval: 10,
            max_weight_exponent: 20.0,
            critic_hidden: vec![256, 256],
        }
    }
}

impl AwacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        let positive = [self.lambda, self.policy_lr, self.q_lr, self.tau, self.max_weight_exponent];
        if positive.iter().any(|v| v.is_nan() || *v <= 0.0) || self.tau > 1.0 {
            return bad("lambda, learning rates, tau and the weight clip must be positive (tau <= 1)");
        }
        if self.policy_weight_decay < 0.0 || self.q_weight_decay < 0.0 {
            return bad("weight decay must be non-negative");
        }
        if self.batch_size == 0 || self.actor_interval == 0 || self.action_samples == 0 || self.eval_interval == 0 {
            return bad("batch size, intervals and sample counts must be positive");
        }
        if self.n_step != 1 {
            return bad("only 1-step TD targets are supported");
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) {
            return bad("critic needs at least one non-empty hidden layer");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: FeatureState,
    pub a: MovementVector,
    pub r: i32,
    pub s_next: FeatureState,
    pub done: bool,
    pub ideal: MovementVector,
    pub repetition: usize,
    /// Set when augmentation replaced the recorded action.
    #[serde(default)]
    pub relabeled: bool,
}

/// Converts a played episode into transitions; the last tick is terminal.
pub fn episode_transitions(log: &EpisodeLog, repetition: usize) -> Vec<Transition> {
    let n = log.records.len();
    log.records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let done = i + 1 == n;
            Transition {
                s: rec.state,
                a: rec.action,
                r: rec.reward,
                s_next: if done { rec.state } else { log.records[i + 1].state },
                done,
                ideal: rec.ideal,
                repetition,
                relabeled: false,
            }
        })
        .collect()
}

/// With probability `epsilon`, swaps the action of each failed transition for a
/// uniformly drawn movement and recomputes its reward.
pub fn augment_episode<R: Rng + ?Sized>(episode: &mut [Transition], epsilon: f64, rng: &mut R) {
    for t in episode.iter_mut() {
        if t.r == -1 && rng.random::<f64>() < epsilon {
            t.a = uniform_random_movement(rng).encode();
            t.r = reward(t.a, t.ideal);
            t.relabeled = true;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    transitions: Vec<Transition>,
    /// `(start, end)` of every episode in `transitions`.
    episodes: Vec<(usize, usize)>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn episode(&self, i: usize) -> &[Transition] {
        let (a, b) = self.episodes[i];
        &self.transitions[a..b]
    }

    /// Appends an already augmented episode.
    pub fn push_episode(&mut self, episode: Vec<Transition>) -> Result<()> {
        if episode.is_empty() {
            return Err(Error::Empty("episode"));
        }
        if !episode.last().is_some_and(|t| t.done) || episode[..episode.len() - 1].iter().any(|t| t.done) {
            return Err(Error::Config("episode must end with its only terminal transition".into()));
        }
        let start = self.transitions.len();
        self.transitions.extend(episode);
        self.episodes.push((start, self.transitions.len()));
        Ok(())
    }

    /// Converts, augments and appends one episode of gameplay.
    pub fn append_log<R: Rng + ?Sized>(
        &mut self,
        log: &EpisodeLog,
        repetition: usize,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<()> {
        let mut ep = episode_transitions(log, repetition);
        augment_episode(&mut ep, epsilon, rng);
        self.push_episode(ep)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        write_jsonl(w, BUFFER_SCHEMA, &self.transitions)
    }

    /// Rebuilds episode boundaries from terminal flags.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let transitions: Vec<Transition> = read_jsonl(r, BUFFER_SCHEMA)?;
        let mut buf = Self::new();
        let mut current = Vec::new();
        for t in transitions {
            let done = t.done;
            current.push(t);
            if done {
                buf.push_episode(std::mem::take(&mut current))?;
            }
        }
        if !current.is_empty() {
            return Err(Error::Config("buffer file ends inside an episode".into()));
        }
        Ok(buf)
    }
}

/// Twin Q-networks over `[standardized state, action bits]` with Polyak targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticPair<T = f32> {
    pub online: [Mlp<T>; 2],
    pub target: [Mlp<T>; 2],
    opt: [Adam<T>; 2],
}

impl<T: Real> CriticPair<T> {
    pub fn new(cfg: &AwacConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![CRITIC_INPUT];
        sizes.extend(&cfg.critic_hidden);
        sizes.push(1);
        let online = [Mlp::new(&sizes, &mut rng), Mlp::new(&sizes, &mut rng)];
        let opt = [
            Adam::new(&online[0], cfg.q_lr, cfg.q_weight_decay),
            Adam::new(&online[1], cfg.q_lr, cfg.q_weight_decay),
        ];
        Self {
            target: online.clone(),
            online,
            opt,
        }
    }

    /// Elementwise minimum of the two online critics.
    pub fn min_q(&self, x: &Array2<T>) -> Vec<f64> {
        min_of(&self.online, x)
    }

    pub fn min_target_q(&self, x: &Array2<T>) -> Vec<f64> {
        min_of(&self.target, x)
    }

    /// Mean squared error of critic `k` against `y`, with its gradient.
    pub fn td_loss(&self, k: usize, x: &Array2<T>, y: &[f64]) -> (f64, Grads<T>) {
        let trace = self.online[k].forward_trace(x.clone());
        let q = trace.output();
        let b = y.len() as f64;
        let mut loss = 0.0;
        let mut grad = Array2::<T>::zeros((y.len(), 1));
        for (i, yi) in y.iter().enumerate() {
            let e = q[[i, 0]].f64() - yi;
            loss += e * e / b;
            grad[[i, 0]] = T::lit(2.0 * e / b);
        }
        (loss, self.online[k].backward(&trace, grad))
    }

    /// One regression step for both critics followed by a Polyak target update.
    pub fn update(&mut self, x: &Array2<T>, y: &[f64], tau: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..2 {
            let (loss, grads) = self.td_loss(k, x, y);
            self.opt[k].step(&mut self.online[k], &grads);
            total += loss;
        }
        for k in 0..2 {
            self.target[k].polyak_update(&self.online[k], T::lit(tau));
        }
        total / 2.0
    }
}

fn min_of<T: Real>(nets: &[Mlp<T>; 2], x: &Array2<T>) -> Vec<f64> {
    let a = nets[0].forward(x);
    let b = nets[1].forward(x);
    a.iter().zip(b.iter()).map(|(p, q)| p.f64().min(q.f64())).collect()
}

/// Critic input rows: standardized state followed by the action bits.
pub fn critic_input<T: Real>(states_std: &Array2<T>, actions: &[MovementVector]) -> Array2<T> {
    let mut x = Array2::<T>::zeros((actions.len(), CRITIC_INPUT));
    x.slice_mut(s![.., ..STATE_DIM]).assign(states_std);
    for (i, a) in actions.iter().enumerate() {
        for j in 0..NUM_BITS {
            x[[i, STATE_DIM + j]] = T::lit(f64::from(a.0[j]));
        }
    }
    x
}

fn sample_actions<T: Real, R: Rng + ?Sized>(policy: &PolicyNet<T>, x: &Array2<T>, rng: &mut R) -> Vec<MovementVector> {
    let z = policy.net.forward(x);
    z.rows()
        .into_iter()
        .map(|row| {
            MovementVector(std::array::from_fn(|j| {
                u8::from(rng.random::<f64>() < crate::nn::sigmoid(row[j].f64()))
            }))
        })
        .collect()
}

/// A sampled minibatch, states already standardized.
pub struct Batch<'a, T> {
    pub s: Array2<T>,
    pub s_next: Array2<T>,
    pub items: Vec<&'a Transition>,
}

impl<'a, T: Real> Batch<'a, T> {
    pub fn gather(buffer: &'a ReplayBuffer, std_states: &StandardizedBuffer<T>, idx: &[usize]) -> Self {
        Self {
            s: std_states.states.select(Axis(0), idx),
            s_next: std_states.next.select(Axis(0), idx),
            items: idx.iter().map(|&i| &buffer.transitions[i]).collect(),
        }
    }

    pub fn actions(&self) -> Vec<MovementVector> {
        self.items.iter().map(|t| t.a).collect()
    }
}

/// Standardized current and next states for every buffered transition.
pub struct StandardizedBuffer<T> {
    pub states: Array2<T>,
    pub next: Array2<T>,
}

impl<T: Real> StandardizedBuffer<T> {
    pub fn new(buffer: &ReplayBuffer, st: &Standardizer) -> Self {
        let s: Vec<FeatureState> = buffer.transitions.iter().map(|t| t.s).collect();
        let n: Vec<FeatureState> = buffer.transitions.iter().map(|t| t.s_next).collect();
        Self {
            states: st.batch(&s),
            next: st.batch(&n),
        }
    }
}

/// `r + gamma * (1 - done) * min Q'(s', a')` with `a' ~ pi(s')`.
pub fn td_targets<T: Real, R: Rng + ?Sized>(
    batch: &Batch<'_, T>,
    critics: &CriticPair<T>,
    policy: &PolicyNet<T>,
    gamma: f64,
    rng: &mut R,
) -> Vec<f64> {
    let next_a = sample_actions(policy, &batch.s_next, rng);
    let q_next = critics.min_target_q(&critic_input(&batch.s_next, &next_a));
    batch
        .items
        .iter()
        .zip(q_next)
        .map(|(t, q)| f64::from(t.r) + if t.done { 0.0 } else { gamma * q })
        .collect()
}

pub fn critic_update<T: Real, R: Rng + ?Sized>(
    batch: &Batch<'_, T>,
    critics: &mut CriticPair<T>,
    policy: &PolicyNet<T>,
    cfg: &AwacConfig,
    rng: &mut R,
) -> f64 {
    let y = td_targets(batch, critics, policy, cfg.gamma, rng);
    let x = critic_input(&batch.s, &batch.actions());
    critics.update(&x, &y, cfg.tau)
}

/// `exp(min(A / lambda, clip))`.
pub fn advantage_weights(advantages: &[f64], lambda: f64, clip: f64) -> Vec<f64> {
    advantages.iter().map(|a| (a / lambda).min(clip).exp()).collect()
}

/// `min Q(s, a) - mean_k min Q(s, a_k)` with `a_k ~ pi(s)`.
pub fn advantages<T: Real, R: Rng + ?Sized>(
    batch: &Batch<'_, T>,
    critics: &CriticPair<T>,
    policy: &PolicyNet<T>,
    samples: usize,
    rng: &mut R,
) -> Vec<f64> {
    let q = critics.min_q(&critic_input(&batch.s, &batch.actions()));
    let mut baseline = vec![0.0; q.len()];
    for _ in 0..samples {
        let a = sample_actions(policy, &batch.s, rng);
        for (b, v) in baseline.iter_mut().zip(critics.min_q(&critic_input(&batch.s, &a))) {
            *b += v / samples as f64;
        }
    }
    q.iter().zip(baseline).map(|(q, b)| q - b).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorStep {
    pub loss: f64,
    pub mean_weight: f64,
}

pub fn actor_update<T: Real, R: Rng + ?Sized>(
    batch: &Batch<'_, T>,
    critics: &CriticPair<T>,
    policy: &mut PolicyNet<T>,
    opt: &mut Adam<T>,
    cfg: &AwacConfig,
    rng: &mut R,
) -> ActorStep {
    let adv = advantages(batch, critics, policy, cfg.action_samples, rng);
    let w = advantage_weights(&adv, cfg.lambda, cfg.max_weight_exponent);
    let (loss, grads) = policy.weighted_nll_std(batch.s.clone(), &batch.actions(), &w);
    opt.step(&mut policy.net, &grads);
    ActorStep {
        loss,
        mean_weight: w.iter().sum::<f64>() / w.len() as f64,
    }
}

/// Undiscounted return of `policy` replaying recorded states against the chart.
pub fn simulate_song<T: Real>(policy: &PolicyNet<T>, states: &[FeatureState], chart: &NoteChart) -> Result<i64> {
    if states.len() != EPISODE_TICKS {
        return Err(Error::LengthMismatch(states.len(), EPISODE_TICKS));
    }
    let ideal = chart.ideal_sequence();
    let preds = policy.predict_batch(states);
    crate::game::episode_return(&preds, &ideal)
}

fn simulated_return_std<T: Real>(policy: &PolicyNet<T>, states_std: &Array2<T>, ideal: &[MovementVector]) -> i64 {
    let z = policy.net.forward(states_std);
    z.rows()
        .into_iter()
        .zip(ideal)
        .map(|(row, &want)| {
            let a = MovementVector(std::array::from_fn(|j| u8::from(row[j] > T::zero())));
            i64::from(reward(a, want))
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub td_loss: f64,
    pub actor_loss: Option<f64>,
    pub mean_weight: Option<f64>,
    pub simulated_return: Option<i64>,
}

pub fn write_train_log<W: Write>(mut w: W, rows: &[TrainLogRow]) -> Result<()> {
    writeln!(w, "step,td_loss,actor_loss,mean_weight,simulated_return")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step,
            r.td_loss,
            opt(r.actor_loss),
            opt(r.mean_weight),
            r.simulated_return.map_or(String::new(), |x| x.to_string())
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome<T = f32> {
    pub policy: PolicyNet<T>,
    pub best_step: usize,
    /// Simulated return summed over all recorded episodes.
    pub best_return: i64,
    pub start_return: i64,
    pub evaluations: Vec<(usize, i64)>,
    pub log: Vec<TrainLogRow>,
}

/// One repetition of fine-tuning. Critics persist across repetitions; the actor
/// optimizer starts fresh. Snapshot 0 (the incoming policy) takes part in the
/// selection, so the selected return never falls below the starting one.
pub fn finetune_repetition<T: Real, R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    start: &PolicyNet<T>,
    critics: &mut CriticPair<T>,
    cfg: &AwacConfig,
    rng: &mut R,
) -> Result<FinetuneOutcome<T>> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(Error::Empty("replay buffer"));
    }
    let std_buf = StandardizedBuffer::<T>::new(buffer, &start.standardizer);
    let ideal: Vec<MovementVector> = buffer.transitions.iter().map(|t| t.ideal).collect();
    let evaluate = |p: &PolicyNet<T>| simulated_return_std(p, &std_buf.states, &ideal);

    let mut policy = start.clone();
    let mut opt = Adam::new(&policy.net, cfg.policy_lr, cfg.policy_weight_decay);
    let start_return = evaluate(&policy);
    let mut best = (0usize, start_return, policy.net.clone());
    let mut evaluations = vec![(0, start_return)];
    let mut log = Vec::with_capacity(cfg.grad_steps);
    let n = buffer.len();

    for step in 1..=cfg.grad_steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..n)).collect();
        let batch = Batch::gather(buffer, &std_buf, &idx);
        let td_loss = critic_update(&batch, critics, &policy, cfg, rng);
        let actor = (step % cfg.actor_interval == 0)
            .then(|| actor_update(&batch, critics, &mut policy, &mut opt, cfg, rng));
        let simulated = (step % cfg.eval_interval == 0).then(|| {
            let g = evaluate(&policy);
            evaluations.push((step, g));
            if g > best.1 {
                best = (step, g, policy.net.clone());
            }
            g
        });
        log.push(TrainLogRow {
            step,
            td_loss,
            actor_loss: actor.map(|a| a.loss),
            mean_weight: actor.map(|a| a.mean_weight),
            simulated_return: simulated,
        });
    }
    policy.net = best.2;
    Ok(FinetuneOutcome {
        policy,
        best_step: best.0,
        best_return: best.1,
        start_return,
        evaluations,
        log,
    })
}
