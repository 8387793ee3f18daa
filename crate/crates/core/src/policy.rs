//! The actor: a 32 -> 6x128 -> 7 ReLU network with sigmoid outputs, trained
//! first by supervised RMSE regression and later by weighted log-likelihood.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::f1_macro;
use crate::movements::{MovementVector, NUM_BITS};
use crate::nn::{sigmoid, Adam, Grads, Mlp, Real, Trace};
use crate::sigproc::{FeatureState, STATE_DIM};

pub const HIDDEN_LAYERS: usize = 6;
pub const HIDDEN_UNITS: usize = 128;
pub const STD_FLOOR: f64 = 1e-8;
pub const PROB_CLAMP: f64 = 1e-6;
pub const CHECKPOINT_SCHEMA: &str = "myoloop.policy/1";
pub const DATASET_SCHEMA: &str = "myoloop.dataset/1";

pub fn policy_sizes() -> Vec<usize> {
    let mut s = vec![STATE_DIM];
    s.extend(std::iter::repeat_n(HIDDEN_UNITS, HIDDEN_LAYERS));
    s.push(NUM_BITS);
    s
}

/// Per-feature z-scoring fitted once on the pretraining data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; STATE_DIM],
            std: vec![1.0; STATE_DIM],
        }
    }

    pub fn fit(states: &[FeatureState]) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Empty("standardizer fit"));
        }
        let n = states.len() as f64;
        let mut mean = vec![0.0; STATE_DIM];
        for s in states {
            for (m, v) in mean.iter_mut().zip(s.as_slice()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; STATE_DIM];
        for s in states {
            for ((acc, v), m) in var.iter_mut().zip(s.as_slice()).zip(&mean) {
                *acc += (v - m).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != STATE_DIM {
            return Err(Error::Dimension {
                expected: STATE_DIM,
                found: s.len(),
            });
        }
        Ok(s.iter().zip(&self.mean).zip(&self.std).map(|((v, m), sd)| (v - m) / sd).collect())
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((v, m), sd)| v * sd + m).collect()
    }

    /// Standardized batch, one row per state.
    pub fn batch<T: Real>(&self, states: &[FeatureState]) -> Array2<T> {
        Array2::from_shape_fn((states.len(), STATE_DIM), |(i, j)| {
            T::lit((states[i].0[j] - self.mean[j]) / self.std[j])
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet<T = f32> {
    pub net: Mlp<T>,
    pub standardizer: Standardizer,
    pub seed: u64,
}

impl<T: Real> PolicyNet<T> {
    pub fn new(standardizer: Standardizer, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            net: Mlp::new(&policy_sizes(), &mut rng),
            standardizer,
            seed,
        }
    }

    pub fn logits(&self, states: &[FeatureState]) -> Array2<T> {
        self.net.forward(&self.standardizer.batch(states))
    }

    pub fn probs_batch(&self, states: &[FeatureState]) -> Array2<T> {
        self.logits(states).mapv(sigmoid)
    }

    /// Output probabilities for a raw 32-feature vector.
    pub fn forward(&self, s: &[f64]) -> Result<[f64; NUM_BITS]> {
        let z = self.standardizer.apply(s)?;
        let x = Array2::from_shape_fn((1, STATE_DIM), |(_, j)| T::lit(z[j]));
        let out = self.net.forward(&x);
        Ok(std::array::from_fn(|j| sigmoid(out[[0, j]]).f64()))
    }

    pub fn predict(&self, s: &FeatureState) -> MovementVector {
        self.predict_batch(std::slice::from_ref(s))[0]
    }

    /// Thresholds each output at 0.5; an exact 0.5 rounds down.
    pub fn predict_batch(&self, states: &[FeatureState]) -> Vec<MovementVector> {
        let z = self.logits(states);
        z.rows()
            .into_iter()
            .map(|row| MovementVector(std::array::from_fn(|j| u8::from(row[j] > T::zero()))))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &FeatureState, rng: &mut R) -> MovementVector {
        self.sample_batch(std::slice::from_ref(s), rng)[0]
    }

    /// Independent Bernoulli draw per output bit.
    pub fn sample_batch<R: Rng + ?Sized>(&self, states: &[FeatureState], rng: &mut R) -> Vec<MovementVector> {
        let p = self.probs_batch(states);
        p.rows()
            .into_iter()
            .map(|row| MovementVector(std::array::from_fn(|j| u8::from(rng.random::<f64>() < row[j].f64()))))
            .collect()
    }

    pub fn log_prob(&self, s: &FeatureState, a: MovementVector) -> f64 {
        self.log_prob_batch(std::slice::from_ref(s), &[a])[0]
    }

    pub fn log_prob_batch(&self, states: &[FeatureState], actions: &[MovementVector]) -> Vec<f64> {
        let p = self.probs_batch(states);
        p.rows()
            .into_iter()
            .zip(actions)
            .map(|(row, a)| bernoulli_log_prob(row.iter().map(|v| v.f64()), a))
            .collect()
    }

    /// `sqrt(mean((sigmoid(z) - y)^2))` over the batch and all outputs, with its gradient.
    pub fn rmse_loss(&self, states: &[FeatureState], targets: &[MovementVector]) -> Result<(f64, Grads<T>)> {
        if states.is_empty() {
            return Err(Error::Empty("rmse batch"));
        }
        if states.len() != targets.len() {
            return Err(Error::LengthMismatch(states.len(), targets.len()));
        }
        let trace = self.net.forward_trace(self.standardizer.batch(states));
        Ok(self.rmse_from_trace(&trace, targets))
    }

    fn rmse_from_trace(&self, trace: &Trace<T>, targets: &[MovementVector]) -> (f64, Grads<T>) {
        let z = trace.output();
        let count = (targets.len() * NUM_BITS) as f64;
        let mut sq = 0.0;
        let mut resid = Array2::<f64>::zeros(z.raw_dim());
        for ((i, j), zij) in z.indexed_iter() {
            let p = sigmoid(zij.f64());
            let e = p - f64::from(targets[i].0[j]);
            sq += e * e;
            resid[[i, j]] = e * p * (1.0 - p);
        }
        let loss = (sq / count).sqrt();
        let scale = if loss > 0.0 { 1.0 / (count * loss) } else { 0.0 };
        let grad_out = resid.mapv(|v| T::lit(v * scale));
        (loss, self.net.backward(trace, grad_out))
    }

    /// `-mean(w_i * log pi(a_i | s_i))` and its gradient.
    pub fn weighted_nll(
        &self,
        states: &[FeatureState],
        actions: &[MovementVector],
        weights: &[f64],
    ) -> Result<(f64, Grads<T>)> {
        if states.is_empty() {
            return Err(Error::Empty("actor batch"));
        }
        if states.len() != actions.len() || states.len() != weights.len() {
            return Err(Error::LengthMismatch(states.len(), actions.len().min(weights.len())));
        }
        Ok(self.weighted_nll_std(self.standardizer.batch(states), actions, weights))
    }

    /// `weighted_nll` on an already standardized batch.
    pub fn weighted_nll_std(&self, x: Array2<T>, actions: &[MovementVector], weights: &[f64]) -> (f64, Grads<T>) {
        let trace = self.net.forward_trace(x);
        let z = trace.output();
        let b = actions.len() as f64;
        let mut loss = 0.0;
        let mut grad = Array2::<T>::zeros(z.raw_dim());
        for (i, row) in z.rows().into_iter().enumerate() {
            let w = weights[i];
            for (j, zij) in row.iter().enumerate() {
                let p = sigmoid(zij.f64());
                let a = f64::from(actions[i].0[j]);
                let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                loss -= w * (a * pc.ln() + (1.0 - a) * (1.0 - pc).ln()) / b;
                if pc == p {
                    grad[[i, j]] = T::lit(-w * (a - p) / b);
                }
            }
        }
        (loss, self.net.backward(&trace, grad))
    }

    pub fn cast<U: Real>(&self) -> PolicyNet<U> {
        PolicyNet {
            net: self.net.cast(),
            standardizer: self.standardizer.clone(),
            seed: self.seed,
        }
    }

    /// SHA-256 over parameters and standardizer, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.net.param_bytes());
        for v in self.standardizer.mean.iter().chain(&self.standardizer.std) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn bernoulli_log_prob(p: impl Iterator<Item = f64>, a: &MovementVector) -> f64 {
    p.zip(a.0)
        .map(|(p, bit)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if bit == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub state: FeatureState,
    pub target: MovementVector,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub records: Vec<LabeledRecord>,
}

impl LabeledDataset {
    pub fn split(&self, which: Split) -> (Vec<FeatureState>, Vec<MovementVector>) {
        self.records.iter().filter(|r| r.split == which).map(|r| (r.state, r.target)).unzip()
    }

    pub fn states(&self) -> Vec<FeatureState> {
        self.records.iter().map(|r| r.state).collect()
    }

    pub fn write<W: std::io::Write>(&self, w: W) -> Result<()> {
        crate::io::write_jsonl(w, DATASET_SCHEMA, &self.records)
    }

    pub fn read<R: std::io::BufRead>(r: R) -> Result<Self> {
        Ok(Self {
            records: crate::io::read_jsonl(r, DATASET_SCHEMA)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SlConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SlOutcome<T = f32> {
    pub policy: PolicyNet<T>,
    /// 1-based epoch of the selected snapshot.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub val_f1_history: Vec<f64>,
}

/// Supervised pretraining with Adam on the RMSE loss. Returns the epoch snapshot
/// with the highest validation F1 macro (earliest epoch on ties).
pub fn sl_pretrain<T: Real>(
    data: &LabeledDataset,
    standardizer: Standardizer,
    cfg: &SlConfig,
) -> Result<SlOutcome<T>> {
    let (train_s, train_y) = data.split(Split::Train);
    let (val_s, val_y) = data.split(Split::Val);
    if train_s.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val_s.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    let mut policy = PolicyNet::<T>::new(standardizer, cfg.seed);
    let mut opt = Adam::new(&policy.net, cfg.lr, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..train_s.len()).collect();
    let mut best: Option<(usize, f64, Mlp<T>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let (mut bs, mut by) = (Vec::with_capacity(cfg.batch_size), Vec::with_capacity(cfg.batch_size));

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            bs.clear();
            by.clear();
            bs.extend(chunk.iter().map(|&i| train_s[i]));
            by.extend(chunk.iter().map(|&i| train_y[i]));
            let (_, grads) = policy.rmse_loss(&bs, &by)?;
            opt.step(&mut policy.net, &grads);
        }
        let f1 = f1_macro(&policy.predict_batch(&val_s), &val_y)?.macro_f1;
        history.push(f1);
        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, policy.net.clone()));
        }
    }
    let (best_epoch, best_val_f1, net) = best.expect("at least one epoch");
    policy.net = net;
    Ok(SlOutcome {
        policy,
        best_epoch,
        best_val_f1,
        val_f1_history: history,
    })
}

/// Versioned on-disk form of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub schema: String,
    pub sizes: Vec<usize>,
    pub policy: PolicyNet<f32>,
    /// Repetition that produced the policy; 0 for the pretrained one.
    pub repetition: usize,
    pub hash: String,
}

impl PolicyCheckpoint {
    pub fn new(policy: &PolicyNet<f32>, repetition: usize) -> Self {
        Self {
            schema: CHECKPOINT_SCHEMA.to_string(),
            sizes: policy.net.sizes(),
            policy: policy.clone(),
            repetition,
            hash: policy.hash(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        crate::io::check_schema(CHECKPOINT_SCHEMA, &ck.schema)?;
        if ck.sizes != ck.policy.net.sizes() {
            return Err(Error::Config("checkpoint architecture does not match its parameters".into()));
        }
        if ck.hash != ck.policy.hash() {
            return Err(Error::Config("checkpoint hash mismatch".into()));
        }
        Ok(ck)
    }
}
