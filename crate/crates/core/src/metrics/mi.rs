//! k-nearest-neighbour mutual information between continuous features and a
//! discrete label (Kraskov-style estimator in the Ross formulation).
//!
//! For every sample, `d` is the distance to its k-th nearest neighbour among
//! samples with the same label and `m` the number of samples (any label)
//! strictly closer than `d`, itself included. Then
//! `I = psi(N) + <psi(k)> - <psi(N_label)> - <psi(m)>`, clamped at zero.
//! Labels seen only once are dropped.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;
use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiMode {
    /// Estimate each feature column separately and average.
    #[default]
    PerFeatureMean,
    /// One estimate over the joint feature vector (Chebyshev distance).
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiConfig {
    pub k: usize,
    pub mode: MiMode,
    /// Seed for the tiny tie-breaking jitter added to every feature.
    pub jitter_seed: u64,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            k: 3,
            mode: MiMode::PerFeatureMean,
            jitter_seed: 0,
        }
    }
}

/// Mutual information in nats between feature rows and integer labels.
pub fn mutual_information<L: Ord + Copy>(rows: &[Vec<f64>], labels: &[L], cfg: &MiConfig) -> Result<f64> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch(rows.len(), labels.len()));
    }
    if rows.len() < MIN_SAMPLES {
        return Err(Error::Config(format!(
            "mutual information needs at least {MIN_SAMPLES} samples, got {}",
            rows.len()
        )));
    }
    if cfg.k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let dim = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::Dimension { expected: dim, found: bad.len() });
    }

    // Compact labels to 0..n_classes and drop singleton labels.
    let mut counts: BTreeMap<L, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_default() += 1;
    }
    let keep: Vec<usize> = (0..rows.len()).filter(|&i| counts[&labels[i]] > 1).collect();
    let classes: BTreeMap<L, usize> = counts
        .iter()
        .filter(|(_, &c)| c > 1)
        .enumerate()
        .map(|(i, (l, _))| (*l, i))
        .collect();
    if classes.len() < 2 {
        return Ok(0.0);
    }
    let lab: Vec<usize> = keep.iter().map(|&i| classes[&labels[i]]).collect();

    let columns = prepared_columns(rows, &keep, cfg.jitter_seed);
    let mi = match cfg.mode {
        MiMode::PerFeatureMean => {
            let total: f64 = columns.iter().map(|c| mi_1d(c, &lab, cfg.k)).sum();
            total / dim as f64
        }
        MiMode::Joint => mi_joint(&columns, &lab, cfg.k),
    };
    Ok(mi.max(0.0))
}

/// Scales each column to unit variance and adds 1e-10-relative Gaussian jitter.
fn prepared_columns(rows: &[Vec<f64>], keep: &[usize], seed: u64) -> Vec<Vec<f64>> {
    let dim = rows[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim)
        .map(|j| {
            let mut col: Vec<f64> = keep.iter().map(|&i| rows[i][j]).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 0.0 {
                col.iter_mut().for_each(|v| *v /= sd);
            }
            let amp = 1e-10 * (col.iter().map(|v| v.abs()).sum::<f64>() / n).max(1.0);
            for v in &mut col {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += amp * z;
            }
            col
        })
        .collect()
}

fn prev_float(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        0.0
    }
}

fn class_sizes(lab: &[usize]) -> Vec<usize> {
    let n_classes = lab.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_classes];
    for &l in lab {
        sizes[l] += 1;
    }
    sizes
}

fn combine(n: usize, ks: &[usize], label_sizes: &[usize], ms: &[usize]) -> f64 {
    let mean = |v: &[usize]| v.iter().map(|&x| digamma(x as f64)).sum::<f64>() / v.len() as f64;
    digamma(n as f64) + mean(ks) - mean(label_sizes) - mean(ms)
}

fn mi_1d(x: &[f64], lab: &[usize], k: usize) -> f64 {
    let n = x.len();
    let sizes = class_sizes(lab);
    let mut radius = vec![0.0; n];
    let mut ks = vec![0usize; n];
    for (class, &size) in sizes.iter().enumerate() {
        let mut members: Vec<usize> = (0..n).filter(|&i| lab[i] == class).collect();
        members.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let vals: Vec<f64> = members.iter().map(|&i| x[i]).collect();
        let kk = k.min(size - 1);
        for (pos, &i) in members.iter().enumerate() {
            radius[i] = prev_float(kth_neighbor_sorted(&vals, pos, kk));
            ks[i] = kk;
        }
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let ms: Vec<usize> = (0..n)
        .map(|i| {
            // Compare distances, not shifted bounds: `x - r` can round onto a neighbour.
            let lo = sorted.partition_point(|&v| x[i] - v > radius[i]);
            let hi = sorted.partition_point(|&v| v - x[i] <= radius[i]);
            hi - lo
        })
        .collect();
    let label_sizes: Vec<usize> = lab.iter().map(|&l| sizes[l]).collect();
    combine(n, &ks, &label_sizes, &ms)
}

/// Distance from `vals[pos]` to its k-th nearest neighbour in the sorted slice.
fn kth_neighbor_sorted(vals: &[f64], pos: usize, k: usize) -> f64 {
    let x = vals[pos];
    let (mut left, mut right) = (pos, pos + 1);
    let mut d = 0.0;
    for _ in 0..k {
        let dl = if left > 0 { x - vals[left - 1] } else { f64::INFINITY };
        let dr = if right < vals.len() { vals[right] - x } else { f64::INFINITY };
        if dl <= dr {
            d = dl;
            left -= 1;
        } else {
            d = dr;
            right += 1;
        }
    }
    d
}

fn mi_joint(columns: &[Vec<f64>], lab: &[usize], k: usize) -> f64 {
    let n = lab.len();
    let dim = columns.len();
    let row = |i: usize| -> Vec<f64> { (0..dim).map(|j| columns[j][i]).collect() };
    let pts: Vec<Vec<f64>> = (0..n).map(row).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let sizes = class_sizes(lab);
    let mut ks = vec![0usize; n];
    let mut ms = vec![0usize; n];
    let mut buf = Vec::with_capacity(n);
    let mut all = Vec::with_capacity(n);
    for i in 0..n {
        buf.clear();
        all.clear();
        for j in 0..n {
            let d = dist(&pts[i], &pts[j]);
            all.push(d);
            if j != i && lab[j] == lab[i] {
                buf.push(d);
            }
        }
        let kk = k.min(sizes[lab[i]] - 1);
        buf.select_nth_unstable_by(kk - 1, f64::total_cmp);
        let r = prev_float(buf[kk - 1]);
        ks[i] = kk;
        ms[i] = all.iter().filter(|&&d| d <= r).count();
    }
    let label_sizes: Vec<usize> = lab.iter().map(|&l| sizes[l]).collect();
    combine(n, &ks, &label_sizes, &ms)
}
