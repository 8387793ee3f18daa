//! Population stability index with median-anchored binning.
//!
//! Cuts for a base sample `P` sit at `median + j * std / 3` for `j = -3..=3`
//! (four bins per side), with extra lowest/highest bins below `min(P)` and above
//! `max(P)` that only ever collect target values outside the base support.
//! Those edge bins are dropped when both samples leave them empty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Proportion floor that keeps `ln(P/Q)` finite.
pub const PSI_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningScheme {
    /// Strictly increasing interior cut points. Value `x` falls in bin `i` when
    /// `cuts[i-1] <= x < cuts[i]`, with open-ended first and last bins.
    pub cuts: Vec<f64>,
    /// Indices of the outer bins lying entirely outside the base sample range.
    below_min: Option<usize>,
    above_max: Option<usize>,
}

impl BinningScheme {
    pub fn from_base(p: &[f64]) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Empty("PSI base sample"));
        }
        let mut sorted = p.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let (min, max) = (sorted[0], sorted[n - 1]);

        let mut core: Vec<f64> = (-3..=3).map(|j| median + f64::from(j) * sd / 3.0).collect();
        core.dedup();
        let mut cuts = Vec::with_capacity(core.len() + 2);
        let mut below_min = None;
        if min < core[0] {
            cuts.push(min);
            below_min = Some(0);
        }
        cuts.extend(core.iter().copied());
        let mut above_max = None;
        // max(P) belongs to the last in-range bin, so the outer cut sits just above it.
        let upper = next_up(max);
        if upper > *cuts.last().unwrap() {
            cuts.push(upper);
            above_max = Some(cuts.len());
        }
        Ok(Self { cuts, below_min, above_max })
    }

    pub fn num_bins(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn bin_of(&self, x: f64) -> usize {
        self.cuts.partition_point(|&c| c <= x)
    }

    pub fn proportions(&self, sample: &[f64]) -> Vec<f64> {
        let mut counts = vec![0usize; self.num_bins()];
        for &x in sample {
            counts[self.bin_of(x)] += 1;
        }
        let n = sample.len() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    fn is_edge(&self, bin: usize) -> bool {
        Some(bin) == self.below_min || Some(bin) == self.above_max
    }
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// PSI of one feature plus the number of bins it was computed over.
pub fn psi_feature(p: &[f64], q: &[f64]) -> Result<(f64, usize)> {
    if q.is_empty() {
        return Err(Error::Empty("PSI target sample"));
    }
    let scheme = BinningScheme::from_base(p)?;
    let pp = scheme.proportions(p);
    let qq = scheme.proportions(q);
    let mut total = 0.0;
    let mut bins = 0;
    for (i, (&a, &b)) in pp.iter().zip(&qq).enumerate() {
        if scheme.is_edge(i) && a == 0.0 && b == 0.0 {
            continue;
        }
        bins += 1;
        let (a, b) = (a.max(PSI_FLOOR), b.max(PSI_FLOOR));
        total += (a - b) * (a / b).ln();
    }
    Ok((total, bins))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiReport {
    pub per_feature: Vec<f64>,
    pub mean: f64,
}

/// Per-feature PSI between two samples of feature rows, and its mean.
pub fn psi(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<PsiReport> {
    if p.is_empty() {
        return Err(Error::Empty("PSI base sample"));
    }
    if q.is_empty() {
        return Err(Error::Empty("PSI target sample"));
    }
    let dim = p[0].len();
    let mut per_feature = Vec::with_capacity(dim);
    for j in 0..dim {
        let a: Vec<f64> = p.iter().map(|r| r[j]).collect();
        let b: Vec<f64> = q.iter().map(|r| r[j]).collect();
        per_feature.push(psi_feature(&a, &b)?.0);
    }
    let mean = per_feature.iter().sum::<f64>() / dim as f64;
    Ok(PsiReport { per_feature, mean })
}
