//! Evaluation and analysis quantities.

mod mi;
mod psi;
mod wilcoxon;

pub use mi::{mutual_information, MiConfig, MiMode};
pub use psi::{psi, psi_feature, BinningScheme, PsiReport, PSI_FLOOR};
pub use wilcoxon::{wilcoxon_signed_rank, PairedSamples, WilcoxonResult, EXACT_MAX_N, MIN_NONZERO};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::movements::{Decoded, MovementId, MovementVector, NUM_BITS, NUM_MOVEMENTS};
use crate::sigproc::{FeatureState, NUM_CHANNELS};

/// Exact match ratio: fraction of steps where all 7 bits agree.
pub fn emr(preds: &[MovementVector], targets: &[MovementVector]) -> Result<f64> {
    check_lengths(preds, targets)?;
    let hits = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

fn check_lengths<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Empty("prediction sequence"));
    }
    Ok(())
}

/// Which label basis F1 is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Basis {
    /// One binary class per label bit (multi-label convention).
    #[default]
    Bits,
    /// One class per canonical movement id.
    Movements,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    /// `None` for classes absent from both predictions and targets.
    pub per_class: Vec<Option<f64>>,
    pub included: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Confusion {
    fn f1(&self) -> Option<f64> {
        let denom = self.tp as f64 + 0.5 * (self.fp + self.fn_) as f64;
        (denom > 0.0).then(|| self.tp as f64 / denom)
    }
}

pub fn f1_macro(preds: &[MovementVector], targets: &[MovementVector]) -> Result<F1Report> {
    f1_macro_with(preds, targets, F1Basis::Bits)
}

pub fn f1_macro_with(
    preds: &[MovementVector],
    targets: &[MovementVector],
    basis: F1Basis,
) -> Result<F1Report> {
    check_lengths(preds, targets)?;
    let classes = match basis {
        F1Basis::Bits => NUM_BITS,
        F1Basis::Movements => NUM_MOVEMENTS,
    };
    let mut conf = vec![Confusion::default(); classes];
    for (p, t) in preds.iter().zip(targets) {
        match basis {
            F1Basis::Bits => {
                for (c, (&pb, &tb)) in conf.iter_mut().zip(p.0.iter().zip(t.0.iter())) {
                    match (pb != 0, tb != 0) {
                        (true, true) => c.tp += 1,
                        (true, false) => c.fp += 1,
                        (false, true) => c.fn_ += 1,
                        (false, false) => {}
                    }
                }
            }
            F1Basis::Movements => {
                let pc = match p.decode() {
                    Decoded::Canonical(id) => Some(id.index()),
                    Decoded::NonCanonical { .. } => None,
                };
                let tc = match t.decode() {
                    Decoded::Canonical(id) => Some(id.index()),
                    Decoded::NonCanonical { .. } => None,
                };
                if let (Some(i), true) = (pc, pc == tc) {
                    conf[i].tp += 1;
                } else {
                    if let Some(i) = pc {
                        conf[i].fp += 1;
                    }
                    if let Some(i) = tc {
                        conf[i].fn_ += 1;
                    }
                }
            }
        }
    }
    let per_class: Vec<Option<f64>> = conf.iter().map(Confusion::f1).collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_f1 = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(F1Report {
        macro_f1,
        included: defined.len(),
        per_class,
    })
}

/// Number of steps whose action differs from the previous step's.
pub fn action_changes(seq: &[MovementVector]) -> usize {
    seq.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Fraction of steps where one bit agrees.
pub fn bit_accuracy(preds: &[MovementVector], targets: &[MovementVector], bit: usize) -> Result<f64> {
    check_lengths(preds, targets)?;
    let hits = preds
        .iter()
        .zip(targets)
        .filter(|(p, t)| p.0[bit] == t.0[bit])
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    /// `(movement, dB)` for every non-rest movement present in the data.
    pub per_movement: Vec<(MovementId, f64)>,
    /// Maximum over movements.
    pub subject_db: f64,
}

/// SNR of one movement: best channel of `10 log10(MAV_m / MAV_rest)`.
pub fn snr_movement(mav: &[f64; NUM_CHANNELS], rest_mav: &[f64; NUM_CHANNELS]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for ch in 0..NUM_CHANNELS {
        if rest_mav[ch] <= 0.0 {
            return Err(Error::ZeroRestMav(ch));
        }
        best = best.max(10.0 * (mav[ch] / rest_mav[ch]).log10());
    }
    Ok(best)
}

/// Per-movement and subject SNR from labelled feature states (mean MAV per channel).
pub fn snr(states: &[FeatureState], labels: &[MovementId]) -> Result<SnrReport> {
    check_lengths(states, labels)?;
    let mut sums = [[0.0; NUM_CHANNELS]; NUM_MOVEMENTS];
    let mut counts = [0usize; NUM_MOVEMENTS];
    for (s, l) in states.iter().zip(labels) {
        counts[l.index()] += 1;
        for (ch, acc) in sums[l.index()].iter_mut().enumerate() {
            *acc += s.mav(ch);
        }
    }
    if counts[0] == 0 {
        return Err(Error::Empty("rest samples"));
    }
    let mean = |i: usize| sums[i].map(|v| v / counts[i] as f64);
    let rest = mean(0);
    let mut per_movement = Vec::new();
    for id in MovementId::active() {
        if counts[id.index()] > 0 {
            per_movement.push((id, snr_movement(&mean(id.index()), &rest)?));
        }
    }
    if per_movement.is_empty() {
        return Err(Error::Empty("movement samples"));
    }
    let subject_db = per_movement
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SnrReport {
        per_movement,
        subject_db,
    })
}

/// Z-scores a session trace of MAV means against the pretraining segment's mean and std.
pub fn normalize_mav_trace(pretraining: &[f64], session: &[f64]) -> Result<Vec<f64>> {
    if pretraining.is_empty() {
        return Err(Error::Empty("pretraining segment"));
    }
    let n = pretraining.len() as f64;
    let mean = pretraining.iter().sum::<f64>() / n;
    let var = pretraining.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::ZeroVariance("pretraining MAV trace"));
    }
    let sd = var.sqrt();
    Ok(session.iter().map(|v| (v - mean) / sd).collect())
}

/// Mean MAV over channels of each state.
pub fn mean_mav(states: &[FeatureState]) -> Vec<f64> {
    states
        .iter()
        .map(|s| (0..NUM_CHANNELS).map(|c| s.mav(c)).sum::<f64>() / NUM_CHANNELS as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(i: usize) -> MovementVector {
        MovementId::new(i).unwrap().encode()
    }

    #[test]
    fn emr_examples() {
        let a = [m(1), m(0), m(2)];
        assert_eq!(emr(&a, &a).unwrap(), 1.0);
        let t = [m(1), m(0), m(3)];
        assert!((emr(&a, &t).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // 5 of 7 bits agree: still a miss
        let p = MovementVector([1, 1, 0, 1, 0, 0, 0]);
        assert_eq!(emr(&[p], &[m(8)]).unwrap(), 0.0);
        assert!(emr(&[], &[]).is_err());
        assert!(emr(&[m(0)], &[]).is_err());
    }

    #[test]
    fn f1_examples() {
        let all: Vec<_> = (0..13).map(m).collect();
        assert_eq!(f1_macro(&all, &all).unwrap().macro_f1, 1.0);

        let preds = vec![m(0); 10];
        let mut targets = vec![m(1); 5];
        targets.extend(vec![m(0); 5]);
        let r = f1_macro(&preds, &targets).unwrap();
        assert!((r.per_class[6].unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[0], Some(0.0));
        assert_eq!(r.included, 2);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        for bit in 1..6 {
            assert_eq!(r.per_class[bit], None);
        }

        // single class, predictions inverted
        let targets = [m(1), MovementVector([0; 7]), m(1)];
        let preds = [MovementVector([0; 7]), m(1), MovementVector([0; 7])];
        assert_eq!(f1_macro(&preds, &targets).unwrap().macro_f1, 0.0);
    }

    #[test]
    fn f1_movement_basis() {
        let preds = [m(8), m(8), m(0)];
        let targets = [m(8), m(0), m(0)];
        let r = f1_macro_with(&preds, &targets, F1Basis::Movements).unwrap();
        assert_eq!(r.included, 2);
        // class 8: tp 1 fp 1 -> 2/3; class 0: tp 1 fn 1 -> 2/3
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn action_change_examples() {
        assert_eq!(action_changes(&[m(3); 10]), 0);
        assert_eq!(action_changes(&[m(1), m(2), m(1), m(2), m(1)]), 4);
        assert_eq!(action_changes(&[m(1)]), 0);
    }

    #[test]
    fn snr_examples() {
        let rest = [1.0; 8];
        let mut strong = [1.0; 8];
        strong[3] = 10.0;
        assert!((snr_movement(&strong, &rest).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(snr_movement(&rest, &rest).unwrap(), 0.0);
        assert!(snr_movement(&[0.5; 8], &rest).unwrap() < 0.0);
        let mut zero = rest;
        zero[4] = 0.0;
        assert!(matches!(snr_movement(&strong, &zero), Err(Error::ZeroRestMav(4))));
    }

    #[test]
    fn snr_from_states() {
        let mut rest = FeatureState::default();
        let mut active = FeatureState::default();
        for ch in 0..8 {
            rest.0[ch * 4] = 0.1;
            active.0[ch * 4] = 0.1;
        }
        active.0[0] = 1.0;
        let labels = [MovementId::REST, MovementId::new(1).unwrap()];
        let r = snr(&[rest, active], &labels).unwrap();
        assert_eq!(r.per_movement.len(), 1);
        assert!((r.subject_db - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mav_trace_normalization() {
        let pre = [1.0, 2.0, 3.0, 4.0];
        let z = normalize_mav_trace(&pre, &pre).unwrap();
        let mean = z.iter().sum::<f64>() / 4.0;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert_eq!(normalize_mav_trace(&pre, &[2.5, 2.5]).unwrap(), vec![0.0, 0.0]);
        let sd = 1.25f64.sqrt();
        let z = normalize_mav_trace(&pre, &[2.5 + 2.0 * sd]).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-12);
        assert!(matches!(
            normalize_mav_trace(&[3.0, 3.0], &[1.0]),
            Err(Error::ZeroVariance(_))
        ));
    }

    fn any_vector() -> impl Strategy<Value = MovementVector> {
        (0u8..128).prop_map(MovementVector::from_code)
    }

    proptest! {
        #[test]
        fn emr_bounded_by_bit_accuracy(
            pairs in prop::collection::vec((any_vector(), any_vector()), 1..60)
        ) {
            let (p, t): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let e = emr(&p, &t).unwrap();
            for bit in 0..NUM_BITS {
                prop_assert!(e <= bit_accuracy(&p, &t, bit).unwrap());
            }
        }

        #[test]
        fn f1_bounded_and_order_free(
            pairs in prop::collection::vec((any_vector(), any_vector()), 1..60),
            seed in 0u64..1000,
        ) {
            let (p, t): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let r = f1_macro(&p, &t).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.macro_f1));
            for c in r.per_class.iter().flatten() {
                prop_assert!((0.0..=1.0).contains(c));
            }
            let mut shuffled = pairs.clone();
            let n = shuffled.len();
            for i in 0..n {
                shuffled.swap(i, (seed as usize * 31 + i * 17) % n);
            }
            let (p2, t2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            let r2 = f1_macro(&p2, &t2).unwrap();
            prop_assert!((r.macro_f1 - r2.macro_f1).abs() < 1e-12);
        }
    }
}
