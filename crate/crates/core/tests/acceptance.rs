//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints its one-line verdict with measured values. Arguments that do not
//! start with `-` filter criteria by name.
//!
//! Criteria 5-7 run the full protocol over held-out seed batches and take
//! about 20 minutes on one core.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use myoloop::awac::{AwacConfig, CriticPair};
use myoloop::experiment::{run_batch, run_full_experiment, BatchReport, ExperimentConfig};
use myoloop::game::{build_chart, episode_return, normalized_return, EPISODE_TICKS, NUM_NOTES};
use myoloop::metrics::{action_changes, mutual_information, psi, wilcoxon_signed_rank, MiConfig, MiMode, PairedSamples, MIN_NONZERO};
use myoloop::movements::MovementVector;
use myoloop::nn::{Grads, Mlp};
use myoloop::policy::{PolicyNet, Standardizer};
use myoloop::sigproc::{
    channel_features, slide_windows, FilterChain, RawEmgFrame, FeatureState, NUM_CHANNELS, SAMPLE_RATE_HZ, STATE_DIM,
};
use myoloop::subject::SubjectParams;

/// Seeds never used while calibrating the subject presets.
const HELD_OUT_SEEDS: std::ops::Range<u64> = 100..110;
const TREND_THRESHOLD: f64 = 0.15;

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {id:>2} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} ({name}) failed");
}

fn criterion_01_reward_return_exactness() {
    let t = Instant::now();
    let mut ok = true;
    let mut rest_norm = Vec::new();
    for seed in 0..20 {
        let ideal = build_chart(seed).unwrap().ideal_sequence();
        let oracle = episode_return(&ideal, &ideal).unwrap();
        let wrong = episode_return(&vec![MovementVector([1; 7]); EPISODE_TICKS], &ideal).unwrap();
        let rest = episode_return(&vec![MovementVector::REST; EPISODE_TICKS], &ideal).unwrap();
        ok &= oracle == 1200 && normalized_return(oracle).unwrap() == 1.0;
        ok &= wrong == -2740 && normalized_return(wrong).unwrap() == 0.0;
        ok &= rest == -1200;
        rest_norm.push(normalized_return(rest).unwrap());
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        1,
        "reward/return exactness",
        ok && rest_norm.iter().all(|v| (v - 1540.0 / 3940.0).abs() < 1e-9 && (v * 1e5).round() / 1e5 == 0.39086) && secs < 1.0,
        format!("oracle 1200 -> 1.0, wrong -2740 -> 0.0, rest -1200 -> {:.9} in {secs:.3}s", normalized_return(-1200).unwrap()),
    );
}

fn criterion_02_chart_structure() {
    let t = Instant::now();
    let mut ok = true;
    for seed in 0..100 {
        let chart = build_chart(seed).unwrap();
        ok &= chart.notes.len() == NUM_NOTES;
        ok &= (chart.note_time_s() - 60.0).abs() < 1e-9;
        ok &= chart.episode_ticks() == EPISODE_TICKS && EPISODE_TICKS == 2740;
        ok &= action_changes(&chart.ideal_sequence()) == 96;
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(2, "chart structure", ok && secs < 1.0, format!("100 seeds: 48 notes, 60 s, 2740 ticks, 96 changes in {secs:.3}s"));
}

fn random_states(n: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureState> {
    (0..n).map(|_| FeatureState(std::array::from_fn(|_| StandardNormal.sample(rng)))).collect()
}

fn random_actions(n: usize, rng: &mut ChaCha8Rng) -> Vec<MovementVector> {
    (0..n).map(|_| MovementVector::from_code(rng.random_range(0..128))).collect()
}

/// Largest relative error between analytic and central-difference gradients
/// over `probes` random parameters.
fn probe(net: &Mlp<f64>, grads: &Grads<f64>, loss: impl Fn(&Mlp<f64>) -> f64, probes: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = net.clone();
    let h = 1e-6;
    let (mut worst, mut used): (f64, usize) = (0.0, 0);
    while used < probes {
        let i = rng.random_range(0..q.num_params());
        let orig = q.param(i);
        q.set_param(i, orig + h);
        let up = loss(&q);
        q.set_param(i, orig - h);
        let dn = loss(&q);
        q.set_param(i, orig);
        let fd = (up - dn) / (2.0 * h);
        let an = Mlp::grad_at(grads, i, net);
        if fd.abs() < 1e-8 && an.abs() < 1e-8 {
            continue;
        }
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()));
        used += 1;
    }
    (worst, used)
}

fn criterion_03_gradient_suites() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let states = random_states(24, &mut rng);
    let targets = random_actions(24, &mut rng);
    let weights: Vec<f64> = (0..24).map(|_| rng.random_range(0.1..3.0)).collect();
    let st = Standardizer::fit(&random_states(64, &mut rng)).unwrap();
    let policy = PolicyNet::<f64>::new(st, 31);

    let with_net = |net: &Mlp<f64>| {
        let mut p = policy.clone();
        p.net = net.clone();
        p
    };
    let (_, g) = policy.rmse_loss(&states, &targets).unwrap();
    let rmse = probe(&policy.net, &g, |n| with_net(n).rmse_loss(&states, &targets).unwrap().0, 60, 1);
    let (_, g) = policy.weighted_nll(&states, &targets, &weights).unwrap();
    let nll = probe(&policy.net, &g, |n| with_net(n).weighted_nll(&states, &targets, &weights).unwrap().0, 60, 2);

    let critics = CriticPair::<f64>::new(&AwacConfig::default(), 5);
    let x = Array2::from_shape_fn((24, 39), |_| StandardNormal.sample(&mut rng));
    let y: Vec<f64> = (0..24).map(|_| rng.random_range(-3.0..3.0)).collect();
    let (_, g) = critics.td_loss(0, &x, &y);
    let td = probe(&critics.online[0], &g, |n| {
        let mut c = critics.clone();
        c.online[0] = n.clone();
        c.td_loss(0, &x, &y).0
    }, 60, 3);

    let secs = t.elapsed().as_secs_f64();
    let worst = rmse.0.max(nll.0).max(td.0);
    verdict(
        3,
        "gradient suites",
        worst < 1e-3 && rmse.1 >= 50 && nll.1 >= 50 && td.1 >= 50 && secs < 30.0,
        format!("max rel err rmse {:.2e}, log-prob {:.2e}, td {:.2e} over 60 probes each in {secs:.1}s", rmse.0, nll.0, td.0),
    );
}

fn criterion_04_log_prob_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let st = Standardizer::fit(&random_states(64, &mut rng)).unwrap();
    let policy = PolicyNet::<f64>::new(st, 41);
    let mut worst: f64 = 0.0;
    for s in random_states(100, &mut rng) {
        let total: f64 = (0..128u8).map(|k| policy.log_prob(&s, MovementVector::from_code(k)).exp()).sum();
        worst = worst.max((total - 1.0).abs());
    }
    verdict(4, "log-prob normalization", worst <= 1e-9, format!("max |sum - 1| = {worst:.2e} over 100 states"));
}

fn batch(subject: fn(u64) -> SubjectParams) -> BatchReport {
    let cfg = ExperimentConfig::desk(subject(0));
    let seeds: Vec<u64> = HELD_OUT_SEEDS.collect();
    run_batch(&cfg, &seeds, |s| {
        println!(
            "  seed {:>3}: mi {:.3} closing(p0) {:.3} trained(p8) {:.3} improvement {:+.3} emr {:.3} -> {:.3}",
            s.seed,
            s.mi.unwrap_or(f64::NAN),
            s.closing_return,
            s.trained_return,
            s.improvement,
            s.emr_p0,
            s.emr_trained
        )
    })
    .unwrap()
}

fn calibrated_batch() -> &'static BatchReport {
    static CELL: OnceLock<BatchReport> = OnceLock::new();
    CELL.get_or_init(|| batch(SubjectParams::calibrated))
}

fn criterion_05_end_to_end_trend() {
    let t = Instant::now();
    let b = calibrated_batch();
    let mi = b.mean_mi.unwrap_or(f64::NAN);
    let w = b.wilcoxon_return.as_ref();
    let pass = (mi - 0.5).abs() <= 0.1
        && b.seeds.len() >= 10
        && b.mean_improvement >= TREND_THRESHOLD
        && b.mean_emr_trained > b.mean_emr_p0
        && w.is_some_and(|w| w.significant && w.w_plus > w.statistic);
    verdict(
        5,
        "end-to-end trend",
        pass,
        format!(
            "{} seeds, MI {mi:.3}, return p0(rep 9) {:.3} -> p8(rep 8) {:.3} (+{:.3}), EMR {:.3} -> {:.3}, wilcoxon p {:.2e}, {:.0}s",
            b.seeds.len(),
            b.mean_closing_return,
            b.mean_trained_return,
            b.mean_improvement,
            b.mean_emr_p0,
            b.mean_emr_trained,
            w.map_or(f64::NAN, |w| w.p_value),
            t.elapsed().as_secs_f64()
        ),
    );
}

fn criterion_06_low_mi_degradation() {
    let b = batch(SubjectParams::inconsistent);
    let mi = b.mean_mi.unwrap_or(f64::NAN);
    let below = b.seeds.iter().filter(|s| s.improvement < TREND_THRESHOLD).count();
    verdict(
        6,
        "low-MI degradation",
        mi < 0.25 && 2 * below > b.seeds.len(),
        format!(
            "MI {mi:.3}, improvement below {TREND_THRESHOLD} in {below}/{} seeds (mean {:+.3})",
            b.seeds.len(),
            b.mean_improvement
        ),
    );
}

fn criterion_07_stability_trend() {
    let b = calibrated_batch();
    verdict(
        7,
        "stability trend",
        b.mean_changes_trained < b.mean_changes_p0,
        format!("mean action changes p0 {:.1} -> p8 {:.1}", b.mean_changes_p0, b.mean_changes_trained),
    );
}

/// Exact two-sided p by enumerating all sign assignments of ranks 1..=n.
fn enumerated_p(signs: &[bool]) -> f64 {
    let n = signs.len();
    let w_plus: usize = signs.iter().enumerate().filter(|(_, s)| **s).map(|(i, _)| i + 1).sum();
    let total = n * (n + 1) / 2;
    let observed = w_plus.min(total - w_plus);
    let le = (0u32..1 << n)
        .filter(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).sum::<usize>() <= observed)
        .count();
    (2.0 * le as f64 / (1u64 << n) as f64).min(1.0)
}

fn criterion_08_estimator_validation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels: Vec<u8> = (0..2000).map(|i| (i % 4) as u8).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| (0..4).map(|j| f64::from(u8::from(j == l)) + 1e-3 * rng.random::<f64>()).collect())
        .collect();
    let mi = mutual_information(&rows, &labels, &MiConfig { mode: MiMode::Joint, ..Default::default() }).unwrap();
    let mi_ok = (mi - 4f64.ln()).abs() < 0.1;

    let p: Vec<Vec<f64>> = (0..50_000).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
    let same = psi(&p, &p).unwrap().mean;

    let mut worst: f64 = 0.0;
    let short = PairedSamples::new(vec![0.0; 4], vec![1.0; 4]).unwrap();
    let rejects_short = wilcoxon_signed_rank(&short).is_err();
    for n in MIN_NONZERO..=12 {
        for _ in 0..20 {
            let signs: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let d: Vec<f64> = signs.iter().enumerate().map(|(i, &s)| if s { (i + 1) as f64 } else { -((i + 1) as f64) }).collect();
            let r = wilcoxon_signed_rank(&PairedSamples::new(vec![0.0; n], d).unwrap()).unwrap();
            worst = worst.max((r.p_value - enumerated_p(&signs)).abs());
        }
    }
    let x: Vec<f64> = (0..15).map(|i| i as f64).collect();
    let y: Vec<f64> = (0..15).map(|i| i as f64 + 1.0 + 0.1 * i as f64).collect();
    let p15 = wilcoxon_signed_rank(&PairedSamples::new(x, y).unwrap()).unwrap().p_value;

    verdict(
        8,
        "estimator validation",
        mi_ok && same < 0.01 && worst < 1e-12 && rejects_short && (p15 - 6.1e-5).abs() < 0.05e-5,
        format!("MI {mi:.4} (ln 4 = {:.4}), PSI(P,P) {same:.2e}, wilcoxon n=5..12 max |p - enum| {worst:.1e}, n=15 p {p15:.2e}", 4f64.ln()),
    );
}

fn criterion_09_signal_chain() {
    let run = |signal: &dyn Fn(f64) -> f64| -> f64 {
        let mut chain = FilterChain::default();
        let out: Vec<f64> = (0..4000)
            .map(|t| {
                let v = signal(t as f64 / SAMPLE_RATE_HZ);
                chain.apply_frame(&RawEmgFrame::new(t, [v; NUM_CHANNELS])).unwrap()[0]
            })
            .collect();
        // steady-state RMS over the last second
        (out[3000..].iter().map(|v| v * v).sum::<f64>() / 1000.0).sqrt()
    };
    let sine_rms = 1.0 / 2f64.sqrt();
    let mains_db = 20.0 * (run(&|t| (2.0 * PI * 50.0 * t).sin()) / sine_rms).log10();
    let dc = run(&|_| 1.0);

    let windows = slide_windows((0..2000).map(|_| [0.0; NUM_CHANNELS]));
    let cadence_ok = windows.len() == 37 && windows.windows(2).all(|w| w[1].start_ms - w[0].start_ms == 50);

    let f = channel_features(&[1.0, -1.0, 1.0, -1.0], 0.0).unwrap();
    let hudgins_ok = f.mav == 1.0 && f.twl == 6.0 && f.zc == 3 && f.slpch == 2;
    let ramp = channel_features(&[0.0, 1.0, 2.0, 3.0], 0.0).unwrap();
    let ramp_ok = ramp.mav == 1.5 && ramp.twl == 3.0 && ramp.zc == 0 && ramp.slpch == 0;

    verdict(
        9,
        "signal chain",
        mains_db <= -20.0 && dc < 1e-6 && cadence_ok && hudgins_ok && ramp_ok && STATE_DIM == 32,
        format!("50 Hz {mains_db:.1} dB, DC residual {dc:.1e}, 50 ms cadence {cadence_ok}, Hudgins fixtures {}", hudgins_ok && ramp_ok),
    );
}

fn criterion_10_determinism() {
    let mut cfg = ExperimentConfig::desk(SubjectParams::calibrated(7));
    cfg.sl.epochs = 20;
    cfg.awac.grad_steps = 30;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_full_experiment(&cfg).unwrap().write_bundle(d.path()).unwrap();
    }
    let files = |root: &std::path::Path| {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for e in std::fs::read_dir(&dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    };
    let (a, b) = (files(dirs[0].path()), files(dirs[1].path()));
    let bytes: usize = a.iter().map(|(_, v)| v.len()).sum();
    verdict(10, "determinism", !a.is_empty() && a == b, format!("{} files, {bytes} bytes, identical across reruns", a.len()));
}

type Criterion = (&'static str, fn());

const CRITERIA: [Criterion; 10] = [
    ("criterion_01_reward_return_exactness", criterion_01_reward_return_exactness),
    ("criterion_02_chart_structure", criterion_02_chart_structure),
    ("criterion_03_gradient_suites", criterion_03_gradient_suites),
    ("criterion_04_log_prob_normalization", criterion_04_log_prob_normalization),
    ("criterion_05_end_to_end_trend", criterion_05_end_to_end_trend),
    ("criterion_06_low_mi_degradation", criterion_06_low_mi_degradation),
    ("criterion_07_stability_trend", criterion_07_stability_trend),
    ("criterion_08_estimator_validation", criterion_08_estimator_validation),
    ("criterion_09_signal_chain", criterion_09_signal_chain),
    ("criterion_10_determinism", criterion_10_determinism),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|(name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())))
        .collect();
    let mut failed = Vec::new();
    for (name, run) in &selected {
        if std::panic::catch_unwind(run).is_err() {
            failed.push(*name);
        }
    }
    println!(
        "\nacceptance: {} passed, {} failed{}",
        selected.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
