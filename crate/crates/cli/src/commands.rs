//! Step-by-step protocol commands over a checkpoint directory.
//!
//! Every command loads `session.json` from the work directory, runs one
//! protocol step and writes the checkpoint back, so a session can be driven
//! one phase at a time or resumed after an interruption.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use myoloop::experiment::{ExperimentConfig, Phase, RepetitionReport, Session};
use myoloop::subject::SubjectParams;

pub const CHECKPOINT_FILE: &str = "session.json";

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_FILE)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

pub fn load_session(dir: &Path) -> Result<Session> {
    let path = checkpoint_path(dir);
    Session::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn save(session: &Session, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    session.save(&checkpoint_path(dir))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Full,
    Desk,
    Inconsistent,
}

pub fn preset(p: Preset, seed: u64) -> ExperimentConfig {
    match p {
        Preset::Full => ExperimentConfig {
            seed,
            subject: myoloop::experiment::SubjectSource::Synthetic(SubjectParams::calibrated(seed)),
            ..ExperimentConfig::default()
        },
        Preset::Desk => ExperimentConfig::desk(SubjectParams::calibrated(seed)),
        Preset::Inconsistent => ExperimentConfig::desk(SubjectParams::inconsistent(seed)),
    }
}

/// Starts a session in `dir` and trains π₀.
pub fn pretrain(config: ExperimentConfig, dir: &Path, force: bool) -> Result<String> {
    if checkpoint_path(dir).exists() && !force {
        bail!("{} already holds a session; pass --force to overwrite", dir.display());
    }
    let mut s = Session::new(config)?;
    s.pretrain()?;
    save(&s, dir)?;
    let p = s.pretraining.as_ref().expect("pretraining summary");
    Ok(format!(
        "pretrain: {} train / {} val windows, best epoch {}, val F1 {:.3}, p0 {}",
        p.train_size,
        p.val_size,
        p.best_epoch,
        p.val_f1,
        s.policies[0].hash()
    ))
}

fn expect_next(s: &Session, phase: Phase, rep: Option<usize>) -> Result<()> {
    match s.state.next() {
        Some((p, r)) if p == phase && r == rep => Ok(()),
        Some((p, r)) => bail!(
            "session is at {}; next step is {}{}",
            s.state.label(),
            p,
            r.map(|k| format!("[{k}]")).unwrap_or_default()
        ),
        None => bail!("session is finished"),
    }
}

pub fn describe(r: &RepetitionReport) -> String {
    format!(
        "rep {} ({}): return {} (normalized {:.3}), EMR {:.3}, F1 {:.3}, {} action changes",
        r.repetition, r.policy, r.total_return, r.normalized_return, r.emr, r.f1_macro, r.action_changes
    )
}

/// Plays repetition `k`, running the familiarization song first when it is due.
pub fn play(dir: &Path, k: usize) -> Result<String> {
    let mut s = load_session(dir)?;
    let mut out = Vec::new();
    if matches!(s.state.next(), Some((Phase::Familiarize, _))) && k == 0 {
        if s.config.familiarization {
            s.familiarize()?;
            out.push("familiarize".to_string());
        }
    } else {
        expect_next(&s, Phase::Play, Some(k))?;
    }
    s.play(k)?;
    save(&s, dir)?;
    out.push(describe(s.repetitions.last().expect("repetition report")));
    Ok(out.join("\n"))
}

/// Fine-tunes after repetition `k`, producing π_{k+1}.
pub fn finetune(dir: &Path, k: usize) -> Result<String> {
    let mut s = load_session(dir)?;
    expect_next(&s, Phase::Train, Some(k))?;
    s.train()?;
    save(&s, dir)?;
    let f = s
        .repetitions
        .iter()
        .rev()
        .find(|r| r.repetition == k)
        .and_then(|r| r.finetune.clone())
        .context("fine-tuning summary")?;
    Ok(format!(
        "finetune after rep {k}: simulated return {} -> {} (step {}), p{} {}",
        f.start_return,
        f.best_return,
        f.best_step,
        k + 1,
        s.policies[k + 1].hash()
    ))
}

fn policy_index(name: &str) -> Result<usize> {
    name.strip_prefix('p')
        .and_then(|k| k.parse().ok())
        .with_context(|| format!("policy name {name:?} is not of the form p<k>"))
}

/// Runs the Motion Test slot that is due. The order of the two tests is drawn
/// from the session seed, so `policy`, when given, must match it.
pub fn motion_test(dir: &Path, policy: Option<&str>) -> Result<String> {
    let mut s = load_session(dir)?;
    expect_next(&s, Phase::MotionTest, None)?;
    let order = s.motion_order();
    let due = order[s.state.motion_tests_done];
    if let Some(name) = policy {
        let want = policy_index(name)?;
        if want != due {
            bail!("the next Motion Test is p{due} (order p{} then p{})", order[0], order[1]);
        }
    }
    s.motion_test()?;
    if s.state.motion_tests_done == 2 {
        s.step()?;
    }
    save(&s, dir)?;
    let m = s.motion_tests.last().expect("motion test report");
    Ok(format!(
        "motion test {}: EMR {:.3}, {} of {} trials successful",
        m.policy,
        m.emr,
        m.trials.iter().filter(|t| t.success).count(),
        m.trials.len()
    ))
}

/// Runs a whole session, checkpointing after every step. An existing
/// checkpoint is resumed.
pub fn run_experiment(
    config: ExperimentConfig,
    out: &Path,
    checkpoint: Option<&Path>,
    mut progress: impl FnMut(&str),
) -> Result<Session> {
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(out));
    let mut s = if ckpt.exists() {
        let s = Session::load(&ckpt)?;
        if s.config != config {
            bail!("checkpoint {} was made with a different configuration", ckpt.display());
        }
        progress(&format!("resuming at {}", s.state.label()));
        s
    } else {
        Session::new(config)?
    };
    if let Some(parent) = ckpt.parent() {
        fs::create_dir_all(parent)?;
    }
    while !s.is_done() {
        let label = s.step()?;
        s.save(&ckpt)?;
        match s.repetitions.last() {
            Some(r) if label == format!("play[{}]", r.repetition) => progress(&describe(r)),
            _ => progress(&label),
        }
    }
    s.write_bundle(out)?;
    Ok(s)
}

/// Writes the report bundle of a (possibly unfinished) session.
pub fn report(dir: &Path, out: &Path) -> Result<String> {
    let s = load_session(dir)?;
    s.write_bundle(out)?;
    let r = s.report()?;
    let mut lines = vec![format!("session at {}; bundle written to {}", s.state.label(), out.display())];
    lines.extend(r.repetitions.iter().map(describe));
    for m in &r.motion_tests {
        lines.push(format!("motion test {}: EMR {:.3}", m.policy, m.emr));
    }
    Ok(lines.join("\n"))
}
