use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use myoloop_cli::commands::{self, Preset};
use myoloop_cli::server::{self, Engine};
use myoloop::experiment::{run_batch, Session};
use myoloop::live::LiveSession;
use myoloop::subject::{ChordMap, HumanAdapter};

#[derive(Parser)]
#[command(name = "myoloop", version, about = "Closed-loop EMG decoder training with a rhythm game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    /// Full training budget with the calibrated subject.
    Full,
    /// Reduced training budget with the calibrated subject.
    Desk,
    /// Reduced training budget with a noisy, error-prone subject.
    Inconsistent,
}

#[derive(Subcommand)]
enum Command {
    /// Print a configuration preset as JSON.
    Config {
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record the pretraining set and train the initial policy.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "session")]
        dir: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Play one repetition of the song.
    Play {
        #[arg(long)]
        rep: usize,
        #[arg(long, default_value = "session")]
        dir: PathBuf,
    },
    /// Fine-tune on the replay buffer after repetition `rep`.
    Finetune {
        #[arg(long)]
        rep: usize,
        #[arg(long, default_value = "session")]
        dir: PathBuf,
    },
    /// Run the Motion Test that is due (p0 or the final policy).
    MotionTest {
        #[arg(long)]
        policy: Option<String>,
        #[arg(long, default_value = "session")]
        dir: PathBuf,
    },
    /// Whole-session runs.
    Experiment {
        #[command(subcommand)]
        command: ExperimentCommand,
    },
    /// Write the report bundle of a session.
    Report {
        #[arg(long, default_value = "session")]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a live session over WebSocket at /ws.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Configuration for a fresh session; pretrains before serving.
        #[arg(long, conflicts_with = "session")]
        config: Option<PathBuf>,
        /// Existing checkpoint; its latest policy and subject are used.
        #[arg(long)]
        session: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Run every phase, checkpointing after each; resumes an existing checkpoint.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run one session per seed and print the aggregate report.
    Batch {
        #[arg(long)]
        config: PathBuf,
        /// Seed range `a..b` or comma-separated list.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a >= b {
            bail!("empty seed range {s}");
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().context("seed")).collect()
}

fn live_session(config: Option<PathBuf>, session: Option<PathBuf>) -> Result<LiveSession> {
    let s = match (config, session) {
        (_, Some(path)) => Session::load(&path).with_context(|| format!("loading {}", path.display()))?,
        (Some(path), None) => {
            let mut s = Session::new(commands::load_config(&path)?)?;
            eprintln!("pretraining the initial policy");
            s.pretrain()?;
            s
        }
        (None, None) => bail!("serve needs --config or --session"),
    };
    let policy = s.policies.last().context("session has no policy")?.clone();
    let seed = s.config.seed;
    let adapter = HumanAdapter::new(s.profile.clone(), ChordMap::default(), seed);
    Ok(LiveSession::new(
        s.chart.clone(),
        adapter,
        policy,
        s.config.awac.clone(),
        s.config.motion_test.clone(),
        seed,
    ))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Config { preset, seed, out } => {
            let p = match preset {
                PresetArg::Full => Preset::Full,
                PresetArg::Desk => Preset::Desk,
                PresetArg::Inconsistent => Preset::Inconsistent,
            };
            let json = commands::preset(p, seed).to_json()?;
            match out {
                Some(path) => fs::write(path, json)?,
                None => println!("{json}"),
            }
        }
        Command::Pretrain { config, dir, force } => {
            println!("{}", commands::pretrain(commands::load_config(&config)?, &dir, force)?)
        }
        Command::Play { rep, dir } => println!("{}", commands::play(&dir, rep)?),
        Command::Finetune { rep, dir } => println!("{}", commands::finetune(&dir, rep)?),
        Command::MotionTest { policy, dir } => println!("{}", commands::motion_test(&dir, policy.as_deref())?),
        Command::Experiment { command } => match command {
            ExperimentCommand::Run { config, out, checkpoint } => {
                let cfg = commands::load_config(&config)?;
                commands::run_experiment(cfg, &out, checkpoint.as_deref(), |line| println!("{line}"))?;
                println!("bundle written to {}", out.display());
            }
            ExperimentCommand::Batch { config, seeds, out } => {
                let cfg = commands::load_config(&config)?;
                let seeds = parse_seeds(&seeds)?;
                let batch = run_batch(&cfg, &seeds, |s| {
                    println!(
                        "seed {}: mi {:.3} closing {:.3} trained {:.3} improvement {:+.3}",
                        s.seed,
                        s.mi.unwrap_or(f64::NAN),
                        s.closing_return,
                        s.trained_return,
                        s.improvement
                    )
                })?;
                let json = batch.to_json()?;
                match out {
                    Some(path) => fs::write(path, json)?,
                    None => println!("{json}"),
                }
            }
        },
        Command::Report { dir, out } => println!("{}", commands::report(&dir, &out)?),
        Command::Serve {
            port,
            host,
            config,
            session,
        } => {
            let live = live_session(config, session)?;
            let engine = Engine::spawn(live);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                eprintln!("listening on ws://{}/ws", listener.local_addr()?);
                tokio::select! {
                    r = server::serve(listener, engine.state.clone()) => r?,
                    _ = tokio::signal::ctrl_c() => eprintln!("shutting down"),
                }
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}
