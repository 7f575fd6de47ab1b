use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tem_core::harness::{self, finetune, report, transfer_eval};
use tem_core::{Checkpoint, EvalMode, EvalOptions, RunConfig, ScenarioConfig};

/// Train, evaluate and transfer email-style communicating agents.
#[derive(Parser)]
#[command(name = "tem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Sample,
    Random,
}

impl From<Mode> for EvalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Greedy => EvalMode::Greedy,
            Mode::Sample => EvalMode::Sample,
            Mode::Random => EvalMode::Random,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a scenario such as `pp:7-3`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Greedy)]
        mode: Mode,
        /// Write trajectory.csv and chains.csv into this directory.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Zero-shot evaluation on other team sizes, e.g. `pp:3-1,pp:9-3`.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',')]
        scenarios: Vec<String>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Continue training a checkpoint's actor on another scenario.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        steps: usize,
        /// Defaults to `<checkpoint dir>/finetune-<scenario>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot learning curves and summarize the runs under a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn scenario(label: &str, base: &ScenarioConfig) -> Result<ScenarioConfig> {
    let parsed: ScenarioConfig = label.parse().with_context(|| format!("bad scenario `{label}`"))?;
    // Keep the trained world parameters; only kind and team size change.
    Ok(ScenarioConfig {
        kind: parsed.kind,
        n_agents: parsed.n_agents,
        n_targets: parsed.n_targets,
        ..base.clone()
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = RunConfig::from_text(&text).with_context(|| format!("parsing {}", config.display()))?;
            cfg.seed = seed;
            cfg.out = Some(out.clone());
            let outcome = harness::train(cfg)?;
            if let Some(last) = outcome.metrics.last() {
                println!(
                    "trained {} iterations, {} env steps, last mean episode reward {:.3}",
                    last.iteration, last.env_steps, last.mean_episode_reward
                );
            }
            if let Some((it, r)) = outcome.evals.last() {
                println!("eval at iteration {it}: {r}");
            }
            println!("outputs in {}", out.display());
        }
        Command::Eval {
            checkpoint,
            scenario: label,
            episodes,
            seed,
            mode,
            traces,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let sc = scenario(&label, &ckpt.config.scenario)?;
            let opts = EvalOptions {
                episodes,
                seed,
                mode: mode.into(),
                traces: traces.is_some(),
            };
            let r = harness::evaluate(&ckpt, &sc, &opts)?;
            println!("{r}");
            for (i, e) in r.episodes.iter().enumerate() {
                println!(
                    "episode {i}: R {:.3} S {} C {} comm_rate {:.3}",
                    e.reward, e.success, e.collisions, e.comm_rate
                );
            }
            if let Some(dir) = traces {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                r.write_traces(&dir)?;
                println!("traces in {}", dir.display());
            }
        }
        Command::Transfer {
            checkpoint,
            scenarios,
            episodes,
            seed,
        } => {
            if scenarios.is_empty() {
                bail!("--scenarios needs at least one scenario");
            }
            let ckpt = Checkpoint::load(&checkpoint)?;
            let targets = scenarios
                .iter()
                .map(|s| scenario(s.trim(), &ckpt.config.scenario))
                .collect::<Result<Vec<_>>>()?;
            let opts = EvalOptions {
                episodes,
                seed,
                ..EvalOptions::default()
            };
            for r in transfer_eval(&ckpt, &targets, &opts)? {
                println!("{r}");
            }
            println!("actor parameters unchanged");
        }
        Command::Finetune {
            checkpoint,
            scenario: label,
            steps,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let sc = scenario(&label, &ckpt.config.scenario)?;
            let out = out.unwrap_or_else(|| {
                let parent = checkpoint.parent().map(PathBuf::from).unwrap_or_default();
                parent.join(format!("finetune-{}", label.replace(':', "-")))
            });
            let outcome = finetune(&ckpt, &sc, steps, Some(&out))?;
            println!(
                "finetuned for {} env steps on {}; outputs in {}",
                outcome.checkpoint.env_steps,
                sc.label(),
                out.display()
            );
        }
        Command::Report { dir } => {
            let out = report(&dir)?;
            print!("{}", out.table);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
