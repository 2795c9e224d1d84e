use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dac_core::envs::{rollout_return, EnvKind};
use dac_core::harness::{self, eval_episode_seed, parse_config, TrainArgs};
use dac_core::risk::{ce_table, write_ce_csv};
use dac_core::tensor::{Snapshot, Tensor};
use dac_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dac", version, about = "Dual actor-critic and SAC on small control tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write a metrics CSV plus a final snapshot.
    Train(TrainArgs),
    /// Roll the pessimistic mean policy stored in a snapshot.
    Eval {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value = "pendulum")]
        env: EnvKind,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact vs second-order certainty equivalents on two-point ensembles.
    CeTable {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-2,-1,-0.5,-0.1,0.1,0.5,1,2")]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,0.3,0.1,0.03,0.01")]
        spreads: Vec<f64>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn eval_snapshot(path: &PathBuf, env: EnvKind, episodes: usize, seed: u64) -> Result<()> {
    let actor = Snapshot::load(path)?.mlp("actor", 1.0)?;
    let mut e = env.make();
    if actor.input_dim() != e.observation_dim() || actor.output_dim() != 2 * e.action_dim() {
        return Err(Error::Usage(format!("snapshot {} does not fit environment {env}", path.display())));
    }
    let a = e.action_dim();
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut failure = None;
        let ret = rollout_return(e.as_mut(), eval_episode_seed(seed, ep as u64), |obs| {
            let head = Tensor::matrix(1, obs.len(), obs.to_vec()).and_then(|x| actor.predict(&x));
            match head {
                Ok(h) => h.data()[..a].iter().map(|m| m.tanh()).collect(),
                Err(err) => {
                    failure = Some(err);
                    vec![0.0; a]
                }
            }
        })?;
        if let Some(err) = failure {
            return Err(err);
        }
        returns.push(ret);
    }
    let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
    let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("env={env} episodes={episodes} mean={mean:.3} min={min:.3} max={max:.3}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let config = parse_config(&args)?;
            let out = config.out.clone();
            let rows = harness::train(config)?;
            if let Some(last) = rows.last() {
                println!(
                    "step={} eval_mean={:.3} alpha={:.4} beta_o={:.4} tau={:.4} kl_per_dim={:.4}",
                    last.step, last.eval_mean, last.alpha, last.beta_o, last.tau, last.kl_per_dim
                );
            }
            println!("metrics written to {}", out.display());
            Ok(())
        }
        Command::Eval {
            snapshot,
            env,
            episodes,
            seed,
        } => eval_snapshot(&snapshot, env, episodes, seed),
        Command::CeTable { betas, spreads, out } => {
            let rows = ce_table(&betas, &spreads)?;
            match out {
                Some(path) => write_ce_csv(&rows, fs::File::create(path)?),
                None => {
                    let stdout = io::stdout();
                    let mut lock = stdout.lock();
                    write_ce_csv(&rows, &mut lock)?;
                    lock.flush()?;
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
