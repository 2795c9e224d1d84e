//! Seeded training runs: interaction, replay updates, resets, evaluation
//! and the metrics CSV.

mod config;

pub use config::{parse_config, AgentKind, RunConfig, TrainArgs};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::agents::{Agent, DacAgent, SacAgent, StepMetrics};
use crate::critic::episode_overestimation;
use crate::envs::{Env, EnvKind};
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};

pub const CSV_HEADER: &str = "step,eval_mean,eval_min,eval_max,alpha,beta_o,tau,kl_per_dim,q_mean,q_sigma,q_sigma_ratio,overestimation,critic_loss,pess_actor_loss,opt_actor_loss";

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Seed of the `episode`-th training episode.
fn train_episode_seed(run_seed: u64, episode: u64) -> u64 {
    (run_seed << 32) ^ episode
}

/// Seed of the `episode`-th evaluation episode; the same at every eval.
pub fn eval_episode_seed(run_seed: u64, episode: u64) -> u64 {
    (run_seed << 32) ^ (0x8000_0000 | episode)
}

pub fn make_agent(config: &RunConfig, state_dim: usize, action_dim: usize) -> Result<Box<dyn Agent>> {
    let hp = config.hyperparams.clone();
    Ok(match config.agent {
        AgentKind::Dac => Box::new(DacAgent::new(hp, state_dim, action_dim, config.seed)?),
        AgentKind::Sac => Box::new(SacAgent::new(hp, state_dim, action_dim, config.seed)?),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Mean over episodes of the per-episode ratio; `None` when no step had
    /// a non-zero return.
    pub overestimation: Option<f64>,
}

/// Rolls `episodes` full episodes with the deterministic pessimistic mean,
/// recording the critic's ensemble mean at every visited pair.
pub fn evaluate(agent: &dyn Agent, env: EnvKind, episodes: usize, seed: u64) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::Usage("at least one evaluation episode is required".into()));
    }
    let gamma = agent.hyperparams().gamma;
    let mut env = env.make();
    let mut returns = Vec::with_capacity(episodes);
    let mut ratios = Vec::new();
    for ep in 0..episodes {
        let mut obs = env.reset(eval_episode_seed(seed, ep as u64));
        let (mut rewards, mut qs) = (Vec::new(), Vec::new());
        loop {
            let action = agent.eval_action(&obs)?;
            qs.push(agent.q_value(&obs, &action)?.0);
            let step = env.step(&action)?;
            rewards.push(step.reward);
            obs = step.observation;
            if step.truncated {
                break;
            }
        }
        returns.push(rewards.iter().sum::<f64>());
        if let Some(r) = episode_overestimation(&qs, &rewards, gamma)? {
            ratios.push(r);
        }
    }
    Ok(EvalStats {
        mean: returns.iter().sum::<f64>() / episodes as f64,
        min: returns.iter().copied().fold(f64::INFINITY, f64::min),
        max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        overestimation: if ratios.is_empty() {
            None
        } else {
            Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
        },
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub eval_mean: f64,
    pub eval_min: f64,
    pub eval_max: f64,
    pub alpha: f64,
    pub beta_o: f64,
    pub tau: f64,
    pub kl_per_dim: f64,
    pub q_mean: f64,
    pub q_sigma: f64,
    pub q_sigma_ratio: f64,
    /// 0 when undefined (every return was zero).
    pub overestimation: f64,
    pub critic_loss: f64,
    pub pess_actor_loss: f64,
    pub opt_actor_loss: f64,
}

impl MetricsRow {
    pub fn fields(&self) -> [f64; 14] {
        [
            self.eval_mean,
            self.eval_min,
            self.eval_max,
            self.alpha,
            self.beta_o,
            self.tau,
            self.kl_per_dim,
            self.q_mean,
            self.q_sigma,
            self.q_sigma_ratio,
            self.overestimation,
            self.critic_loss,
            self.pess_actor_loss,
            self.opt_actor_loss,
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.step.to_string();
        for v in self.fields() {
            s.push(',');
            s.push_str(&format!("{v:?}"));
        }
        s
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let bad = || Error::Usage(format!("malformed metrics row: {line}"));
        let mut it = line.split(',');
        let step = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let v: Vec<f64> = it.map(|s| s.parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
        if v.len() != 14 {
            return Err(bad());
        }
        Ok(Self {
            step,
            eval_mean: v[0],
            eval_min: v[1],
            eval_max: v[2],
            alpha: v[3],
            beta_o: v[4],
            tau: v[5],
            kl_per_dim: v[6],
            q_mean: v[7],
            q_sigma: v[8],
            q_sigma_ratio: v[9],
            overestimation: v[10],
            critic_loss: v[11],
            pess_actor_loss: v[12],
            opt_actor_loss: v[13],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|v| v.is_finite())
    }
}

/// Reads the rows of a metrics CSV, skipping the comment and header lines.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("step,") && !l.trim().is_empty())
        .map(MetricsRow::parse_csv)
        .collect()
}

#[derive(Clone, Copy, Debug, Default)]
struct Accumulator {
    n: usize,
    sum: StepMetrics,
}

impl Accumulator {
    fn add(&mut self, m: &StepMetrics) {
        self.n += 1;
        let s = &mut self.sum;
        s.critic_loss += m.critic_loss;
        s.pess_actor_loss += m.pess_actor_loss;
        s.opt_actor_loss += m.opt_actor_loss;
        s.kl_per_dim += m.kl_per_dim;
        s.q_mean += m.q_mean;
        s.q_sigma += m.q_sigma;
    }

    fn mean(&self) -> StepMetrics {
        if self.n == 0 {
            return StepMetrics::default();
        }
        let k = self.n as f64;
        let s = &self.sum;
        StepMetrics {
            critic_loss: s.critic_loss / k,
            pess_actor_loss: s.pess_actor_loss / k,
            opt_actor_loss: s.opt_actor_loss / k,
            kl_per_dim: s.kl_per_dim / k,
            q_mean: s.q_mean / k,
            q_sigma: s.q_sigma / k,
            ..StepMetrics::default()
        }
    }
}

/// Step-wise training loop; [`train`] drives it to completion.
pub struct Trainer {
    pub config: RunConfig,
    pub agent: Box<dyn Agent>,
    env: Box<dyn Env + Send>,
    pub buffer: ReplayBuffer,
    obs: Vec<f64>,
    episode: u64,
    env_steps: usize,
    acc: Accumulator,
    pub rows: Vec<MetricsRow>,
    pub resets: usize,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let config = config.resolved();
        let mut env = config.env.make();
        let agent = make_agent(&config, env.observation_dim(), env.action_dim())?;
        let buffer = ReplayBuffer::new(
            config.replay_capacity,
            env.observation_dim(),
            env.action_dim(),
            config.seed ^ 0x5eed,
        )?;
        let obs = env.reset(train_episode_seed(config.seed, 0));
        Ok(Self {
            config,
            agent,
            env,
            buffer,
            obs,
            episode: 0,
            env_steps: 0,
            acc: Accumulator::default(),
            rows: Vec::new(),
            resets: 0,
        })
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    /// One environment step followed by its share of updates.
    pub fn step(&mut self) -> Result<()> {
        let action = self.agent.explore(&self.obs, self.env_steps)?;
        let step = self.env.step(&action)?;
        self.buffer.push(Transition {
            state: std::mem::take(&mut self.obs),
            action,
            reward: step.reward,
            next_state: step.observation.clone(),
            terminal: false,
            truncated: step.truncated,
        })?;
        if step.truncated {
            self.episode += 1;
            self.obs = self.env.reset(train_episode_seed(self.config.seed, self.episode));
        } else {
            self.obs = step.observation;
        }
        let hp = self.agent.hyperparams();
        let (warmup, batch) = (hp.initial_steps, hp.batch_size);
        if self.env_steps >= warmup && self.buffer.len() >= batch {
            for _ in 0..self.config.replay_ratio {
                let b = self.buffer.sample(batch)?;
                let m = self.agent.update(&b)?;
                self.acc.add(&m);
            }
        }
        self.env_steps += 1;
        Ok(())
    }

    /// True when a reset falls on the current step count.
    pub fn reset_due(&self) -> bool {
        let every = self.config.resolved_reset_interval();
        every > 0 && self.env_steps > 0 && self.env_steps.is_multiple_of(every) && self.env_steps < self.config.steps
    }

    pub fn reset_agent(&mut self) {
        self.agent.reset_parameters();
        self.resets += 1;
    }

    pub fn evaluate(&self) -> Result<EvalStats> {
        evaluate(self.agent.as_ref(), self.config.env, self.config.eval_episodes, self.config.seed)
    }

    /// Evaluates and turns the accumulated update metrics into a row.
    pub fn record(&mut self) -> Result<MetricsRow> {
        let stats = self.evaluate()?;
        let m = self.acc.mean();
        self.acc = Accumulator::default();
        let adj = self.agent.adjustments();
        let row = MetricsRow {
            step: self.env_steps,
            eval_mean: stats.mean,
            eval_min: stats.min,
            eval_max: stats.max,
            alpha: adj.alpha,
            beta_o: adj.beta_o,
            tau: adj.tau,
            kl_per_dim: m.kl_per_dim,
            q_mean: m.q_mean,
            q_sigma: m.q_sigma,
            q_sigma_ratio: if m.q_mean == 0.0 { 0.0 } else { m.q_sigma / m.q_mean.abs() },
            overestimation: stats.overestimation.unwrap_or(0.0),
            critic_loss: m.critic_loss,
            pess_actor_loss: m.pess_actor_loss,
            opt_actor_loss: m.opt_actor_loss,
        };
        self.rows.push(row);
        Ok(row)
    }

    pub fn header(&self) -> String {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        format!("# {VERSION} config={cfg}\n{CSV_HEADER}\n")
    }
}

/// Runs `config` to completion, writing the metrics CSV and the final
/// snapshot. A non-finite row is written before the run aborts.
pub fn train(config: RunConfig) -> Result<Vec<MetricsRow>> {
    let mut t = Trainer::new(config)?;
    if let Some(dir) = t.config.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = fs::File::create(&t.config.out)?;
    out.write_all(t.header().as_bytes())?;
    let result = run_loop(&mut t, &mut out);
    out.flush()?;
    result?;
    t.agent.snapshot().save(t.config.snapshot_path())?;
    Ok(t.rows)
}

fn run_loop(t: &mut Trainer, out: &mut fs::File) -> Result<()> {
    while t.env_steps() < t.config.steps {
        match t.step() {
            Ok(()) => {}
            Err(e) => {
                // Persist what the step produced before failing.
                if let Ok(row) = t.record() {
                    writeln!(out, "{}", row.to_csv())?;
                }
                return Err(e);
            }
        }
        if t.env_steps().is_multiple_of(t.config.eval_every) || t.env_steps() == t.config.steps {
            let row = t.record()?;
            writeln!(out, "{}", row.to_csv())?;
            if !row.is_finite() {
                return Err(Error::NonFinite(format!("metrics row at step {}", row.step)));
            }
        }
        if t.reset_due() {
            t.reset_agent();
        }
    }
    Ok(())
}
