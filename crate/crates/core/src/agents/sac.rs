use super::{finite_loss, row_tensor, ActorPass, Adjustments, Agent, Hyperparams, SoftCore, StepMetrics};
use crate::critic::{q_stats, q_stats_var};
use crate::error::{Error, Result};
use crate::policy::PolicyVars;
use crate::replay::Batch;
use crate::tensor::{Graph, MlpParams, Snapshot, Tensor};

/// Soft actor-critic with clipped double-Q targets; one actor both explores
/// and bootstraps.
#[derive(Clone, Debug)]
pub struct SacAgent {
    core: SoftCore,
}

/// `min(Q1, Q2) - alpha * log pi` per row.
pub fn sac_bootstrap(q1: &[f64], q2: &[f64], next_log_prob: &[f64], alpha: f64) -> Vec<f64> {
    q1.iter()
        .zip(q2)
        .zip(next_log_prob)
        .map(|((a, b), lp)| a.min(*b) - alpha * lp)
        .collect()
}

/// `mean(alpha * log pi(a|s) - min(Q1, Q2)(s, a))` with `a ~ pi(s)`.
pub fn sac_actor_loss<'g>(
    g: &'g Graph,
    actor: &MlpParams,
    critics: &[MlpParams; 2],
    states: &Tensor,
    noise: &Tensor,
    alpha: f64,
) -> Result<ActorPass<'g>> {
    let s = g.constant(states);
    let (head, binding) = actor.forward(g, s, true)?;
    let sample = PolicyVars::from_head(head, noise.cols())?.sample(noise)?;
    let (q, _) = q_stats_var(g, critics, s, sample.action, false)?;
    let [q1, q2] = q.members;
    let loss = (sample.log_prob * alpha - q1.min(q2)).mean();
    Ok(ActorPass {
        loss,
        binding,
        log_prob: sample.log_prob,
        q,
    })
}

impl SacAgent {
    /// Same initialization stream and noise stream as [`super::DacAgent`].
    pub fn new(hp: Hyperparams, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        let (core, _) = SoftCore::new(hp, state_dim, action_dim, seed)?;
        Ok(Self { core })
    }

    pub fn core(&self) -> &SoftCore {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut SoftCore {
        &mut self.core
    }
}

impl Agent for SacAgent {
    fn name(&self) -> &'static str {
        "sac"
    }

    fn hyperparams(&self) -> &Hyperparams {
        &self.core.hp
    }

    fn explore(&mut self, obs: &[f64], env_step: usize) -> Result<Vec<f64>> {
        if obs.len() != self.core.state_dim {
            return Err(Error::dimension("observation", self.core.state_dim, obs.len()));
        }
        if env_step < self.core.hp.initial_steps {
            return Ok(self.core.uniform_action());
        }
        let noise = self.core.explore_noise()?;
        let g = Graph::new();
        let (head, _) = self.core.actor.forward(&g, g.constant_owned(row_tensor(obs)?), false)?;
        let sample = PolicyVars::from_head(head, self.core.action_dim)?.sample(&noise)?;
        Ok(sample.action.to_tensor().into_data())
    }

    fn eval_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.core.eval_action(obs)
    }

    fn update(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let gamma = self.core.hp.gamma;
        let n = batch.len();
        let alpha = self.core.alpha();

        let next_noise = self.core.draw_noise(n)?;
        let (next_actions, next_log_prob) = self.core.sample_next(&batch.next_states, &next_noise)?;
        let next = q_stats(&self.core.critic.target, &batch.next_states, &next_actions)?;
        let boot = sac_bootstrap(&next.members[0], &next.members[1], &next_log_prob, alpha);
        let targets = batch
            .rewards
            .data()
            .iter()
            .zip(batch.terminals.data())
            .zip(&boot)
            .map(|((r, d), b)| if *d != 0.0 { *r } else { r + gamma * b })
            .collect();
        let critic_loss = self.core.critic_step(batch, targets)?;

        let noise = self.core.draw_noise(n)?;
        let g = Graph::new();
        let pass = sac_actor_loss(&g, &self.core.actor, &self.core.critic.online, &batch.states, &noise, alpha)?;
        let q_mean = pass.q.mean.value().data().iter().sum::<f64>() / n as f64;
        let q_sigma = pass.q.std.value().data().iter().sum::<f64>() / n as f64;
        finite_loss(pass.loss, "actor loss")?;
        let (pess_actor_loss, entropy) = self.core.actor_step(&g, &pass)?;
        drop(pass);
        drop(g);

        let temperature_loss = self.core.temperature_step(entropy)?;
        self.core.finish_update()?;
        let m = StepMetrics {
            critic_loss,
            pess_actor_loss,
            temperature_loss,
            q_mean,
            q_sigma,
            entropy,
            ..StepMetrics::default()
        };
        let m = StepMetrics {
            alpha: self.core.alpha(),
            beta_o: -1.0,
            ..m
        };
        m.check_finite()?;
        Ok(m)
    }

    fn reset_parameters(&mut self) {
        self.core.reset();
    }

    /// Reports the clipped double-Q bound as `beta_o = -1` and no
    /// divergence weight.
    fn adjustments(&self) -> Adjustments {
        Adjustments {
            alpha: self.core.alpha(),
            beta_o: -1.0,
            tau: 0.0,
        }
    }

    fn q_value(&self, obs: &[f64], action: &[f64]) -> Result<(f64, f64)> {
        self.core.q_value(obs, action)
    }

    fn snapshot(&self) -> Snapshot {
        self.core.snapshot()
    }

    fn update_count(&self) -> u64 {
        self.core.updates
    }
}
