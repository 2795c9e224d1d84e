//! Dual actor-critic and soft actor-critic agents.
//!
//! Both agents share [`SoftCore`]: a twin critic, a tanh-Gaussian actor, an
//! adaptive entropy temperature and the random streams. The loss functions
//! are free functions over a [`Graph`] so they can be checked in isolation.

mod dac;
mod sac;

pub use dac::DacAgent;
pub use sac::{sac_actor_loss, sac_bootstrap, SacAgent};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::critic::{q_stats, q_stats_var, CriticEnsemble, QStatsVars};
use crate::error::{Error, Result};
use crate::policy::{kl_var, PolicyVars};
use crate::replay::Batch;
use crate::tensor::{AdamConfig, AdamState, Graph, MlpBinding, MlpParams, MlpSpec, Snapshot, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetEntropySign {
    Negative,
    Positive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Hidden layer widths of every network.
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub gamma: f64,
    /// Learning rate of the networks and the temperature.
    pub lr: f64,
    /// Learning rate of the optimism and divergence-weight adjustments.
    pub adjustment_lr: f64,
    pub polyak: f64,
    pub initial_temperature: f64,
    /// Environment steps acted uniformly at random before learning starts.
    pub initial_steps: usize,
    /// The entropy target is `sign * action_dim / 2`.
    pub target_entropy_sign: TargetEntropySign,
    /// Pessimism `beta_p` of the critic target and the pessimistic actor.
    pub pessimism: f64,
    pub initial_optimism: f64,
    pub initial_kl_weight: f64,
    /// Target divergence per action dimension.
    pub kl_target: f64,
    /// Exploration standard deviation multiplier `m`.
    pub std_multiplier: f64,
    /// When false the optimistic actor and the adjustments are frozen and
    /// exploration samples the pessimistic actor.
    pub optimistic_updates: bool,
    /// Init scale of the policy output layers.
    pub head_scale: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            batch_size: 256,
            gamma: 0.99,
            lr: 3e-4,
            adjustment_lr: 3e-5,
            polyak: 0.005,
            initial_temperature: 1.0,
            initial_steps: 10_000,
            target_entropy_sign: TargetEntropySign::Negative,
            pessimism: -0.2,
            initial_optimism: 1.0,
            initial_kl_weight: 0.25,
            kl_target: 0.25,
            std_multiplier: 1.25,
            optimistic_updates: true,
            head_scale: 1e-2,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("lr", self.lr),
            ("initial_temperature", self.initial_temperature),
            ("initial_kl_weight", self.initial_kl_weight),
            ("kl_target", self.kl_target),
            ("std_multiplier", self.std_multiplier),
            ("head_scale", self.head_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Contract(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.adjustment_lr >= 0.0) {
            return Err(Error::Contract("adjustment_lr must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Contract(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.polyak > 0.0 && self.polyak < 1.0) {
            return Err(Error::Contract(format!("polyak must lie in (0, 1), got {}", self.polyak)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Contract("hidden widths must be positive".into()));
        }
        if !(self.initial_optimism > self.pessimism) {
            return Err(Error::Contract(format!(
                "initial optimism {} must exceed pessimism {}",
                self.initial_optimism, self.pessimism
            )));
        }
        Ok(())
    }

    pub fn target_entropy(&self, action_dim: usize) -> f64 {
        let magnitude = action_dim as f64 / 2.0;
        match self.target_entropy_sign {
            TargetEntropySign::Negative => -magnitude,
            TargetEntropySign::Positive => magnitude,
        }
    }
}

/// Values reported by one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub critic_loss: f64,
    pub pess_actor_loss: f64,
    pub opt_actor_loss: f64,
    pub temperature_loss: f64,
    /// Values after the update.
    pub alpha: f64,
    pub beta_o: f64,
    pub tau: f64,
    /// Batch mean of the divergence per action dimension.
    pub kl_per_dim: f64,
    /// Batch means of the ensemble heads at the pessimistic actor's actions.
    pub q_mean: f64,
    pub q_sigma: f64,
    pub entropy: f64,
}

impl StepMetrics {
    pub fn check_finite(&self) -> Result<()> {
        let named = [
            ("critic loss", self.critic_loss),
            ("pessimistic actor loss", self.pess_actor_loss),
            ("optimistic actor loss", self.opt_actor_loss),
            ("temperature loss", self.temperature_loss),
            ("alpha", self.alpha),
            ("beta_o", self.beta_o),
            ("tau", self.tau),
            ("kl", self.kl_per_dim),
        ];
        match named.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::NonFinite(format!("{name} = {v}"))),
            None => Ok(()),
        }
    }
}

/// Current values of the adapted scalars.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adjustments {
    pub alpha: f64,
    pub beta_o: f64,
    pub tau: f64,
}

pub trait Agent: Send {
    fn name(&self) -> &'static str;
    fn hyperparams(&self) -> &Hyperparams;
    /// Behaviour action; uniform while `env_step < initial_steps`.
    fn explore(&mut self, obs: &[f64], env_step: usize) -> Result<Vec<f64>>;
    /// `tanh` of the pessimistic mean.
    fn eval_action(&self, obs: &[f64]) -> Result<Vec<f64>>;
    fn update(&mut self, batch: &Batch) -> Result<StepMetrics>;
    /// Re-initializes every network, optimizer and adapted scalar.
    fn reset_parameters(&mut self);
    fn adjustments(&self) -> Adjustments;
    /// Online ensemble `(mean, std)` at one state-action pair.
    fn q_value(&self, obs: &[f64], action: &[f64]) -> Result<(f64, f64)>;
    fn snapshot(&self) -> Snapshot;
    fn update_count(&self) -> u64;
}

fn row_tensor(obs: &[f64]) -> Result<Tensor> {
    Tensor::matrix(1, obs.len(), obs.to_vec())
}

/// Reparametrized pessimistic-actor pass on `states`.
pub struct ActorPass<'g> {
    pub loss: Var<'g>,
    pub binding: MlpBinding<'g>,
    pub log_prob: Var<'g>,
    pub q: QStatsVars<'g>,
}

/// `mean(alpha * log pi(a|s) - Qmean(s, a) - beta_p * Qstd(s, a))` with
/// `a ~ pi(s)`. Gradients reach the actor through `a`; the critic is a
/// constant.
pub fn pessimistic_actor_loss<'g>(
    g: &'g Graph,
    actor: &MlpParams,
    critics: &[MlpParams; 2],
    states: &Tensor,
    noise: &Tensor,
    alpha: f64,
    beta_p: f64,
) -> Result<ActorPass<'g>> {
    let s = g.constant(states);
    let (head, binding) = actor.forward(g, s, true)?;
    let policy = PolicyVars::from_head(head, noise.cols())?;
    let sample = policy.sample(noise)?;
    let (q, _) = q_stats_var(g, critics, s, sample.action, false)?;
    let loss = (sample.log_prob * alpha - q.mean - q.std * beta_p).mean();
    Ok(ActorPass {
        loss,
        binding,
        log_prob: sample.log_prob,
        q,
    })
}

pub struct OptimisticPass<'g> {
    pub loss: Var<'g>,
    pub binding: MlpBinding<'g>,
    /// `[batch, 1]` divergence between the actors.
    pub kl: Var<'g>,
    pub q: QStatsVars<'g>,
}

/// `mean(-(Qmean(s, a) + beta_o * Qstd(s, a) - tau * KL(s)))` with `a`
/// drawn from the perturbed policy. Only the perturbation network is
/// trainable; the pessimistic actor and the critic are constants.
#[allow(clippy::too_many_arguments)]
pub fn optimistic_actor_loss<'g>(
    g: &'g Graph,
    actor: &MlpParams,
    perturbation: &MlpParams,
    critics: &[MlpParams; 2],
    states: &Tensor,
    noise: &Tensor,
    beta_o: f64,
    tau: f64,
    multiplier: f64,
) -> Result<OptimisticPass<'g>> {
    let s = g.constant(states);
    let (p_head, _) = actor.forward(g, s, false)?;
    let pess = PolicyVars::from_head(p_head, noise.cols())?;
    let (o_head, binding) = perturbation.forward(g, s, true)?;
    let opt = pess.perturbed(o_head)?;
    let sample = opt.sample(noise)?;
    let (q, _) = q_stats_var(g, critics, s, sample.action, false)?;
    let kl = kl_var(&pess, &opt, multiplier);
    let loss = -(q.mean + q.std * beta_o - kl * tau).mean();
    Ok(OptimisticPass { loss, binding, kl, q })
}

/// `alpha * (H - H*)` with `alpha = exp(log_alpha)`; descending it raises
/// the temperature while the entropy is below target.
pub fn temperature_loss<'g>(log_alpha: Var<'g>, entropy: f64, target: f64) -> Var<'g> {
    (log_alpha.exp() * (entropy - target)).sum()
}

/// `KL / action_dim - target` per row.
pub fn discrepancy(kl: &[f64], action_dim: usize, target: f64) -> Vec<f64> {
    kl.iter().map(|k| k / action_dim as f64 - target).collect()
}

/// `beta_p + softplus(raw)`, always above `beta_p`.
pub fn optimism_from_raw(raw: f64, beta_p: f64) -> f64 {
    beta_p + crate::policy::softplus(raw)
}

/// Inverse of [`optimism_from_raw`].
pub fn optimism_to_raw(beta_o: f64, beta_p: f64) -> Result<f64> {
    let gap = beta_o - beta_p;
    if !(gap > 0.0) {
        return Err(Error::Contract(format!("optimism {beta_o} must exceed pessimism {beta_p}")));
    }
    Ok(gap.exp_m1().ln())
}

/// `mean((beta_o - beta_p) * D)` as a function of the raw optimism.
pub fn optimism_loss<'g>(raw: Var<'g>, beta_p: f64, d: &[f64]) -> Result<Var<'g>> {
    let g = raw.graph();
    let beta_o = raw.softplus() + beta_p;
    let d = g.constant_owned(Tensor::new(vec![d.len()], d.to_vec())?);
    Ok(((beta_o - beta_p) * d).mean())
}

/// `mean(-tau * D)` as a function of `log tau`.
pub fn kl_weight_loss<'g>(log_tau: Var<'g>, d: &[f64]) -> Result<Var<'g>> {
    let g = log_tau.graph();
    let d = g.constant_owned(Tensor::new(vec![d.len()], d.to_vec())?);
    Ok((-(log_tau.exp() * d)).mean())
}

/// One descent step on a scalar parameter from a loss built by `loss`.
fn scalar_step(
    param: &mut Tensor,
    opt: &mut AdamState,
    name: &str,
    loss: impl for<'g> Fn(Var<'g>) -> Result<Var<'g>>,
) -> Result<f64> {
    let g = Graph::new();
    let p = g.leaf(param);
    let l = loss(p)?;
    let value = l.item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{name} loss")));
    }
    let grads = g.backward(l)?;
    param.accumulate_grad(grads.get(p).unwrap_or(&[0.0]))?;
    opt.apply(vec![(name.to_string(), param)])?;
    Ok(value)
}

fn finite_loss(v: Var<'_>, name: &str) -> Result<f64> {
    let x = v.item()?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("{name} = {x}")))
    }
}

fn critic_params(critic: &mut CriticEnsemble) -> Vec<(String, &mut Tensor)> {
    let [c0, c1] = &mut critic.online;
    let mut v: Vec<(String, &mut Tensor)> = c0
        .named_params_mut()
        .into_iter()
        .map(|(n, t)| (format!("critic0.{n}"), t))
        .collect();
    v.extend(c1.named_params_mut().into_iter().map(|(n, t)| (format!("critic1.{n}"), t)));
    v
}

/// Parts common to both agents.
#[derive(Clone, Debug)]
pub struct SoftCore {
    pub hp: Hyperparams,
    pub state_dim: usize,
    pub action_dim: usize,
    seed: u64,
    pub critic: CriticEnsemble,
    pub actor: MlpParams,
    pub log_alpha: Tensor,
    critic_opt: AdamState,
    actor_opt: AdamState,
    alpha_opt: AdamState,
    noise_rng: ChaCha8Rng,
    explore_rng: ChaCha8Rng,
    resets: u64,
    updates: u64,
}

impl SoftCore {
    /// Initialization draws, in order, from one stream seeded by `seed`:
    /// critic 0, critic 1, actor. The returned generator continues that
    /// stream for agent-specific networks.
    fn new(hp: Hyperparams, state_dim: usize, action_dim: usize, seed: u64) -> Result<(Self, ChaCha8Rng)> {
        hp.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Contract("state and action dimensions must be positive".into()));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let critic = CriticEnsemble::init(state_dim, action_dim, &hp.hidden, &mut init_rng);
        let actor_spec = MlpSpec::new(state_dim, &hp.hidden, 2 * action_dim).with_head_scale(hp.head_scale);
        let actor = MlpParams::init(&actor_spec, &mut init_rng);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(1);
        let mut explore_rng = ChaCha8Rng::seed_from_u64(seed);
        explore_rng.set_stream(2);
        let core = Self {
            log_alpha: Tensor::scalar(hp.initial_temperature.ln()),
            critic_opt: AdamState::new(AdamConfig::with_lr(hp.lr)),
            actor_opt: AdamState::new(AdamConfig::with_lr(hp.lr)),
            alpha_opt: AdamState::new(AdamConfig::with_lr(hp.lr)),
            hp,
            state_dim,
            action_dim,
            seed,
            critic,
            actor,
            noise_rng,
            explore_rng,
            resets: 0,
            updates: 0,
        };
        Ok((core, init_rng))
    }

    /// Fresh parameters from a stream dedicated to this reset; returns the
    /// generator for agent-specific networks.
    fn reset(&mut self) -> ChaCha8Rng {
        self.resets += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(100 + self.resets);
        self.critic = CriticEnsemble::init(self.state_dim, self.action_dim, &self.hp.hidden, &mut rng);
        self.actor = MlpParams::init(self.actor.spec(), &mut rng);
        self.log_alpha = Tensor::scalar(self.hp.initial_temperature.ln());
        self.critic_opt = AdamState::new(AdamConfig::with_lr(self.hp.lr));
        self.actor_opt = AdamState::new(AdamConfig::with_lr(self.hp.lr));
        self.alpha_opt = AdamState::new(AdamConfig::with_lr(self.hp.lr));
        rng
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.data()[0].exp()
    }

    pub fn draw_noise(&mut self, rows: usize) -> Result<Tensor> {
        let data = (0..rows * self.action_dim)
            .map(|_| self.noise_rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::matrix(rows, self.action_dim, data)
    }

    fn uniform_action(&mut self) -> Vec<f64> {
        (0..self.action_dim)
            .map(|_| self.explore_rng.random_range(-1.0..1.0))
            .collect()
    }

    fn explore_noise(&mut self) -> Result<Tensor> {
        let data = (0..self.action_dim)
            .map(|_| self.explore_rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::matrix(1, self.action_dim, data)
    }

    /// `a' ~ pi(s')` and `log pi(a'|s')` without gradient.
    fn sample_next(&self, next_states: &Tensor, noise: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let g = Graph::new();
        let (head, _) = self.actor.forward(&g, g.constant(next_states), false)?;
        let sample = PolicyVars::from_head(head, self.action_dim)?.sample(noise)?;
        Ok((sample.action.to_tensor(), sample.log_prob.to_tensor().into_data()))
    }

    fn critic_step(&mut self, batch: &Batch, targets: Vec<f64>) -> Result<f64> {
        let targets = Tensor::matrix(targets.len(), 1, targets)?;
        let g = Graph::new();
        let (q, bindings) = q_stats_var(
            &g,
            &self.critic.online,
            g.constant(&batch.states),
            g.constant(&batch.actions),
            true,
        )?;
        let loss = crate::critic::critic_loss(&q.members, &targets)?;
        let value = finite_loss(loss, "critic loss")?;
        let grads = g.backward(loss)?;
        for (b, net) in bindings.iter().zip(self.critic.online.iter_mut()) {
            b.accumulate_into(&grads, net)?;
        }
        self.critic_opt.apply(critic_params(&mut self.critic))?;
        Ok(value)
    }

    /// Descends an actor loss already recorded in `g`. Returns the loss
    /// value and the batch entropy estimate `-mean(log pi)`.
    fn actor_step(&mut self, g: &Graph, pass: &ActorPass<'_>) -> Result<(f64, f64)> {
        let value = finite_loss(pass.loss, "pessimistic actor loss")?;
        let lp = pass.log_prob.value();
        let entropy = -lp.data().iter().sum::<f64>() / lp.len() as f64;
        drop(lp);
        let grads = g.backward(pass.loss)?;
        pass.binding.accumulate_into(&grads, &mut self.actor)?;
        self.actor_opt.apply(self.actor.named_params_mut())?;
        Ok((value, entropy))
    }

    fn temperature_step(&mut self, entropy: f64) -> Result<f64> {
        let target = self.hp.target_entropy(self.action_dim);
        scalar_step(&mut self.log_alpha, &mut self.alpha_opt, "log_alpha", |p| {
            Ok(temperature_loss(p, entropy, target))
        })
    }

    fn finish_update(&mut self) -> Result<()> {
        self.critic.polyak(self.hp.polyak)?;
        self.updates += 1;
        Ok(())
    }

    fn eval_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let head = self.actor.predict(&row_tensor(obs)?)?;
        Ok(head.data()[..self.action_dim].iter().map(|m| m.tanh()).collect())
    }

    fn q_value(&self, obs: &[f64], action: &[f64]) -> Result<(f64, f64)> {
        let s = q_stats(&self.critic.online, &row_tensor(obs)?, &row_tensor(action)?)?;
        Ok((s.mean[0], s.std[0]))
    }

    fn snapshot(&self) -> Snapshot {
        let mut s = Snapshot::new();
        s.insert_mlp("actor", &self.actor);
        for (i, (o, t)) in self.critic.online.iter().zip(&self.critic.target).enumerate() {
            s.insert_mlp(&format!("critic{i}"), o);
            s.insert_mlp(&format!("critic{i}_target"), t);
        }
        s.insert("log_alpha", &self.log_alpha);
        s
    }
}
