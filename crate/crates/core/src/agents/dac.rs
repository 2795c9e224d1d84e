use rand_chacha::ChaCha8Rng;

use super::{
    finite_loss, kl_weight_loss, optimism_from_raw, optimism_loss, optimism_to_raw, optimistic_actor_loss,
    pessimistic_actor_loss, row_tensor, scalar_step, discrepancy, Adjustments, Agent, Hyperparams, SoftCore,
    StepMetrics,
};
use crate::critic::{q_stats, td_target, TargetInputs};
use crate::error::{Error, Result};
use crate::policy::PolicyVars;
use crate::replay::Batch;
use crate::tensor::{AdamConfig, AdamState, Graph, MlpParams, MlpSpec, Snapshot, Tensor};

/// Pessimistic actor for targets and evaluation, optimistic perturbation
/// for exploration, with adaptive optimism and divergence weight.
#[derive(Clone, Debug)]
pub struct DacAgent {
    core: SoftCore,
    /// Outputs `[mean offset | log-scale]` added to the pessimistic policy.
    pub perturbation: MlpParams,
    /// Raw optimism; `beta_o = beta_p + softplus(raw)`.
    pub optimism_raw: Tensor,
    pub log_kl_weight: Tensor,
    perturbation_opt: AdamState,
    optimism_opt: AdamState,
    kl_weight_opt: AdamState,
}

impl DacAgent {
    pub fn new(hp: Hyperparams, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        let (core, mut rng) = SoftCore::new(hp, state_dim, action_dim, seed)?;
        let perturbation = Self::init_perturbation(&core, &mut rng);
        let mut agent = Self {
            perturbation,
            optimism_raw: Tensor::scalar(0.0),
            log_kl_weight: Tensor::scalar(0.0),
            perturbation_opt: AdamState::new(AdamConfig::default()),
            optimism_opt: AdamState::new(AdamConfig::default()),
            kl_weight_opt: AdamState::new(AdamConfig::default()),
            core,
        };
        agent.reset_adjustments()?;
        Ok(agent)
    }

    fn init_perturbation(core: &SoftCore, rng: &mut ChaCha8Rng) -> MlpParams {
        let spec = MlpSpec::new(core.state_dim, &core.hp.hidden, 2 * core.action_dim).with_head_scale(core.hp.head_scale);
        MlpParams::init(&spec, rng)
    }

    fn reset_adjustments(&mut self) -> Result<()> {
        let hp = &self.core.hp;
        self.optimism_raw = Tensor::scalar(optimism_to_raw(hp.initial_optimism, hp.pessimism)?);
        self.log_kl_weight = Tensor::scalar(hp.initial_kl_weight.ln());
        self.perturbation_opt = AdamState::new(AdamConfig::with_lr(hp.lr));
        self.optimism_opt = AdamState::new(AdamConfig::with_lr(hp.adjustment_lr));
        self.kl_weight_opt = AdamState::new(AdamConfig::with_lr(hp.adjustment_lr));
        Ok(())
    }

    pub fn core(&self) -> &SoftCore {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut SoftCore {
        &mut self.core
    }

    pub fn beta_o(&self) -> f64 {
        optimism_from_raw(self.optimism_raw.data()[0], self.core.hp.pessimism)
    }

    pub fn tau(&self) -> f64 {
        self.log_kl_weight.data()[0].exp()
    }

    /// Sample from the optimistic policy at one state.
    pub fn sample_optimistic(&self, obs: &[f64], noise: &Tensor) -> Result<Vec<f64>> {
        let g = Graph::new();
        let s = g.constant_owned(row_tensor(obs)?);
        let (p_head, _) = self.core.actor.forward(&g, s, false)?;
        let (o_head, _) = self.perturbation.forward(&g, s, false)?;
        let pess = PolicyVars::from_head(p_head, self.core.action_dim)?;
        let sample = pess.perturbed(o_head)?.sample(noise)?;
        Ok(sample.action.to_tensor().into_data())
    }

    /// Applies one step to the optimism and divergence weight from fixed
    /// discrepancies. Returns the two loss values.
    pub fn adjust(&mut self, d: &[f64]) -> Result<(f64, f64)> {
        let beta_p = self.core.hp.pessimism;
        let l_beta = scalar_step(&mut self.optimism_raw, &mut self.optimism_opt, "optimism", |p| {
            optimism_loss(p, beta_p, d)
        })?;
        let l_tau = scalar_step(&mut self.log_kl_weight, &mut self.kl_weight_opt, "kl_weight", |p| {
            kl_weight_loss(p, d)
        })?;
        Ok((l_beta, l_tau))
    }
}

impl Agent for DacAgent {
    fn name(&self) -> &'static str {
        "dac"
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
        if self.core.hp.optimistic_updates {
            self.sample_optimistic(obs, &noise)
        } else {
            let g = Graph::new();
            let (head, _) = self.core.actor.forward(&g, g.constant_owned(row_tensor(obs)?), false)?;
            let sample = PolicyVars::from_head(head, self.core.action_dim)?.sample(&noise)?;
            Ok(sample.action.to_tensor().into_data())
        }
    }

    fn eval_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.core.eval_action(obs)
    }

    fn update(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let hp = self.core.hp.clone();
        let n = batch.len();
        let alpha = self.core.alpha();

        // Critic: SARSA target under the pessimistic actor.
        let next_noise = self.core.draw_noise(n)?;
        let (next_actions, next_log_prob) = self.core.sample_next(&batch.next_states, &next_noise)?;
        let next = q_stats(&self.core.critic.target, &batch.next_states, &next_actions)?;
        let targets = td_target(
            TargetInputs {
                rewards: batch.rewards.data(),
                terminals: batch.terminals.data(),
                next: &next,
                next_log_prob: &next_log_prob,
            },
            hp.gamma,
            hp.pessimism,
            alpha,
        )?;
        let critic_loss = self.core.critic_step(batch, targets)?;

        // Pessimistic actor.
        let noise = self.core.draw_noise(n)?;
        let g = Graph::new();
        let pass = pessimistic_actor_loss(
            &g,
            &self.core.actor,
            &self.core.critic.online,
            &batch.states,
            &noise,
            alpha,
            hp.pessimism,
        )?;
        let q_mean = pass.q.mean.value().data().iter().sum::<f64>() / n as f64;
        let q_sigma = pass.q.std.value().data().iter().sum::<f64>() / n as f64;
        let (pess_actor_loss, entropy) = self.core.actor_step(&g, &pass)?;
        drop(pass);
        drop(g);

        // Optimistic actor.
        let mut opt_actor_loss = 0.0;
        let mut kl_per_dim = 0.0;
        let mut kl_rows = Vec::new();
        if hp.optimistic_updates {
            let noise = self.core.draw_noise(n)?;
            let g = Graph::new();
            let pass = optimistic_actor_loss(
                &g,
                &self.core.actor,
                &self.perturbation,
                &self.core.critic.online,
                &batch.states,
                &noise,
                self.beta_o(),
                self.tau(),
                hp.std_multiplier,
            )?;
            opt_actor_loss = finite_loss(pass.loss, "optimistic actor loss")?;
            kl_rows = pass.kl.to_tensor().into_data();
            kl_per_dim = kl_rows.iter().sum::<f64>() / (n * self.core.action_dim) as f64;
            let grads = g.backward(pass.loss)?;
            pass.binding.accumulate_into(&grads, &mut self.perturbation)?;
            self.perturbation_opt.apply(self.perturbation.named_params_mut())?;
        }

        let temperature_loss = self.core.temperature_step(entropy)?;

        if hp.optimistic_updates {
            let d = discrepancy(&kl_rows, self.core.action_dim, hp.kl_target);
            self.adjust(&d)?;
        }

        self.core.finish_update()?;
        let m = StepMetrics {
            critic_loss,
            pess_actor_loss,
            opt_actor_loss,
            temperature_loss,
            alpha: self.core.alpha(),
            beta_o: self.beta_o(),
            tau: self.tau(),
            kl_per_dim,
            q_mean,
            q_sigma,
            entropy,
        };
        m.check_finite()?;
        Ok(m)
    }

    fn reset_parameters(&mut self) {
        let mut rng = self.core.reset();
        self.perturbation = Self::init_perturbation(&self.core, &mut rng);
        self.reset_adjustments()
            .expect("initial optimism was validated at construction");
    }

    fn adjustments(&self) -> Adjustments {
        Adjustments {
            alpha: self.core.alpha(),
            beta_o: self.beta_o(),
            tau: self.tau(),
        }
    }

    fn q_value(&self, obs: &[f64], action: &[f64]) -> Result<(f64, f64)> {
        self.core.q_value(obs, action)
    }

    fn snapshot(&self) -> Snapshot {
        let mut s = self.core.snapshot();
        s.insert_mlp("perturbation", &self.perturbation);
        s.insert("optimism_raw", &self.optimism_raw);
        s.insert("log_kl_weight", &self.log_kl_weight);
        s
    }

    fn update_count(&self) -> u64 {
        self.core.updates
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::{ReplayBuffer, Transition};
    use crate::policy::kl_closed_form;

    fn tiny_hp() -> Hyperparams {
        Hyperparams {
            hidden: vec![8],
            batch_size: 4,
            initial_steps: 0,
            ..Hyperparams::default()
        }
    }

    fn batch(seed: u64) -> Batch {
        let mut b = ReplayBuffer::new(32, 3, 1, seed).unwrap();
        for i in 0..16 {
            let x = i as f64 / 16.0;
            b.push(Transition {
                state: vec![x.cos(), x.sin(), x - 0.5],
                action: vec![(3.0 * x).sin()],
                reward: -x,
                next_state: vec![(x + 0.1).cos(), (x + 0.1).sin(), x - 0.4],
                terminal: false,
                truncated: false,
            })
            .unwrap();
        }
        b.sample(8).unwrap()
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut a = DacAgent::new(tiny_hp(), 3, 1, 11).unwrap();
            let mut out = Vec::new();
            for s in 0..5 {
                out.push(a.update(&batch(s)).unwrap());
            }
            (out, a.snapshot())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn frozen_adjustment_rate_keeps_scalars() {
        let hp = Hyperparams {
            adjustment_lr: 0.0,
            ..tiny_hp()
        };
        let mut a = DacAgent::new(hp, 3, 1, 2).unwrap();
        let before = (a.beta_o(), a.tau());
        for s in 0..5 {
            a.update(&batch(s)).unwrap();
        }
        assert_eq!((a.beta_o(), a.tau()), before);
        assert!((before.0 - 1.0).abs() < 1e-14 && (before.1 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn reset_restores_initial_scalars() {
        let mut a = DacAgent::new(tiny_hp(), 3, 1, 2).unwrap();
        let fresh = a.adjustments();
        let actor0 = a.core().actor.clone();
        for s in 0..10 {
            a.update(&batch(s)).unwrap();
        }
        assert_ne!(a.adjustments(), fresh);
        a.reset_parameters();
        assert_eq!(a.adjustments().alpha, fresh.alpha);
        assert!((a.adjustments().beta_o - fresh.beta_o).abs() < 1e-15);
        assert_eq!(a.adjustments().tau, fresh.tau);
        assert_ne!(a.core().actor, actor0);
    }

    #[test]
    fn warmup_actions_are_uniform() {
        let hp = Hyperparams {
            initial_steps: 10_000,
            ..tiny_hp()
        };
        let mut a = DacAgent::new(hp, 3, 1, 5).unwrap();
        let mut xs: Vec<f64> = (0..10_000)
            .map(|t| a.explore(&[1.0, 0.0, 0.0], t).unwrap()[0])
            .collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let cdf = (x + 1.0) / 2.0;
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic.
        assert!(ks < 1.63 / n.sqrt(), "{ks}");
    }

    #[test]
    fn eval_is_deterministic_and_explore_differs() {
        let mut a = DacAgent::new(tiny_hp(), 3, 1, 5).unwrap();
        a.perturbation = MlpParams::init(
            &MlpSpec::new(3, &[8], 2),
            &mut <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1),
        );
        let obs = [0.2, -0.3, 0.5];
        assert_eq!(a.eval_action(&obs).unwrap(), a.eval_action(&obs).unwrap());
        let p_head = a.core().actor.predict(&row_tensor(&obs).unwrap()).unwrap();
        let o_head = a.perturbation.predict(&row_tensor(&obs).unwrap()).unwrap();
        let pess = crate::policy::TanhGaussianParams::from_log_std(
            vec![p_head.data()[0]],
            &[p_head.data()[1]],
        )
        .unwrap();
        let opt = crate::policy::perturbed_policy(&pess, &[o_head.data()[0]], &[o_head.data()[1].exp()]).unwrap();
        assert!(kl_closed_form(&pess, &opt, 1.0).unwrap() > 0.0);
        let draws: Vec<f64> = (0..4000).map(|t| a.explore(&obs, t).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let expected_opt = tanh_normal_mean(opt.mean[0], opt.std[0]);
        let expected_pess = tanh_normal_mean(pess.mean[0], pess.std[0]);
        let se = 1.0 / (draws.len() as f64).sqrt();
        assert!((mean - expected_opt).abs() < 4.0 * se, "{mean} vs {expected_opt}");
        assert!((expected_opt - expected_pess).abs() > 8.0 * se);
    }

    /// `E[tanh(mean + std * z)]` by trapezoidal quadrature over `z`.
    fn tanh_normal_mean(mean: f64, std: f64) -> f64 {
        let (k, lo, hi) = (20_000, -10.0, 10.0);
        let h = (hi - lo) / k as f64;
        (0..=k)
            .map(|i| {
                let z = lo + i as f64 * h;
                let w = if i == 0 || i == k { 0.5 } else { 1.0 };
                w * (-0.5 * z * z).exp() * (mean + std * z).tanh()
            })
            .sum::<f64>()
            * h
            / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn constraints_hold_under_sustained_pressure() {
        let hp = Hyperparams {
            adjustment_lr: 0.05,
            ..tiny_hp()
        };
        let mut a = DacAgent::new(hp, 3, 1, 0).unwrap();
        let mut prev = a.adjustments();
        for _ in 0..500 {
            a.adjust(&[0.4, 0.2]).unwrap();
            let now = a.adjustments();
            assert!(now.beta_o < prev.beta_o && now.beta_o > -0.2);
            assert!(now.tau > prev.tau);
            prev = now;
        }
    }
}
