//! Twin Q-network ensemble: mean/deviation heads, bootstrapped targets and
//! the regression loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, MlpBinding, MlpParams, MlpSpec, Tensor, Var};

/// Number of ensemble members. The deviation head is `|Q1 - Q2| / 2`, the
/// population standard deviation of two values.
pub const ENSEMBLE_SIZE: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct CriticEnsemble {
    pub online: [MlpParams; ENSEMBLE_SIZE],
    pub target: [MlpParams; ENSEMBLE_SIZE],
}

impl CriticEnsemble {
    /// Members take `[state | action]` rows and return one value per row.
    pub fn init(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let spec = MlpSpec::new(state_dim + action_dim, hidden, 1);
        let online = [MlpParams::init(&spec, rng), MlpParams::init(&spec, rng)];
        let target = online.clone();
        Self { online, target }
    }

    pub fn from_members(online: [MlpParams; ENSEMBLE_SIZE], target: [MlpParams; ENSEMBLE_SIZE]) -> Result<Self> {
        for (o, t) in online.iter().zip(&target) {
            if o.output_dim() != 1 {
                return Err(Error::dimension("critic output", 1, o.output_dim()));
            }
            if o.spec() != t.spec() {
                return Err(Error::Contract("target network shape differs from online network".into()));
            }
        }
        if online[0].input_dim() != online[1].input_dim() {
            return Err(Error::dimension("critic input", online[0].input_dim(), online[1].input_dim()));
        }
        Ok(Self { online, target })
    }

    pub fn input_dim(&self) -> usize {
        self.online[0].input_dim()
    }

    pub fn polyak(&mut self, weight: f64) -> Result<()> {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            t.polyak_from(o, weight)?;
        }
        Ok(())
    }
}

/// Per-row ensemble statistics in plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct QStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub members: [Vec<f64>; ENSEMBLE_SIZE],
}

impl QStats {
    pub fn from_members(q1: Vec<f64>, q2: Vec<f64>) -> Result<Self> {
        if q1.len() != q2.len() {
            return Err(Error::dimension("ensemble members", q1.len(), q2.len()));
        }
        let mean = q1.iter().zip(&q2).map(|(a, b)| (a + b) * 0.5).collect();
        let std = q1.iter().zip(&q2).map(|(a, b)| (a - b).abs() * 0.5).collect();
        Ok(Self {
            mean,
            std,
            members: [q1, q2],
        })
    }

    /// `mean + beta * std` per row.
    pub fn bound(&self, beta: f64) -> Vec<f64> {
        self.mean.iter().zip(&self.std).map(|(m, s)| m + beta * s).collect()
    }
}

fn critic_input(states: &Tensor, actions: &Tensor) -> Result<Tensor> {
    if states.rows() != actions.rows() {
        return Err(Error::dimension("critic batch rows", states.rows(), actions.rows()));
    }
    let (s, a) = (states.cols(), actions.cols());
    let mut data = Vec::with_capacity(states.rows() * (s + a));
    for i in 0..states.rows() {
        data.extend_from_slice(states.row(i));
        data.extend_from_slice(actions.row(i));
    }
    Tensor::matrix(states.rows(), s + a, data)
}

/// Evaluates `nets` on `(states, actions)` without recording a graph.
pub fn q_stats(nets: &[MlpParams; ENSEMBLE_SIZE], states: &Tensor, actions: &Tensor) -> Result<QStats> {
    let x = critic_input(states, actions)?;
    let q1 = nets[0].predict(&x)?.into_data();
    let q2 = nets[1].predict(&x)?.into_data();
    QStats::from_members(q1, q2)
}

/// Graph-side ensemble outputs, each `[batch, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct QStatsVars<'g> {
    pub mean: Var<'g>,
    pub std: Var<'g>,
    pub members: [Var<'g>; ENSEMBLE_SIZE],
}

impl<'g> QStatsVars<'g> {
    pub fn from_members(q1: Var<'g>, q2: Var<'g>) -> Self {
        Self {
            mean: (q1 + q2) * 0.5,
            std: (q1 - q2).abs() * 0.5,
            members: [q1, q2],
        }
    }
}

/// Records all members on `[state | action]`. With `trainable` the member
/// parameters are leaves; otherwise only `states`/`actions` carry gradient.
pub fn q_stats_var<'g>(
    g: &'g Graph,
    nets: &[MlpParams; ENSEMBLE_SIZE],
    states: Var<'g>,
    actions: Var<'g>,
    trainable: bool,
) -> Result<(QStatsVars<'g>, [MlpBinding<'g>; ENSEMBLE_SIZE])> {
    if states.rows() != actions.rows() {
        return Err(Error::dimension("critic batch rows", states.rows(), actions.rows()));
    }
    let x = states.concat_cols(actions);
    let (q1, b1) = nets[0].forward(g, x, trainable)?;
    let (q2, b2) = nets[1].forward(g, x, trainable)?;
    Ok((QStatsVars::from_members(q1, q2), [b1, b2]))
}

/// Inputs of a bootstrapped target, rows aligned with the batch.
#[derive(Clone, Copy, Debug)]
pub struct TargetInputs<'a> {
    pub rewards: &'a [f64],
    pub terminals: &'a [f64],
    /// Target-ensemble statistics at `(s', a')`, `a'` drawn from the
    /// pessimistic policy.
    pub next: &'a QStats,
    pub next_log_prob: &'a [f64],
}

/// `r + gamma * (1 - terminal) * (Qmean + beta * Qstd - alpha * log pi(a'|s'))`.
///
/// Computed from plain values, so nothing upstream receives gradient.
pub fn td_target(inputs: TargetInputs<'_>, gamma: f64, beta: f64, alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Contract(format!("discount must lie in [0, 1), got {gamma}")));
    }
    let n = inputs.rewards.len();
    for (name, len) in [
        ("terminal flags", inputs.terminals.len()),
        ("next-state values", inputs.next.mean.len()),
        ("next log-probabilities", inputs.next_log_prob.len()),
    ] {
        if len != n {
            return Err(Error::dimension(name, n, len));
        }
    }
    Ok((0..n)
        .map(|i| {
            let boot = inputs.next.mean[i] + beta * inputs.next.std[i] - alpha * inputs.next_log_prob[i];
            let y = inputs.rewards[i];
            if inputs.terminals[i] != 0.0 || gamma == 0.0 {
                y
            } else {
                y + gamma * boot
            }
        })
        .collect())
}

/// Mean over rows and members of `(Q_i - y)^2`; `targets` is `[batch, 1]`.
pub fn critic_loss<'g>(members: &[Var<'g>; ENSEMBLE_SIZE], targets: &Tensor) -> Result<Var<'g>> {
    let g = members[0].graph();
    for q in members {
        if q.shape() != targets.shape() {
            return Err(Error::dimension(
                "critic targets",
                format!("{:?}", q.shape()),
                format!("{:?}", targets.shape()),
            ));
        }
    }
    let y = g.constant(targets);
    let l1 = (members[0] - y).square().mean();
    let l2 = (members[1] - y).square().mean();
    Ok((l1 + l2) * 0.5)
}

/// `|Q| / |G|`, `None` when the return is zero.
pub fn overestimation_ratio(q: f64, ret: f64) -> Option<f64> {
    if ret == 0.0 {
        None
    } else {
        Some(q.abs() / ret.abs())
    }
}

/// Discounted return-to-go from every step of an episode.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Mean ratio over the steps of one episode, skipping zero returns.
pub fn episode_overestimation(q_values: &[f64], rewards: &[f64], gamma: f64) -> Result<Option<f64>> {
    if q_values.len() != rewards.len() {
        return Err(Error::dimension("overestimation rows", rewards.len(), q_values.len()));
    }
    let returns = discounted_returns(rewards, gamma);
    let ratios: Vec<f64> = q_values
        .iter()
        .zip(&returns)
        .filter_map(|(q, g)| overestimation_ratio(*q, *g))
        .collect();
    if ratios.is_empty() {
        Ok(None)
    } else {
        Ok(Some(ratios.iter().sum::<f64>() / ratios.len() as f64))
    }
}
