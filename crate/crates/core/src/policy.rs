//! Tanh-squashed diagonal Gaussian policies.
//!
//! Each policy is described by the mean and standard deviation of a Gaussian
//! over pre-squash actions `x`; executed actions are `tanh(x)`. Densities in
//! action space pick up the change-of-variables term `-log(1 - tanh(x)^2)`.
//!
//! Two routes are provided for every quantity: plain `f64` functions on
//! [`TanhGaussianParams`], and graph-recording versions on [`PolicyVars`]
//! used inside the training losses.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log(1 - tanh(x)^2)` in the form `2 (log 2 - x - softplus(-2x))`, which
/// stays finite where the naive expression underflows.
pub fn log_one_minus_tanh_sq(x: f64) -> f64 {
    2.0 * (LN_2 - x - softplus(-2.0 * x))
}

fn gaussian_log_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - HALF_LN_2PI
}

#[derive(Clone, Debug, PartialEq)]
pub struct TanhGaussianParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TanhGaussianParams {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::dimension("tanh-gaussian params", mean.len(), std.len()));
        }
        if let Some(s) = std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Contract(format!("standard deviation must be positive, got {s}")));
        }
        Ok(Self { mean, std })
    }

    /// Builds the policy from a raw log-std head, clamping it to
    /// `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn from_log_std(mean: Vec<f64>, log_std: &[f64]) -> Result<Self> {
        let std = log_std
            .iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp())
            .collect();
        Self::new(mean, std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_std_bounds(&self) -> Result<()> {
        const SLACK: f64 = 1e-12;
        for &s in &self.std {
            let l = s.ln();
            if !(LOG_STD_MIN - SLACK..=LOG_STD_MAX + SLACK).contains(&l) {
                return Err(Error::Contract(format!(
                    "standard deviation {s} outside [exp({LOG_STD_MIN}), exp({LOG_STD_MAX})]"
                )));
            }
        }
        Ok(())
    }

    fn check_dim(&self, what: &str, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::dimension(what, self.dim(), n));
        }
        Ok(())
    }

    /// Reparametrized draw `tanh(mean + std * noise)` and its log-density.
    pub fn sample_with_logprob(&self, noise: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim("noise", noise.len())?;
        self.check_std_bounds()?;
        let mut logp = 0.0;
        let action = (0..self.dim())
            .map(|i| {
                let x = self.mean[i] + self.std[i] * noise[i];
                logp += -0.5 * noise[i] * noise[i]
                    - self.std[i].ln()
                    - HALF_LN_2PI
                    - log_one_minus_tanh_sq(x);
                x.tanh()
            })
            .collect();
        Ok((action, logp))
    }

    /// Log-density of the pre-squash Gaussian at `x`.
    pub fn pre_tanh_log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim("pre-tanh point", x.len())?;
        Ok((0..self.dim())
            .map(|i| gaussian_log_density(x[i], self.mean[i], self.std[i]))
            .sum())
    }

    /// Log-density of an action strictly inside `(-1, 1)^d`.
    pub fn log_density(&self, action: &[f64]) -> Result<f64> {
        self.check_dim("action", action.len())?;
        if let Some(a) = action.iter().find(|a| !(a.abs() < 1.0)) {
            return Err(Error::Contract(format!("action {a} outside (-1, 1)")));
        }
        let x: Vec<f64> = action.iter().map(|a| a.atanh()).collect();
        let base = self.pre_tanh_log_density(&x)?;
        Ok(base - x.iter().map(|&v| log_one_minus_tanh_sq(v)).sum::<f64>())
    }

    /// Single-sample entropy estimate `-log pi(a)` for the draw given by `noise`.
    pub fn entropy_estimate(&self, noise: &[f64]) -> Result<f64> {
        Ok(-self.sample_with_logprob(noise)?.1)
    }

    pub fn deterministic_action(&self) -> Vec<f64> {
        self.mean.iter().map(|m| m.tanh()).collect()
    }
}

/// Settings of the divergence penalty between the two actors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlConfig {
    /// Exploration variance multiplier `m`.
    pub multiplier: f64,
    /// Target per-dimension divergence.
    pub target: f64,
    pub action_dim: usize,
}

impl KlConfig {
    pub fn new(multiplier: f64, target: f64, action_dim: usize) -> Result<Self> {
        if !(multiplier > 0.0 && multiplier.is_finite()) {
            return Err(Error::Contract(format!("multiplier must be positive, got {multiplier}")));
        }
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::Contract(format!("target divergence must be positive, got {target}")));
        }
        if action_dim == 0 {
            return Err(Error::Contract("action dimension must be positive".into()));
        }
        Ok(Self {
            multiplier,
            target,
            action_dim,
        })
    }
}

/// Closed-form divergence between the pessimistic policy `p` and the
/// optimistic policy `o` with its standard deviation divided by
/// `multiplier`:
///
/// `sum_i log(sp_i / so_i') + (so_i'^2 + (mo_i - mp_i)^2) / (2 sp_i^2) - 1/2`,
/// `so_i' = so_i / multiplier`.
///
/// Read as a Gaussian divergence this is `KL(o' || p)`, the expectation
/// being taken under the rescaled optimistic policy. It is the same in
/// pre-squash and squashed coordinates because `tanh` is a bijection.
pub fn kl_closed_form(p: &TanhGaussianParams, o: &TanhGaussianParams, multiplier: f64) -> Result<f64> {
    if p.dim() != o.dim() {
        return Err(Error::dimension("kl operands", p.dim(), o.dim()));
    }
    if !(multiplier > 0.0) {
        return Err(Error::Contract(format!("multiplier must be positive, got {multiplier}")));
    }
    let mut kl = 0.0;
    for i in 0..p.dim() {
        let (sp, so) = (p.std[i], o.std[i] / multiplier);
        if !(sp > 0.0 && so > 0.0) {
            return Err(Error::Contract("standard deviations must be positive".into()));
        }
        let dm = o.mean[i] - p.mean[i];
        kl += (sp / so).ln() + (so * so + dm * dm) / (2.0 * sp * sp) - 0.5;
    }
    Ok(kl)
}

/// Optimistic policy as a perturbation of the pessimistic one:
/// mean `mp + perturb_mean`, std `sp * perturb_scale` (log-std clamped to
/// the usual bounds).
pub fn perturbed_policy(
    pess: &TanhGaussianParams,
    perturb_mean: &[f64],
    perturb_scale: &[f64],
) -> Result<TanhGaussianParams> {
    pess.check_dim("perturbation mean", perturb_mean.len())?;
    pess.check_dim("perturbation scale", perturb_scale.len())?;
    if let Some(s) = perturb_scale.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Contract(format!("perturbation scale must be positive, got {s}")));
    }
    let mean = pess.mean.iter().zip(perturb_mean).map(|(m, d)| m + d).collect();
    let log_std: Vec<f64> = pess
        .std
        .iter()
        .zip(perturb_scale)
        .map(|(s, k)| s.ln() + k.ln())
        .collect();
    TanhGaussianParams::from_log_std(mean, &log_std)
}

/// Graph-side policy parameters for a batch: `[batch, action_dim]` mean and
/// clamped log-std.
#[derive(Clone, Copy, Debug)]
pub struct PolicyVars<'g> {
    pub mean: Var<'g>,
    pub log_std: Var<'g>,
}

/// Reparametrized batch sample.
#[derive(Clone, Copy, Debug)]
pub struct PolicySample<'g> {
    /// `[batch, action_dim]`, strictly inside `(-1, 1)`.
    pub action: Var<'g>,
    /// `[batch, 1]`.
    pub log_prob: Var<'g>,
}

impl<'g> PolicyVars<'g> {
    /// Splits a `[batch, 2 * action_dim]` head into mean and log-std columns.
    pub fn from_head(head: Var<'g>, action_dim: usize) -> Result<Self> {
        if head.cols() != 2 * action_dim {
            return Err(Error::dimension("policy head", 2 * action_dim, head.cols()));
        }
        Ok(Self {
            mean: head.slice_cols(0, action_dim),
            log_std: head.slice_cols(action_dim, 2 * action_dim).clamp(LOG_STD_MIN, LOG_STD_MAX),
        })
    }

    /// Applies an optimistic perturbation head `[batch, 2 * action_dim]`
    /// (mean offset, log-scale) to this policy.
    pub fn perturbed(&self, head: Var<'g>) -> Result<Self> {
        let a = self.mean.cols();
        if head.cols() != 2 * a {
            return Err(Error::dimension("perturbation head", 2 * a, head.cols()));
        }
        Ok(Self {
            mean: self.mean + head.slice_cols(0, a),
            log_std: (self.log_std + head.slice_cols(a, 2 * a)).clamp(LOG_STD_MIN, LOG_STD_MAX),
        })
    }

    /// Both parameters cut from the graph.
    pub fn detached(&self) -> Self {
        Self {
            mean: self.mean.detach(),
            log_std: self.log_std.detach(),
        }
    }

    pub fn sample(&self, noise: &Tensor) -> Result<PolicySample<'g>> {
        let shape = self.mean.shape();
        if noise.shape() != shape.as_slice() {
            return Err(Error::dimension(
                "policy noise",
                format!("{shape:?}"),
                format!("{:?}", noise.shape()),
            ));
        }
        let g = self.mean.graph();
        let eps = g.constant(noise);
        let x = self.mean + self.log_std.exp() * eps;
        let gauss_const: Vec<f64> = noise.data().iter().map(|e| -0.5 * e * e - HALF_LN_2PI).collect();
        let gauss_const = g.constant_owned(Tensor::new(shape, gauss_const)?);
        let correction = ((-x - (x * -2.0).softplus()) + LN_2) * 2.0;
        let log_prob = (gauss_const - self.log_std - correction).sum_cols();
        Ok(PolicySample {
            action: x.tanh(),
            log_prob,
        })
    }

    pub fn deterministic_action(&self) -> Var<'g> {
        self.mean.tanh()
    }

    /// Row of the batch as plain parameters.
    pub fn row(&self, i: usize) -> Result<TanhGaussianParams> {
        let mean = self.mean.value().row(i).to_vec();
        let log_std = self.log_std.value().row(i).to_vec();
        TanhGaussianParams::from_log_std(mean, &log_std)
    }
}

/// Graph route of [`kl_closed_form`], one value per batch row (`[batch, 1]`).
pub fn kl_var<'g>(p: &PolicyVars<'g>, o: &PolicyVars<'g>, multiplier: f64) -> Var<'g> {
    let log_so = o.log_std.offset(-multiplier.ln());
    let dm = o.mean - p.mean;
    let ratio = ((log_so * 2.0).exp() + dm.square()) / ((p.log_std * 2.0).exp() * 2.0);
    ((p.log_std - log_so) + ratio - 0.5).sum_cols()
}

/// Differential entropy of a 1-D tanh-normal by trapezoidal quadrature over
/// pre-squash coordinates. Used as a reference value.
pub fn tanh_normal_entropy_1d(mean: f64, std: f64, points: usize) -> f64 {
    let (lo, hi) = (mean - 12.0 * std, mean + 12.0 * std);
    let h = (hi - lo) / points as f64;
    let f = |x: f64| {
        let lp = gaussian_log_density(x, mean, std);
        let la = lp - log_one_minus_tanh_sq(x);
        -lp.exp() * la
    };
    let inner: f64 = (1..points).map(|i| f(lo + i as f64 * h)).sum();
    h * (inner + 0.5 * (f(lo) + f(hi)))
}
