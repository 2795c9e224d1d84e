use serde::{Deserialize, Serialize};

use super::{MlpParams, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction over an ordered group of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the gradient slots of `params`, which are cleared
    /// afterwards. A parameter without a gradient is treated as having a
    /// zero gradient. Nothing is modified if any gradient is non-finite.
    pub fn apply(&mut self, params: Vec<(String, &mut Tensor)>) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(_, p)| (vec![0.0; p.len()], vec![0.0; p.len()]))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::dimension(
                "adam parameter group",
                self.moments.len(),
                params.len(),
            ));
        }
        for ((name, p), (m, _)) in params.iter().zip(&self.moments) {
            if m.len() != p.len() {
                return Err(Error::dimension(format!("adam moments for {name}"), m.len(), p.len()));
            }
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {name}")));
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((_, p), (m, v)) in params.into_iter().zip(&mut self.moments) {
            let grad = p.grad.take();
            let values = p.data_mut();
            for i in 0..values.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `target <- weight * online + (1 - weight) * target`, elementwise.
pub fn polyak_update(target: &mut Tensor, online: &Tensor, weight: f64) -> Result<()> {
    check_polyak_weight(weight)?;
    if target.shape() != online.shape() {
        return Err(Error::dimension(
            "polyak update",
            format!("{:?}", target.shape()),
            format!("{:?}", online.shape()),
        ));
    }
    for (t, &o) in target.data_mut().iter_mut().zip(online.data()) {
        *t = weight * o + (1.0 - weight) * *t;
    }
    Ok(())
}

fn check_polyak_weight(weight: f64) -> Result<()> {
    if !(weight > 0.0 && weight < 1.0) {
        return Err(Error::Contract(format!(
            "polyak weight must lie in (0, 1), got {weight}"
        )));
    }
    Ok(())
}

impl MlpParams {
    pub fn polyak_from(&mut self, online: &MlpParams, weight: f64) -> Result<()> {
        check_polyak_weight(weight)?;
        let online = online.named_params();
        let target = self.named_params_mut();
        if online.len() != target.len() {
            return Err(Error::dimension("polyak update", target.len(), online.len()));
        }
        for ((_, t), (_, o)) in target.into_iter().zip(online) {
            polyak_update(t, o, weight)?;
        }
        Ok(())
    }
}
