use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gemm, Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

/// Layer sizes plus the down-scaling applied to the output head at init.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub head_scale: f64,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
            head_scale: 1.0,
        }
    }

    pub fn with_head_scale(mut self, scale: f64) -> Self {
        self.head_scale = scale;
        self
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden.len() + 2);
        d.push(self.input);
        d.extend_from_slice(&self.hidden);
        d.push(self.output);
        d
    }
}

/// Affine layer `y = x · weight + bias`, weight stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    layers: Vec<Linear>,
    activation: Activation,
}

/// Graph handles of one [`MlpParams`] bound into a [`Graph`].
pub struct MlpBinding<'g> {
    vars: Vec<(Var<'g>, Var<'g>)>,
}

impl MlpBinding<'_> {
    /// Adds the gradient of every bound parameter into its slot in `params`.
    pub fn accumulate_into(&self, grads: &Gradients, params: &mut MlpParams) -> Result<()> {
        if self.vars.len() != params.layers.len() {
            return Err(Error::dimension(
                "gradient binding",
                params.layers.len(),
                self.vars.len(),
            ));
        }
        for ((w, b), layer) in self.vars.iter().zip(params.layers.iter_mut()) {
            if let Some(gw) = grads.get(*w) {
                layer.weight.accumulate_grad(gw)?;
            }
            if let Some(gb) = grads.get(*b) {
                layer.bias.accumulate_grad(gb)?;
            }
        }
        Ok(())
    }
}

impl MlpParams {
    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// with the last layer additionally multiplied by `spec.head_scale`.
    pub fn init(spec: &MlpSpec, rng: &mut impl Rng) -> Self {
        let dims = spec.dims();
        let n_layers = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let scale = if i + 1 == n_layers { spec.head_scale } else { 1.0 };
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n)
                        .map(|_| scale * rng.random_range(-bound..bound))
                        .collect()
                };
                let weight = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out))
                    .expect("layer dims are positive");
                let bias = Tensor::new(vec![fan_out], draw(fan_out)).expect("positive");
                Linear { weight, bias }
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
            activation: Activation::Relu,
        }
    }

    /// Assembles a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Linear>, head_scale: f64) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Contract("an MLP needs at least one layer".into()))?;
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::dimension(
                    format!("layer {i} bias"),
                    l.out_dim(),
                    l.bias.len(),
                ));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.in_dim() != l.out_dim() {
                    return Err(Error::dimension(
                        format!("layer {} input", i + 1),
                        l.out_dim(),
                        next.in_dim(),
                    ));
                }
            }
        }
        let spec = MlpSpec {
            input: first.in_dim(),
            hidden: layers[..layers.len() - 1].iter().map(Linear::out_dim).collect(),
            output: layers.last().unwrap().out_dim(),
            head_scale,
        };
        Ok(Self {
            spec,
            layers,
            activation: Activation::Relu,
        })
    }

    /// Fresh parameters for the same architecture, deterministic in `seed`.
    pub fn reinit(&self, seed: u64) -> Self {
        Self::init(&self.spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.spec.input {
            return Err(Error::dimension(
                "layer 0 input",
                self.spec.input,
                cols,
            ));
        }
        Ok(())
    }

    /// Records the forward pass in `g`. With `trainable` the parameters are
    /// differentiable leaves; otherwise they are constants and gradients only
    /// flow through `input`.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        input: Var<'g>,
        trainable: bool,
    ) -> Result<(Var<'g>, MlpBinding<'g>)> {
        self.check_input(input.cols())?;
        let last = self.layers.len() - 1;
        let mut x = input;
        let mut vars = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (g.leaf(&layer.weight), g.leaf(&layer.bias))
            } else {
                (g.constant(&layer.weight), g.constant(&layer.bias))
            };
            x = x.matmul(w) + b;
            if i != last {
                x = match self.activation {
                    Activation::Relu => x.relu(),
                };
            }
            vars.push((w, b));
        }
        Ok((x, MlpBinding { vars }))
    }

    /// Evaluates the network on a `[batch, input]` matrix without recording.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input.cols())?;
        let rows = input.rows();
        let last = self.layers.len() - 1;
        let mut x = input.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let (k, n) = (layer.in_dim(), layer.out_dim());
            let mut out = vec![0.0; rows * n];
            for row in out.chunks_mut(n) {
                row.copy_from_slice(layer.bias.data());
            }
            gemm(rows, k, n, &x, false, layer.weight.data(), false, &mut out, true);
            if i != last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = out;
        }
        Tensor::matrix(rows, self.spec.output, x)
    }

    /// `(name, tensor)` pairs in a fixed order: `layer{i}.weight`, `layer{i}.bias`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layer{i}.weight"), &l.weight),
                    (format!("layer{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layer{i}.weight"), &mut l.weight),
                    (format!("layer{i}.bias"), &mut l.bias),
                ]
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.weight.zero_grad();
            l.bias.zero_grad();
        }
    }
}
