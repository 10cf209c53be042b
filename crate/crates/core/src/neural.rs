//! Small dense networks with exact backward passes and an Adam optimizer.
//!
//! Parameters live in one flat buffer per network so optimizers and
//! checkpoints can treat them uniformly. A layer's input is the previous
//! layer's output, optionally followed by the network input (skip) and by an
//! extra per-layer vector supplied by the caller (used for representation
//! fusion).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct LayerSpec {
    pub out: usize,
    pub activation: Activation,
    /// Re-concatenate the network input to this layer's input.
    pub skip_input: bool,
    /// Width of the caller-supplied extra input for this layer.
    pub extra: usize,
}

impl LayerSpec {
    pub fn new(out: usize, activation: Activation) -> Self {
        Self { out, activation, skip_input: false, extra: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Layer {
    spec: LayerSpec,
    input: usize,
    w_offset: usize,
    b_offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Mlp {
    input: usize,
    layers: Vec<Layer>,
    pub params: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("at least one layer")
    }

    /// Post-activation output of layer `l`.
    pub fn activation(&self, l: usize) -> &[f64] {
        &self.post[l]
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
    /// Gradient with respect to each layer's extra input (empty if none).
    pub extras: Vec<Vec<f64>>,
}

impl Mlp {
    /// Zero-initialized network.
    pub fn zeros(input: usize, specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        if specs[0].skip_input {
            return Err(Error::Shape("first layer cannot take a skip input".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut prev = input;
        let mut offset = 0;
        for &spec in specs {
            let width = prev + if spec.skip_input { input } else { 0 } + spec.extra;
            layers.push(Layer {
                spec,
                input: width,
                w_offset: offset,
                b_offset: offset + width * spec.out,
            });
            offset += width * spec.out + spec.out;
            prev = spec.out;
        }
        Ok(Self { input, layers, params: vec![0.0; offset] })
    }

    /// Uniform Glorot initialization for weights, zero biases. Weights on
    /// extra inputs start at zero, so a network with extras initially
    /// computes the same function, from the same draws, as one without.
    pub fn new<R: Rng + ?Sized>(input: usize, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(input, specs)?;
        for l in &mlp.layers {
            let fan_in = l.input - l.spec.extra;
            let bound = (6.0 / (fan_in + l.spec.out) as f64).sqrt();
            for r in 0..l.spec.out {
                let row = l.w_offset + r * l.input;
                for w in &mut mlp.params[row..row + fan_in] {
                    *w = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(mlp)
    }

    /// Hidden stack of `depth - 1` ReLU layers of `width` plus an output layer.
    pub fn standard_specs(width: usize, depth: usize, out: usize, output: Activation) -> Vec<LayerSpec> {
        let mut specs = vec![LayerSpec::new(width, Activation::Relu); depth.saturating_sub(1)];
        specs.push(LayerSpec::new(out, output));
        specs
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.spec.out).unwrap_or(0)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_spec(&self, l: usize) -> LayerSpec {
        self.layers[l].spec
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weight `(row, col)` of layer `l`.
    pub fn weight_mut(&mut self, l: usize, row: usize, col: usize) -> &mut f64 {
        let layer = &self.layers[l];
        &mut self.params[layer.w_offset + row * layer.input + col]
    }

    pub fn forward(&self, x: &[f64], extras: &[&[f64]]) -> Result<Cache> {
        if x.len() != self.input {
            return Err(Error::Shape(format!("input has {} values, expected {}", x.len(), self.input)));
        }
        let mut cache = Cache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut prev: &[f64] = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut inp = Vec::with_capacity(layer.input);
            inp.extend_from_slice(prev);
            if layer.spec.skip_input {
                inp.extend_from_slice(x);
            }
            if layer.spec.extra > 0 {
                let e = extras.get(l).copied().unwrap_or(&[]);
                if e.len() != layer.spec.extra {
                    return Err(Error::Shape(format!(
                        "layer {l} extra input has {} values, expected {}",
                        e.len(),
                        layer.spec.extra
                    )));
                }
                inp.extend_from_slice(e);
            }
            let w = &self.params[layer.w_offset..layer.b_offset];
            let b = &self.params[layer.b_offset..layer.b_offset + layer.spec.out];
            let z: Vec<f64> = (0..layer.spec.out)
                .map(|r| {
                    let row = &w[r * layer.input..(r + 1) * layer.input];
                    b[r] + row.iter().zip(&inp).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            let y: Vec<f64> = z.iter().map(|&v| layer.spec.activation.apply(v)).collect();
            cache.inputs.push(inp);
            cache.pre.push(z);
            cache.post.push(y);
            prev = cache.post.last().expect("just pushed");
        }
        Ok(cache)
    }

    /// Convenience forward returning only the output.
    pub fn eval(&self, x: &[f64], extras: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(self.forward(x, extras)?.post.pop().expect("at least one layer"))
    }

    /// Exact gradients of a scalar loss given `dL/dy`.
    pub fn backward(&self, cache: &Cache, dy: &[f64]) -> Result<Gradients> {
        let mut grads = vec![0.0; self.params.len()];
        let (dx, extras) = self.backward_into(cache, dy, &mut grads)?;
        Ok(Gradients { params: grads, input: dx, extras })
    }

    /// As [`Mlp::backward`], accumulating parameter gradients into `grads`.
    pub fn backward_into(
        &self,
        cache: &Cache,
        dy: &[f64],
        grads: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if dy.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient has {} values, expected {}",
                dy.len(),
                self.output_dim()
            )));
        }
        let mut douts: Vec<&[f64]> = vec![&[]; self.layers.len()];
        douts[self.layers.len() - 1] = dy;
        self.backward_layers_into(cache, &douts, grads)
    }

    /// Backward pass where `douts[l]` is `dL/d(activation of layer l)` coming
    /// from outside the network (empty for none). The last entry plays the
    /// role of `dL/dy`.
    pub fn backward_layers_into(
        &self,
        cache: &Cache,
        douts: &[&[f64]],
        grads: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if douts.len() != self.layers.len() {
            return Err(Error::Shape(format!("{} layer gradients for {} layers", douts.len(), self.layers.len())));
        }
        for (l, d) in douts.iter().enumerate() {
            if !d.is_empty() && d.len() != self.layers[l].spec.out {
                return Err(Error::Shape(format!(
                    "layer {l} gradient has {} values, expected {}",
                    d.len(),
                    self.layers[l].spec.out
                )));
            }
        }
        if grads.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        let mut dx = vec![0.0; self.input];
        let mut extras = vec![Vec::new(); self.layers.len()];
        let mut upstream = vec![0.0; self.output_dim()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = layer.spec.out;
            for (u, d) in upstream.iter_mut().zip(douts[l]) {
                *u += d;
            }
            let dz: Vec<f64> = (0..out)
                .map(|r| {
                    upstream[r] * layer.spec.activation.derivative(cache.pre[l][r], cache.post[l][r])
                })
                .collect();
            let inp = &cache.inputs[l];
            let mut dinp = vec![0.0; layer.input];
            for (r, &g) in dz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let wrow = layer.w_offset + r * layer.input;
                for c in 0..layer.input {
                    grads[wrow + c] += g * inp[c];
                    dinp[c] += g * self.params[wrow + c];
                }
                grads[layer.b_offset + r] += g;
            }
            let prev = if l == 0 { self.input } else { self.layers[l - 1].spec.out };
            let mut at = prev;
            if layer.spec.skip_input {
                for (d, v) in dx.iter_mut().zip(&dinp[at..at + self.input]) {
                    *d += v;
                }
                at += self.input;
            }
            if layer.spec.extra > 0 {
                extras[l] = dinp[at..at + layer.spec.extra].to_vec();
            }
            if l == 0 {
                for (d, v) in dx.iter_mut().zip(&dinp[..prev]) {
                    *d += v;
                }
            } else {
                upstream = dinp[..prev].to_vec();
            }
        }
        Ok((dx, extras))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with decoupled weight decay over one flat parameter buffer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    pub steps: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Self { cfg, m: vec![0.0; len], v: vec![0.0; len], steps: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.steps += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * params[i]);
        }
        Ok(())
    }
}
