//! Dual-head Q-network written out by hand: forward pass, backprop,
//! optimizers and checkpoints.
//!
//! ```text
//! obs (12) -> dense 16, ReLU -> dense 32 --+
//!                                          +--> add -> ReLU -> dense 1 -> Q(s, a)
//! act (2)  -> dense 32 --------------------+
//! ```

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{Optimizer, OptimizerKind};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::OBS_DIM;
use crate::error::{DockError, Result};

pub const ACTION_DIM: usize = 2;
pub const OBS_HIDDEN: usize = 16;
pub const HIDDEN: usize = 32;

/// Fully connected layer; `weights` is row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// He-style uniform init: weights in `+-sqrt(6 / fan_in)`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = Self::init_bound(inputs);
        let mut layer = Self::zeros(inputs, outputs);
        for w in &mut layer.weights {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn init_bound(fan_in: usize) -> f64 {
        (6.0 / fan_in as f64).sqrt()
    }

    #[inline]
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
    }

    fn check_shape(&self, what: &'static str) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs {
            return Err(DockError::ShapeMismatch {
                what,
                expected: self.inputs * self.outputs,
                actual: self.weights.len(),
            });
        }
        if self.bias.len() != self.outputs {
            return Err(DockError::ShapeMismatch {
                what,
                expected: self.outputs,
                actual: self.bias.len(),
            });
        }
        Ok(())
    }
}

/// Parameters of the Q-network. The same type carries gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub obs_hidden: Dense,
    pub obs_out: Dense,
    pub action: Dense,
    pub output: Dense,
}

/// Intermediate activations kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub obs: [f64; OBS_DIM],
    pub action: [f64; ACTION_DIM],
    pub obs_pre: [f64; OBS_HIDDEN],
    pub obs_hidden: [f64; OBS_HIDDEN],
    /// Sum of both heads before the shared ReLU.
    pub merged_pre: [f64; HIDDEN],
    pub merged: [f64; HIDDEN],
    pub q: f64,
}

/// Observation-head output for one state, reusable across actions.
#[derive(Debug, Clone, Copy)]
pub struct ObsFeatures(pub [f64; HIDDEN]);

impl QNetwork {
    pub fn zeros() -> Self {
        QNetwork {
            obs_hidden: Dense::zeros(OBS_DIM, OBS_HIDDEN),
            obs_out: Dense::zeros(OBS_HIDDEN, HIDDEN),
            action: Dense::zeros(ACTION_DIM, HIDDEN),
            output: Dense::zeros(HIDDEN, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        QNetwork {
            obs_hidden: Dense::he_uniform(OBS_DIM, OBS_HIDDEN, rng),
            obs_out: Dense::he_uniform(OBS_HIDDEN, HIDDEN, rng),
            action: Dense::he_uniform(ACTION_DIM, HIDDEN, rng),
            output: Dense::he_uniform(HIDDEN, 1, rng),
        }
    }

    /// Layers in checkpoint order.
    pub fn layers(&self) -> [&Dense; 4] {
        [&self.obs_hidden, &self.obs_out, &self.action, &self.output]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense; 4] {
        [
            &mut self.obs_hidden,
            &mut self.obs_out,
            &mut self.action,
            &mut self.output,
        ]
    }

    pub const LAYER_NAMES: [&'static str; 4] = ["obs_hidden", "obs_out", "action", "output"];

    /// Flat parameter slices: weights then bias for each layer in order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn param(&self, mut index: usize) -> f64 {
        for t in self.tensors() {
            if index < t.len() {
                return t[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if index < t.len() {
                return &mut t[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn check_shape(&self) -> Result<()> {
        let expected = [
            (OBS_DIM, OBS_HIDDEN),
            (OBS_HIDDEN, HIDDEN),
            (ACTION_DIM, HIDDEN),
            (HIDDEN, 1),
        ];
        for ((layer, name), (i, o)) in self.layers().iter().zip(Self::LAYER_NAMES).zip(expected) {
            if layer.inputs != i || layer.outputs != o {
                return Err(DockError::InvalidInput(format!(
                    "layer {name} is {}x{}, expected {i}x{o}",
                    layer.inputs, layer.outputs
                )));
            }
            layer.check_shape(name)?;
        }
        Ok(())
    }

    /// Checks that `other` has the same layer shapes as `self`.
    pub fn check_same_shape(&self, other: &QNetwork) -> Result<()> {
        for ((a, b), name) in self.layers().iter().zip(other.layers()).zip(Self::LAYER_NAMES) {
            a.check_shape(name)?;
            b.check_shape(name)?;
            if a.weights.len() != b.weights.len() {
                return Err(DockError::ShapeMismatch {
                    what: name,
                    expected: a.weights.len(),
                    actual: b.weights.len(),
                });
            }
            if a.bias.len() != b.bias.len() {
                return Err(DockError::ShapeMismatch {
                    what: name,
                    expected: a.bias.len(),
                    actual: b.bias.len(),
                });
            }
        }
        Ok(())
    }

    pub fn obs_features(&self, obs: &[f64; OBS_DIM]) -> ObsFeatures {
        let mut pre = [0.0; OBS_HIDDEN];
        self.obs_hidden.forward_into(obs, &mut pre);
        let hidden = pre.map(|z| z.max(0.0));
        let mut out = [0.0; HIDDEN];
        self.obs_out.forward_into(&hidden, &mut out);
        ObsFeatures(out)
    }

    pub fn action_features(&self, action: &[f64; ACTION_DIM]) -> [f64; HIDDEN] {
        let mut out = [0.0; HIDDEN];
        self.action.forward_into(action, &mut out);
        out
    }

    /// Q-value from precomputed head outputs.
    #[inline]
    pub fn q_from_features(&self, obs: &ObsFeatures, action: &[f64; HIDDEN]) -> f64 {
        self.output.bias[0]
            + self
                .output
                .weights
                .iter()
                .zip(obs.0.iter().zip(action))
                .map(|(w, (o, a))| w * (o + a).max(0.0))
                .sum::<f64>()
    }

    /// Q-values of every encoded action for one state.
    pub fn q_values(&self, obs: &[f64; OBS_DIM], actions: &[[f64; ACTION_DIM]]) -> Vec<f64> {
        let features = self.obs_features(obs);
        actions
            .iter()
            .map(|a| self.q_from_features(&features, &self.action_features(a)))
            .collect()
    }

    pub fn forward_cached(&self, obs: &[f64; OBS_DIM], action: &[f64; ACTION_DIM]) -> ForwardCache {
        let mut obs_pre = [0.0; OBS_HIDDEN];
        self.obs_hidden.forward_into(obs, &mut obs_pre);
        let obs_hidden = obs_pre.map(|z| z.max(0.0));
        let mut merged_pre = [0.0; HIDDEN];
        self.obs_out.forward_into(&obs_hidden, &mut merged_pre);
        let act = self.action_features(action);
        for (m, a) in merged_pre.iter_mut().zip(act) {
            *m += a;
        }
        let merged = merged_pre.map(|z| z.max(0.0));
        let mut q = [0.0];
        self.output.forward_into(&merged, &mut q);
        ForwardCache {
            obs: *obs,
            action: *action,
            obs_pre,
            obs_hidden,
            merged_pre,
            merged,
            q: q[0],
        }
    }

    /// Adds `upstream * dQ/dtheta` for the cached sample into `grads`.
    pub fn backward_accumulate(&self, cache: &ForwardCache, upstream: f64, grads: &mut QNetwork) {
        if upstream == 0.0 {
            return;
        }
        grads.output.bias[0] += upstream;
        let mut d_merged = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            grads.output.weights[j] += upstream * cache.merged[j];
            if cache.merged_pre[j] > 0.0 {
                d_merged[j] = upstream * self.output.weights[j];
            }
        }

        let mut d_obs_hidden = [0.0; OBS_HIDDEN];
        for j in 0..HIDDEN {
            let g = d_merged[j];
            if g == 0.0 {
                continue;
            }
            grads.obs_out.bias[j] += g;
            grads.action.bias[j] += g;
            let row = &self.obs_out.weights[j * OBS_HIDDEN..(j + 1) * OBS_HIDDEN];
            let grow = &mut grads.obs_out.weights[j * OBS_HIDDEN..(j + 1) * OBS_HIDDEN];
            for k in 0..OBS_HIDDEN {
                grow[k] += g * cache.obs_hidden[k];
                d_obs_hidden[k] += g * row[k];
            }
            for k in 0..ACTION_DIM {
                grads.action.weights[j * ACTION_DIM + k] += g * cache.action[k];
            }
        }

        for k in 0..OBS_HIDDEN {
            if cache.obs_pre[k] <= 0.0 {
                continue;
            }
            let g = d_obs_hidden[k];
            grads.obs_hidden.bias[k] += g;
            let grow = &mut grads.obs_hidden.weights[k * OBS_DIM..(k + 1) * OBS_DIM];
            for (gw, x) in grow.iter_mut().zip(&cache.obs) {
                *gw += g * x;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t {
                *v *= factor;
            }
        }
    }
}

fn check_inputs(obs: &[f64], action: &[f64]) -> Result<()> {
    if obs.len() != OBS_DIM {
        return Err(DockError::ShapeMismatch {
            what: "observation",
            expected: OBS_DIM,
            actual: obs.len(),
        });
    }
    if action.len() != ACTION_DIM {
        return Err(DockError::ShapeMismatch {
            what: "action",
            expected: ACTION_DIM,
            actual: action.len(),
        });
    }
    if obs.iter().chain(action).any(|v| !v.is_finite()) {
        return Err(DockError::InvalidInput("non-finite network input".into()));
    }
    Ok(())
}

fn as_arrays(obs: &[f64], action: &[f64]) -> ([f64; OBS_DIM], [f64; ACTION_DIM]) {
    let mut o = [0.0; OBS_DIM];
    o.copy_from_slice(obs);
    let mut a = [0.0; ACTION_DIM];
    a.copy_from_slice(action);
    (o, a)
}

/// `Q(s, a)` for a 12-value observation stack and an encoded action.
pub fn q_forward(params: &QNetwork, obs: &[f64], action: &[f64]) -> Result<f64> {
    check_inputs(obs, action)?;
    let (o, a) = as_arrays(obs, action);
    Ok(params.forward_cached(&o, &a).q)
}

/// Gradient of a loss with respect to every parameter, given
/// `upstream = dLoss/dQ(s, a)`.
pub fn q_backward(params: &QNetwork, obs: &[f64], action: &[f64], upstream: f64) -> Result<QNetwork> {
    check_inputs(obs, action)?;
    let (o, a) = as_arrays(obs, action);
    let cache = params.forward_cached(&o, &a);
    let mut grads = QNetwork::zeros();
    params.backward_accumulate(&cache, upstream, &mut grads);
    Ok(grads)
}

/// Index of the highest-valued action; ties go to the lowest index.
pub fn argmax_action(params: &QNetwork, obs: &[f64; OBS_DIM], actions: &[[f64; ACTION_DIM]]) -> usize {
    argmax(&params.q_values(obs, actions))
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One optimizer step: `params <- params - update(grads)`.
pub fn sgd_step(params: &mut QNetwork, grads: &QNetwork, opt: &mut Optimizer) -> Result<()> {
    opt.step(params, grads)
}
