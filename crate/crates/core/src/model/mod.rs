//! Feedforward classifier and its optimizer.
//!
//! The network is `inputs -> [dense + ReLU]* -> features -> features * W`.
//! The final classifier `W` (D x C) has no bias so that an interpolated
//! classifier is exactly `W y~`.

pub mod container;

use std::path::Path;

use ndarray::{Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState, Vector};

/// One hidden layer: `relu(x * weights + biases)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// fan_in x fan_out
    pub weights: Matrix,
    pub biases: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hidden: Vec<DenseLayer>,
    /// D x C, no bias.
    pub final_weights: Matrix,
}

/// Parameter gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    /// He-style uniform initialization: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)),
    /// zero biases.
    pub fn init(
        input_dim: usize,
        hidden_dims: &[usize],
        num_classes: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 || hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument {
                arg: "model dims",
                reason: format!(
                    "input {input_dim}, hidden {hidden_dims:?}, classes {num_classes} must all be positive"
                ),
            });
        }
        let mut uniform = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            Matrix::from_shape_fn((fan_in, fan_out), |_| rng.uniform_range(-bound, bound))
        };
        let mut hidden = Vec::with_capacity(hidden_dims.len());
        let mut fan_in = input_dim;
        for &width in hidden_dims {
            hidden.push(DenseLayer {
                weights: uniform(fan_in, width),
                biases: Vector::zeros(width),
            });
            fan_in = width;
        }
        let final_weights = uniform(fan_in, num_classes);
        Ok(Self {
            hidden,
            final_weights,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self
                .hidden
                .iter()
                .map(|l| DenseLayer {
                    weights: Matrix::zeros(l.weights.dim()),
                    biases: Vector::zeros(l.biases.len()),
                })
                .collect(),
            final_weights: Matrix::zeros(self.final_weights.dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.final_weights.nrows(), |l| l.weights.nrows())
    }

    pub fn feature_dim(&self) -> usize {
        self.final_weights.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.final_weights.ncols()
    }

    /// Checks that consecutive layer shapes chain.
    pub fn validate(&self) -> Result<()> {
        let mut width = self.input_dim();
        for (k, layer) in self.hidden.iter().enumerate() {
            if layer.weights.nrows() != width || layer.biases.len() != layer.weights.ncols() {
                return Err(Error::dims(
                    "ModelParams",
                    format!(
                        "hidden layer {k}: weights {:?}, biases {}, incoming width {width}",
                        layer.weights.dim(),
                        layer.biases.len()
                    ),
                ));
            }
            width = layer.weights.ncols();
        }
        if self.final_weights.nrows() != width {
            return Err(Error::dims(
                "ModelParams",
                format!(
                    "final weights {:?} after width {width}",
                    self.final_weights.dim()
                ),
            ));
        }
        Ok(())
    }

    /// Every parameter tensor as a flat mutable slice, tagged `true` for biases.
    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out = Vec::with_capacity(2 * self.hidden.len() + 1);
        for layer in &mut self.hidden {
            out.push((
                layer.weights.as_slice_mut().expect("standard layout"),
                false,
            ));
            out.push((layer.biases.as_slice_mut().expect("standard layout"), true));
        }
        out.push((
            self.final_weights.as_slice_mut().expect("standard layout"),
            false,
        ));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.hidden.len() + 1);
        for layer in &self.hidden {
            out.push(layer.weights.as_slice().expect("standard layout"));
            out.push(layer.biases.as_slice().expect("standard layout"));
        }
        out.push(self.final_weights.as_slice().expect("standard layout"));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Intermediates of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub inputs: Matrix,
    /// Pre-activation of each hidden layer.
    pub pre_activations: Vec<Matrix>,
    /// Penultimate representation (B x D); the inputs when there are no hidden layers.
    pub features: Matrix,
    pub logits: Matrix,
}

pub fn forward(params: &ModelParams, inputs: &Matrix) -> Result<ForwardCache> {
    if inputs.ncols() != params.input_dim() {
        return Err(Error::dims(
            "forward",
            format!(
                "inputs have width {}, model expects {}",
                inputs.ncols(),
                params.input_dim()
            ),
        ));
    }
    let mut pre_activations = Vec::with_capacity(params.hidden.len());
    let mut h = inputs.clone();
    for layer in &params.hidden {
        let z = h.dot(&layer.weights) + &layer.biases;
        h = z.mapv(|v| v.max(0.0));
        pre_activations.push(z);
    }
    let logits = h.dot(&params.final_weights);
    Ok(ForwardCache {
        inputs: inputs.clone(),
        pre_activations,
        features: h,
        logits,
    })
}

/// Logits only.
pub fn predict(params: &ModelParams, inputs: &Matrix) -> Result<Matrix> {
    Ok(forward(params, inputs)?.logits)
}

/// Gradients of every parameter given the gradient at the logits.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_logits: &Matrix,
) -> Result<Gradients> {
    if grad_logits.dim() != cache.logits.dim() {
        return Err(Error::dims(
            "backward",
            format!(
                "logit gradient {:?} vs logits {:?}",
                grad_logits.dim(),
                cache.logits.dim()
            ),
        ));
    }
    let mut grads = params.zeros_like();
    grads.final_weights = cache.features.t().dot(grad_logits);
    let mut upstream = grad_logits.dot(&params.final_weights.t());
    for k in (0..params.hidden.len()).rev() {
        let z = &cache.pre_activations[k];
        Zip::from(&mut upstream)
            .and(z)
            .for_each(|g, &zv| *g = if zv > 0.0 { *g } else { 0.0 });
        let layer_input = if k == 0 {
            cache.inputs.clone()
        } else {
            cache.pre_activations[k - 1].mapv(|v| v.max(0.0))
        };
        grads.hidden[k].weights = layer_input.t().dot(&upstream);
        grads.hidden[k].biases = upstream.sum_axis(Axis(0));
        if k > 0 {
            upstream = upstream.dot(&params.hidden[k].weights.t());
        }
    }
    Ok(grads)
}

/// SGD hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Completed-epoch counts after which the rate is multiplied by `lr_decay`.
    pub lr_steps: Vec<usize>,
    pub lr_decay: f64,
}

impl SgdConfig {
    /// Decay boundaries at 1/4, 1/2 and 3/4 of training (50/100/150 of 200).
    pub fn default_steps(epochs: usize) -> Vec<usize> {
        [0.25, 0.5, 0.75]
            .iter()
            .map(|f| (epochs as f64 * f).round() as usize)
            .collect()
    }

    pub fn for_epochs(epochs: usize) -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_steps: Self::default_steps(epochs),
            lr_decay: 0.2,
        }
    }

    /// Rate in effect once `completed_epochs` epochs have finished.
    pub fn lr_after(&self, completed_epochs: usize) -> f64 {
        let decays = self
            .lr_steps
            .iter()
            .filter(|&&b| completed_epochs >= b)
            .count();
        self.lr * self.lr_decay.powi(decays as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub buffers: ModelParams,
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: &SgdConfig) -> Self {
        Self {
            buffers: params.zeros_like(),
            step: 0,
            epoch: 0,
            lr: config.lr_after(0),
        }
    }

    /// Marks an epoch complete and applies any decay boundary it crossed.
    pub fn finish_epoch(&mut self, config: &SgdConfig) {
        self.epoch += 1;
        self.lr = config.lr_after(self.epoch);
    }
}

/// Heavy-ball SGD with L2 weight decay on weights (not biases):
/// `buf = momentum * buf + grad + wd * param; param -= lr * buf`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    config: &SgdConfig,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    let mut param_tensors = params.tensors_mut();
    let mut buf_tensors = state.buffers.tensors_mut();
    if grad_tensors.len() != param_tensors.len()
        || grad_tensors
            .iter()
            .zip(&param_tensors)
            .any(|(g, (p, _))| g.len() != p.len())
    {
        return Err(Error::dims(
            "sgd_step",
            "gradient layout differs from parameters",
        ));
    }
    let lr = state.lr;
    for ((grad, (param, is_bias)), (buf, _)) in grad_tensors
        .iter()
        .zip(param_tensors.iter_mut())
        .zip(buf_tensors.iter_mut())
    {
        let wd = if *is_bias { 0.0 } else { config.weight_decay };
        for ((p, g), b) in param.iter_mut().zip(grad.iter()).zip(buf.iter_mut()) {
            *b = config.momentum * *b + (g + wd * *p);
            *p -= lr * *b;
        }
    }
    state.step += 1;
    Ok(())
}

/// Per-channel input standardization fitted on a training split.
///
/// Inputs are laid out channel-planar: channel k owns the contiguous block
/// `[k * len, (k + 1) * len)` of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn fit(images: &Matrix, channels: usize) -> Result<Self> {
        let width = images.ncols();
        if channels == 0 || !width.is_multiple_of(channels) || images.nrows() == 0 {
            return Err(Error::dims(
                "Standardizer::fit",
                format!(
                    "{} rows of width {width} with {channels} channels",
                    images.nrows()
                ),
            ));
        }
        let len = width / channels;
        let n = (images.nrows() * len) as f64;
        let mut mean = vec![0.0; channels];
        let mut std = vec![0.0; channels];
        for k in 0..channels {
            let block = images.slice(ndarray::s![.., k * len..(k + 1) * len]);
            let m = block.sum() / n;
            let var = block.fold(0.0, |acc, v| acc + (v - m) * (v - m)) / n;
            mean[k] = m;
            // constant channels are only centred
            std[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, images: &mut Matrix) -> Result<()> {
        let channels = self.channels();
        let width = images.ncols();
        if channels == 0 || !width.is_multiple_of(channels) {
            return Err(Error::dims(
                "Standardizer::apply",
                format!("width {width} with {channels} channels"),
            ));
        }
        let len = width / channels;
        for mut row in images.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let k = j / len;
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        Ok(())
    }
}

/// A trained model together with the input statistics it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub standardizer: Option<Standardizer>,
}

impl Checkpoint {
    /// Tensor order: a 1 x 2 header `[hidden layer count, has standardizer]`,
    /// then each hidden layer's weights and 1 x width biases, the final
    /// weights, and optionally a 2 x channels `[mean; std]` table.
    pub fn to_tensors(&self) -> Vec<Matrix> {
        let mut t = vec![Matrix::from_shape_vec(
            (1, 2),
            vec![
                self.params.hidden.len() as f64,
                self.standardizer.is_some() as u8 as f64,
            ],
        )
        .unwrap()];
        for layer in &self.params.hidden {
            t.push(layer.weights.clone());
            t.push(layer.biases.clone().insert_axis(Axis(0)));
        }
        t.push(self.params.final_weights.clone());
        if let Some(st) = &self.standardizer {
            let mut table = Matrix::zeros((2, st.channels()));
            table.row_mut(0).assign(&Vector::from(st.mean.clone()));
            table.row_mut(1).assign(&Vector::from(st.std.clone()));
            t.push(table);
        }
        t
    }

    pub fn from_tensors(tensors: Vec<Matrix>) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        let mut it = tensors.into_iter();
        let header = it.next().ok_or_else(|| bad("empty"))?;
        if header.dim() != (1, 2) {
            return Err(bad("header shape"));
        }
        let hidden_count = header[[0, 0]] as usize;
        let has_std = header[[0, 1]] != 0.0;
        let mut hidden = Vec::with_capacity(hidden_count);
        for _ in 0..hidden_count {
            let weights = it.next().ok_or_else(|| bad("missing layer weights"))?;
            let biases = it.next().ok_or_else(|| bad("missing layer biases"))?;
            if biases.nrows() != 1 {
                return Err(bad("bias shape"));
            }
            hidden.push(DenseLayer {
                weights,
                biases: biases.row(0).to_owned(),
            });
        }
        let final_weights = it.next().ok_or_else(|| bad("missing final weights"))?;
        let standardizer = if has_std {
            let table = it.next().ok_or_else(|| bad("missing standardizer"))?;
            if table.nrows() != 2 {
                return Err(bad("standardizer shape"));
            }
            Some(Standardizer {
                mean: table.row(0).to_vec(),
                std: table.row(1).to_vec(),
            })
        } else {
            None
        };
        if it.next().is_some() {
            return Err(bad("unexpected extra tensors"));
        }
        let params = ModelParams {
            hidden,
            final_weights,
        };
        params.validate()?;
        Ok(Self {
            params,
            standardizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, container::Kind::Checkpoint, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        match container::read_file(path)? {
            (container::Kind::Checkpoint, tensors) => Self::from_tensors(tensors),
            (kind, _) => Err(Error::Format(format!(
                "{} holds {kind:?}, not a checkpoint",
                path.display()
            ))),
        }
    }
}
