//! A small reverse-mode network stack: dense, 1-D convolution,
//! bidirectional LSTM, dropout and flatten layers, trained with Adam on
//! mean squared error.
//!
//! Every sample enters as a flat row; `NetSpec::input_shape` says how to
//! read it (`[features]` or `[steps, channels]`, row-major). Arithmetic is
//! `f64` throughout.

mod layers;
mod lstm;
mod optim;
mod train;

pub use lstm::{bilstm_forward, LstmCell};
pub use optim::{adam_step, AdamState};
pub use train::{train, EpochStats, TrainConfig, TrainReport};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const NET_FORMAT: &str = "thermoflux-net";
pub const NET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::arg(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        activation: Activation,
    },
    Conv1d {
        filters: usize,
        kernel_size: usize,
        activation: Activation,
    },
    Bilstm {
        hidden_units: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// Dense hidden layers, each followed by dropout when `dropout > 0`,
    /// then a scalar identity output.
    pub fn mlp(input_dim: usize, hidden: &[(usize, Activation)], dropout: f64) -> Self {
        let mut layers = Vec::new();
        for &(units, activation) in hidden {
            layers.push(LayerSpec::Dense { units, activation });
            if dropout > 0.0 {
                layers.push(LayerSpec::Dropout { rate: dropout });
            }
        }
        layers.push(LayerSpec::Dense {
            units: 1,
            activation: Activation::Identity,
        });
        Self {
            input_shape: vec![input_dim],
            layers,
        }
    }

    /// Valid-padding ReLU convolutions over the step axis, flattened into
    /// dense layers, then a scalar output. No pooling.
    pub fn cnn(
        steps: usize,
        channels: usize,
        conv: &[(usize, usize)],
        dense: &[(usize, Activation)],
        dropout: f64,
    ) -> Self {
        let mut layers: Vec<LayerSpec> = conv
            .iter()
            .map(|&(filters, kernel_size)| LayerSpec::Conv1d {
                filters,
                kernel_size,
                activation: Activation::Relu,
            })
            .collect();
        layers.push(LayerSpec::Flatten);
        let head = NetSpec::mlp(0, dense, dropout);
        layers.extend(head.layers);
        Self {
            input_shape: vec![steps, channels],
            layers,
        }
    }

    /// One bidirectional LSTM layer whose averaged hidden sequence feeds a
    /// scalar dense output.
    pub fn bilstm(steps: usize, channels: usize, hidden_units: usize) -> Self {
        Self {
            input_shape: vec![steps, channels],
            layers: vec![
                LayerSpec::Bilstm { hidden_units },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Identity,
                },
            ],
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Input shape followed by every layer's output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty()
            || self.input_shape.len() > 2
            || self.input_shape.contains(&0)
        {
            return Err(Error::arg(format!(
                "input shape must be [features] or [steps, channels] with positive sizes, got {:?}",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().expect("non-empty");
            let bad = |what: &str| Error::arg(format!("layer {i}: {what}, input shape {cur:?}"));
            let next = match layer {
                LayerSpec::Dense { units, .. } => {
                    if cur.len() != 1 {
                        return Err(bad("dense needs a flat input"));
                    }
                    if *units == 0 {
                        return Err(bad("dense needs at least one unit"));
                    }
                    vec![*units]
                }
                LayerSpec::Conv1d {
                    filters,
                    kernel_size,
                    ..
                } => {
                    if cur.len() != 2 {
                        return Err(bad("conv1d needs a [steps, channels] input"));
                    }
                    if *filters == 0 || *kernel_size == 0 || *kernel_size > cur[0] {
                        return Err(bad("conv1d needs filters ≥ 1 and 1 ≤ kernel ≤ steps"));
                    }
                    vec![cur[0] - kernel_size + 1, *filters]
                }
                LayerSpec::Bilstm { hidden_units } => {
                    if cur.len() != 2 {
                        return Err(bad("bilstm needs a [steps, channels] input"));
                    }
                    if *hidden_units == 0 {
                        return Err(bad("bilstm needs at least one hidden unit"));
                    }
                    vec![cur[0], *hidden_units]
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(bad("dropout rate must lie in [0, 1)"));
                    }
                    cur.clone()
                }
                LayerSpec::Flatten => vec![cur.iter().product()],
            };
            shapes.push(next);
        }
        if shapes.last() != Some(&vec![1]) {
            return Err(Error::arg(format!(
                "network must end in a scalar, ends in {:?}",
                shapes.last().expect("non-empty")
            )));
        }
        Ok(shapes)
    }

    /// Parameter tensor shapes per layer.
    fn param_shapes(&self) -> Result<Vec<Vec<Vec<usize>>>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, inp)| match layer {
                LayerSpec::Dense { units, .. } => vec![vec![*units, inp[0]], vec![*units]],
                LayerSpec::Conv1d {
                    filters,
                    kernel_size,
                    ..
                } => vec![vec![*filters, *kernel_size, inp[1]], vec![*filters]],
                LayerSpec::Bilstm { hidden_units: h } => {
                    let cell = [vec![4 * h, inp[1]], vec![4 * h, *h], vec![4 * h]];
                    cell.iter().chain(cell.iter()).cloned().collect()
                }
                LayerSpec::Dropout { .. } | LayerSpec::Flatten => Vec::new(),
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub format: String,
    pub version: u32,
    pub spec: NetSpec,
    /// All parameter tensors, layer by layer.
    pub params: Vec<Tensor>,
}

impl Net {
    /// Glorot-uniform weights and zero biases, except LSTM forget-gate
    /// biases which start at 1.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        let per_layer = spec.param_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (layer, shapes) in spec.layers.iter().zip(per_layer) {
            for shape in shapes {
                let mut t = Tensor::zeros(shape.clone());
                if shape.len() >= 2 {
                    let receptive: usize = shape[2..].iter().product();
                    let fan_in = shape[1] * receptive;
                    let fan_out = shape[0] * receptive;
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    t.data
                        .iter_mut()
                        .for_each(|w| *w = rng.random_range(-limit..limit));
                } else if let LayerSpec::Bilstm { hidden_units: h } = layer {
                    t.data[*h..2 * h].iter_mut().for_each(|b| *b = 1.0);
                }
                params.push(t);
            }
        }
        Ok(Self {
            format: NET_FORMAT.into(),
            version: NET_VERSION,
            spec,
            params,
        })
    }

    /// Replaces parameters, checking shapes.
    pub fn with_params(spec: NetSpec, params: Vec<Tensor>) -> Result<Self> {
        let expected: Vec<Vec<usize>> = spec.param_shapes()?.into_iter().flatten().collect();
        let got: Vec<Vec<usize>> = params.iter().map(|t| t.shape.clone()).collect();
        if expected != got {
            return Err(Error::arg(format!(
                "parameter shapes {got:?} do not match spec {expected:?}"
            )));
        }
        Ok(Self {
            format: NET_FORMAT.into(),
            version: NET_VERSION,
            spec,
            params,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|t| Tensor::zeros(t.shape.clone()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Net = serde_json::from_str(text)?;
        if net.format != NET_FORMAT || net.version != NET_VERSION {
            return Err(Error::arg(format!(
                "unsupported network document {} v{}",
                net.format, net.version
            )));
        }
        Net::with_params(net.spec, net.params)
    }

    /// Inference on a batch of flat rows; dropout inactive.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let width = self.spec.input_len();
        if x.cols() != width {
            return Err(Error::arg(format!(
                "network expects rows of {width} values, got {}",
                x.cols()
            )));
        }
        const CHUNK: usize = 2048;
        let mut out = Vec::with_capacity(x.rows());
        for start in (0..x.rows()).step_by(CHUNK) {
            let end = (start + CHUNK).min(x.rows());
            let rows = &x.as_slice()[start * width..end * width];
            let (pred, _) = layers::forward(self, rows, end - start, None)?;
            out.extend(pred);
        }
        Ok(out)
    }

    /// Forward pass for one flat row. With `dropout_seed`, dropout masks
    /// are drawn from that seed.
    pub fn forward(&self, input: &[f64], dropout_seed: Option<u64>) -> Result<f64> {
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let (pred, _) = layers::forward(self, input, 1, rng.as_mut())?;
        Ok(pred[0])
    }

    /// Gradients of `½(pred − target)²` for one row, dropout inactive.
    pub fn backward(&self, input: &[f64], target: f64) -> Result<Vec<Tensor>> {
        let (_, grads) = self.loss_and_grads(input, &[target], None)?;
        Ok(grads)
    }

    /// Mean over the batch of `½(pred − y)²` and its gradients.
    pub fn loss_and_grads(
        &self,
        rows: &[f64],
        targets: &[f64],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Tensor>)> {
        let batch = targets.len();
        let (pred, trace) = layers::forward(self, rows, batch, rng)?;
        let mut loss = 0.0;
        let dout: Vec<f64> = pred
            .iter()
            .zip(targets)
            .map(|(p, y)| {
                loss += 0.5 * (p - y) * (p - y);
                (p - y) / batch as f64
            })
            .collect();
        let grads = layers::backward(self, &trace, dout, batch)?;
        Ok((loss / batch as f64, grads))
    }
}
