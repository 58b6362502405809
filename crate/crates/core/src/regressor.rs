//! A uniform fit/predict surface over the tree ensemble and the three
//! network families, including input/target standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbt::{fit_gbt, predict_gbt, GbtModel, GbtParams};
use crate::matrix::Matrix;
use crate::nn::{train, Activation, Net, NetSpec, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gbt,
    Mlp,
    Cnn,
    Bilstm,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Gbt, Family::Mlp, Family::Cnn, Family::Bilstm];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gbt => "gbt",
            Family::Mlp => "mlp",
            Family::Cnn => "cnn",
            Family::Bilstm => "bilstm",
        }
    }
}

/// Input condition a model is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    NoiseFree,
    Noisy,
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnParams {
    pub filters: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub dense: Vec<usize>,
    pub dense_activation: Activation,
    pub dropout: f64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilstmParams {
    pub hidden_units: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Gbt(GbtParams),
    Mlp(MlpParams),
    Cnn(CnnParams),
    Bilstm(BilstmParams),
}

fn train_config(batch_size: usize, learning_rate: f64) -> TrainConfig {
    TrainConfig {
        batch_size,
        learning_rate,
        ..TrainConfig::default()
    }
}

impl ModelSpec {
    /// Tuned hyperparameters reported for each family and input condition.
    pub fn tuned(family: Family, condition: Condition) -> Self {
        use Condition::*;
        match family {
            Family::Gbt => {
                let base = GbtParams::default();
                ModelSpec::Gbt(match condition {
                    NoiseFree | Filtered => base,
                    Noisy => GbtParams {
                        n_estimators: 50,
                        learning_rate: 0.3,
                        max_depth: 4,
                        ..base
                    },
                })
            }
            Family::Mlp => ModelSpec::Mlp(MlpParams {
                hidden: vec![60, 40],
                activation: Activation::Relu,
                dropout: 0.5,
                train: train_config(if condition == NoiseFree { 1024 } else { 512 }, 1e-3),
            }),
            Family::Cnn => {
                let (filters, kernel, dense) = match condition {
                    NoiseFree => (100, 4, 40),
                    Noisy => (150, 4, 40),
                    Filtered => (80, 3, 25),
                };
                ModelSpec::Cnn(CnnParams {
                    filters: vec![filters; 2],
                    kernel_sizes: vec![kernel; 2],
                    dense: vec![dense; 2],
                    dense_activation: Activation::Sigmoid,
                    dropout: 0.5,
                    train: train_config(512, 1e-4),
                })
            }
            Family::Bilstm => {
                let (hidden_units, batch) = match condition {
                    NoiseFree => (35, 128),
                    Noisy => (45, 1024),
                    Filtered => (35, 256),
                };
                ModelSpec::Bilstm(BilstmParams {
                    hidden_units,
                    train: train_config(batch, 8e-4),
                })
            }
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Gbt(_) => Family::Gbt,
            ModelSpec::Mlp(_) => Family::Mlp,
            ModelSpec::Cnn(_) => Family::Cnn,
            ModelSpec::Bilstm(_) => Family::Bilstm,
        }
    }

    /// Network training settings, if this is a network.
    pub fn train_config_mut(&mut self) -> Option<&mut TrainConfig> {
        match self {
            ModelSpec::Gbt(_) => None,
            ModelSpec::Mlp(p) => Some(&mut p.train),
            ModelSpec::Cnn(p) => Some(&mut p.train),
            ModelSpec::Bilstm(p) => Some(&mut p.train),
        }
    }

    fn net_spec(&self, n_features: usize, steps: usize) -> Result<NetSpec> {
        let sequence = || {
            if steps == 0 || n_features % steps != 0 {
                return Err(Error::arg(format!(
                    "{n_features} features cannot be read as {steps} equal steps"
                )));
            }
            Ok((steps, n_features / steps))
        };
        match self {
            ModelSpec::Gbt(_) => Err(Error::arg("tree ensembles have no network spec")),
            ModelSpec::Mlp(p) => {
                let hidden: Vec<_> = p.hidden.iter().map(|&u| (u, p.activation)).collect();
                Ok(NetSpec::mlp(n_features, &hidden, p.dropout))
            }
            ModelSpec::Cnn(p) => {
                if p.filters.len() != p.kernel_sizes.len() {
                    return Err(Error::arg("cnn needs one kernel size per filter count"));
                }
                let (l, c) = sequence()?;
                let conv: Vec<_> = p.filters.iter().copied().zip(p.kernel_sizes.iter().copied()).collect();
                let dense: Vec<_> = p.dense.iter().map(|&u| (u, p.dense_activation)).collect();
                Ok(NetSpec::cnn(l, c, &conv, &dense, p.dropout))
            }
            ModelSpec::Bilstm(p) => {
                let (l, c) = sequence()?;
                Ok(NetSpec::bilstm(l, c, p.hidden_units))
            }
        }
    }

    pub fn fit(&self, data: &TrainData<'_>) -> Result<FittedModel> {
        let x = data.x;
        if x.rows() != data.y.len() || x.rows() < 2 {
            return Err(Error::arg(format!(
                "need at least 2 rows with matching targets, got {} rows and {} targets",
                x.rows(),
                data.y.len()
            )));
        }
        let target = Standardizer::fit_column(data.y);
        let y = target.apply_column(data.y);
        match self {
            ModelSpec::Gbt(p) => {
                let params = GbtParams {
                    seed: data.seed,
                    ..p.clone()
                };
                Ok(FittedModel::Gbt {
                    model: fit_gbt(x, &y, &params)?,
                    target,
                })
            }
            _ => {
                let spec = self.net_spec(x.cols(), data.steps)?;
                let inputs = Standardizer::fit(x);
                let xs = inputs.apply(x)?;
                let mut cfg = match self {
                    ModelSpec::Mlp(p) => p.train.clone(),
                    ModelSpec::Cnn(p) => p.train.clone(),
                    ModelSpec::Bilstm(p) => p.train.clone(),
                    ModelSpec::Gbt(_) => unreachable!(),
                };
                cfg.seed = data.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
                let mut net = Net::new(spec, data.seed)?;
                let validation = match data.validation {
                    Some((vx, vy)) => Some((inputs.apply(vx)?, target.apply_column(vy))),
                    None => None,
                };
                let report = train(
                    &mut net,
                    &xs,
                    &y,
                    validation.as_ref().map(|(a, b)| (a, b.as_slice())),
                    &cfg,
                )?;
                Ok(FittedModel::Net {
                    net,
                    inputs,
                    target,
                    report,
                })
            }
        }
    }
}

/// Training inputs. `steps` says how many time steps a row holds (for
/// sequence models); `validation` drives early stopping for networks.
pub struct TrainData<'a> {
    pub x: &'a Matrix,
    pub y: &'a [f64],
    pub validation: Option<(&'a Matrix, &'a [f64])>,
    pub steps: usize,
    pub seed: u64,
}

/// Per-column affine standardization; constant columns are only centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows().max(1) as f64;
        let mut mean = vec![0.0; x.cols()];
        let mut sq = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (c, v) in x.row(r).iter().enumerate() {
                mean[c] += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for r in 0..x.rows() {
            for (c, v) in x.row(r).iter().enumerate() {
                sq[c] += (v - mean[c]) * (v - mean[c]);
            }
        }
        let scale = sq
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn fit_column(y: &[f64]) -> Self {
        Self::fit(&Matrix::from_vec(y.len(), 1, y.to_vec()).expect("column shape"))
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::arg(format!(
                "expected {} columns, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let cols = x.cols();
        let data = x
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % cols]) / self.scale[i % cols])
            .collect();
        Matrix::from_vec(x.rows(), cols, data)
    }

    pub fn apply_column(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.mean[0]) / self.scale[0]).collect()
    }

    pub fn invert_column(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v * self.scale[0] + self.mean[0]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Gbt {
        model: GbtModel,
        target: Standardizer,
    },
    Net {
        net: Net,
        inputs: Standardizer,
        target: Standardizer,
        report: TrainReport,
    },
}

impl FittedModel {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            FittedModel::Gbt { model, target } => Ok(target.invert_column(&predict_gbt(model, x)?)),
            FittedModel::Net {
                net,
                inputs,
                target,
                ..
            } => Ok(target.invert_column(&net.predict(&inputs.apply(x)?)?)),
        }
    }

    /// Total split gain per feature, for tree ensembles.
    pub fn intrinsic_importance(&self) -> Option<Vec<f64>> {
        match self {
            FittedModel::Gbt { model, .. } => Some(crate::gbt::gbt_importance(model)),
            FittedModel::Net { .. } => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Anything that can be fit to rows and targets and then predict.
pub trait Regressor {
    fn fit_model(&self, data: &TrainData<'_>) -> Result<FittedModel>;
}

impl Regressor for ModelSpec {
    fn fit_model(&self, data: &TrainData<'_>) -> Result<FittedModel> {
        self.fit(data)
    }
}
