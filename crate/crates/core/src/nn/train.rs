use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamState, Net};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds both the batch shuffle and the dropout masks.
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 1024,
            learning_rate: 1e-3,
            seed: 0,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// RMSE over the epoch's minibatches, in training mode.
    pub train_rmse: f64,
    pub validation_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// Epoch whose weights were kept when validating.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn rmse(pred: &[f64], y: &[f64]) -> f64 {
    (pred.iter().zip(y).map(|(p, o)| (p - o) * (p - o)).sum::<f64>() / y.len() as f64).sqrt()
}

/// Minibatch Adam on mean squared error over seeded shuffles. With a
/// validation set, the weights of the best validation epoch are restored
/// at the end.
pub fn train(
    net: &mut Net,
    x: &Matrix,
    y: &[f64],
    validation: Option<(&Matrix, &[f64])>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let n = x.rows();
    if n == 0 || y.len() != n {
        return Err(Error::arg(format!(
            "need matching non-empty rows and targets, got {n} rows and {} targets",
            y.len()
        )));
    }
    if x.cols() != net.spec.input_len() {
        return Err(Error::arg(format!(
            "network expects rows of {} values, got {}",
            net.spec.input_len(),
            x.cols()
        )));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::arg("batch size and learning rate must be positive"));
    }
    if let Some((vx, vy)) = validation {
        if vx.rows() != vy.len() || vx.rows() == 0 {
            return Err(Error::arg("validation rows and targets must match and be non-empty"));
        }
    }

    let width = x.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.learning_rate, &net.params);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rows = Vec::with_capacity(config.batch_size * width);
    let mut targets = Vec::with_capacity(config.batch_size);
    let mut report = TrainReport {
        history: Vec::new(),
        best_epoch: None,
        stopped_early: false,
    };
    let mut best: Option<(f64, Vec<super::Tensor>)> = None;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sq = 0.0;
        for chunk in order.chunks(config.batch_size) {
            rows.clear();
            targets.clear();
            for &r in chunk {
                rows.extend_from_slice(x.row(r));
                targets.push(y[r]);
            }
            let (loss, grads) = net
                .loss_and_grads(&rows, &targets, Some(&mut rng))
                .map_err(|e| Error::Training {
                    epoch,
                    reason: e.to_string(),
                })?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "non-finite loss".into(),
                });
            }
            sq += 2.0 * loss * chunk.len() as f64;
            adam_step(&mut net.params, &grads, &mut adam)?;
        }
        let validation_rmse = match validation {
            Some((vx, vy)) => {
                let pred = net.predict(vx).map_err(|e| Error::Training {
                    epoch,
                    reason: e.to_string(),
                })?;
                Some(rmse(&pred, vy))
            }
            None => None,
        };
        report.history.push(EpochStats {
            epoch,
            train_rmse: (sq / n as f64).sqrt(),
            validation_rmse,
        });
        if let Some(v) = validation_rmse {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, net.params.clone()));
                report.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if config.patience > 0 && since_best >= config.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        net.params = params;
    }
    Ok(report)
}
