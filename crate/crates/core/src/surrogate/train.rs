//! Mini-batch training with early stopping, plus a finite-difference gradient check.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Adam, SurrogateRegressor};
use crate::error::{check_width, Error, Result};
use crate::mask::HeadMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without a new best validation error before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            patience: 5,
            max_epochs: 500,
            validation_fraction: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch size and max epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config(format!(
                "validation fraction {} must lie in [0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub history: Vec<EpochStats>,
}

/// Fits a regressor of shape `layer_sizes` to `(masks, targets)`.
///
/// A shuffled `validation_fraction` of the rows is held out. Training stops
/// after `patience` epochs without improving the held-out error, and the
/// parameters of the best epoch are returned.
pub fn train(
    masks: &[HeadMask],
    targets: &[f64],
    layer_sizes: &[usize],
    config: &TrainConfig,
) -> Result<(SurrogateRegressor, TrainReport)> {
    config.validate()?;
    if masks.is_empty() || masks.len() != targets.len() {
        return Err(Error::data(format!(
            "{} masks and {} targets",
            masks.len(),
            targets.len()
        )));
    }
    for m in masks {
        check_width(layer_sizes[0], m.len())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = SurrogateRegressor::new(layer_sizes, &mut rng)?;

    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.shuffle(&mut rng);
    let n_val =
        ((masks.len() as f64 * config.validation_fraction).round() as usize).min(masks.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = if val_idx.is_empty() {
        train_idx
    } else {
        val_idx
    };
    let mut train_idx = train_idx.to_vec();

    let mean = train_idx.iter().map(|&i| targets[i]).sum::<f64>() / train_idx.len() as f64;
    model.set_output_bias(mean);

    let val_masks: Vec<HeadMask> = val_idx.iter().map(|&i| masks[i].clone()).collect();
    let val_targets: Vec<f64> = val_idx.iter().map(|&i| targets[i]).collect();

    let mut adam = Adam::new(model.parameter_count(), config.learning_rate);
    let mut grad = vec![0.0; model.parameter_count()];
    let mut best = (f64::INFINITY, 0usize, model.clone(), 0.0);
    let mut history = Vec::new();
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        for (batch, chunk) in train_idx.chunks(config.batch_size).enumerate() {
            let loss = model.loss_and_gradient(masks, targets, chunk, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    detail: format!("batch loss {loss}, learning rate {}", config.learning_rate),
                });
            }
            sum += loss * chunk.len() as f64;
            adam.update(model.parameters_mut(), &grad);
        }
        let train_mse = sum / train_idx.len() as f64;
        let validation_mse = model.mse(&val_masks, &val_targets);
        if !validation_mse.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                detail: format!("validation error {validation_mse}"),
            });
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            validation_mse,
        });
        log::debug!("epoch {epoch}: train {train_mse:.6} validation {validation_mse:.6}");
        if validation_mse < best.0 {
            best = (validation_mse, epoch, model.clone(), train_mse);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (validation_mse, best_epoch, model, train_mse) = best;
    let report = TrainReport {
        seed: config.seed,
        epochs_run: history.len(),
        best_epoch,
        train_mse,
        validation_mse,
        train_samples: train_idx.len(),
        validation_samples: val_masks.len(),
        history,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation crossed a rectifier kink.
    pub skipped: usize,
}

/// Compares the analytic loss gradient against central differences with
/// step `step`, for every parameter.
pub fn finite_diff_check(
    model: &SurrogateRegressor,
    masks: &[HeadMask],
    targets: &[f64],
    step: f64,
) -> FdReport {
    let indices: Vec<usize> = (0..masks.len()).collect();
    let mut grad = vec![0.0; model.parameter_count()];
    model.loss_and_gradient(masks, targets, &indices, &mut grad);
    let patterns: Vec<Vec<bool>> = masks.iter().map(|m| model.activation_pattern(m)).collect();

    let mut probe = model.clone();
    let mut scratch = vec![0.0; model.parameter_count()];
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    #[allow(clippy::needless_range_loop)]
    for p in 0..model.parameter_count() {
        let original = model.parameters()[p];
        let mut loss_at = |value: f64, probe: &mut SurrogateRegressor| {
            probe.parameters_mut()[p] = value;
            let same = masks
                .iter()
                .zip(&patterns)
                .all(|(m, pat)| probe.activation_pattern(m) == *pat);
            let loss = probe.loss_and_gradient(masks, targets, &indices, &mut scratch);
            (loss, same)
        };
        let (plus, same_plus) = loss_at(original + step, &mut probe);
        let (minus, same_minus) = loss_at(original - step, &mut probe);
        probe.parameters_mut()[p] = original;
        if !(same_plus && same_minus) {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (grad[p] - numeric).abs() / (numeric.abs() + 1e-12);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    report
}
