//! Unsupervised training: He initialisation, the `−mean EE` loss, Adam and
//! the epoch loop with validation-based parameter selection.

mod adam;
mod init;
mod objective;

pub use adam::{Adam, AdamState};
pub use init::{he_init, OUTPUT_INIT_SCALE, SPLINE_INIT_STD};
pub use objective::{
    batch_loss, batch_loss_on_tape, energy_efficiency_on_tape, loss_and_gradient,
    weighted_rate_and_power_on_tape,
};

use crate::model::{Model, ModelError, ParameterSet};
use crate::sysmodel::{energy_efficiency, ChannelSample, Dataset};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;
use thiserror::Error;

pub const LOG_HEADER: &str = "epoch,train_loss,val_ee,wall_ms";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset has n_t = {data}, model expects n_t = {model}")]
    AntennaMismatch { model: usize, data: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of the dataset (taken from the end) held out for validation.
    pub val_fraction: f64,
    pub dataset: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub fine_tune_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            val_fraction: 0.1,
            dataset: None,
            checkpoint_out: None,
            fine_tune_from: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> Adam {
        Adam {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Checks everything except the epoch count.
    fn validate_common(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.validate_common()?;
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ee: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the highest validation EE, or the
    /// initial parameters when no epoch ran.
    pub params: ParameterSet,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

impl TrainOutcome {
    pub fn best_val_ee(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.log[e - 1].val_ee)
    }
}

/// Splits off the trailing validation part: `(train, validation)`.
pub fn split_validation(samples: &[ChannelSample], fraction: f64) -> (&[ChannelSample], &[ChannelSample]) {
    let n = samples.len();
    let val = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    samples.split_at(n - val)
}

/// Mean EE of the model's (feasible) output over `samples`.
pub fn mean_ee(model: &Model, samples: &[ChannelSample]) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let values: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let w = model.forward(s)?;
            Ok(energy_efficiency(s, &w).expect("forward output matches sample shape"))
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(values.iter().sum::<f64>() / samples.len() as f64)
}

/// He-initialises `model` with `config.seed` and trains it.
pub fn train(model: &Model, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_observed(model, dataset, config, &mut |_| {})
}

pub fn train_observed(
    model: &Model,
    dataset: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let mut model = model.clone();
    he_init(model.params_mut(), config.seed);
    run(model, dataset, config, observer)
}

/// Same loop as [`train`], starting from the parameters already in `model`.
/// Zero epochs returns them unchanged.
pub fn fine_tune(model: &Model, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    fine_tune_observed(model, dataset, config, &mut |_| {})
}

pub fn fine_tune_observed(
    model: &Model,
    dataset: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate_common()?;
    run(model.clone(), dataset, config, observer)
}

fn run(
    mut model: Model,
    dataset: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    if dataset.n_t() != model.n_t() {
        return Err(TrainError::AntennaMismatch {
            model: model.n_t(),
            data: dataset.n_t(),
        });
    }
    if dataset.len() < 2 {
        return Err(TrainError::Config("dataset needs at least 2 samples".into()));
    }
    if let Some(s) = dataset.samples().first() {
        model.check_sample(s)?;
    }
    let (train_set, val_set) = split_validation(dataset.samples(), config.val_fraction);
    let adam = config.adam();
    let mut state = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParameterSet)> = None;
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&ChannelSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = loss_and_gradient(&model, &batch)?;
            state.step(&adam, model.params_mut(), &grads);
            loss_sum += loss;
            batches += 1;
        }
        let val_ee = mean_ee(&model, val_set)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_ee,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observer(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|(_, ee, _)| val_ee > *ee) {
            best = Some((epoch, val_ee, model.params().clone()));
        }
    }

    Ok(match best {
        Some((epoch, _, params)) => TrainOutcome {
            params,
            log,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            params: model.params().clone(),
            log,
            best_epoch: None,
        },
    })
}

/// Writes the log as CSV with [`LOG_HEADER`].
pub fn write_log_csv(log: &[EpochLog], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for e in log {
        writeln!(out, "{},{},{},{:.3}", e.epoch, e.train_loss, e.val_ee, e.wall_ms)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
