//! Evaluation protocols: optimality ratio against an oracle, single-sample
//! latency, transfer learning, the encoder/decoder ablation grid and the
//! latency benchmark.

mod report;

pub use report::{
    write_csv, AblationCell, AblationReport, BenchRow, CsvRecord, EvalReport, TransferRow, ABLATION_HEADER, BENCH_HEADER,
    REPORT_HEADER, TRANSFER_HEADER,
};

use crate::model::{CheckpointError, DecoderKind, EncoderKind, Model, ModelConfig, ModelError};
use crate::oracle::{solve, OracleConfig, OracleError, OracleMethod};
use crate::sysmodel::{ChannelSample, Dataset, DatasetError, SysError};
use crate::training::{fine_tune, mean_ee, train, TrainConfig, TrainError};
use std::time::Instant;
use thiserror::Error;

pub const WARMUP_PASSES: usize = 10;
pub const MIN_TIMED_PASSES: usize = 100;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    System(#[from] SysError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `100 · mean_ee / oracle_mean_ee`.
pub fn optimality_ratio(mean_ee: f64, oracle_mean_ee: f64) -> f64 {
    100.0 * mean_ee / oracle_mean_ee
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub passes: usize,
}

impl LatencyStats {
    /// Summary of raw timings in milliseconds (nearest-rank percentiles).
    pub fn from_samples(times_ms: &[f64]) -> Self {
        assert!(!times_ms.is_empty(), "no timings");
        let mut sorted = times_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |q: f64| sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        Self {
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50_ms: rank(0.5),
            p95_ms: rank(0.95),
            passes: sorted.len(),
        }
    }
}

/// Times single-sample forward passes on the calling thread: 10 untimed
/// warm-ups, then `max(passes, 100)` timed passes cycling through `samples`.
pub fn measure_latency(model: &Model, samples: &[ChannelSample], passes: usize) -> Result<LatencyStats, ModelError> {
    assert!(!samples.is_empty(), "no samples to time");
    for s in samples.iter().cycle().take(WARMUP_PASSES) {
        std::hint::black_box(model.forward(s)?);
    }
    let passes = passes.max(MIN_TIMED_PASSES);
    let mut times = Vec::with_capacity(passes);
    for s in samples.iter().cycle().take(passes) {
        let t = Instant::now();
        std::hint::black_box(model.forward(s)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyStats::from_samples(&times))
}

/// Identifies a model and the data it is evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalContext {
    pub dataset_id: String,
    pub k_train: usize,
    pub seed: u64,
    pub oracle_method: OracleMethod,
    pub latency_passes: usize,
}

/// Mean EE of `model` on `samples` against per-sample oracle values.
pub fn evaluate(
    model: &Model,
    samples: &[ChannelSample],
    oracle_ee: &[f64],
    ctx: &EvalContext,
) -> Result<EvalReport, ExperimentError> {
    if samples.is_empty() {
        return Err(ExperimentError::Config("evaluation needs at least one sample".into()));
    }
    if oracle_ee.len() != samples.len() {
        return Err(ExperimentError::Config(format!(
            "{} oracle values for {} samples",
            oracle_ee.len(),
            samples.len()
        )));
    }
    let mean = mean_ee(model, samples)?;
    let oracle_mean = oracle_ee.iter().sum::<f64>() / oracle_ee.len() as f64;
    let latency = measure_latency(model, samples, ctx.latency_passes)?;
    Ok(EvalReport {
        model_id: model.config().model_id(),
        dataset_id: ctx.dataset_id.clone(),
        k_train: ctx.k_train,
        k_test: samples[0].k(),
        mean_ee: mean,
        oracle_mean_ee: oracle_mean,
        optimality_ratio_pct: optimality_ratio(mean, oracle_mean),
        latency_mean_ms: latency.mean_ms,
        latency_p50_ms: latency.p50_ms,
        latency_p95_ms: latency.p95_ms,
        latency_passes: latency.passes,
        samples: samples.len(),
        seed: ctx.seed,
        oracle_method: ctx.oracle_method.to_string(),
    })
}

/// Held-out test data with its oracle mean.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub samples: Vec<ChannelSample>,
    pub oracle_mean_ee: f64,
}

impl TestSet {
    pub fn new(samples: Vec<ChannelSample>, oracle_ee: &[f64]) -> Result<Self, ExperimentError> {
        if samples.is_empty() || oracle_ee.len() != samples.len() {
            return Err(ExperimentError::Config(
                "test set needs one oracle value per sample".into(),
            ));
        }
        Ok(Self {
            oracle_mean_ee: oracle_ee.iter().sum::<f64>() / oracle_ee.len() as f64,
            samples,
        })
    }

    pub fn k(&self) -> usize {
        self.samples[0].k()
    }

    pub fn ratio(&self, model: &Model) -> Result<f64, ModelError> {
        Ok(optimality_ratio(mean_ee(model, &self.samples)?, self.oracle_mean_ee))
    }
}

/// Plain scaling versus fine-tuning `base` (trained on `k_train` users) on
/// `data`, one row per epoch budget. `retrain_epochs` adds a column for a
/// model trained from scratch on `data`.
pub fn transfer(
    base: &Model,
    k_train: usize,
    data: &Dataset,
    test: &TestSet,
    budgets: &[usize],
    config: &TrainConfig,
    retrain_epochs: Option<usize>,
) -> Result<Vec<TransferRow>, ExperimentError> {
    if budgets.is_empty() {
        return Err(ExperimentError::Config("at least one epoch budget is required".into()));
    }
    let scaling = test.ratio(base)?;
    let retrained = match retrain_epochs {
        Some(epochs) => {
            let cfg = TrainConfig { epochs, ..config.clone() };
            let out = train(base, data, &cfg)?;
            let mut m = base.clone();
            m.set_params(out.params)?;
            Some(test.ratio(&m)?)
        }
        None => None,
    };
    budgets
        .iter()
        .map(|&epochs| {
            let cfg = TrainConfig { epochs, ..config.clone() };
            let out = fine_tune(base, data, &cfg)?;
            let mut m = base.clone();
            m.set_params(out.params)?;
            Ok(TransferRow {
                k_train,
                k_test: test.k(),
                epochs,
                scaling_pct: scaling,
                fine_tuned_pct: test.ratio(&m)?,
                retrained_pct: retrained,
                seed: config.seed,
            })
        })
        .collect()
}

/// Trains every encoder × decoder combination on `data` with the same
/// configuration and evaluates each on every test set.
pub fn ablate(
    base: &ModelConfig,
    data: &Dataset,
    tests: &[TestSet],
    encoders: &[EncoderKind],
    decoders: &[DecoderKind],
    config: &TrainConfig,
) -> Result<AblationReport, ExperimentError> {
    if encoders.is_empty() || decoders.is_empty() || tests.is_empty() {
        return Err(ExperimentError::Config(
            "ablation needs at least one encoder, decoder and test set".into(),
        ));
    }
    let mut cells = Vec::new();
    for &encoder in encoders {
        for &decoder in decoders {
            let cfg = ModelConfig {
                encoder_kind: encoder,
                decoder_kind: decoder,
                ..base.clone()
            };
            let mut model = Model::new(cfg, data.n_t())?;
            let out = train(&model, data, config)?;
            model.set_params(out.params)?;
            let ratios = tests.iter().map(|t| t.ratio(&model)).collect::<Result<_, _>>()?;
            cells.push((encoder, decoder, ratios));
        }
    }
    Ok(AblationReport::new(
        data.k(),
        tests.iter().map(TestSet::k).collect(),
        config.seed,
        cells,
    ))
}

/// Model latency and single-threaded oracle time on the same samples.
pub fn bench(
    model: &Model,
    samples: &[ChannelSample],
    passes: usize,
    oracle: &OracleConfig,
    oracle_samples: usize,
) -> Result<BenchRow, ExperimentError> {
    if samples.is_empty() {
        return Err(ExperimentError::Config("bench needs at least one sample".into()));
    }
    let latency = measure_latency(model, samples, passes)?;
    let n = oracle_samples.clamp(1, samples.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let start = Instant::now();
    pool.install(|| samples[..n].iter().try_for_each(|s| solve(s, oracle).map(drop)))?;
    let oracle_ms = start.elapsed().as_secs_f64() * 1e3 / n as f64;
    Ok(BenchRow {
        model_id: model.config().model_id(),
        k_test: samples[0].k(),
        n_t: samples[0].n_t(),
        samples: samples.len(),
        passes: latency.passes,
        latency_mean_ms: latency.mean_ms,
        latency_p50_ms: latency.p50_ms,
        latency_p95_ms: latency.p95_ms,
        oracle_mean_ms: oracle_ms,
        oracle_samples: n,
        oracle_method: oracle.method.to_string(),
    })
}

#[cfg(test)]
mod tests;
