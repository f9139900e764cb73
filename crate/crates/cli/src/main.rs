//! `kfbf`: datasets, training, evaluation, transfer, ablation and latency
//! benchmarks for the learned beamformers in `kfbf-core`.

mod error;
mod settings;

use clap::{Args, Parser, Subcommand};
use error::CliError;
use kfbf_core::experiment::{
    self, write_csv, CsvRecord, EvalContext, TestSet, ABLATION_HEADER, BENCH_HEADER, REPORT_HEADER, TRANSFER_HEADER,
};
use kfbf_core::model::{
    read_checkpoint, write_checkpoint, Architecture, Checkpoint, DecoderKind, EncoderKind, Model, ModelConfig,
};
use kfbf_core::oracle::{load_or_solve, sidecar_path, solve_all, OracleConfig, OracleMethod};
use kfbf_core::sysmodel::{generate_rayleigh, read_dataset, write_dataset, ChannelSample, Dataset, SystemConfig};
use kfbf_core::training::{fine_tune_observed, train_observed, write_log_csv, EpochLog, TrainConfig};
use serde::Serialize;
use settings::Settings;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kfbf", version, about = "Learned energy-efficient MISO beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Rayleigh-fading dataset.
    GenData(GenDataArgs),
    /// Train a model from He initialisation (or fine-tune a checkpoint).
    Train(TrainArgs),
    /// Evaluate a checkpoint against the oracle.
    Eval(EvalArgs),
    /// Plain scaling versus fine-tuning on a new user count.
    Transfer(TransferArgs),
    /// Train and evaluate the encoder x decoder grid.
    Ablate(AblateArgs),
    /// Time single-sample inference and the oracle on the same samples.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// key = value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise power per user (W).
    #[arg(long)]
    noise: Option<f64>,
    /// Transmit power budget (W).
    #[arg(long)]
    pmax: Option<f64>,
    /// Circuit power (W).
    #[arg(long)]
    pc: Option<f64>,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log CSV (default: `<out>.log.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Start from this checkpoint instead of He initialisation.
    #[arg(long)]
    fine_tune_from: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    decoder: Option<String>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct OracleOpts {
    /// pga_multistart, dinkelbach_sca or closed_form_k1.
    #[arg(long)]
    oracle_method: Option<String>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    oracle_seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Oracle sidecar CSV (default: `<data>.oracle.csv`).
    #[arg(long)]
    oracle_cache: Option<PathBuf>,
    /// JSON report; the CSV row goes next to it with extension `.csv`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Timed forward passes (at least 100).
    #[arg(long)]
    passes: Option<usize>,
    #[command(flatten)]
    oracle: OracleOpts,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Fine-tuning data at the new user count.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Test data (default: the trailing `test_fraction` of --data).
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Comma-separated epoch budgets.
    #[arg(long)]
    epochs: Option<String>,
    /// Also train from scratch for this many epochs.
    #[arg(long)]
    retrain_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleOpts,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    encoders: Option<String>,
    #[arg(long)]
    decoders: Option<String>,
    /// Samples per generated test set (K_Tr - 1, K_Tr, K_Tr + 1).
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    test_seed: Option<u64>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    opts: TrainOpts,
    #[command(flatten)]
    oracle: OracleOpts,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Timed forward passes (at least 100).
    #[arg(long)]
    repeats: Option<usize>,
    /// Samples solved by the oracle for the timing contrast.
    #[arg(long)]
    oracle_samples: Option<usize>,
    /// CSV file to append the row to.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleOpts,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("{e}");
        return ExitCode::from(e.code());
    }
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Transfer(a) => transfer_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}

/// Caps the worker pool at `KFBF_THREADS`.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("KFBF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("KFBF_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Other(e.to_string()))
}

fn dataset_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// `(json, csv)` paths for a `--report` argument.
fn report_paths(report: &Path) -> (PathBuf, PathBuf) {
    if report.extension().is_some_and(|e| e == "csv") {
        (report.with_extension("json"), report.to_path_buf())
    } else {
        (report.to_path_buf(), report.with_extension("csv"))
    }
}

fn oracle_config(s: &mut Settings, o: &OracleOpts) -> Result<OracleConfig, CliError> {
    s.flag("oracle_method", &o.oracle_method);
    s.flag("restarts", &o.restarts);
    s.flag("oracle_seed", &o.oracle_seed);
    let d = OracleConfig::default();
    let method: String = s.get_or("oracle_method", d.method.to_string())?;
    let cfg = OracleConfig {
        method: method.parse::<OracleMethod>()?,
        restarts: s.get_or("restarts", d.restarts)?,
        seed: s.get_or("oracle_seed", d.seed)?,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(s: &mut Settings, o: &TrainOpts) -> Result<TrainConfig, CliError> {
    s.flag("epochs", &o.epochs);
    s.flag("learning_rate", &o.learning_rate);
    s.flag("batch_size", &o.batch_size);
    s.flag("seed", &o.seed);
    read_train_config(s)
}

fn read_train_config(s: &mut Settings) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        learning_rate: s.get_or("learning_rate", d.learning_rate)?,
        batch_size: s.get_or("batch_size", d.batch_size)?,
        epochs: s.get_or("epochs", d.epochs)?,
        seed: s.get_or("seed", d.seed)?,
        beta1: s.get_or("beta1", d.beta1)?,
        beta2: s.get_or("beta2", d.beta2)?,
        eps: s.get_or("eps", d.eps)?,
        val_fraction: s.get_or("val_fraction", d.val_fraction)?,
        ..d
    })
}

/// Model configuration from the keys left in `s`; the flat MLP defaults to
/// the dataset's user count.
fn model_config(s: &Settings, k: usize) -> Result<ModelConfig, CliError> {
    let mut map = s.remaining();
    if map.get("architecture").map(String::as_str) == Some("plain-mlp") {
        map.entry("plain_mlp_users".into()).or_insert_with(|| k.to_string());
    }
    let mut cfg = ModelConfig::default();
    let unknown = cfg.apply_kv(&map)?;
    s.reject_unknown(&unknown)?;
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("nt", &a.nt);
    s.flag("k", &a.k);
    s.flag("count", &a.count);
    s.flag("seed", &a.seed);
    s.flag("out", &a.out.as_ref().map(|p| p.display().to_string()));
    s.flag("noise", &a.noise);
    s.flag("pmax", &a.pmax);
    s.flag("pc", &a.pc);
    let nt = s.get_or("nt", 4usize)?;
    let k = s.get_or("k", 2usize)?;
    let count = s.get_or("count", 2048usize)?;
    let seed = s.get_or("seed", 0u64)?;
    let out: PathBuf = s.require("out")?;
    let cfg = SystemConfig::uniform(nt, k, s.get_or("pmax", 1.0)?, s.get_or("pc", 0.1)?, s.get_or("noise", 1.0)?)?;
    s.finish()?;
    if count == 0 {
        return Err(CliError::Usage("--count must be >= 1".into()));
    }
    let data = Dataset::new(generate_rayleigh(&cfg, count, seed)?)?;
    write_dataset(&data, &out)?;
    println!("wrote {count} samples (n_t = {nt}, K = {k}, seed {seed}) to {}", out.display());
    Ok(())
}

fn print_epoch(e: &EpochLog) {
    println!(
        "epoch {:>4}  train_loss {:.6}  val_ee {:.6}  {:.0} ms",
        e.epoch, e.train_loss, e.val_ee, e.wall_ms
    );
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("data", &a.data.as_ref().map(|p| p.display().to_string()));
    s.flag("out", &a.out.as_ref().map(|p| p.display().to_string()));
    s.flag("log", &a.log.as_ref().map(|p| p.display().to_string()));
    s.flag("fine_tune_from", &a.fine_tune_from.as_ref().map(|p| p.display().to_string()));
    s.flag("encoder", &a.encoder);
    s.flag("decoder", &a.decoder);
    let mut cfg = train_config(&mut s, &a.opts)?;
    let data_path: PathBuf = s.require("data")?;
    let out: PathBuf = s.require("out")?;
    let log_path = s.path("log")?.unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    cfg.fine_tune_from = s.path("fine_tune_from")?;
    cfg.dataset = Some(data_path.clone());
    cfg.checkpoint_out = Some(out.clone());

    let data = read_dataset(&data_path)?;
    let (model, outcome) = match &cfg.fine_tune_from {
        Some(from) => {
            s.finish()?;
            let base = read_checkpoint(from)?.model;
            let outcome = fine_tune_observed(&base, &data, &cfg, &mut print_epoch)?;
            (base, outcome)
        }
        None => {
            let model = Model::new(model_config(&s, data.k())?, data.n_t())?;
            let outcome = train_observed(&model, &data, &cfg, &mut print_epoch)?;
            (model, outcome)
        }
    };
    let best = outcome.best_epoch.zip(outcome.best_val_ee());
    let mut model = model;
    model.set_params(outcome.params)?;
    let ckpt = Checkpoint::new(model)
        .with_meta("k_train", data.k())
        .with_meta("seed", cfg.seed)
        .with_meta("epochs", cfg.epochs)
        .with_meta("dataset", dataset_id(&data_path));
    write_checkpoint(&ckpt, &out)?;
    let file = std::fs::File::create(&log_path)?;
    write_log_csv(&outcome.log, std::io::BufWriter::new(file))?;
    match best {
        Some((e, v)) => println!("best epoch {e} (val_ee {v:.6}); wrote {}", out.display()),
        None => println!("no epochs run; wrote {}", out.display()),
    }
    Ok(())
}

fn oracle_values(
    path: Option<PathBuf>,
    data_path: &Path,
    samples: &[ChannelSample],
    cfg: &OracleConfig,
) -> Result<Vec<f64>, CliError> {
    let cache = path.unwrap_or_else(|| sidecar_path(data_path));
    Ok(load_or_solve(&cache, samples, cfg)?.iter().map(|e| e.ee_oracle).collect())
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("ckpt", &a.ckpt.as_ref().map(|p| p.display().to_string()));
    s.flag("data", &a.data.as_ref().map(|p| p.display().to_string()));
    s.flag("oracle_cache", &a.oracle_cache.as_ref().map(|p| p.display().to_string()));
    s.flag("report", &a.report.as_ref().map(|p| p.display().to_string()));
    s.flag("passes", &a.passes);
    let oracle = oracle_config(&mut s, &a.oracle)?;
    let ckpt_path: PathBuf = s.require("ckpt")?;
    let data_path: PathBuf = s.require("data")?;
    let report = s.path("report")?;
    let cache = s.path("oracle_cache")?;
    let passes = s.get_or("passes", experiment::MIN_TIMED_PASSES)?;
    s.finish()?;

    let ckpt = read_checkpoint(&ckpt_path)?;
    let data = read_dataset(&data_path)?;
    ckpt.model.check_sample(&data.samples()[0])?;
    let oracle_ee = oracle_values(cache, &data_path, data.samples(), &oracle)?;
    let ctx = EvalContext {
        dataset_id: dataset_id(&data_path),
        k_train: ckpt.meta_usize("k_train").unwrap_or(0),
        seed: ckpt.meta_usize("seed").unwrap_or(0) as u64,
        oracle_method: oracle.method,
        latency_passes: passes,
    };
    let r = experiment::evaluate(&ckpt.model, data.samples(), &oracle_ee, &ctx)?;
    println!("{REPORT_HEADER}\n{}", r.csv_row());
    if let Some(report) = report {
        let (json, csv) = report_paths(&report);
        write_json(&json, &r)?;
        write_csv(&csv, REPORT_HEADER, &[r.csv_row()])?;
    }
    Ok(())
}

fn transfer_cmd(a: TransferArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("ckpt", &a.ckpt.as_ref().map(|p| p.display().to_string()));
    s.flag("data", &a.data.as_ref().map(|p| p.display().to_string()));
    s.flag("test", &a.test.as_ref().map(|p| p.display().to_string()));
    s.flag("test_fraction", &a.test_fraction);
    s.flag("epochs", &a.epochs);
    s.flag("retrain_epochs", &a.retrain_epochs);
    s.flag("learning_rate", &a.learning_rate);
    s.flag("batch_size", &a.batch_size);
    s.flag("seed", &a.seed);
    s.flag("report", &a.report.as_ref().map(|p| p.display().to_string()));
    let oracle = oracle_config(&mut s, &a.oracle)?;
    let budgets: Vec<usize> = s.list("epochs", "10,20,50")?;
    s.flag("epochs", &budgets.iter().max());
    let cfg = read_train_config(&mut s)?;
    let ckpt_path: PathBuf = s.require("ckpt")?;
    let data_path: PathBuf = s.require("data")?;
    let test_path = s.path("test")?;
    let test_fraction = s.get_or("test_fraction", 0.2f64)?;
    let retrain = s.get("retrain_epochs")?;
    let report = s.path("report")?;
    s.finish()?;
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CliError::Usage("test_fraction must lie in (0, 1)".into()));
    }

    let ckpt = read_checkpoint(&ckpt_path)?;
    let data = read_dataset(&data_path)?;
    ckpt.model.check_sample(&data.samples()[0])?;
    let (train_data, test) = match test_path {
        Some(p) => {
            let t = read_dataset(&p)?;
            let oracle_ee = oracle_values(None, &p, t.samples(), &oracle)?;
            (data, TestSet::new(t.into_samples(), &oracle_ee)?)
        }
        None => {
            let mut samples = data.into_samples();
            let n_test = ((samples.len() as f64 * test_fraction).round() as usize).clamp(1, samples.len() - 1);
            let test_samples = samples.split_off(samples.len() - n_test);
            let oracle_ee: Vec<f64> = solve_all(&test_samples, &oracle)?.iter().map(|e| e.ee_oracle).collect();
            (Dataset::new(samples)?, TestSet::new(test_samples, &oracle_ee)?)
        }
    };
    let k_train = ckpt.meta_usize("k_train").unwrap_or(0);
    let rows = experiment::transfer(&ckpt.model, k_train, &train_data, &test, &budgets, &cfg, retrain)?;
    let lines: Vec<String> = rows.iter().map(CsvRecord::csv_row).collect();
    println!("{TRANSFER_HEADER}\n{}", lines.join("\n"));
    if let Some(report) = report {
        let (json, csv) = report_paths(&report);
        write_json(&json, &rows)?;
        write_csv(&csv, TRANSFER_HEADER, &lines)?;
    }
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("data", &a.data.as_ref().map(|p| p.display().to_string()));
    s.flag("encoders", &a.encoders);
    s.flag("decoders", &a.decoders);
    s.flag("test_count", &a.test_count);
    s.flag("test_seed", &a.test_seed);
    s.flag("report", &a.report.as_ref().map(|p| p.display().to_string()));
    let oracle = oracle_config(&mut s, &a.oracle)?;
    let cfg = train_config(&mut s, &a.opts)?;
    let data_path: PathBuf = s.require("data")?;
    let encoders: Vec<String> = s.list("encoders", "gat,transformer")?;
    let decoders: Vec<String> = s.list("decoders", "mlp,kan")?;
    let test_count = s.get_or("test_count", 256usize)?;
    let test_seed = s.get_or("test_seed", 1u64)?;
    let report = s.path("report")?;
    let data = read_dataset(&data_path)?;
    let base = model_config(&s, data.k())?;
    if base.architecture != Architecture::EncoderDecoder {
        return Err(CliError::Usage("ablation covers encoder/decoder models only".into()));
    }
    let encoders = encoders
        .iter()
        .map(|e| e.parse::<EncoderKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let decoders = decoders
        .iter()
        .map(|d| d.parse::<DecoderKind>())
        .collect::<Result<Vec<_>, _>>()?;
    if test_count == 0 {
        return Err(CliError::Usage("--test-count must be >= 1".into()));
    }

    let k = data.k();
    let mut tests = Vec::new();
    for k_te in [k.saturating_sub(1), k, k + 1].into_iter().filter(|&x| x >= 1) {
        let samples = generate_rayleigh(&data.config().with_users(k_te)?, test_count, test_seed + k_te as u64)?;
        let oracle_ee: Vec<f64> = solve_all(&samples, &oracle)?.iter().map(|e| e.ee_oracle).collect();
        tests.push(TestSet::new(samples, &oracle_ee)?);
    }
    let r = experiment::ablate(&base, &data, &tests, &encoders, &decoders, &cfg)?;
    let lines = r.csv_rows();
    println!("{ABLATION_HEADER}\n{}", lines.join("\n"));
    if let Some(report) = report {
        let (json, csv) = report_paths(&report);
        write_json(&json, &r)?;
        write_csv(&csv, ABLATION_HEADER, &lines)?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("ckpt", &a.ckpt.as_ref().map(|p| p.display().to_string()));
    s.flag("data", &a.data.as_ref().map(|p| p.display().to_string()));
    s.flag("repeats", &a.repeats);
    s.flag("oracle_samples", &a.oracle_samples);
    s.flag("report", &a.report.as_ref().map(|p| p.display().to_string()));
    let oracle = oracle_config(&mut s, &a.oracle)?;
    let ckpt_path: PathBuf = s.require("ckpt")?;
    let data_path: PathBuf = s.require("data")?;
    let repeats = s.get_or("repeats", experiment::MIN_TIMED_PASSES)?;
    let oracle_samples = s.get_or("oracle_samples", 16usize)?;
    let report = s.path("report")?;
    s.finish()?;

    let ckpt = read_checkpoint(&ckpt_path)?;
    let data = read_dataset(&data_path)?;
    ckpt.model.check_sample(&data.samples()[0])?;
    let row = experiment::bench(&ckpt.model, data.samples(), repeats, &oracle, oracle_samples)?;
    println!("{BENCH_HEADER}\n{}", row.csv_row());
    if let Some(report) = report {
        let (json, csv) = report_paths(&report);
        write_json(&json, &row)?;
        write_csv(&csv, BENCH_HEADER, &[row.csv_row()])?;
    }
    Ok(())
}
