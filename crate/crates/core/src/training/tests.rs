use super::*;
use crate::autodiff::Tape;
use crate::model::{DecoderKind, EncoderKind, ModelConfig};
use crate::sysmodel::{generate_rayleigh, SystemConfig};

fn small_config() -> ModelConfig {
    ModelConfig {
        d: 8,
        d_ff: 16,
        heads: vec![2, 2],
        kan_hidden_dims: vec![6],
        ..ModelConfig::default()
    }
}

fn samples(n_t: usize, k: usize, count: usize, seed: u64) -> Vec<ChannelSample> {
    generate_rayleigh(&SystemConfig::standard(n_t, k).unwrap(), count, seed).unwrap()
}

fn dataset(n_t: usize, k: usize, count: usize, seed: u64) -> Dataset {
    Dataset::new(samples(n_t, k, count, seed)).unwrap()
}

fn initialised(config: ModelConfig, n_t: usize, seed: u64) -> Model {
    let mut model = Model::new(config, n_t).unwrap();
    he_init(model.params_mut(), seed);
    model
}

/// Worst `|a − b| / max(|a|, |b|, 1e-5)` between the analytic gradient and
/// central differences with step `h`, over every scalar parameter.
fn worst_fd_error(model: &Model, batch: &[&ChannelSample], h: f64) -> (f64, String) {
    let (_, grads) = loss_and_gradient(model, batch).unwrap();
    let mut probe = model.clone();
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let mut worst = (0.0, String::new());
    for (pi, name) in names.iter().enumerate() {
        let len = model.params().get(name).unwrap().len();
        for j in 0..len {
            let orig = model.params().get(name).unwrap().data()[j];
            probe.params_mut().get_mut(name).unwrap().data_mut()[j] = orig + h;
            let up = batch_loss(&probe, batch).unwrap();
            probe.params_mut().get_mut(name).unwrap().data_mut()[j] = orig - h;
            let down = batch_loss(&probe, batch).unwrap();
            probe.params_mut().get_mut(name).unwrap().data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = grads[pi][j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-5);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{j}] analytic {a:e} fd {fd:e}"));
            }
        }
    }
    worst
}

#[test]
fn single_sample_loss_matches_complex_ee() {
    let model = initialised(ModelConfig::default(), 4, 11);
    for s in &samples(4, 2, 5, 3) {
        let loss = batch_loss(&model, &[s]).unwrap();
        let ee = energy_efficiency(s, &model.forward(s).unwrap()).unwrap();
        assert!((loss + ee).abs() < 1e-12, "loss {loss} ee {ee}");
    }
}

#[test]
fn tape_ee_matches_complex_ee_for_arbitrary_beamformers() {
    let data = samples(3, 4, 4, 8);
    let others = samples(3, 4, 4, 9);
    for (s, w) in data.iter().zip(&others) {
        let w = crate::sysmodel::BeamformingMatrix::new(4, 3, w.h().to_vec()).unwrap();
        let mut tape = Tape::new();
        let rows = tape.constant(crate::autodiff::Tensor::from_vec(4, 6, w.to_real_rows()).unwrap());
        let ee = energy_efficiency_on_tape(&mut tape, s, rows).unwrap();
        let want = energy_efficiency(s, &w).unwrap();
        assert!((tape.scalar(ee) - want).abs() < 1e-12);
    }
}

#[test]
fn zero_model_has_zero_loss() {
    let model = Model::new(ModelConfig::default(), 4).unwrap();
    let data = samples(4, 2, 3, 1);
    let batch: Vec<&ChannelSample> = data.iter().collect();
    assert_eq!(batch_loss(&model, &batch).unwrap(), 0.0);
}

#[test]
fn per_sample_reduction_matches_single_tape_gradient() {
    let model = initialised(small_config(), 4, 2);
    let data = samples(4, 2, 4, 5);
    let batch: Vec<&ChannelSample> = data.iter().collect();
    let (loss, grads) = loss_and_gradient(&model, &batch).unwrap();
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, true);
    let l = batch_loss_on_tape(&mut tape, &model, &bound, &batch).unwrap();
    tape.backward(l).unwrap();
    assert!((tape.scalar(l) - loss).abs() < 1e-12);
    for (a, b) in bound.take_grads(&mut tape).iter().zip(&grads) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn gradients_match_finite_differences_for_every_architecture() {
    let data = samples(4, 2, 2, 21);
    let batch: Vec<&ChannelSample> = data.iter().collect();
    let configs = [
        small_config(),
        ModelConfig {
            conventional_residual: true,
            ..small_config()
        },
        ModelConfig {
            encoder_kind: EncoderKind::Gat,
            ..small_config()
        },
        ModelConfig {
            decoder_kind: DecoderKind::Mlp,
            ..small_config()
        },
        ModelConfig {
            mlp_hidden: vec![12, 10],
            ..ModelConfig::plain_mlp(2)
        },
    ];
    for cfg in configs {
        let id = cfg.model_id();
        let model = initialised(cfg, 4, 4);
        let (worst, at) = worst_fd_error(&model, &batch, 1e-5);
        assert!(worst < 1e-4, "{id}: {worst:e} at {at}");
    }
}

#[test]
fn loss_decreases_over_first_ten_epochs() {
    let data = dataset(4, 2, 160, 0);
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let out = train(&Model::new(ModelConfig::default(), 4).unwrap(), &data, &cfg).unwrap();
    let curve: Vec<f64> = out.log.iter().map(|e| e.train_loss).collect();
    assert_eq!(curve.len(), 10);
    assert!(curve[9] < curve[0], "curve {curve:?}");
}

#[test]
fn training_is_deterministic_and_keeps_best_epoch() {
    let data = dataset(4, 2, 40, 6);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        learning_rate: 1e-2,
        seed: 9,
        ..TrainConfig::default()
    };
    let model = Model::new(small_config(), 4).unwrap();
    let a = train(&model, &data, &cfg).unwrap();
    let b = train(&model, &data, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.best_epoch, b.best_epoch);
    for (x, y) in a.log.iter().zip(&b.log) {
        assert_eq!((x.train_loss, x.val_ee), (y.train_loss, y.val_ee));
    }

    let best = a.best_epoch.unwrap();
    let max = a.log.iter().map(|e| e.val_ee).fold(f64::MIN, f64::max);
    assert_eq!(a.log[best - 1].val_ee, max);
    let mut trained = model.clone();
    trained.set_params(a.params.clone()).unwrap();
    let (_, val) = split_validation(data.samples(), cfg.val_fraction);
    assert_eq!(mean_ee(&trained, val).unwrap(), max);
}

#[test]
fn zero_epoch_fine_tune_keeps_parameters() {
    let data = dataset(4, 3, 20, 2);
    let model = initialised(small_config(), 4, 5);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let out = fine_tune(&model, &data, &cfg).unwrap();
    assert_eq!(&out.params, model.params());
    assert!(out.log.is_empty());
    assert_eq!(out.best_epoch, None);
    assert!(train(&model, &data, &cfg).is_err());
}

#[test]
fn fine_tune_starts_from_given_parameters() {
    let data = dataset(4, 3, 20, 2);
    let model = initialised(small_config(), 4, 5);
    let cfg = TrainConfig {
        epochs: 1,
        learning_rate: 1e-12,
        ..TrainConfig::default()
    };
    let out = fine_tune(&model, &data, &cfg).unwrap();
    for (a, b) in out.params.iter().zip(model.params().iter()) {
        for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn antenna_mismatch_is_rejected() {
    let data = dataset(3, 2, 10, 1);
    let model = Model::new(small_config(), 4).unwrap();
    let err = train(&model, &data, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, TrainError::AntennaMismatch { model: 4, data: 3 }));
}

#[test]
fn config_invariants() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        TrainConfig { learning_rate: 0.0, ..ok.clone() },
        TrainConfig { batch_size: 0, ..ok.clone() },
        TrainConfig { epochs: 0, ..ok.clone() },
        TrainConfig { val_fraction: 1.0, ..ok.clone() },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn validation_split_takes_the_tail() {
    let data = samples(2, 1, 20, 0);
    let (train, val) = split_validation(&data, 0.1);
    assert_eq!((train.len(), val.len()), (18, 2));
    assert_eq!(val[0], data[18]);
    let (train, val) = split_validation(&data[..3], 0.1);
    assert_eq!((train.len(), val.len()), (2, 1));
}

#[test]
fn log_csv_has_header_and_one_row_per_epoch() {
    let log = vec![
        EpochLog { epoch: 1, train_loss: -0.5, val_ee: 0.6, wall_ms: 12.0 },
        EpochLog { epoch: 2, train_loss: -0.7, val_ee: 0.8, wall_ms: 20.5 },
    ];
    let mut out = Vec::new();
    write_log_csv(&log, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, [LOG_HEADER, "1,-0.5,0.6,12.000", "2,-0.7,0.8,20.500"]);
}
