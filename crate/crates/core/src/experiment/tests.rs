use super::report::CsvRecord;
use super::*;
use crate::model::{DecoderKind::*, EncoderKind::*};
use crate::sysmodel::{energy_efficiency, generate_rayleigh, SystemConfig};

fn tiny() -> ModelConfig {
    ModelConfig {
        d: 8,
        d_ff: 8,
        heads: vec![2, 2],
        kan_hidden_dims: vec![8],
        mlp_hidden: vec![8],
        ..ModelConfig::default()
    }
}

fn samples(k: usize, count: usize, seed: u64) -> Vec<ChannelSample> {
    generate_rayleigh(&SystemConfig::standard(2, k).unwrap(), count, seed).unwrap()
}

fn trained_tiny(seed: u64) -> Model {
    let mut m = Model::new(tiny(), 2).unwrap();
    crate::training::he_init(m.params_mut(), seed);
    m
}

#[test]
fn latency_stats_use_nearest_rank() {
    let times: Vec<f64> = (1..=100).rev().map(f64::from).collect();
    let s = LatencyStats::from_samples(&times);
    assert_eq!((s.mean_ms, s.p50_ms, s.p95_ms, s.passes), (50.5, 50.0, 95.0, 100));
    let one = LatencyStats::from_samples(&[3.0]);
    assert_eq!((one.p50_ms, one.p95_ms), (3.0, 3.0));
}

#[test]
fn latency_runs_at_least_the_minimum_passes() {
    let m = trained_tiny(0);
    let s = measure_latency(&m, &samples(2, 3, 0), 5).unwrap();
    assert_eq!(s.passes, MIN_TIMED_PASSES);
    assert!(s.mean_ms > 0.0 && s.p50_ms <= s.p95_ms);
}

#[test]
fn evaluate_against_own_values_is_one_hundred_percent() {
    let m = trained_tiny(1);
    let data = samples(3, 8, 1);
    let own: Vec<f64> = data
        .iter()
        .map(|s| energy_efficiency(s, &m.forward(s).unwrap()).unwrap())
        .collect();
    let ctx = EvalContext {
        dataset_id: "d".into(),
        k_train: 2,
        seed: 7,
        oracle_method: OracleMethod::PgaMultistart,
        latency_passes: 100,
    };
    let r = evaluate(&m, &data, &own, &ctx).unwrap();
    assert!((r.optimality_ratio_pct - 100.0).abs() < 1e-12);
    assert_eq!((r.k_train, r.k_test, r.samples, r.seed), (2, 3, 8, 7));
    assert_eq!(r.model_id, "transformer+kan");
    assert_eq!(r.oracle_method, "pga_multistart");

    let half: Vec<f64> = own.iter().map(|v| 2.0 * v).collect();
    assert!((evaluate(&m, &data, &half, &ctx).unwrap().optimality_ratio_pct - 50.0).abs() < 1e-12);
    assert!(evaluate(&m, &data, &own[1..], &ctx).is_err());
}

#[test]
fn report_serialisations_agree_with_headers() {
    let r = EvalReport {
        model_id: "transformer+kan".into(),
        dataset_id: "test".into(),
        k_train: 2,
        k_test: 3,
        mean_ee: 2.5,
        oracle_mean_ee: 3.0,
        optimality_ratio_pct: optimality_ratio(2.5, 3.0),
        latency_mean_ms: 0.1,
        latency_p50_ms: 0.09,
        latency_p95_ms: 0.2,
        latency_passes: 100,
        samples: 256,
        seed: 0,
        oracle_method: "pga_multistart".into(),
    };
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
    let fields: Vec<&str> = REPORT_HEADER.split(',').collect();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value.as_object().unwrap().len(), fields.len());
    for f in &fields {
        assert!(value.get(f).is_some(), "json lacks {f}");
    }
    assert_eq!(r.csv_row().split(',').count(), fields.len());

    let t = TransferRow {
        k_train: 2,
        k_test: 4,
        epochs: 10,
        scaling_pct: 70.0,
        fine_tuned_pct: 80.0,
        retrained_pct: None,
        seed: 1,
    };
    assert_eq!(t.csv_row(), "2,4,10,70,80,,1");
    assert_eq!(t.csv_row().split(',').count(), TRANSFER_HEADER.split(',').count());
}

#[test]
fn csv_appends_under_one_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    write_csv(&path, "a,b", &["1,2".into()]).unwrap();
    write_csv(&path, "a,b", &["3,4".into()]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n3,4\n");
    assert!(write_csv(&path, "x,y", &["5,6".into()]).is_err());
    std::fs::write(&path, "").unwrap();
    write_csv(&path, "x,y", &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "x,y\n");
}

#[test]
fn ablation_gains_average_paired_differences() {
    let report = AblationReport::new(
        8,
        vec![7, 8, 9],
        0,
        vec![
            (Gat, Mlp, vec![84.0, 85.6, 82.8]),
            (Gat, Kan, vec![89.5, 91.2, 88.1]),
            (Transformer, Mlp, vec![82.5, 85.8, 83.2]),
            (Transformer, Kan, vec![91.1, 92.9, 90.8]),
        ],
    );
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9);
    assert!(close(report.encoder_gain_pct.as_ref().unwrap(), &[0.05, 0.95, 1.55]));
    assert!(close(report.decoder_gain_pct.as_ref().unwrap(), &[7.05, 6.35, 6.45]));
    assert!((report.mean_ratio(Transformer, Kan, &[8, 9]).unwrap() - 91.85).abs() < 1e-9);
    assert_eq!(report.mean_ratio(Transformer, Kan, &[3]), None);

    let rows = report.csv_rows();
    assert_eq!(rows.len(), 4 * 3 + 2 * 3);
    assert_eq!(rows[0], "cell,gat,mlp,8,7,84,0");
    assert!(rows.iter().all(|r| r.split(',').count() == ABLATION_HEADER.split(',').count()));
    assert!(rows[12].starts_with("encoder_gain,-,-,8,7,"));

    let partial = AblationReport::new(2, vec![2], 0, vec![(Transformer, Kan, vec![90.0]), (Gat, Kan, vec![80.0])]);
    assert_eq!(partial.encoder_gain_pct, Some(vec![10.0]));
    assert_eq!(partial.decoder_gain_pct, None);
}

#[test]
fn transfer_with_zero_epochs_is_plain_scaling() {
    let base = trained_tiny(2);
    let data = Dataset::new(samples(3, 12, 3)).unwrap();
    let test_samples = samples(3, 6, 4);
    let test = TestSet::new(test_samples, &[1.0; 6]).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let rows = transfer(&base, 2, &data, &test, &[0, 2], &cfg, Some(1)).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].epochs, 0);
    assert_eq!(rows[0].fine_tuned_pct, rows[0].scaling_pct);
    assert!(rows.iter().all(|r| r.k_train == 2 && r.k_test == 3 && r.retrained_pct.is_some()));
    assert!(transfer(&base, 2, &data, &test, &[], &cfg, None).is_err());
}

#[test]
fn ablation_trains_every_requested_cell() {
    let data = Dataset::new(samples(2, 10, 6)).unwrap();
    let tests: Vec<TestSet> = [1, 2, 3]
        .iter()
        .map(|&k| TestSet::new(samples(k, 4, 7), &[1.0; 4]).unwrap())
        .collect();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let report = ablate(&tiny(), &data, &tests, &[Gat, Transformer], &[Kan, Mlp], &cfg).unwrap();
    assert_eq!(report.cells.len(), 4);
    assert_eq!(report.k_tests, vec![1, 2, 3]);
    assert!(report.cells.iter().all(|c| c.ratios_pct.len() == 3));
    assert!(report.encoder_gain_pct.is_some() && report.decoder_gain_pct.is_some());
    let again = ablate(&tiny(), &data, &tests, &[Gat, Transformer], &[Kan, Mlp], &cfg).unwrap();
    assert_eq!(report, again);
}

#[test]
fn bench_times_model_and_oracle() {
    let m = trained_tiny(3);
    let data = samples(4, 5, 8);
    let oracle = OracleConfig {
        restarts: 2,
        ..OracleConfig::default()
    };
    let row = bench(&m, &data, 100, &oracle, 99).unwrap();
    assert_eq!((row.k_test, row.n_t, row.samples, row.oracle_samples), (4, 2, 5, 5));
    assert!(row.oracle_mean_ms > 0.0 && row.latency_mean_ms > 0.0);
    assert_eq!(row.csv_row().split(',').count(), BENCH_HEADER.split(',').count());
}
