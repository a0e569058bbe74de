mod common;

use common::*;
use icmix::data::{synth_blobs, BlobSpec, Dataset, Split};
use icmix::harness::{
    analyze_interpolation, evaluate, train, train_on, DatasetSpec, MethodSpec, ModelSpec,
    TrainConfig, TrainSpec,
};
use icmix::mixing::{build_training_batch, one_hot, AxisSelection, Method, MixConfig};
use icmix::model::{forward, ModelParams};
use icmix::numerics::{Matrix, RngState};
use icmix::Error;

fn config(method: Method, batch_size: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        seed: 2,
        dataset: DatasetSpec::blobs(BlobSpec {
            num_classes: 3,
            per_class: 20,
            dim: 5,
            spread: 0.3,
            seed: 2,
        }),
        model: ModelSpec {
            hidden_dims: vec![8],
        },
        train: TrainSpec {
            epochs,
            batch_size,
            ..TrainSpec::default()
        },
        method: MethodSpec::from(MixConfig::new(method)),
    }
}

#[test]
fn every_method_runs_at_both_batch_extremes() {
    for method in Method::ALL {
        for batch_size in [2, 128] {
            let outcome = train(&config(method, batch_size, 2)).unwrap();
            let r = &outcome.report;
            assert_eq!(r.records.len(), 4);
            assert!(r.records.iter().all(|e| e.loss.is_finite()));
            assert!(r.step_losses.iter().all(|l| l.is_finite()));
            let steps_per_epoch = 60usize.div_ceil(batch_size);
            assert_eq!(
                r.step_losses.len(),
                2 * steps_per_epoch,
                "{method:?} B={batch_size}"
            );
        }
    }
}

#[test]
fn trailing_single_sample_is_skipped_only_when_pairing() {
    // 60 samples in batches of 59 leave one sample behind
    let mixing = train(&config(Method::Mixup, 59, 1)).unwrap();
    assert_eq!(mixing.report.step_losses.len(), 1);
    let plain = train(&config(Method::None, 59, 1)).unwrap();
    assert_eq!(plain.report.step_losses.len(), 2);
}

#[test]
fn joint_objective_is_the_sum_of_its_axes() {
    let run = |axes| {
        let mut cfg = config(Method::IcMixup, 16, 1);
        cfg.method.axes = axes;
        train(&cfg).unwrap().report.step_losses[0]
    };
    let (cc, ci, both) = (
        run(AxisSelection::Cc),
        run(AxisSelection::Ci),
        run(AxisSelection::Both),
    );
    assert_eq!(both.to_bits(), (cc + ci).to_bits());
}

#[test]
fn regmixup_keeps_a_clean_half() {
    let mut rng = RngState::new(3);
    let x = random_matrix(&mut rng, 6, 4, 1.0);
    let labels = vec![0, 1, 2, 2, 1, 0];
    let hist = icmix::mixing::ClassHistogram::from_labels(&labels, 3).unwrap();
    for method in [Method::Regmixup, Method::IcRegmixup] {
        let batch =
            build_training_batch(&x, &labels, &MixConfig::new(method), &hist, &mut rng).unwrap();
        assert_eq!(batch.len(), 12);
        let clean = batch.inputs.slice(ndarray::s![..6, ..]);
        assert_eq!(clean, x);
        let weights = batch.mix_weights.slice(ndarray::s![..6, ..]).to_owned();
        assert_eq!(weights, one_hot(&labels, 3).unwrap());
    }
}

#[test]
fn accuracy_matches_a_scalar_loop() {
    let (train_set, test_set) = synth_blobs(3, 30, 5, 0.8, 4).unwrap();
    let cfg = config(Method::Mixup, 16, 3);
    let (_, params) = train_on(&cfg, &train_set, &test_set).unwrap();
    let metrics = evaluate(&params, &test_set).unwrap();
    let logits = forward(&params, &test_set.images).unwrap().logits;
    let mut correct = 0;
    for i in 0..test_set.len() {
        let mut best = 0;
        for c in 1..3 {
            if logits[[i, c]] > logits[[i, best]] {
                best = c;
            }
        }
        if best == test_set.labels[i] {
            correct += 1;
        }
    }
    let loss = naive_row_ce(&logits, &test_set.labels);
    assert_eq!(metrics.accuracy, correct as f64 / test_set.len() as f64);
    assert!((metrics.loss - loss).abs() < 1e-12);
    assert_eq!(metrics.samples, 90);
}

#[test]
fn untrained_zero_model_scores_at_chance() {
    let (_, test_set) = synth_blobs(3, 30, 5, 0.3, 4).unwrap();
    let params = ModelParams {
        hidden: vec![],
        final_weights: Matrix::zeros((5, 3)),
    };
    let m = evaluate(&params, &test_set).unwrap();
    // all logits tie, so every prediction is class 0
    assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-12);
    assert!((m.loss - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn metrics_csv_layout() {
    let report = train(&config(Method::IcRemix, 16, 4)).unwrap().report;
    let csv = report.metrics_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,split,loss,accuracy,lr,wall_time_s");
    assert_eq!(lines.len(), 1 + 8);
    assert!(lines[1].starts_with("1,train,"));
    assert!(lines[2].starts_with("1,test,"));
    // 4 epochs: decays after epochs 1, 2 and 3
    let lrs: Vec<f64> = lines[1..]
        .iter()
        .step_by(2)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    let want = [0.1, 0.02, 0.004, 0.0008];
    for (got, want) in lrs.iter().zip(want) {
        assert!((got - want).abs() < 1e-15, "{lrs:?}");
    }
    assert!(lines[1..].iter().all(|l| l.ends_with(",0")));
}

#[test]
fn invalid_configs_report_every_field() {
    let mut cfg = config(Method::Mixup, 1, 0);
    cfg.train.lr = -1.0;
    cfg.method.alpha = Some(0.0);
    match train(&cfg) {
        Err(Error::Validation(v)) => {
            assert!(v.iter().any(|m| m.contains("epochs")));
            assert!(v.iter().any(|m| m.contains("batch_size")));
            assert!(v.iter().any(|m| m.contains("lr")));
            assert!(v.iter().any(|m| m.contains("alpha")));
        }
        other => panic!("expected validation errors, got {other:?}"),
    }
    let unknown = r#"{"dataset": {"kind": "blobs", "blobs": {"num_classes": 3, "per_class": 2, "dim": 2, "spread": 1}}, "trian": {}}"#;
    assert!(TrainConfig::from_json(unknown).is_err());
}

#[test]
fn reference_schedule_for_two_hundred_epochs() {
    let sgd = TrainSpec::default().sgd();
    assert_eq!(sgd.lr_steps, vec![50, 100, 150]);
    assert_eq!(sgd.lr_after(49), 0.1);
    assert!((sgd.lr_after(50) - 0.02).abs() < 1e-15);
}

#[test]
fn interpolation_curve_endpoints() {
    let (train_set, test_set) = synth_blobs(3, 20, 4, 0.3, 6).unwrap();
    let mut cfg = config(Method::IcMixup, 16, 5);
    cfg.model.hidden_dims = vec![6];
    let (_, params) = train_on(&cfg, &train_set, &test_set).unwrap();
    let table = analyze_interpolation(&params, &test_set, 0.25, 1).unwrap();
    assert_eq!(table.rows.len(), 5);

    // lambda = 1 is the first image of each pair, un-mixed
    let picked = Matrix::from_shape_fn((3, 4), |(c, k)| test_set.images[[table.picked[c], k]]);
    let cache = forward(&params, &picked).unwrap();
    let norms: Vec<f64> = cache
        .features
        .rows()
        .into_iter()
        .map(|r| r.dot(&r))
        .collect();
    // ordered pairs (a, b): every class appears as `a` twice
    let mean_norm = norms.iter().sum::<f64>() / 3.0;
    let end = table.row_at(1.0).unwrap();
    assert!((end.mean_feature_sq_norm - mean_norm).abs() < 1e-9);
    assert_eq!(end.num_pairs, 6);
    let mut diffs = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            if a != b {
                diffs.push(cache.logits[[a, a]] - cache.logits[[a, b]]);
            }
        }
    }
    let (mean_diff, var_diff) = mean_var(&diffs);
    assert!((end.mean_conf_diff - mean_diff).abs() < 1e-9);
    assert!((end.std_conf_diff - var_diff.sqrt()).abs() < 1e-9);
    // swapping the roles of the pair negates the score difference
    let start = table.row_at(0.0).unwrap();
    assert!((start.mean_conf_diff + end.mean_conf_diff).abs() < 1e-9);
    assert!((start.mean_feature_sq_norm - end.mean_feature_sq_norm).abs() < 1e-9);
}

#[test]
fn interpolation_rejects_bad_grid() {
    let (_, test_set) = synth_blobs(3, 5, 4, 0.3, 6).unwrap();
    let params = ModelParams::init(4, &[], 3, &mut RngState::new(0)).unwrap();
    assert!(analyze_interpolation(&params, &test_set, 0.3, 0).is_err());
    let other: Dataset =
        Dataset::new(Matrix::zeros((2, 4)), vec![0, 1], 2, Split::Test, 1).unwrap();
    assert!(analyze_interpolation(&params, &other, 0.5, 0).is_err());
}
