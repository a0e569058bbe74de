//! Training loop, evaluation and run artifacts.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, training_loss};
use crate::mixing::build_training_batch;
use crate::model::{backward, forward, predict, sgd_step, Checkpoint, ModelParams, OptimizerState};
use crate::numerics::RngState;

use super::config::TrainConfig;

/// Header of the per-epoch metrics CSV.
pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,lr,wall_time_s";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub loss: f64,
    pub samples: usize,
}

/// Top-1 accuracy and mean cross-entropy over the original classes.
///
/// Ties in the logits resolve to the lowest class index.
pub fn evaluate(params: &ModelParams, ds: &Dataset) -> Result<EvalMetrics> {
    if params.num_classes() != ds.num_classes {
        return Err(Error::dims(
            "evaluate",
            format!(
                "model predicts {} classes, dataset has {}",
                params.num_classes(),
                ds.num_classes
            ),
        ));
    }
    let logits = predict(params, &ds.images)?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(&ds.labels)
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count();
    Ok(EvalMetrics {
        accuracy: correct as f64 / ds.len() as f64,
        loss: cross_entropy(&logits, &ds.labels)?,
        samples: ds.len(),
    })
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<EpochRecord>,
    pub final_test_accuracy: f64,
    pub config: TrainConfig,
    /// Mean training objective of each optimisation step, in order.
    #[serde(skip)]
    pub step_losses: Vec<f64>,
}

impl RunReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.records {
            let split = match r.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, split, r.loss, r.accuracy, r.lr, r.wall_time_s
            )
            .unwrap();
        }
        out
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: RunReport,
    pub checkpoint: Checkpoint,
}

/// Trains on the configured dataset and method.
///
/// Each epoch shuffles the training set, then for every batch builds the
/// method's (possibly composite) mixed batch, takes one SGD step on the
/// method's loss, and finally evaluates clean training and test accuracy on
/// the original classes. Trailing batches of one sample are skipped when the
/// method needs pairs.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (train_set, test_set, standardizer) = config.dataset.prepare(config.seed)?;
    train_on(config, &train_set, &test_set).map(|(report, params)| TrainOutcome {
        report,
        checkpoint: Checkpoint {
            params,
            standardizer: Some(standardizer),
        },
    })
}

/// The training loop on already prepared splits.
pub fn train_on(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<(RunReport, ModelParams)> {
    config.validate()?;
    let mix = config.method.mix_config();
    let sgd = config.train.sgd();
    let root = RngState::new(config.seed);
    let mut init_rng = root.split(0);
    let mut order_rng = root.split(1);
    let mut mix_rng = root.split(2);

    let mut params = ModelParams::init(
        train_set.input_dim(),
        &config.model.hidden_dims,
        train_set.num_classes,
        &mut init_rng,
    )?;
    let mut opt = OptimizerState::new(&params, &sgd);
    let histogram = train_set.histogram();
    let batch_size = config.train.batch_size;
    let min_batch = if mix.method.mixes() { 2 } else { 1 };

    let started = Instant::now();
    let mut records = Vec::with_capacity(2 * config.train.epochs);
    let mut step_losses = Vec::new();
    for epoch in 1..=config.train.epochs {
        let order = order_rng.permutation(train_set.len());
        let lr = opt.lr;
        let (mut loss_sum, mut loss_weight) = (0.0, 0usize);
        for chunk in order.chunks(batch_size) {
            if chunk.len() < min_batch {
                continue;
            }
            let inputs = train_set.images.select(ndarray::Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let batch = build_training_batch(&inputs, &labels, &mix, &histogram, &mut mix_rng)?;
            let cache = forward(&params, &batch.inputs)?;
            let loss = training_loss(mix.method, mix.axes, &cache.logits, &batch.mix_weights)?;
            if !loss.value.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss",
                    epoch,
                });
            }
            let grads = backward(&params, &cache, &loss.grad_s)?;
            sgd_step(&mut params, &grads, &mut opt, &sgd)?;
            step_losses.push(loss.value);
            loss_sum += loss.value * chunk.len() as f64;
            loss_weight += chunk.len();
        }
        opt.finish_epoch(&sgd);

        let train_eval = evaluate(&params, train_set)?;
        let test_eval = evaluate(&params, test_set)?;
        let wall = if config.train.record_wall_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let train_loss = if loss_weight > 0 {
            loss_sum / loss_weight as f64
        } else {
            f64::NAN
        };
        records.push(EpochRecord {
            epoch,
            split: Split::Train,
            loss: train_loss,
            accuracy: train_eval.accuracy,
            lr,
            wall_time_s: wall,
        });
        records.push(EpochRecord {
            epoch,
            split: Split::Test,
            loss: test_eval.loss,
            accuracy: test_eval.accuracy,
            lr,
            wall_time_s: wall,
        });
    }
    let final_test_accuracy = records.last().map_or(0.0, |r| r.accuracy);
    Ok((
        RunReport {
            records,
            final_test_accuracy,
            config: config.resolved(),
            step_losses,
        },
        params,
    ))
}

/// Writes `metrics.csv`, `checkpoint.bin` and `report.json` into `dir`.
///
/// Files are staged under temporary names and renamed into place, so a
/// failed write leaves earlier outputs untouched.
pub fn write_outputs(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report_json = serde_json::to_string_pretty(&outcome.report)?;
    let staged = [
        ("metrics.csv", outcome.report.metrics_csv().into_bytes()),
        (
            "checkpoint.bin",
            crate::model::container::encode(
                crate::model::container::Kind::Checkpoint,
                &outcome.checkpoint.to_tensors(),
            ),
        ),
        ("report.json", report_json.into_bytes()),
    ];
    for (name, bytes) in &staged {
        let tmp = dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    for (name, _) in &staged {
        let tmp = dir.join(format!(".{name}.tmp"));
        let dst = dir.join(name);
        std::fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
    }
    Ok(())
}

/// Checks that `dir` can be created and written before any work starts.
pub fn check_output_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use ndarray::array;

    #[test]
    fn ideal_logits_score_perfectly() {
        // identity classifier on one-hot inputs
        let params = ModelParams {
            hidden: vec![],
            final_weights: Matrix::eye(3) * 5.0,
        };
        let ds = Dataset::new(Matrix::eye(3), vec![0, 1, 2], 3, Split::Test, 1).unwrap();
        let m = evaluate(&params, &ds).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.samples, 3);
    }

    #[test]
    fn width_mismatch_is_error() {
        let params = ModelParams {
            hidden: vec![],
            final_weights: Matrix::eye(2),
        };
        let ds = Dataset::new(Matrix::eye(2), vec![0, 1], 3, Split::Test, 1).unwrap();
        assert!(evaluate(&params, &ds).is_err());
    }

    #[test]
    fn argmax_prefers_first_of_ties() {
        assert_eq!(argmax(array![1.0, 3.0, 3.0].iter().copied()), 1);
        assert_eq!(argmax(array![0.0].iter().copied()), 0);
    }
}
