//! Behaviour of a trained model along input interpolations.
//!
//! One test image is picked per class. For every ordered class pair (a, b)
//! and every ratio on the grid, the mixed image `l * x_a + (1 - l) * x_b` is
//! passed through the network and two quantities are recorded: the squared
//! norm of its penultimate features (a class-independent confidence), and
//! the score difference `r . W_a - r . W_b` between the pair's classifiers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};
use crate::numerics::{Matrix, RngState};

pub const CURVE_HEADER: &str =
    "lambda,mean_feature_sq_norm,std_feature_sq_norm,mean_conf_diff,std_conf_diff,num_pairs";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub lambda: f64,
    pub mean_feature_sq_norm: f64,
    pub std_feature_sq_norm: f64,
    pub mean_conf_diff: f64,
    pub std_conf_diff: f64,
    pub num_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub rows: Vec<CurveRow>,
    /// Dataset index of the image chosen for each class.
    pub picked: Vec<usize>,
}

impl CurveTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.lambda,
                r.mean_feature_sq_norm,
                r.std_feature_sq_norm,
                r.mean_conf_diff,
                r.std_conf_diff,
                r.num_pairs
            )
            .unwrap();
        }
        out
    }

    pub fn row_at(&self, lambda: f64) -> Option<&CurveRow> {
        self.rows.iter().find(|r| (r.lambda - lambda).abs() < 1e-12)
    }
}

/// Number of grid intervals for `step`, which must divide 1.
pub fn grid_intervals(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument {
            arg: "step",
            reason: format!("{step} outside (0, 1]"),
        });
    }
    let k = (1.0 / step).round();
    if (k * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument {
            arg: "step",
            reason: format!("{step} does not divide 1"),
        });
    }
    Ok(k as usize)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn analyze_interpolation(
    params: &ModelParams,
    ds: &Dataset,
    step: f64,
    seed: u64,
) -> Result<CurveTable> {
    let intervals = grid_intervals(step)?;
    let c = ds.num_classes;
    if c < 2 {
        return Err(Error::InvalidArgument {
            arg: "dataset",
            reason: "interpolation analysis needs at least two classes".into(),
        });
    }
    if params.num_classes() != c {
        return Err(Error::dims(
            "analyze_interpolation",
            format!(
                "model predicts {} classes, dataset has {c}",
                params.num_classes()
            ),
        ));
    }
    let mut rng = RngState::new(seed);
    let picked = ds
        .class_indices()
        .into_iter()
        .enumerate()
        .map(|(class, idx)| {
            if idx.is_empty() {
                Err(Error::EmptyClass { class })
            } else {
                Ok(idx[rng.below(idx.len())])
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(usize, usize)> = (0..c)
        .flat_map(|a| (0..c).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let mut rows = Vec::with_capacity(intervals + 1);
    for t in 0..=intervals {
        let lambda = t as f64 / intervals as f64;
        let mut mixed = Matrix::zeros((pairs.len(), ds.input_dim()));
        for (mut row, &(a, b)) in mixed.rows_mut().into_iter().zip(&pairs) {
            let (xa, xb) = (ds.images.row(picked[a]), ds.images.row(picked[b]));
            for (dst, (&va, &vb)) in row.iter_mut().zip(xa.iter().zip(xb.iter())) {
                *dst = lambda * va + (1.0 - lambda) * vb;
            }
        }
        let cache = forward(params, &mixed)?;
        let norms: Vec<f64> = cache
            .features
            .rows()
            .into_iter()
            .map(|r| r.dot(&r))
            .collect();
        let diffs: Vec<f64> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| cache.logits[[i, a]] - cache.logits[[i, b]])
            .collect();
        let (mean_n, std_n) = mean_std(&norms);
        let (mean_d, std_d) = mean_std(&diffs);
        rows.push(CurveRow {
            lambda,
            mean_feature_sq_norm: mean_n,
            std_feature_sq_norm: std_n,
            mean_conf_diff: mean_d,
            std_conf_diff: std_d,
            num_pairs: pairs.len(),
        });
    }
    Ok(CurveTable { rows, picked })
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
