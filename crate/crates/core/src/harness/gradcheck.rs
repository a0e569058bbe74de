//! Gradient verification suite.
//!
//! For seeded random instances it checks
//! - every analytic logit gradient against central finite differences of the
//!   loss value (`fd_s:*`),
//! - every closed-form classifier gradient, divided by `-B`, against central
//!   finite differences of the loss in `W` (`fd_w:*`),
//! - every closed-form classifier gradient against `-B` times the chain-rule
//!   gradient `R^T dS` (`oracle:*`, absolute tolerance),
//! - that the closed-form contrastive gradients vanish exactly for a single
//!   sample (`degenerate:*`).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{
    chain_grad_w, grad_w_cc, grad_w_ci, grad_w_mixup, loss_cc, loss_ci, loss_ic_joint,
    loss_mixup_ce, mixed_scores, MixedScoreMatrix,
};
use crate::mixing::{canonical_ratio, AxisSelection};
use crate::numerics::{Matrix, RngState};

/// Entries smaller than this are compared on an absolute scale. Central
/// differences at step 1e-5 carry roughly 1e-11 of rounding noise, which
/// would otherwise dominate entries that are exactly zero.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSpec {
    pub instances: usize,
    /// Finite-difference tolerance (max relative error).
    pub tolerance: f64,
    /// Closed-form vs chain-rule tolerance (max absolute error).
    pub oracle_tolerance: f64,
    pub step: f64,
    pub base_seed: u64,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        Self {
            instances: 100,
            tolerance: 1e-5,
            oracle_tolerance: 1e-10,
            step: 1e-5,
            base_seed: 0,
        }
    }
}

/// Batch, class and feature sizes of the `index`-th instance, cycling
/// through B in {2, 4, 8}, C in {3, 5}, D in {4, 7}.
pub fn instance_dims(index: usize) -> (usize, usize, usize) {
    const B: [usize; 3] = [2, 4, 8];
    const C: [usize; 2] = [3, 5];
    const D: [usize; 2] = [4, 7];
    (B[index % 3], C[(index / 3) % 2], D[(index / 6) % 2])
}

/// Features, classifier and pairwise mixing weights of one random instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradInstance {
    pub r: Matrix,
    pub w: Matrix,
    pub y_tilde: Matrix,
}

impl GradInstance {
    pub fn random(seed: u64, b: usize, c: usize, d: usize) -> Self {
        let mut rng = RngState::new(seed);
        let r = Matrix::from_shape_fn((b, d), |_| rng.standard_normal());
        let w = Matrix::from_shape_fn((d, c), |_| 0.5 * rng.standard_normal());
        let mut y_tilde = Matrix::zeros((b, c));
        for i in 0..b {
            let (ya, yb) = (rng.below(c), rng.below(c));
            let lambda = canonical_ratio(rng.uniform());
            y_tilde[[i, ya]] += lambda;
            y_tilde[[i, yb]] += 1.0 - lambda;
        }
        Self { r, w, y_tilde }
    }

    pub fn scores(&self) -> MixedScoreMatrix {
        mixed_scores(&self.r, &self.w, &self.y_tilde).expect("instance dims agree")
    }
}

/// Max over entries of `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_FLOOR))
        .fold(0.0, f64::max)
}

pub fn max_abs_error(a: &Matrix, b: &Matrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`.
pub fn central_differences(x: &Matrix, step: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.dim());
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let up = f(&probe);
        probe[idx] = orig - step;
        let down = f(&probe);
        probe[idx] = orig;
        out[idx] = (up - down) / (2.0 * step);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub seed: u64,
    pub batch: usize,
    pub classes: usize,
    pub features: usize,
    pub check: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradcheckRow> {
        self.rows.iter().filter(|r| !r.passed)
    }

    /// Largest error recorded for checks whose name starts with `prefix`.
    pub fn max_error(&self, prefix: &str) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.check.starts_with(prefix))
            .map(|r| r.max_error)
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("seed,batch,classes,features,check,max_error,tolerance,passed\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{:e},{:e},{}",
                r.seed, r.batch, r.classes, r.features, r.check, r.max_error, r.tolerance, r.passed
            )
            .unwrap();
        }
        out
    }
}

type LossOfS = fn(&Matrix, &Matrix) -> f64;

fn mixup_value(s: &Matrix, y: &Matrix) -> f64 {
    loss_mixup_ce(s, y).expect("dims").value
}

fn ms_of(s: &Matrix, y: &Matrix) -> MixedScoreMatrix {
    MixedScoreMatrix::from_logits(s.clone(), y.clone()).expect("dims")
}

fn cc_value(s: &Matrix, y: &Matrix) -> f64 {
    loss_cc(&ms_of(s, y)).value
}

fn ci_value(s: &Matrix, y: &Matrix) -> f64 {
    loss_ci(&ms_of(s, y)).value
}

fn joint_value(s: &Matrix, y: &Matrix) -> f64 {
    loss_ic_joint(&ms_of(s, y), AxisSelection::Both).value
}

/// Runs every check on one instance.
pub fn check_instance(
    seed: u64,
    inst: &GradInstance,
    spec: &GradcheckSpec,
) -> Result<Vec<GradcheckRow>> {
    let (b, c, d) = (inst.r.nrows(), inst.w.ncols(), inst.r.ncols());
    let ms = inst.scores();
    let y = &inst.y_tilde;
    let row = |check: &str, max_error: f64, tolerance: f64| GradcheckRow {
        seed,
        batch: b,
        classes: c,
        features: d,
        check: check.to_owned(),
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    };
    let mut rows = Vec::new();

    let analytic_s: [(&str, Matrix, LossOfS); 4] = [
        ("mixup_ce", loss_mixup_ce(&ms.s, y)?.grad_s, mixup_value),
        ("cc", loss_cc(&ms).grad_s, cc_value),
        ("ci", loss_ci(&ms).grad_s, ci_value),
        (
            "ic_joint",
            loss_ic_joint(&ms, AxisSelection::Both).grad_s,
            joint_value,
        ),
    ];
    for (name, grad, value) in &analytic_s {
        let numeric = central_differences(&ms.s, spec.step, |s| value(s, y));
        rows.push(row(
            &format!("fd_s:{name}"),
            max_relative_error(grad, &numeric),
            spec.tolerance,
        ));
    }

    let scale = -(b as f64);
    let closed: [(&str, Matrix, &Matrix, LossOfS); 3] = [
        (
            "mixup",
            grad_w_mixup(&inst.r, &ms.s, y)?,
            &analytic_s[0].1,
            mixup_value,
        ),
        ("cc", grad_w_cc(&inst.r, &ms)?, &analytic_s[1].1, cc_value),
        ("ci", grad_w_ci(&inst.r, &ms)?, &analytic_s[2].1, ci_value),
    ];
    for (name, closed_form, grad_s, value) in &closed {
        let chain = chain_grad_w(&inst.r, grad_s) * scale;
        rows.push(row(
            &format!("oracle:{name}"),
            max_abs_error(closed_form, &chain),
            spec.oracle_tolerance,
        ));
        let numeric = central_differences(&inst.w, spec.step, |w| value(&inst.r.dot(w), y));
        rows.push(row(
            &format!("fd_w:{name}"),
            max_relative_error(&(closed_form / scale), &numeric),
            spec.tolerance,
        ));
    }
    Ok(rows)
}

/// Closed-form contrastive gradients of a single-sample batch.
pub fn check_degenerate(seed: u64, classes: usize, features: usize) -> Result<Vec<GradcheckRow>> {
    let inst = GradInstance::random(seed, 1, classes, features);
    let ms = inst.scores();
    let zero_check = |name: &str, g: Matrix| {
        let max_error = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        GradcheckRow {
            seed,
            batch: 1,
            classes,
            features,
            check: format!("degenerate:{name}"),
            max_error,
            tolerance: 0.0,
            passed: max_error == 0.0,
        }
    };
    Ok(vec![
        zero_check("cc_zero", grad_w_cc(&inst.r, &ms)?),
        zero_check("ci_zero", grad_w_ci(&inst.r, &ms)?),
    ])
}

pub fn gradcheck(spec: &GradcheckSpec) -> Result<GradcheckReport> {
    let mut rows = Vec::new();
    for i in 0..spec.instances {
        let seed = spec.base_seed + i as u64;
        let (b, c, d) = instance_dims(i);
        rows.extend(check_instance(
            seed,
            &GradInstance::random(seed, b, c, d),
            spec,
        )?);
    }
    for (k, (c, d)) in [(3, 4), (5, 7)].into_iter().enumerate() {
        rows.extend(check_degenerate(spec.base_seed + k as u64, c, d)?);
    }
    Ok(GradcheckReport { rows })
}
