//! Training objectives over logits.
//!
//! Every loss is a mean over the batch and returns its gradient with respect
//! to the logits `S = R W` (B x C). The infinite-class losses work on the
//! B x B mixed score matrix `S~ = S Y~^T`, whose entry (i, j) scores mixed
//! image i against the interpolated classifier `W y~_j`; the diagonal holds
//! the positive pairs. The gradient reaches `S` through `dS = dS~ Y~`.
//!
//! The `grad_w_*` functions are closed-form log-likelihood gradients with
//! respect to the classifier, written as explicit sums over the batch. They
//! use the summed (not averaged) likelihood and point uphill, so each equals
//! `-B` times the chain-rule gradient of the matching loss.

use ndarray::{Array1, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::mixing::{AxisSelection, Method};
use crate::numerics::{log_sum_exp, row_log_sum_exp, softmax_rows, Matrix, Vector};

/// Logits, the mixed score matrix built from them, and the mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedScoreMatrix {
    /// B x C logits against the original classes.
    pub s: Matrix,
    /// B x B scores against the interpolated classes of the batch.
    pub s_tilde: Matrix,
    /// B x C mixing weights.
    pub mix_weights: Matrix,
}

impl MixedScoreMatrix {
    pub fn from_logits(s: Matrix, mix_weights: Matrix) -> Result<Self> {
        if s.dim() != mix_weights.dim() {
            return Err(Error::dims(
                "mixed_scores",
                format!(
                    "logits {:?} vs mixing weights {:?}",
                    s.dim(),
                    mix_weights.dim()
                ),
            ));
        }
        let s_tilde = s.dot(&mix_weights.t());
        Ok(Self {
            s,
            s_tilde,
            mix_weights,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.s.nrows()
    }
}

/// Per-axis breakdown attached to a loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub loss_cc: Option<f64>,
    pub loss_ci: Option<f64>,
    /// log Z per row of `S~` (class-contrasting normalizers).
    pub log_z_cc: Option<Vector>,
    /// log Z per column of `S~` (image-contrasting normalizers).
    pub log_z_ci: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// Gradient of `value` with respect to the logits.
    pub grad_s: Matrix,
    pub diagnostics: Diagnostics,
}

/// The interpolated classifier `W y~`.
pub fn build_mixed_classifier(w: &Matrix, y_tilde: ArrayView1<'_, f64>) -> Result<Vector> {
    if w.ncols() != y_tilde.len() {
        return Err(Error::dims(
            "build_mixed_classifier",
            format!(
                "W has {} classes, weights have {}",
                w.ncols(),
                y_tilde.len()
            ),
        ));
    }
    Ok(w.dot(&y_tilde))
}

/// Logits `S = R W` and the mixed score matrix `S~ = S Y~^T`.
pub fn mixed_scores(r: &Matrix, w: &Matrix, y_tilde: &Matrix) -> Result<MixedScoreMatrix> {
    if r.ncols() != w.nrows() {
        return Err(Error::dims(
            "mixed_scores",
            format!("features {:?} vs classifier {:?}", r.dim(), w.dim()),
        ));
    }
    if y_tilde.nrows() != r.nrows() || y_tilde.ncols() != w.ncols() {
        return Err(Error::dims(
            "mixed_scores",
            format!(
                "mixing weights {:?}, expected ({}, {})",
                y_tilde.dim(),
                r.nrows(),
                w.ncols()
            ),
        ));
    }
    MixedScoreMatrix::from_logits(r.dot(w), y_tilde.clone())
}

/// Mean row-wise cross-entropy of a square matrix whose diagonal holds the
/// targets. Returns (value, gradient, per-row log normalizers).
fn diagonal_cross_entropy(m: &Matrix) -> (f64, Matrix, Vector) {
    let b = m.nrows();
    let log_z = row_log_sum_exp(m);
    let value = -(0..b).map(|i| m[[i, i]] - log_z[i]).sum::<f64>() / b as f64;
    let mut grad = softmax_rows(m);
    for i in 0..b {
        grad[[i, i]] -= 1.0;
    }
    grad /= b as f64;
    (value, grad, log_z)
}

/// Contrasting classes: each image against every interpolated class of the batch.
pub fn loss_cc(ms: &MixedScoreMatrix) -> LossResult {
    let (value, grad_tilde, log_z) = diagonal_cross_entropy(&ms.s_tilde);
    LossResult {
        value,
        grad_s: grad_tilde.dot(&ms.mix_weights),
        diagnostics: Diagnostics {
            loss_cc: Some(value),
            log_z_cc: Some(log_z),
            ..Default::default()
        },
    }
}

/// Contrasting images: each interpolated class against every mixed image of
/// the batch. Equivalent to [`loss_cc`] on the transposed score matrix.
pub fn loss_ci(ms: &MixedScoreMatrix) -> LossResult {
    let transposed = ms.s_tilde.t().to_owned();
    let (value, grad_t, log_z) = diagonal_cross_entropy(&transposed);
    LossResult {
        value,
        grad_s: grad_t.t().dot(&ms.mix_weights),
        diagnostics: Diagnostics {
            loss_ci: Some(value),
            log_z_ci: Some(log_z),
            ..Default::default()
        },
    }
}

/// The Infinite Class Mixup objective over the selected axes.
pub fn loss_ic_joint(ms: &MixedScoreMatrix, axes: AxisSelection) -> LossResult {
    match axes {
        AxisSelection::Cc => loss_cc(ms),
        AxisSelection::Ci => loss_ci(ms),
        AxisSelection::Both => {
            let cc = loss_cc(ms);
            let ci = loss_ci(ms);
            LossResult {
                value: cc.value + ci.value,
                grad_s: &cc.grad_s + &ci.grad_s,
                diagnostics: Diagnostics {
                    loss_cc: cc.diagnostics.loss_cc,
                    loss_ci: ci.diagnostics.loss_ci,
                    log_z_cc: cc.diagnostics.log_z_cc,
                    log_z_ci: ci.diagnostics.log_z_ci,
                },
            }
        }
    }
}

/// Standard Mixup soft-label cross-entropy over the original classes.
pub fn loss_mixup_ce(s: &Matrix, y_tilde: &Matrix) -> Result<LossResult> {
    if s.dim() != y_tilde.dim() {
        return Err(Error::dims(
            "loss_mixup_ce",
            format!("logits {:?} vs targets {:?}", s.dim(), y_tilde.dim()),
        ));
    }
    let b = s.nrows() as f64;
    let log_z = row_log_sum_exp(s);
    let log_p = s - &log_z.view().insert_axis(Axis(1));
    let value = -(&log_p * y_tilde).sum() / b;
    let grad_s = (softmax_rows(s) - y_tilde) / b;
    Ok(LossResult {
        value,
        grad_s,
        diagnostics: Diagnostics::default(),
    })
}

/// Mean hard-label cross-entropy.
pub fn cross_entropy(s: &Matrix, labels: &[usize]) -> Result<f64> {
    if s.nrows() != labels.len() {
        return Err(Error::dims(
            "cross_entropy",
            format!("{} rows vs {} labels", s.nrows(), labels.len()),
        ));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= s.ncols()) {
        return Err(Error::InvalidArgument {
            arg: "labels",
            reason: format!("label {y} outside [0, {})", s.ncols()),
        });
    }
    let log_z = row_log_sum_exp(s);
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| log_z[i] - s[[i, y]])
        .sum();
    Ok(total / labels.len() as f64)
}

/// The loss a training step minimises for `method`.
///
/// Infinite-class methods use [`loss_ic_joint`]; every other method uses the
/// soft-label cross-entropy (one-hot targets reduce it to plain CE).
pub fn training_loss(
    method: Method,
    axes: AxisSelection,
    s: &Matrix,
    y_tilde: &Matrix,
) -> Result<LossResult> {
    if method.is_infinite_class() {
        let ms = MixedScoreMatrix::from_logits(s.clone(), y_tilde.clone())?;
        Ok(loss_ic_joint(&ms, axes))
    } else {
        loss_mixup_ce(s, y_tilde)
    }
}

/// Chain rule through `S = R W`: the loss gradient with respect to `W`.
pub fn chain_grad_w(r: &Matrix, grad_s: &Matrix) -> Matrix {
    r.t().dot(grad_s)
}

fn check_closed_form_dims(op: &'static str, r: &Matrix, s: &Matrix, y: &Matrix) -> Result<()> {
    if r.nrows() != s.nrows() || s.dim() != y.dim() {
        return Err(Error::dims(
            op,
            format!(
                "features {:?}, logits {:?}, weights {:?}",
                r.dim(),
                s.dim(),
                y.dim()
            ),
        ));
    }
    Ok(())
}

/// Closed-form Mixup likelihood gradient: `sum_i r_i (y~_ic - p(c | x~_i))`.
pub fn grad_w_mixup(r: &Matrix, s: &Matrix, y_tilde: &Matrix) -> Result<Matrix> {
    check_closed_form_dims("grad_w_mixup", r, s, y_tilde)?;
    let (b, d, c) = (r.nrows(), r.ncols(), s.ncols());
    let mut g = Matrix::zeros((d, c));
    for i in 0..b {
        let row = s.row(i);
        let log_z = log_sum_exp(&row.to_vec())?;
        for k in 0..c {
            let coeff = y_tilde[[i, k]] - (row[k] - log_z).exp();
            for f in 0..d {
                g[[f, k]] += r[[i, f]] * coeff;
            }
        }
    }
    Ok(g)
}

/// Closed-form class-contrasting likelihood gradient:
/// `sum_i r_i (y~_ic - sum_j p_cc(j | x~_i) y~_jc)`.
pub fn grad_w_cc(r: &Matrix, ms: &MixedScoreMatrix) -> Result<Matrix> {
    check_closed_form_dims("grad_w_cc", r, &ms.s, &ms.mix_weights)?;
    let (b, d, c) = (r.nrows(), r.ncols(), ms.s.ncols());
    let y = &ms.mix_weights;
    let mut g = Matrix::zeros((d, c));
    for i in 0..b {
        let scores = ms.s_tilde.row(i).to_vec();
        let log_z = log_sum_exp(&scores)?;
        let p: Vec<f64> = scores.iter().map(|v| (v - log_z).exp()).collect();
        for k in 0..c {
            let expected: f64 = (0..b).map(|j| p[j] * y[[j, k]]).sum();
            let coeff = y[[i, k]] - expected;
            for f in 0..d {
                g[[f, k]] += r[[i, f]] * coeff;
            }
        }
    }
    Ok(g)
}

/// Closed-form image-contrasting likelihood gradient:
/// `sum_i y~_ic (r_i - sum_j p_ci(i | x~_j) r_j)`, where `p_ci(i | x~_j)`
/// normalises classifier i's scores over the images of the batch.
pub fn grad_w_ci(r: &Matrix, ms: &MixedScoreMatrix) -> Result<Matrix> {
    check_closed_form_dims("grad_w_ci", r, &ms.s, &ms.mix_weights)?;
    let (b, d, c) = (r.nrows(), r.ncols(), ms.s.ncols());
    let y = &ms.mix_weights;
    let mut g = Matrix::zeros((d, c));
    for i in 0..b {
        let scores = ms.s_tilde.column(i).to_vec();
        let log_z = log_sum_exp(&scores)?;
        // r_i minus the expected representation under classifier i, taken as
        // sum_j p_j (r_i - r_j) since the p_j sum to one
        let mut centered: Array1<f64> = Array1::zeros(d);
        for (j, v) in scores.iter().enumerate() {
            let p = (v - log_z).exp();
            centered.scaled_add(p, &(&r.row(i) - &r.row(j)));
        }
        for k in 0..c {
            for f in 0..d {
                g[[f, k]] += y[[i, k]] * centered[f];
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use ndarray::array;

    fn from_tilde(s_tilde: Matrix) -> MixedScoreMatrix {
        let b = s_tilde.nrows();
        MixedScoreMatrix {
            s: s_tilde.clone(),
            s_tilde,
            mix_weights: Matrix::eye(b),
        }
    }

    #[test]
    fn mixed_classifier_examples() {
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let mid = build_mixed_classifier(&w, array![0.5, 0.5].view()).unwrap();
        assert_eq!(mid.to_vec(), vec![0.5, 0.5]);
        let w = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let col = build_mixed_classifier(&w, array![0.0, 1.0, 0.0].view()).unwrap();
        assert_eq!(col.to_vec(), vec![2.0, 5.0]);
        assert!(build_mixed_classifier(&w, array![1.0, 0.0].view()).is_err());
    }

    #[test]
    fn identity_weights_keep_logits() {
        let mut rng = RngState::new(3);
        let r = Matrix::from_shape_fn((4, 3), |_| rng.standard_normal());
        let w = Matrix::from_shape_fn((3, 4), |_| rng.standard_normal());
        let ms = mixed_scores(&r, &w, &Matrix::eye(4)).unwrap();
        assert_eq!(ms.s_tilde, ms.s);
    }

    #[test]
    fn single_pair_score() {
        let r = array![[1.0, 2.0]];
        let w = array![[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]];
        let y = array![[0.25, 0.0, 0.75]];
        let ms = mixed_scores(&r, &w, &y).unwrap();
        // r . (W y) = [1,2] . [1.75, 0.75]
        assert!((ms.s_tilde[[0, 0]] - 3.25).abs() < 1e-15);
    }

    #[test]
    fn mismatched_dims_are_errors() {
        let r = Matrix::zeros((2, 3));
        let w = Matrix::zeros((4, 5));
        assert!(mixed_scores(&r, &w, &Matrix::zeros((2, 5))).is_err());
        let w = Matrix::zeros((3, 5));
        assert!(mixed_scores(&r, &w, &Matrix::zeros((3, 5))).is_err());
        assert!(loss_mixup_ce(&Matrix::zeros((2, 3)), &Matrix::zeros((2, 4))).is_err());
    }

    #[test]
    fn uniform_scores() {
        let cc = loss_cc(&from_tilde(Matrix::zeros((2, 2))));
        assert!((cc.value - 2f64.ln()).abs() < 1e-15);
        let ci = loss_ci(&from_tilde(Matrix::zeros((5, 5))));
        assert!((ci.value - 5f64.ln()).abs() < 1e-15);
        let joint = loss_ic_joint(&from_tilde(Matrix::zeros((4, 4))), AxisSelection::Both);
        assert!((joint.value - 2.0 * 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_diagonal() {
        let cc = loss_cc(&from_tilde(Matrix::eye(3) * 50.0));
        assert!(cc.value < 1e-9);
    }

    #[test]
    fn symmetric_scores_give_equal_axes() {
        let mut rng = RngState::new(8);
        let a = Matrix::from_shape_fn((4, 4), |_| rng.standard_normal());
        let sym = &a + &a.t();
        let ms = from_tilde(sym);
        assert_eq!(loss_cc(&ms).value, loss_ci(&ms).value);
    }

    #[test]
    fn axis_selection() {
        let mut rng = RngState::new(9);
        let ms = from_tilde(Matrix::from_shape_fn((3, 3), |_| rng.standard_normal()));
        assert_eq!(loss_ic_joint(&ms, AxisSelection::Cc), loss_cc(&ms));
        assert_eq!(loss_ic_joint(&ms, AxisSelection::Ci), loss_ci(&ms));
        let both = loss_ic_joint(&ms, AxisSelection::Both);
        assert_eq!(both.value, loss_cc(&ms).value + loss_ci(&ms).value);
        assert!(both.diagnostics.log_z_cc.is_some() && both.diagnostics.log_z_ci.is_some());
    }

    #[test]
    fn mixup_ce_uniform_and_hard_labels() {
        let y = array![[0.3, 0.7, 0.0], [0.0, 0.5, 0.5]];
        let r = loss_mixup_ce(&Matrix::zeros((2, 3)), &y).unwrap();
        assert!((r.value - 3f64.ln()).abs() < 1e-15);
        for row in r.grad_s.rows() {
            assert!(row.sum().abs() < 1e-15);
        }
        let s = array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]];
        let hard = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let soft = loss_mixup_ce(&s, &hard).unwrap().value;
        assert!((soft - cross_entropy(&s, &[0, 2]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mixup_gradient_examples() {
        // B = 1, one-hot target, uniform predictions
        let r = array![[2.0, -1.0]];
        let s = Matrix::zeros((1, 4));
        let y = array![[0.0, 1.0, 0.0, 0.0]];
        let g = grad_w_mixup(&r, &s, &y).unwrap();
        for f in 0..2 {
            assert!((g[[f, 1]] - r[[0, f]] * 0.75).abs() < 1e-15);
            assert!((g[[f, 0]] + r[[0, f]] * 0.25).abs() < 1e-15);
        }
        // near-perfect predictions
        let s = array![[-40.0, 40.0]];
        let y = array![[0.0, 1.0]];
        let g = grad_w_mixup(&array![[1.0, 1.0]], &s, &y).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn single_sample_contrastive_gradients_vanish() {
        let r = array![[0.3, -1.2, 2.0]];
        let w = array![[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]];
        let y = array![[0.4, 0.6]];
        let ms = mixed_scores(&r, &w, &y).unwrap();
        assert!(grad_w_cc(&r, &ms).unwrap().iter().all(|&v| v == 0.0));
        assert!(grad_w_ci(&r, &ms).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_features_zero_ci_gradient() {
        let r = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let w = array![[0.5, -1.0, 2.0], [1.5, 0.0, -0.5]];
        let y = array![[0.2, 0.8, 0.0], [0.0, 0.1, 0.9], [1.0, 0.0, 0.0]];
        let ms = mixed_scores(&r, &w, &y).unwrap();
        assert!(grad_w_ci(&r, &ms).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_cc_fixed_point() {
        let r = Matrix::eye(3) * 10.0;
        let w = Matrix::eye(3) * 10.0;
        let ms = mixed_scores(&r, &w, &Matrix::eye(3)).unwrap();
        let g = grad_w_cc(&r, &ms).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
    }
}
