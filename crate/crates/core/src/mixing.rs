//! Mixed-batch construction: Mixup pairing, Remix label ratios and the
//! RegMixup clean + mixed composite.

use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_beta, Matrix, RngState};

/// Training objective / augmentation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    Mixup,
    IcMixup,
    Regmixup,
    IcRegmixup,
    Remix,
    IcRemix,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::None,
        Method::Mixup,
        Method::IcMixup,
        Method::Regmixup,
        Method::IcRegmixup,
        Method::Remix,
        Method::IcRemix,
    ];

    /// Uses the interpolated-classifier contrastive loss.
    pub fn is_infinite_class(self) -> bool {
        matches!(self, Method::IcMixup | Method::IcRegmixup | Method::IcRemix)
    }

    pub fn is_regmixup(self) -> bool {
        matches!(self, Method::Regmixup | Method::IcRegmixup)
    }

    pub fn is_remix(self) -> bool {
        matches!(self, Method::Remix | Method::IcRemix)
    }

    pub fn mixes(self) -> bool {
        self != Method::None
    }

    /// Default Beta shape: 20 for the RegMixup variants, 0.2 otherwise.
    pub fn default_alpha(self) -> f64 {
        if self.is_regmixup() {
            20.0
        } else {
            0.2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Mixup => "mixup",
            Method::IcMixup => "ic_mixup",
            Method::Regmixup => "regmixup",
            Method::IcRegmixup => "ic_regmixup",
            Method::Remix => "remix",
            Method::IcRemix => "ic_remix",
        }
    }
}

/// Which axis (or both) of the mixed score matrix supplies negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisSelection {
    /// Other interpolated classes for the same image.
    Cc,
    /// Other interpolated images for the same classifier.
    Ci,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixConfig {
    pub method: Method,
    pub alpha: f64,
    /// Remix interpolation threshold.
    pub tau: f64,
    /// Remix imbalance-ratio threshold.
    pub kappa: f64,
    /// Only read by the infinite-class methods.
    pub axes: AxisSelection,
}

impl MixConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            alpha: method.default_alpha(),
            tau: 0.5,
            kappa: 3.0,
            axes: AxisSelection::Both,
        }
    }

    /// Human-readable list of violated constraints; empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            v.push(format!("method.alpha must be > 0 (got {})", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            v.push(format!("method.tau must lie in [0, 1] (got {})", self.tau));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            v.push(format!("method.kappa must be >= 1 (got {})", self.kappa));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Per-class sample counts of the training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: Vec<usize>,
}

impl ClassHistogram {
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut counts = vec![0; num_classes];
        for &y in labels {
            *counts.get_mut(y).ok_or_else(|| Error::InvalidArgument {
                arg: "labels",
                reason: format!("label {y} outside [0, {num_classes})"),
            })? += 1;
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// A batch of mixed samples ready for the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MixBatch {
    /// B x D_in mixed inputs.
    pub inputs: Matrix,
    /// B x C mixing weights; each row is one interpolated class.
    pub mix_weights: Matrix,
    /// Input-mixing ratio of each row.
    pub lambdas: Vec<f64>,
    /// Source indices (a, b) of each row within the original batch.
    pub pair_indices: Vec<(usize, usize)>,
}

impl MixBatch {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Snaps a ratio to the nearest value whose complement `1 - r` is exact.
///
/// With such ratios `r * a + (1 - r) * b` and `(1 - r) * b + r * a` agree
/// bitwise, so swapping a pair and complementing the ratio is a true symmetry.
pub fn canonical_ratio(lambda: f64) -> f64 {
    if lambda >= 0.5 {
        lambda
    } else {
        1.0 - (1.0 - lambda)
    }
}

/// Remix label ratio: biases the label of a mixed pair toward the minority class.
///
/// `n_i` and `n_j` are the training counts of the classes weighted by
/// `lambda` and `1 - lambda` respectively.
pub fn remix_label_ratio(lambda: f64, n_i: usize, n_j: usize, tau: f64, kappa: f64) -> f64 {
    let ratio = n_i as f64 / n_j as f64;
    if ratio >= kappa && lambda < tau {
        0.0
    } else if ratio <= 1.0 / kappa && 1.0 - lambda < tau {
        1.0
    } else {
        lambda
    }
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= num_classes) {
        Some(y) => Err(Error::InvalidArgument {
            arg: "labels",
            reason: format!("label {y} outside [0, {num_classes})"),
        }),
        None => Ok(()),
    }
}

/// One-hot B x C weights for `labels`.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Matrix> {
    check_labels(labels, num_classes)?;
    let mut m = Matrix::zeros((labels.len(), num_classes));
    for (i, &y) in labels.iter().enumerate() {
        m[[i, y]] = 1.0;
    }
    Ok(m)
}

/// Mixes explicitly given pairs with explicitly given input ratios.
///
/// This is the deterministic core of [`mix_batch`]; ratios are canonicalized
/// with [`canonical_ratio`] and the label ratio follows `config.method`.
pub fn mix_pairs(
    inputs: &Matrix,
    labels: &[usize],
    pairs: &[(usize, usize)],
    lambdas: &[f64],
    config: &MixConfig,
    histogram: &ClassHistogram,
) -> Result<MixBatch> {
    let b = inputs.nrows();
    let c = histogram.num_classes();
    if labels.len() != b {
        return Err(Error::dims(
            "mix_pairs",
            format!("{} labels for {b} inputs", labels.len()),
        ));
    }
    if pairs.len() != lambdas.len() {
        return Err(Error::dims(
            "mix_pairs",
            format!("{} pairs but {} ratios", pairs.len(), lambdas.len()),
        ));
    }
    check_labels(labels, c)?;
    if let Some(&(a, bb)) = pairs.iter().find(|&&(a, bb)| a >= b || bb >= b) {
        return Err(Error::InvalidArgument {
            arg: "pairs",
            reason: format!("pair ({a}, {bb}) outside batch of {b}"),
        });
    }
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::InvalidArgument {
            arg: "lambdas",
            reason: format!("ratio {l} outside [0, 1]"),
        });
    }

    let n = pairs.len();
    let mut mixed = Matrix::zeros((n, inputs.ncols()));
    let mut weights = Matrix::zeros((n, c));
    let mut out_lambdas = Vec::with_capacity(n);
    for (row, (&(a, bb), &raw)) in pairs.iter().zip(lambdas).enumerate() {
        let lambda = canonical_ratio(raw);
        let (xa, xb) = (inputs.row(a), inputs.row(bb));
        for (dst, (&va, &vb)) in mixed.row_mut(row).iter_mut().zip(xa.iter().zip(xb.iter())) {
            *dst = lambda * va + (1.0 - lambda) * vb;
        }

        let (ya, yb) = (labels[a], labels[bb]);
        let label_ratio = if config.method.is_remix() {
            let (n_i, n_j) = (histogram.counts[ya], histogram.counts[yb]);
            if n_i == 0 || n_j == 0 {
                return Err(Error::InvalidArgument {
                    arg: "histogram",
                    reason: format!(
                        "class {} has no training samples",
                        if n_i == 0 { ya } else { yb }
                    ),
                });
            }
            remix_label_ratio(lambda, n_i, n_j, config.tau, config.kappa)
        } else {
            lambda
        };
        weights[[row, ya]] += label_ratio;
        weights[[row, yb]] += 1.0 - label_ratio;
        out_lambdas.push(lambda);
    }

    Ok(MixBatch {
        inputs: mixed,
        mix_weights: weights,
        lambdas: out_lambdas,
        pair_indices: pairs.to_vec(),
    })
}

/// Builds one mixed batch: the batch is paired against a random permutation
/// of itself and each pair draws its own ratio from Beta(alpha, alpha).
///
/// For [`Method::None`] the inputs pass through with one-hot weights. For the
/// RegMixup variants this returns only the mixed half; see
/// [`build_training_batch`].
pub fn mix_batch(
    inputs: &Matrix,
    labels: &[usize],
    config: &MixConfig,
    histogram: &ClassHistogram,
    rng: &mut RngState,
) -> Result<MixBatch> {
    let b = inputs.nrows();
    if labels.len() != b {
        return Err(Error::dims(
            "mix_batch",
            format!("{} labels for {b} inputs", labels.len()),
        ));
    }
    if !config.method.mixes() {
        return Ok(MixBatch {
            inputs: inputs.clone(),
            mix_weights: one_hot(labels, histogram.num_classes())?,
            lambdas: vec![1.0; b],
            pair_indices: (0..b).map(|i| (i, i)).collect(),
        });
    }
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    config.validate()?;
    let perm = rng.permutation(b);
    let lambdas = (0..b)
        .map(|_| sample_beta(config.alpha, rng))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = perm.into_iter().enumerate().collect();
    mix_pairs(inputs, labels, &pairs, &lambdas, config, histogram)
}

/// Stacks the clean batch (one-hot weights, ratio 1) on top of a mixed batch.
///
/// Pair indices of the mixed half are kept relative to the clean batch.
pub fn regmixup_compose(
    clean_inputs: &Matrix,
    clean_labels: &[usize],
    mixed: &MixBatch,
) -> Result<MixBatch> {
    let b = clean_inputs.nrows();
    let c = mixed.mix_weights.ncols();
    if clean_labels.len() != b || mixed.len() != b || clean_inputs.ncols() != mixed.inputs.ncols() {
        return Err(Error::dims(
            "regmixup_compose",
            format!(
                "clean {}x{} with {} labels vs mixed {}x{}",
                b,
                clean_inputs.ncols(),
                clean_labels.len(),
                mixed.len(),
                mixed.inputs.ncols()
            ),
        ));
    }
    let clean_weights = one_hot(clean_labels, c)?;
    let mut inputs = Matrix::zeros((2 * b, clean_inputs.ncols()));
    inputs.slice_mut(s![..b, ..]).assign(clean_inputs);
    inputs.slice_mut(s![b.., ..]).assign(&mixed.inputs);
    let mut weights = Matrix::zeros((2 * b, c));
    weights.slice_mut(s![..b, ..]).assign(&clean_weights);
    weights.slice_mut(s![b.., ..]).assign(&mixed.mix_weights);

    let mut lambdas = vec![1.0; b];
    lambdas.extend_from_slice(&mixed.lambdas);
    let mut pairs: Vec<(usize, usize)> = (0..b).map(|i| (i, i)).collect();
    pairs.extend_from_slice(&mixed.pair_indices);
    Ok(MixBatch {
        inputs,
        mix_weights: weights,
        lambdas,
        pair_indices: pairs,
    })
}

/// The batch a training step actually consumes for `config.method`.
pub fn build_training_batch(
    inputs: &Matrix,
    labels: &[usize],
    config: &MixConfig,
    histogram: &ClassHistogram,
    rng: &mut RngState,
) -> Result<MixBatch> {
    let mixed = mix_batch(inputs, labels, config, histogram, rng)?;
    if config.method.is_regmixup() {
        regmixup_compose(inputs, labels, &mixed)
    } else {
        Ok(mixed)
    }
}

/// Sum of each row of the mixing weights.
pub fn row_sums(m: &Matrix) -> Vec<f64> {
    m.sum_axis(Axis(1)).to_vec()
}
