//! Dense matrix helpers, stable softmax / log-sum-exp and the seeded generator.
//!
//! Matrices are `ndarray` arrays in standard (row-major) layout. Every
//! training-path quantity is `f64`.
//!
//! The generator is xoshiro256++ seeded through SplitMix64 (the reference
//! seeding procedure), so a seed yields the same stream on every platform.
//! Independent streams are derived with the 2^128-step jump function.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gamma, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Row-major dense matrix of 64-bit reals.
pub type Matrix = Array2<f64>;

/// Dense vector of 64-bit reals.
pub type Vector = Array1<f64>;

/// Builds a matrix from row-major data, checking the length.
pub fn matrix_from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
    if data.len() != rows * cols {
        return Err(Error::dims(
            "matrix_from_vec",
            format!("{} values for a {rows}x{cols} matrix", data.len()),
        ));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked above"))
}

/// `true` when every entry is finite.
pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// log Σ exp(v), evaluated after subtracting the maximum.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let max = values
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        })
        .ok_or(Error::EmptyReduction)?;
    if values.len() == 1 {
        return Ok(values[0]);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

fn log_sum_exp_view(values: ArrayView1<'_, f64>) -> f64 {
    match values.as_slice() {
        Some(s) => log_sum_exp(s),
        None => log_sum_exp(&values.to_vec()),
    }
    .expect("matrix rows are never empty")
}

/// Row-wise log-sum-exp of a matrix with at least one column.
pub fn row_log_sum_exp(m: &Matrix) -> Vector {
    m.axis_iter(Axis(0)).map(log_sum_exp_view).collect()
}

/// Row-wise softmax. Rows with no columns come back empty.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

/// Seeded pseudo-random generator (xoshiro256++).
///
/// Single owner; clone or [`RngState::split`] to hand streams to other workers.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent stream: this generator's state jumped
    /// `stream + 1` times by 2^128 steps. `self` is left untouched.
    pub fn split(&self, stream: u32) -> Self {
        let mut inner = self.inner.clone();
        for _ in 0..=stream {
            inner.jump();
        }
        Self {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform index in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// One draw from the symmetric Beta(alpha, alpha), formed as X / (X + Y) from
/// two independent Gamma(alpha, 1) variates.
///
/// The Gamma sampler is Marsaglia-Tsang, with the `U^(1/alpha)` boost for
/// shapes below one.
pub fn sample_beta(alpha: f64, rng: &mut RngState) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidShapeParameter(alpha));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|_| Error::InvalidShapeParameter(alpha))?;
    loop {
        let x: f64 = gamma.sample(&mut rng.inner);
        let y: f64 = gamma.sample(&mut rng.inner);
        let total = x + y;
        // both variates can underflow to zero for very small shapes
        if total > 0.0 && total.is_finite() {
            return Ok(x / total);
        }
    }
}
