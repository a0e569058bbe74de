//! Test-only oracles: scalar-loop reimplementations and finite differences
//! that share no code with the library paths they check.
#![allow(dead_code)]

use icmix::numerics::{Matrix, RngState};

pub fn random_matrix(rng: &mut RngState, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| scale * rng.standard_normal())
}

/// Rows mixing two random classes with a uniform ratio.
pub fn random_mix_weights(rng: &mut RngState, rows: usize, classes: usize) -> Matrix {
    let mut y = Matrix::zeros((rows, classes));
    for i in 0..rows {
        let a = rng.below(classes);
        let b = rng.below(classes);
        let l = rng.uniform();
        y[[i, a]] += l;
        y[[i, b]] += 1.0 - l;
    }
    y
}

pub fn central_diff(x: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(x.dim());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut up = x.clone();
            up[[i, j]] += h;
            let mut down = x.clone();
            down[[i, j]] -= h;
            out[[i, j]] = (f(&up) - f(&down)) / (2.0 * h);
        }
    }
    out
}

/// Max |a - n| / max(|a|, |n|, floor).
pub fn rel_err(a: &Matrix, n: &Matrix, floor: f64) -> f64 {
    a.iter()
        .zip(n.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros((a.nrows(), b.ncols()));
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut acc = 0.0;
            for k in 0..a.ncols() {
                acc += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Naive `-(1/B) sum_i log softmax(row_i)[target_i]` without max-shifting.
pub fn naive_row_ce(m: &Matrix, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let z: f64 = (0..m.ncols()).map(|j| m[[i, j]].exp()).sum();
        total += -(m[[i, t]].exp() / z).ln();
    }
    total / targets.len() as f64
}

/// Class-contrasting loss straight from its definition: for every image i,
/// scores r_i . (W y_j) against every interpolated classifier of the batch.
pub fn naive_loss_cc(r: &Matrix, w: &Matrix, y: &Matrix) -> f64 {
    let b = r.nrows();
    let mut total = 0.0;
    for i in 0..b {
        let scores: Vec<f64> = (0..b).map(|j| pair_score(r, w, y, i, j)).collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        total -= (scores[i].exp() / z).ln();
    }
    total / b as f64
}

/// Image-contrasting loss from its definition: every interpolated classifier
/// i against every mixed image of the batch.
pub fn naive_loss_ci(r: &Matrix, w: &Matrix, y: &Matrix) -> f64 {
    let b = r.nrows();
    let mut total = 0.0;
    for i in 0..b {
        let scores: Vec<f64> = (0..b).map(|j| pair_score(r, w, y, j, i)).collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        total -= (scores[i].exp() / z).ln();
    }
    total / b as f64
}

/// Soft-label cross-entropy from its definition.
pub fn naive_mixup_ce(s: &Matrix, y: &Matrix) -> f64 {
    let mut total = 0.0;
    for i in 0..s.nrows() {
        let z: f64 = (0..s.ncols()).map(|c| s[[i, c]].exp()).sum();
        for c in 0..s.ncols() {
            total -= y[[i, c]] * (s[[i, c]].exp() / z).ln();
        }
    }
    total / s.nrows() as f64
}

/// r_i . (W y_j) by explicit loops.
pub fn pair_score(r: &Matrix, w: &Matrix, y: &Matrix, i: usize, j: usize) -> f64 {
    let mut acc = 0.0;
    for f in 0..r.ncols() {
        let mut wy = 0.0;
        for c in 0..w.ncols() {
            wy += w[[f, c]] * y[[j, c]];
        }
        acc += r[[i, f]] * wy;
    }
    acc
}

/// Kolmogorov-Smirnov statistic of a sample against Uniform(0, 1).
pub fn ks_uniform(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic 1% critical value of the KS statistic, c(0.01) = 1.628.
pub fn ks_critical_1pct(n: usize, m: Option<usize>) -> f64 {
    let c = 1.628;
    match m {
        None => c / (n as f64).sqrt(),
        Some(m) => c * ((n + m) as f64 / (n * m) as f64).sqrt(),
    }
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Writes `records` synthetic CIFAR records: the class of record `i` is
/// `(i + offset) % classes` and pixel k holds `(i + k) % 256`. For the
/// two-label layout the coarse byte is `class / 5`.
pub fn write_cifar_file(
    path: &std::path::Path,
    label_bytes: usize,
    classes: usize,
    records: usize,
    offset: usize,
) {
    let record_len = label_bytes + 3072;
    let mut bytes = Vec::with_capacity(records * record_len);
    for i in 0..records {
        let class = (i + offset) % classes;
        if label_bytes == 2 {
            bytes.push((class / 5) as u8);
        }
        bytes.push(class as u8);
        bytes.extend((0..3072).map(|k| ((i + k) % 256) as u8));
    }
    std::fs::write(path, bytes).unwrap();
}
