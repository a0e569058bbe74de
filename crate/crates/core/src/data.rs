//! Datasets: CIFAR binary parsing, class-stratified and long-tailed
//! subsampling, and synthetic Gaussian blobs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::ClassHistogram;
use crate::model::container::{self, Kind};
use crate::model::Standardizer;
use crate::numerics::{matrix_from_vec, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

impl CifarVariant {
    /// Label bytes preceding the pixels of each record.
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            // coarse label, fine label
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    /// (file name, record count) for every file of a split.
    pub fn files(self, split: Split) -> Vec<(&'static str, usize)> {
        match (self, split) {
            (CifarVariant::Cifar10, Split::Train) => vec![
                ("data_batch_1.bin", 10_000),
                ("data_batch_2.bin", 10_000),
                ("data_batch_3.bin", 10_000),
                ("data_batch_4.bin", 10_000),
                ("data_batch_5.bin", 10_000),
            ],
            (CifarVariant::Cifar10, Split::Test) => vec![("test_batch.bin", 10_000)],
            (CifarVariant::Cifar100, Split::Train) => vec![("train.bin", 50_000)],
            (CifarVariant::Cifar100, Split::Test) => vec![("test.bin", 10_000)],
        }
    }
}

/// Labelled images, one flattened sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
    /// Number of channel-planar blocks per row, used for standardization.
    pub channels: usize,
}

impl Dataset {
    pub fn new(
        images: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
        channels: usize,
    ) -> Result<Self> {
        if images.nrows() == 0 || images.nrows() != labels.len() {
            return Err(Error::dims(
                "Dataset",
                format!("{} images with {} labels", images.nrows(), labels.len()),
            ));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument {
                arg: "labels",
                reason: format!("label {y} outside [0, {num_classes})"),
            });
        }
        if channels == 0 || !images.ncols().is_multiple_of(channels) {
            return Err(Error::dims(
                "Dataset",
                format!(
                    "width {} not divisible into {channels} channels",
                    images.ncols()
                ),
            ));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn histogram(&self) -> ClassHistogram {
        ClassHistogram {
            counts: self.class_counts(),
        }
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let images = self.images.select(ndarray::Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(images, labels, self.num_classes, self.split, self.channels)
    }

    /// Indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = matrix_from_vec(
            1,
            3,
            vec![
                self.num_classes as f64,
                match self.split {
                    Split::Train => 0.0,
                    Split::Test => 1.0,
                },
                self.channels as f64,
            ],
        )?;
        let labels = matrix_from_vec(
            self.len(),
            1,
            self.labels.iter().map(|&y| y as f64).collect(),
        )?;
        container::write_file(path, Kind::Dataset, &[meta, self.images.clone(), labels])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (kind, tensors) = container::read_file(path)?;
        if kind != Kind::Dataset || tensors.len() != 3 || tensors[0].dim() != (1, 3) {
            return Err(Error::Format(format!(
                "{} is not a dataset container",
                path.display()
            )));
        }
        let mut it = tensors.into_iter();
        let meta = it.next().unwrap();
        let images = it.next().unwrap();
        let labels = it.next().unwrap();
        let split = if meta[[0, 1]] == 0.0 {
            Split::Train
        } else {
            Split::Test
        };
        Self::new(
            images,
            labels.iter().map(|&v| v as usize).collect(),
            meta[[0, 0]] as usize,
            split,
            meta[[0, 2]] as usize,
        )
    }
}

/// Parses concatenated CIFAR records, scaling pixels to [0, 1].
///
/// CIFAR-100 records keep the fine label.
pub fn parse_cifar(bytes: &[u8], variant: CifarVariant) -> Result<(Matrix, Vec<usize>)> {
    let record = variant.record_len();
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {record}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / record;
    let label_bytes = variant.label_bytes();
    let mut images = Matrix::zeros((n, CIFAR_PIXELS));
    let mut labels = Vec::with_capacity(n);
    let classes = variant.num_classes();
    for (i, (rec, mut row)) in bytes
        .chunks_exact(record)
        .zip(images.rows_mut())
        .enumerate()
    {
        let label = rec[label_bytes - 1] as usize;
        if label >= classes {
            return Err(Error::Format(format!(
                "record {i}: label {label} >= {classes}"
            )));
        }
        labels.push(label);
        for (dst, &px) in row.iter_mut().zip(&rec[label_bytes..]) {
            *dst = px as f64 / 255.0;
        }
    }
    Ok((images, labels))
}

/// Loads a CIFAR split from the directory of the official binary release.
///
/// Each file must have exactly the documented size; nothing is returned on
/// a mismatch.
pub fn load_cifar(dir: &Path, variant: CifarVariant, split: Split) -> Result<Dataset> {
    let files = variant.files(split);
    // size check up front so a bad later file does not cost a full parse
    for (name, records) in &files {
        let path = dir.join(name);
        let meta = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?;
        let expected = (records * variant.record_len()) as u64;
        if meta.len() != expected {
            return Err(Error::CorruptFile {
                path: path.display().to_string(),
                expected,
                actual: meta.len(),
            });
        }
    }
    let total: usize = files.iter().map(|(_, n)| n).sum();
    let mut images = Matrix::zeros((total, CIFAR_PIXELS));
    let mut labels = Vec::with_capacity(total);
    let mut offset = 0;
    for (name, records) in &files {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = (records * variant.record_len()) as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::CorruptFile {
                path: path.display().to_string(),
                expected,
                actual: bytes.len() as u64,
            });
        }
        let (imgs, labs) = parse_cifar(&bytes, variant)?;
        images
            .slice_mut(ndarray::s![offset..offset + records, ..])
            .assign(&imgs);
        labels.extend(labs);
        offset += records;
    }
    Dataset::new(images, labels, variant.num_classes(), split, 3)
}

fn rounded_count(n: f64) -> usize {
    n.round() as usize
}

/// Keeps `round(fraction * n_c)` samples of every class, drawn uniformly
/// without replacement. Kept samples stay in dataset order.
pub fn stratified_subsample(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument {
            arg: "fraction",
            reason: format!("{fraction} outside (0, 1]"),
        });
    }
    let mut rng = RngState::new(seed);
    let mut keep = Vec::new();
    for (class, mut idx) in ds.class_indices().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let k = rounded_count(fraction * idx.len() as f64);
        if k == 0 {
            return Err(Error::EmptyClass { class });
        }
        rng.shuffle(&mut idx);
        keep.extend_from_slice(&idx[..k]);
    }
    keep.sort_unstable();
    ds.subset(&keep)
}

/// Per-class targets of the exponential long-tail profile:
/// `round(n_max * ratio^(c / (C - 1)))`.
pub fn longtail_counts(n_max: usize, num_classes: usize, ratio: f64) -> Vec<usize> {
    (0..num_classes)
        .map(|c| {
            let exponent = if num_classes > 1 {
                c as f64 / (num_classes - 1) as f64
            } else {
                0.0
            };
            rounded_count(n_max as f64 * ratio.powf(exponent))
        })
        .collect()
}

/// Exponentially imbalanced subset of a balanced dataset: class 0 keeps all
/// `n_max` samples and the last class keeps `round(n_max * ratio)`.
pub fn longtail_subsample(ds: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument {
            arg: "imbalance_ratio",
            reason: format!("{ratio} outside (0, 1]"),
        });
    }
    let counts = ds.class_counts();
    let n_max = counts.iter().copied().max().unwrap_or(0);
    if counts.iter().any(|&n| n != n_max) {
        return Err(Error::InvalidArgument {
            arg: "dataset",
            reason: format!("long-tail construction needs a balanced input, got counts {counts:?}"),
        });
    }
    let targets = longtail_counts(n_max, ds.num_classes, ratio);
    if let Some(class) = targets.iter().position(|&k| k == 0) {
        return Err(Error::EmptyClass { class });
    }
    let mut rng = RngState::new(seed);
    let mut keep = Vec::new();
    for (mut idx, &k) in ds.class_indices().into_iter().zip(&targets) {
        rng.shuffle(&mut idx);
        keep.extend_from_slice(&idx[..k]);
    }
    keep.sort_unstable();
    ds.subset(&keep)
}

/// Unit-norm class centres. Up to `dim` classes sit on the vertices of a
/// regular simplex (centred, normalised basis vectors); beyond that they are
/// normalised Gaussian directions from a fixed stream.
pub fn blob_means(num_classes: usize, dim: usize) -> Matrix {
    let mut means = Matrix::zeros((num_classes, dim));
    if num_classes == 1 {
        means[[0, 0]] = 1.0;
    } else if num_classes <= dim {
        let centre = 1.0 / num_classes as f64;
        for c in 0..num_classes {
            for k in 0..num_classes {
                means[[c, k]] = if c == k { 1.0 - centre } else { -centre };
            }
        }
    } else {
        let mut rng = RngState::new(0x5eed_b10b);
        means.mapv_inplace(|_| rng.standard_normal());
    }
    for mut row in means.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    means
}

/// Parameters of the synthetic Gaussian-blobs task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Isotropic Gaussian blobs around [`blob_means`]; train and test come from
/// independent streams of `seed`. Each feature is its own channel.
pub fn synth_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if num_classes == 0 || per_class == 0 || dim == 0 || !(spread > 0.0) {
        return Err(Error::InvalidArgument {
            arg: "blobs",
            reason: format!(
                "classes {num_classes}, per_class {per_class}, dim {dim}, spread {spread} must all be positive"
            ),
        });
    }
    let means = blob_means(num_classes, dim);
    let base = RngState::new(seed);
    let draw = |mut rng: RngState, split: Split| {
        let n = num_classes * per_class;
        let mut images = Matrix::zeros((n, dim));
        let mut labels = Vec::with_capacity(n);
        for (i, mut row) in images.rows_mut().into_iter().enumerate() {
            let c = i % num_classes;
            for (v, &m) in row.iter_mut().zip(means.row(c)) {
                *v = m + spread * rng.standard_normal();
            }
            labels.push(c);
        }
        Dataset::new(images, labels, num_classes, split, dim)
    };
    Ok((
        draw(base.split(0), Split::Train)?,
        draw(base.split(1), Split::Test)?,
    ))
}

/// Fits per-channel statistics on `train`, then standardizes `train` and
/// every dataset in `others` with them.
pub fn standardize(train: &mut Dataset, others: &mut [&mut Dataset]) -> Result<Standardizer> {
    let st = Standardizer::fit(&train.images, train.channels)?;
    st.apply(&mut train.images)?;
    for ds in others.iter_mut() {
        st.apply(&mut ds.images)?;
    }
    Ok(st)
}
