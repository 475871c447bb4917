//! Dataset ingestion, seeded subsampling and splits, minimal augmentation,
//! synthetic desk-scale tasks, and batch assembly.
//!
//! Images are stored as raw 8-bit channel-major (C,H,W) blocks; batches are
//! materialized as scaled-to-[0,1] tensors, optionally augmented, then
//! normalized per channel with training-set statistics.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, sample_without_replacement, shuffled_indices, standard_normal};
use crate::tensor::{Real, Tensor};

pub const CIFAR_RECORD_BYTES: usize = 3073;

/// A labeled image set, immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    /// (channels, height, width)
    pub image_shape: (usize, usize, usize),
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn from_parts(
        name: impl Into<String>,
        num_classes: usize,
        image_shape: (usize, usize, usize),
        images: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let (c, h, w) = image_shape;
        let pixel_len = c * h * w;
        if pixel_len == 0 || images.len() != labels.len() * pixel_len {
            return Err(Error::Data(format!(
                "image buffer {} does not hold {} records of {} bytes",
                images.len(),
                labels.len(),
                pixel_len
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset { name: name.into(), num_classes, image_shape, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixel_len(&self) -> usize {
        let (c, h, w) = self.image_shape;
        c * h * w
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.pixel_len();
        &self.images[i * len..(i + 1) * len]
    }

    /// Counts per class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    fn take_indices(&self, name: String, indices: &[usize]) -> Dataset {
        let len = self.pixel_len();
        let mut images = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset { name, num_classes: self.num_classes, image_shape: self.image_shape, images, labels }
    }
}

/// Load a CIFAR-style binary file: 3073-byte records, one label byte then
/// 3072 pixel bytes (R, G, B planes, each 32x32 row-major).
pub fn load_cifar_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{}: file length {} is not a positive multiple of the {CIFAR_RECORD_BYTES}-byte record size",
            path.display(),
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut images = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        let label = rec[0];
        if label >= 10 {
            return Err(Error::Data(format!(
                "{}: label byte {label} out of range for 10 classes",
                path.display()
            )));
        }
        labels.push(label);
        images.extend_from_slice(&rec[1..]);
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::from_parts(name, 10, (3, 32, 32), images, labels)
}

/// Concatenate datasets of identical shape and class count, in order.
pub fn concat_datasets(name: impl Into<String>, parts: &[Dataset]) -> Result<Dataset> {
    let first = parts.first().ok_or_else(|| Error::Data("nothing to concatenate".into()))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for ds in parts {
        if ds.image_shape != first.image_shape || ds.num_classes != first.num_classes {
            return Err(Error::Data(format!(
                "dataset {} is incompatible with {}",
                ds.name, first.name
            )));
        }
        images.extend_from_slice(&ds.images);
        labels.extend_from_slice(&ds.labels);
    }
    Dataset::from_parts(name, first.num_classes, first.image_shape, images, labels)
}

/// Keep exactly `n_per_class` samples of every class, drawn uniformly
/// without replacement; original relative order is preserved.
pub fn subsample_per_class(ds: &Dataset, n_per_class: usize, seed: u64) -> Result<Dataset> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for i in 0..ds.len() {
        by_class[ds.label(i)].push(i);
    }
    let mut rng = derive_rng(seed, "subsample-per-class", 0);
    let mut chosen = Vec::with_capacity(n_per_class * ds.num_classes);
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < n_per_class {
            return Err(Error::Data(format!(
                "class {class} has {} samples, fewer than the requested {n_per_class}",
                members.len()
            )));
        }
        for pos in sample_without_replacement(members.len(), n_per_class, &mut rng) {
            chosen.push(members[pos]);
        }
    }
    chosen.sort_unstable();
    Ok(ds.take_indices(format!("{}-sub{}", ds.name, n_per_class), &chosen))
}

/// Stratified disjoint split with `val_per_class` samples per class held out.
pub fn split_train_val(ds: &Dataset, val_per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for i in 0..ds.len() {
        by_class[ds.label(i)].push(i);
    }
    let mut rng = derive_rng(seed, "train-val-split", 0);
    let mut val_idx = Vec::with_capacity(val_per_class * ds.num_classes);
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < val_per_class {
            return Err(Error::Data(format!(
                "class {class} has {} samples, cannot hold out {val_per_class}",
                members.len()
            )));
        }
        for pos in sample_without_replacement(members.len(), val_per_class, &mut rng) {
            val_idx.push(members[pos]);
        }
    }
    val_idx.sort_unstable();
    let in_val: std::collections::HashSet<usize> = val_idx.iter().copied().collect();
    let train_idx: Vec<usize> = (0..ds.len()).filter(|i| !in_val.contains(i)).collect();
    Ok((
        ds.take_indices(format!("{}-train", ds.name), &train_idx),
        ds.take_indices(format!("{}-val", ds.name), &val_idx),
    ))
}

/// Minimal augmentation: random horizontal flip, then zero-pad-and-crop
/// translation by up to `pad_pixels` in each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub enabled: bool,
    pub hflip_prob: f64,
    pub pad_pixels: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec { enabled: false, hflip_prob: 0.5, pad_pixels: 4 }
    }
}

impl AugmentSpec {
    /// The standard CIFAR recipe: flips plus 4-pixel translations.
    pub fn standard() -> Self {
        AugmentSpec { enabled: true, hflip_prob: 0.5, pad_pixels: 4 }
    }

    pub fn disabled() -> Self {
        AugmentSpec::default()
    }
}

/// Apply the augmentation to a (N,C,H,W) batch. Draw order per image:
/// flip decision, x offset, y offset.
pub fn augment_batch<F: Real>(batch: &Tensor<F>, spec: &AugmentSpec, rng: &mut ChaCha8Rng) -> Tensor<F> {
    if !spec.enabled {
        return batch.clone();
    }
    let (n, c, h, w) = match *batch.shape() {
        [n, c, h, w] => (n, c, h, w),
        _ => panic!("augment_batch expects a rank-4 batch"),
    };
    let p = spec.pad_pixels as i64;
    let mut out = Tensor::zeros(batch.shape());
    let src = batch.data();
    let dst = out.data_mut();
    for ni in 0..n {
        let flip = spec.hflip_prob > 0.0 && rng.gen::<f64>() < spec.hflip_prob;
        let (tx, ty) = if p > 0 {
            (rng.gen_range(-p..=p), rng.gen_range(-p..=p))
        } else {
            (0, 0)
        };
        for ci in 0..c {
            let base = ((ni * c) + ci) * h;
            for y in 0..h {
                let sy = y as i64 - ty;
                if sy < 0 || sy >= h as i64 {
                    continue; // zero fill
                }
                for x in 0..w {
                    let sx = x as i64 - tx;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let sx = if flip { w - 1 - sx as usize } else { sx as usize };
                    dst[(base + y) * w + x] = src[(base + sy as usize) * w + sx];
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    GaussianBlobsImage,
}

/// Class-conditional Gaussian image task. `class_separation` is the L2
/// radius (in 8-bit pixel units) of the per-class mean pattern around
/// mid-gray; `noise_sigma` is the per-pixel noise, same units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_shape: (usize, usize, usize),
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: SyntheticKind::GaussianBlobsImage,
            num_classes: 4,
            samples_per_class: 50,
            image_shape: (1, 16, 16),
            class_separation: 40.0,
            noise_sigma: 25.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class < 1 {
            return Err(Error::Config("samples_per_class must be >= 1".into()));
        }
        if !(self.class_separation > 0.0) {
            return Err(Error::Config("class_separation must be positive".into()));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::Config(format!(
                "num_classes must be in [2, 256], got {}",
                self.num_classes
            )));
        }
        let (c, h, w) = self.image_shape;
        if c * h * w == 0 {
            return Err(Error::Config("image_shape has a zero dim".into()));
        }
        Ok(())
    }

    /// Per-class mean patterns in pixel units.
    fn class_means(&self) -> Vec<Vec<f64>> {
        let dim = self.image_shape.0 * self.image_shape.1 * self.image_shape.2;
        let mut rng = derive_rng(self.seed, "synthetic-patterns", 0);
        (0..self.num_classes)
            .map(|_| {
                let raw: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                raw.iter().map(|v| 128.0 + v / norm * self.class_separation).collect()
            })
            .collect()
    }
}

fn synthesize(spec: &SyntheticSpec, means: &[Vec<f64>], tag: &str, name: &str) -> Dataset {
    let dim = spec.image_shape.0 * spec.image_shape.1 * spec.image_shape.2;
    let mut rng = derive_rng(spec.seed, tag, 0);
    let n = spec.num_classes * spec.samples_per_class;
    let mut images = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..spec.num_classes {
        for _ in 0..spec.samples_per_class {
            for &m in &means[class] {
                let v = m + spec.noise_sigma * standard_normal(&mut rng);
                images.push(v.round().clamp(0.0, 255.0) as u8);
            }
            labels.push(class as u8);
        }
    }
    Dataset {
        name: name.into(),
        num_classes: spec.num_classes,
        image_shape: spec.image_shape,
        images,
        labels,
    }
}

/// Deterministic (train, test) pair from the same class-conditional
/// distribution; the test set uses an independent derived stream.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let means = spec.class_means();
    let train = synthesize(spec, &means, "synthetic-train", "synthetic-train");
    let test = synthesize(spec, &means, "synthetic-test", "synthetic-test");
    Ok((train, test))
}

/// Per-channel affine normalization fitted on training pixels in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(ds: &Dataset) -> Normalizer {
        let (c, h, w) = ds.image_shape;
        let plane = h * w;
        let mut sum = vec![0.0f64; c];
        let mut sum_sq = vec![0.0f64; c];
        for i in 0..ds.len() {
            let img = ds.image(i);
            for ch in 0..c {
                for &px in &img[ch * plane..(ch + 1) * plane] {
                    let v = px as f64 / 255.0;
                    sum[ch] += v;
                    sum_sq[ch] += v * v;
                }
            }
        }
        let count = (ds.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq / count - m * m).max(0.0)).sqrt().max(1e-8))
            .collect();
        Normalizer { mean, std }
    }

    pub fn identity(channels: usize) -> Normalizer {
        Normalizer { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    fn apply<F: Real>(&self, batch: &mut Tensor<F>) {
        let (n, c, h, w) = match *batch.shape() {
            [n, c, h, w] => (n, c, h, w),
            _ => panic!("normalizer expects a rank-4 batch"),
        };
        let plane = h * w;
        let data = batch.data_mut();
        for ni in 0..n {
            for ch in 0..c {
                let m = F::of(self.mean[ch]);
                let inv = F::of(1.0 / self.std[ch]);
                let base = ((ni * c) + ch) * plane;
                for v in &mut data[base..base + plane] {
                    *v = (*v - m) * inv;
                }
            }
        }
    }
}

/// One assembled batch.
#[derive(Debug, Clone)]
pub struct Batch<F: Real> {
    pub images: Tensor<F>,
    pub labels: Vec<usize>,
}

fn raw_batch<F: Real>(ds: &Dataset, indices: &[usize]) -> Batch<F> {
    let (c, h, w) = ds.image_shape;
    let mut data = Vec::with_capacity(indices.len() * ds.pixel_len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend(ds.image(i).iter().map(|&px| F::of(px as f64 / 255.0)));
        labels.push(ds.label(i));
    }
    Batch { images: Tensor::from_vec(&[indices.len(), c, h, w], data), labels }
}

/// One epoch of batches: a seeded shuffle cut into ceil(N/B) batches (the
/// last possibly smaller), augmented when requested, then normalized.
pub fn epoch_batches<F: Real>(
    ds: &Dataset,
    batch_size: usize,
    epoch_seed: u64,
    normalizer: &Normalizer,
    augment: Option<&AugmentSpec>,
) -> Result<Vec<Batch<F>>> {
    if ds.is_empty() {
        return Err(Error::Data("cannot batch an empty dataset".into()));
    }
    if batch_size < 1 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut shuffle_rng = derive_rng(epoch_seed, "shuffle", 0);
    let mut aug_rng = derive_rng(epoch_seed, "augment", 0);
    let order = shuffled_indices(ds.len(), &mut shuffle_rng);
    let mut batches = Vec::with_capacity(ds.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let mut batch = raw_batch::<F>(ds, chunk);
        if let Some(spec) = augment {
            if spec.enabled {
                batch.images = augment_batch(&batch.images, spec, &mut aug_rng);
            }
        }
        normalizer.apply(&mut batch.images);
        batches.push(batch);
    }
    Ok(batches)
}

/// Sequential (unshuffled, unaugmented) batches for evaluation.
pub fn eval_batches<F: Real>(
    ds: &Dataset,
    batch_size: usize,
    normalizer: &Normalizer,
) -> Vec<Batch<F>> {
    let indices: Vec<usize> = (0..ds.len()).collect();
    indices
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let mut b = raw_batch::<F>(ds, chunk);
            normalizer.apply(&mut b.images);
            b
        })
        .collect()
}
