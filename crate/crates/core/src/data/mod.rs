//! Dataset decoding, preprocessing, augmentation and batch ordering.

pub mod cifar;
pub mod idx;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use cifar::CifarVariant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Per-pixel mean image computed on a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanImage {
    pub shape: [usize; 3],
    pub values: Vec<f64>,
}

/// An immutable labelled image collection stored as `f32` NCHW.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<f32>,
    shape: [usize; 3],
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
    mean: Option<MeanImage>,
}

impl Dataset {
    pub fn new(
        images: Vec<f32>,
        shape: [usize; 3],
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let per = shape.iter().product::<usize>();
        if per == 0 || images.len() != labels.len() * per {
            return Err(Error::Input(format!(
                "{} pixel values cannot hold {} images of shape {:?}",
                images.len(),
                labels.len(),
                shape
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Input(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            images,
            shape,
            labels,
            num_classes,
            split,
            mean: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    /// Mean image subtracted from this dataset, if it has been centred.
    pub fn mean_image(&self) -> Option<&MeanImage> {
        self.mean.as_ref()
    }

    /// The first `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n * self.image_len()].to_vec(),
            shape: self.shape,
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            split: self.split,
            mean: self.mean.clone(),
        }
    }

    /// Per-pixel mean of the stored values, accumulated in `f64`.
    pub fn pixel_mean(&self) -> MeanImage {
        let per = self.image_len();
        let mut acc = vec![0.0f64; per];
        for img in self.images.chunks_exact(per) {
            for (a, &v) in acc.iter_mut().zip(img) {
                *a += v as f64;
            }
        }
        let n = self.len().max(1) as f64;
        MeanImage {
            shape: self.shape,
            values: acc.into_iter().map(|v| v / n).collect(),
        }
    }

    /// Histogram of labels.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Materialise a batch as an `NCHW` tensor, optionally augmenting each
    /// image with `augment` in index order.
    pub fn batch<T: Real>(
        &self,
        indices: &[usize],
        mut augment: Option<(&Augment, &mut ChaCha8Rng)>,
    ) -> (Tensor<T>, Vec<usize>) {
        let per = self.image_len();
        let [c, h, w] = self.shape;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        let mut scratch = Vec::new();
        for &i in indices {
            let img = self.image(i);
            match augment.as_mut() {
                Some((aug, rng)) if aug.is_active() => {
                    aug.apply(img, self.shape, rng, &mut scratch);
                    data.extend(scratch.iter().map(|&v| T::from_f64(v as f64)));
                }
                _ => data.extend(img.iter().map(|&v| T::from_f64(v as f64))),
            }
            labels.push(self.labels[i]);
        }
        (
            Tensor::new(&[indices.len(), c, h, w], data).expect("batch shape"),
            labels,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    /// Subtract the training split's per-pixel mean image.
    PerPixelMean,
    /// Keep the `[0, 1]` scaling.
    ScaleOnly,
}

/// Apply `scheme` to `ds`. A test split must be given the training mean;
/// a training split computes its own.
pub fn preprocess(mut ds: Dataset, scheme: Preprocess, train_mean: Option<&MeanImage>) -> Result<Dataset> {
    if scheme == Preprocess::ScaleOnly {
        return Ok(ds);
    }
    let mean = match (ds.split, train_mean) {
        (Split::Train, _) => ds.pixel_mean(),
        (Split::Test, Some(m)) => m.clone(),
        (Split::Test, None) => {
            return Err(Error::Usage(
                "per-pixel mean centring of a test split needs the training split's mean image".into(),
            ))
        }
    };
    if mean.shape != ds.shape {
        return Err(Error::Usage(format!(
            "mean image {:?} does not match dataset images {:?}",
            mean.shape, ds.shape
        )));
    }
    let per = ds.image_len();
    for img in ds.images.chunks_exact_mut(per) {
        for (v, &m) in img.iter_mut().zip(&mean.values) {
            *v = (*v as f64 - m) as f32;
        }
    }
    ds.mean = Some(mean);
    Ok(ds)
}

/// Training-time augmentation policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    None,
    /// Zero-pad by `pad` on every side, take a random crop of the original
    /// size, then flip horizontally with probability 1/2.
    PadCropFlip { pad: usize },
}

impl Augment {
    pub fn is_active(&self) -> bool {
        !matches!(self, Augment::None)
    }

    /// Augment `img` into `out`.
    pub fn apply(&self, img: &[f32], shape: [usize; 3], rng: &mut impl Rng, out: &mut Vec<f32>) {
        match *self {
            Augment::None => {
                out.clear();
                out.extend_from_slice(img);
            }
            Augment::PadCropFlip { pad } => {
                let dy = rng.random_range(0..=2 * pad);
                let dx = rng.random_range(0..=2 * pad);
                let flip = rng.random_bool(0.5);
                pad_crop(img, shape, pad, dy, dx, out);
                if flip {
                    hflip_in_place(out, shape);
                }
            }
        }
    }
}

/// Crop an `h x w` window at `(dy, dx)` out of `img` zero-padded by `pad`.
pub fn pad_crop(img: &[f32], [c, h, w]: [usize; 3], pad: usize, dy: usize, dx: usize, out: &mut Vec<f32>) {
    out.clear();
    out.resize(c * h * w, 0.0);
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx) as isize - pad as isize;
                if sx >= 0 && sx < w as isize {
                    out[(ch * h + y) * w + x] = img[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
}

pub fn hflip_in_place(img: &mut [f32], [c, h, w]: [usize; 3]) {
    for row in img[..c * h * w].chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Mix a seed with an epoch (and a stream tag) into an RNG seed.
pub fn stream_seed(seed: u64, epoch: u64, stream: u64) -> u64 {
    // splitmix64 finaliser over (seed ^ epoch) and the stream tag
    let mut z = (seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const ORDER_STREAM: u64 = 0;
const AUGMENT_STREAM: u64 = 1;

/// Seeded permutation of `0..n` split into batches; the last partial batch is kept.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Input("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, epoch as u64, ORDER_STREAM));
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// RNG driving augmentation for one epoch.
pub fn augment_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, epoch as u64, AUGMENT_STREAM))
}

/// Datasets the CLI knows how to find.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Fmnist,
    Cifar10,
    Cifar100,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "mnist" => DatasetKind::Mnist,
            "fmnist" | "fashion-mnist" | "fashion_mnist" => DatasetKind::Fmnist,
            "cifar10" | "cifar-10" => DatasetKind::Cifar10,
            "cifar100" | "cifar-100" => DatasetKind::Cifar100,
            other => {
                return Err(Error::Input(format!(
                    "unknown dataset '{other}' (expected mnist, fmnist, cifar10 or cifar100)"
                )))
            }
        })
    }
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fmnist => "fmnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
        }
    }

    /// `(channels, height, width, classes)`.
    pub fn geometry(self) -> (usize, usize, usize, usize) {
        match self {
            DatasetKind::Mnist | DatasetKind::Fmnist => (1, 28, 28, 10),
            DatasetKind::Cifar10 => (3, 32, 32, 10),
            DatasetKind::Cifar100 => (3, 32, 32, 100),
        }
    }

    pub fn default_augment(self) -> Augment {
        match self {
            DatasetKind::Mnist | DatasetKind::Fmnist => Augment::None,
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => Augment::PadCropFlip { pad: 4 },
        }
    }

    /// Directory conventionally holding this dataset under a data root.
    pub fn default_subdir(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fmnist => "fashion-mnist",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
            DatasetKind::Cifar100 => "cifar-100-binary",
        }
    }

    /// Files `load` reads for `split`, relative to the resolved directory.
    pub fn files(self, split: Split) -> Vec<&'static str> {
        match self {
            DatasetKind::Mnist | DatasetKind::Fmnist => match split {
                Split::Train => idx::TRAIN_FILES.to_vec(),
                Split::Test => idx::TEST_FILES.to_vec(),
            },
            DatasetKind::Cifar10 => CifarVariant::C10.files(split),
            DatasetKind::Cifar100 => CifarVariant::C100.files(split),
        }
    }

    /// Resolve the directory: `root/<subdir>` when it exists, else `root`.
    pub fn resolve(self, root: &Path) -> PathBuf {
        let nested = root.join(self.default_subdir());
        if nested.is_dir() {
            nested
        } else {
            root.to_path_buf()
        }
    }

    /// Load one split, scaled to `[0, 1]`.
    pub fn load(self, root: &Path, split: Split) -> Result<Dataset> {
        let dir = self.resolve(root);
        match self {
            DatasetKind::Mnist | DatasetKind::Fmnist => idx::load_idx_dir(&dir, split),
            DatasetKind::Cifar10 => cifar::load_cifar(&dir, CifarVariant::C10, split),
            DatasetKind::Cifar100 => cifar::load_cifar(&dir, CifarVariant::C100, split),
        }
    }

    /// SHA-256 of every file backing both splits, keyed by file name.
    pub fn checksums(self, root: &Path) -> Result<Vec<(String, String)>> {
        let dir = self.resolve(root);
        let mut out = Vec::new();
        for split in [Split::Train, Split::Test] {
            for f in self.files(split) {
                let p = dir.join(f);
                let bytes = read_file(&p)?;
                let digest = Sha256::digest(&bytes);
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.push((f.to_string(), hex));
            }
        }
        Ok(out)
    }
}

/// A preprocessed train/test pair.
#[derive(Clone, Debug)]
pub struct DataPair {
    pub train: Dataset,
    pub test: Dataset,
}

impl DataPair {
    /// Centre both splits with the training split's per-pixel mean.
    pub fn centered(train: Dataset, test: Dataset) -> Result<Self> {
        let train = preprocess(train, Preprocess::PerPixelMean, None)?;
        let mean = train.mean_image().cloned();
        let test = preprocess(test, Preprocess::PerPixelMean, mean.as_ref())?;
        Ok(Self { train, test })
    }
}
