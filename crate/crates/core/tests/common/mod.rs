#![allow(dead_code)]

pub mod gradcheck;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdense::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[-1, 1)`.
pub fn uniform(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Uniform magnitude in `[0.1, 1)` with random sign, so no value sits on a ReLU kink.
pub fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(0.1..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Straight six-loop cross-correlation with zero padding; weight `[co, ci, kh, kw]`.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * co * ho * wo];
    for b in 0..n {
        for o in 0..co {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((b * ci + c) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * ci + c) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((b * co + o) * ho + y) * wo + xx] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, co, ho, wo], out).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Directory holding `mnist/` and `cifar10/`; `RDENSE_DATA_ROOT` overrides.
pub fn data_root() -> PathBuf {
    std::env::var_os("RDENSE_DATA_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("/root/data"))
}

pub fn mnist_dir() -> PathBuf {
    data_root().join("mnist")
}

pub fn cifar10_dir() -> PathBuf {
    data_root().join("cifar10")
}

/// First `n_train` / `n_test` MNIST images, centred with the subset's mean.
pub fn mnist_subset(n_train: usize, n_test: usize) -> rdense::data::DataPair {
    use rdense::{DatasetKind, Split};
    let train = DatasetKind::Mnist.load(&mnist_dir(), Split::Train).unwrap().take(n_train);
    let test = DatasetKind::Mnist.load(&mnist_dir(), Split::Test).unwrap().take(n_test);
    rdense::data::DataPair::centered(train, test).unwrap()
}
