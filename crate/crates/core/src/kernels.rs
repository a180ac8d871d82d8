//! Forward and adjoint kernels on raw tensors.
//!
//! Every kernel here is a pure function. Work is split across samples (or
//! channels) with rayon, and any cross-sample reduction is summed in a fixed
//! order, so results are bitwise independent of the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Samples per partial sum when reducing weight gradients across a batch.
const REDUCE_CHUNK: usize = 8;

/// Samples handled per parallel job in per-sample kernels.
const SAMPLE_GROUP: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (n, c_in, h, w) = match *input {
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::dim("conv2d", format!("input must be NCHW, got {input:?}"))),
        };
        let (c_out, wc_in, kh, kw) = match *weight {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!("weight must be [C_out, C_in, kh, kw], got {weight:?}"),
                ))
            }
        };
        if wc_in != c_in {
            return Err(Error::dim(
                "conv2d",
                format!("input has {c_in} channels but weight expects {wc_in}"),
            ));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        if kh == 0 || kw == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::Config(format!(
                "conv2d {kh}x{kw} kernel with padding {padding} yields an empty output on a {h}x{w} input"
            )));
        }
        let h_out = (h + 2 * padding - kh) / stride + 1;
        let w_out = (w + 2 * padding - kw) / stride + 1;
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            h_out,
            w_out,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Output positions `o` in `lo..hi` whose input index `o*stride + tap - padding`
/// falls inside `0..size`.
fn valid_span(n_out: usize, stride: usize, tap: usize, padding: usize, size: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(tap).div_ceil(stride);
    let hi = if size + padding > tap {
        ((size + padding - tap - 1) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfold one sample `[C_in, H, W]` into `[C_in*kh*kw, H_out*W_out]`.
fn im2col<T: Real>(g: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.c_in {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = valid_span(g.h_out, g.stride, ki, g.padding, g.h);
            for kj in 0..g.kw {
                let (xlo, xhi) = valid_span(g.w_out, g.stride, kj, g.padding, g.w);
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                dst[..ylo * g.w_out].fill(T::zero());
                dst[yhi * g.w_out..].fill(T::zero());
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.padding;
                    let src = &xc[iy * g.w..(iy + 1) * g.w];
                    let d = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    d[..xlo].fill(T::zero());
                    d[xhi..].fill(T::zero());
                    if xlo < xhi {
                        let ix0 = xlo * g.stride + kj - g.padding;
                        if g.stride == 1 {
                            d[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for (v, ox) in d[xlo..xhi].iter_mut().zip(0..) {
                                *v = src[ix0 + ox * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Fold `[C_in*kh*kw, H_out*W_out]` back onto `[C_in, H, W]`, accumulating.
fn col2im<T: Real>(g: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.c_in {
        let dxc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = valid_span(g.h_out, g.stride, ki, g.padding, g.h);
            for kj in 0..g.kw {
                let (xlo, xhi) = valid_span(g.w_out, g.stride, kj, g.padding, g.w);
                if xlo >= xhi {
                    continue;
                }
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.padding;
                    let drow = &mut dxc[iy * g.w..(iy + 1) * g.w];
                    let s = &src[oy * g.w_out + xlo..oy * g.w_out + xhi];
                    let ix0 = xlo * g.stride + kj - g.padding;
                    for (ox, &v) in s.iter().enumerate() {
                        drow[ix0 + ox * g.stride] += v;
                    }
                }
            }
        }
    }
}

/// Cross-correlation without bias.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, ConvGeometry)> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * g.out_plane();
    let k = g.patch();
    let plane = g.out_plane();
    let mut out = vec![T::zero(); g.n * out_len];
    if out_len > 0 && in_len > 0 {
        out.par_chunks_mut(out_len * SAMPLE_GROUP)
            .zip(input.data().par_chunks(in_len * SAMPLE_GROUP))
            .for_each(|(ys, xs)| {
                let mut cols = Vec::new();
                for (y, x) in ys.chunks_mut(out_len).zip(xs.chunks(in_len)) {
                    let cols_ref: &[T] = if g.is_pointwise() {
                        x
                    } else {
                        cols.resize(k * plane, T::zero());
                        im2col(&g, x, &mut cols);
                        &cols
                    };
                    T::gemm(
                        g.c_out,
                        k,
                        plane,
                        T::one(),
                        weight.data(),
                        k as isize,
                        1,
                        cols_ref,
                        plane as isize,
                        1,
                        T::zero(),
                        y,
                        plane as isize,
                        1,
                    );
                }
            });
    }
    Ok((Tensor::new(&[g.n, g.c_out, g.h_out, g.w_out], out)?, g))
}

/// Gradients of a bias-free convolution with respect to its input and weight.
pub fn conv2d_backward<T: Real>(
    g: &ConvGeometry,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
    need_weight: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * g.out_plane();
    let k = g.patch();
    let plane = g.out_plane();

    let dx = need_input.then(|| {
        let mut dx = vec![T::zero(); g.n * in_len];
        if in_len > 0 {
            dx.par_chunks_mut(in_len * SAMPLE_GROUP)
                .zip(grad_out.data().par_chunks(out_len * SAMPLE_GROUP))
                .for_each(|(dxs, dys)| {
                    let mut cols = Vec::new();
                    for (dxn, dyn_) in dxs.chunks_mut(in_len).zip(dys.chunks(out_len)) {
                        if g.is_pointwise() {
                            // dx = W^T dy
                            T::gemm(
                                k, g.c_out, plane, T::one(), weight.data(), 1, k as isize,
                                dyn_, plane as isize, 1, T::zero(), dxn, plane as isize, 1,
                            );
                        } else {
                            cols.resize(k * plane, T::zero());
                            T::gemm(
                                k, g.c_out, plane, T::one(), weight.data(), 1, k as isize,
                                dyn_, plane as isize, 1, T::zero(), &mut cols, plane as isize, 1,
                            );
                            col2im(g, &cols, dxn);
                        }
                    }
                });
        }
        Tensor::new(&[g.n, g.c_in, g.h, g.w], dx).expect("conv input grad shape")
    });

    let dw = need_weight.then(|| {
        let w_len = g.c_out * k;
        let partials: Vec<Vec<T>> = (0..g.n.div_ceil(REDUCE_CHUNK))
            .into_par_iter()
            .map(|chunk| {
                let mut acc = vec![T::zero(); w_len];
                let mut cols = Vec::new();
                let lo = chunk * REDUCE_CHUNK;
                let hi = (lo + REDUCE_CHUNK).min(g.n);
                for s in lo..hi {
                    let x = &input.data()[s * in_len..(s + 1) * in_len];
                    let dy = &grad_out.data()[s * out_len..(s + 1) * out_len];
                    let cols_ref: &[T] = if g.is_pointwise() {
                        x
                    } else {
                        cols.resize(k * plane, T::zero());
                        im2col(g, x, &mut cols);
                        &cols
                    };
                    // dW += dy * cols^T
                    T::gemm(
                        g.c_out, plane, k, T::one(), dy, plane as isize, 1, cols_ref, 1,
                        plane as isize, T::one(), &mut acc, k as isize, 1,
                    );
                }
                acc
            })
            .collect();
        let mut dw = vec![T::zero(); w_len];
        for p in &partials {
            for (d, &v) in dw.iter_mut().zip(p) {
                *d += v;
            }
        }
        Tensor::new(weight.shape(), dw).expect("conv weight grad shape")
    });

    (dx, dw)
}

/// Per-channel statistics saved by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchNormSaved<T> {
    /// Normalised input before the affine transform.
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
}

fn check_bn_params<T: Real>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dim(
            "batchnorm",
            format!(
                "gamma {:?} / beta {:?} must both be [{c}]",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok(())
}

/// Normalise with batch statistics over N x H x W per channel.
pub fn batchnorm_train_forward<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    let (n, c, h, w) = input.dims4("batchnorm")?;
    check_bn_params(c, gamma, beta)?;
    let hw = h * w;
    let count = n * hw;
    if count <= 1 {
        return Err(Error::Config(format!(
            "batchnorm in train mode needs more than one value per channel (N*H*W = {count})"
        )));
    }
    let x = input.data();
    let inv_count = T::one() / T::from_f64(count as f64);
    let stats: Vec<(T, T)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut sum = T::zero();
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for &v in &x[base..base + hw] {
                    sum += v;
                }
            }
            let mean = sum * inv_count;
            let mut sq = T::zero();
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for &v in &x[base..base + hw] {
                    let d = v - mean;
                    sq += d * d;
                }
            }
            (mean, sq * inv_count)
        })
        .collect();
    let mean: Vec<T> = stats.iter().map(|s| s.0).collect();
    let var: Vec<T> = stats.iter().map(|s| s.1).collect();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    xhat.par_chunks_mut(hw)
        .zip(y.par_chunks_mut(hw))
        .zip(x.par_chunks(hw))
        .enumerate()
        .for_each(|(idx, ((xh, yy), xx))| {
            let ch = idx % c;
            let (m, is, ga, be) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for ((a, b), &v) in xh.iter_mut().zip(yy.iter_mut()).zip(xx) {
                *a = (v - m) * is;
                *b = ga * *a + be;
            }
        });
    let shape = input.shape();
    Ok((
        Tensor::new(shape, y)?,
        BatchNormSaved {
            xhat: Tensor::new(shape, xhat)?,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Normalise with fixed (running) statistics.
pub fn batchnorm_eval_forward<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    let (_, c, h, w) = input.dims4("batchnorm")?;
    check_bn_params(c, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::dim(
            "batchnorm",
            format!("running statistics must have {c} channels"),
        ));
    }
    let hw = (h * w).max(1);
    let inv_std: Vec<T> = running_var
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    let x = input.data();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for (idx, ((xh, yy), xx)) in xhat
        .chunks_mut(hw)
        .zip(y.chunks_mut(hw))
        .zip(x.chunks(hw))
        .enumerate()
    {
        let ch = idx % c;
        let (m, is, ga, be) = (
            running_mean[ch],
            inv_std[ch],
            gamma.data()[ch],
            beta.data()[ch],
        );
        for ((a, b), &v) in xh.iter_mut().zip(yy.iter_mut()).zip(xx) {
            *a = (v - m) * is;
            *b = ga * *a + be;
        }
    }
    let shape = input.shape();
    Ok((
        Tensor::new(shape, y)?,
        BatchNormSaved {
            xhat: Tensor::new(shape, xhat)?,
            inv_std,
            mean: running_mean.to_vec(),
            var: running_var.to_vec(),
        },
    ))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward<T: Real>(
    saved: &BatchNormSaved<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
    train: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let shape = grad_out.shape();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let dy = grad_out.data();
    let xh = saved.xhat.data();
    let sums: Vec<(T, T)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let (mut db, mut dg) = (T::zero(), T::zero());
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    db += dy[i];
                    dg += dy[i] * xh[i];
                }
            }
            (dg, db)
        })
        .collect();
    let dgamma: Vec<T> = sums.iter().map(|s| s.0).collect();
    let dbeta: Vec<T> = sums.iter().map(|s| s.1).collect();
    let m = T::from_f64((n * hw) as f64);
    let mut dx = vec![T::zero(); dy.len()];
    dx.par_chunks_mut(hw.max(1))
        .enumerate()
        .for_each(|(idx, d)| {
            let ch = idx % c;
            let base = idx * hw;
            let scale = gamma.data()[ch] * saved.inv_std[ch];
            if train {
                let inv_m = T::one() / m;
                for (j, v) in d.iter_mut().enumerate() {
                    let i = base + j;
                    *v = scale * inv_m * (m * dy[i] - dbeta[ch] - xh[i] * dgamma[ch]);
                }
            } else {
                for (j, v) in d.iter_mut().enumerate() {
                    *v = scale * dy[base + j];
                }
            }
        });
    (
        Tensor::new(shape, dx).expect("bn grad shape"),
        Tensor::new(&[c], dgamma).expect("bn gamma grad shape"),
        Tensor::new(&[c], dbeta).expect("bn beta grad shape"),
    )
}

/// NaN passes through so a diverging run stays visible in the loss.
pub fn relu_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v < T::zero() { T::zero() } else { v })
}

/// Subgradient at zero is zero.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data).expect("relu grad shape")
}

/// 2x2 stride-2 average pooling with ceil-mode output. Edge windows on odd
/// extents average only the elements they cover.
pub fn avg_pool2_forward<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("avg_pool2")?;
    if h == 0 || w == 0 {
        return Err(Error::dim("avg_pool2", "spatial extent must be at least 1x1"));
    }
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![T::zero(); n * c * ho * wo];
    out.par_chunks_mut(ho * wo)
        .zip(input.data().par_chunks(h * w))
        .for_each(|(o, x)| {
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y0, y1) = (2 * oy, (2 * oy + 2).min(h));
                    let (x0, x1) = (2 * ox, (2 * ox + 2).min(w));
                    let mut s = T::zero();
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            s += x[iy * w + ix];
                        }
                    }
                    o[oy * wo + ox] = s / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        });
    Tensor::new(&[n, c, ho, wo], out)
}

pub fn avg_pool2_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut dx = vec![T::zero(); n * c * h * w];
    dx.par_chunks_mut(h * w)
        .zip(grad_out.data().par_chunks(ho * wo))
        .for_each(|(d, g)| {
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y0, y1) = (2 * oy, (2 * oy + 2).min(h));
                    let (x0, x1) = (2 * ox, (2 * ox + 2).min(w));
                    let share = g[oy * wo + ox] / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            d[iy * w + ix] = share;
                        }
                    }
                }
            }
        });
    Tensor::new(input_shape, dx).expect("pool grad shape")
}

pub fn global_avg_pool_forward<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("global_avg_pool")?;
    if h == 0 || w == 0 {
        return Err(Error::dim("global_avg_pool", "spatial extent must be at least 1x1"));
    }
    let inv = T::one() / T::from_f64((h * w) as f64);
    let out = input
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(&[n, c], out)
}

pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let hw = input_shape[2] * input_shape[3];
    let inv = T::one() / T::from_f64(hw as f64);
    let mut dx = Vec::with_capacity(grad_out.len() * hw);
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g * inv, hw));
    }
    Tensor::new(input_shape, dx).expect("gap grad shape")
}

/// Concatenate NCHW tensors along the channel axis, in argument order.
pub fn concat_channels<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::dim("concat_channels", "needs at least one input"))?;
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut total_c = 0;
    for t in inputs {
        let (tn, tc, th, tw) = t.dims4("concat_channels")?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::dim(
                "concat_channels",
                format!(
                    "inputs must agree on batch and spatial size: {:?} vs {:?}",
                    first.shape(),
                    t.shape()
                ),
            ));
        }
        total_c += tc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total_c * hw);
    for s in 0..n {
        for t in inputs {
            let cl = t.shape()[1] * hw;
            out.extend_from_slice(&t.data()[s * cl..(s + 1) * cl]);
        }
    }
    Tensor::new(&[n, total_c, h, w], out)
}

/// Channels `[start, start + len)` of an NCHW tensor.
pub fn slice_channels<T: Real>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("slice_channels")?;
    if start + len > c {
        return Err(Error::dim(
            "slice_channels",
            format!("range {start}..{} exceeds {c} channels", start + len),
        ));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    for s in 0..n {
        let base = (s * c + start) * hw;
        out.extend_from_slice(&input.data()[base..base + len * hw]);
    }
    Tensor::new(&[n, len, h, w], out)
}

/// Inverse of [`slice_channels`]: place `grad` back into a zero tensor of `full_shape`.
pub fn unslice_channels<T: Real>(full_shape: &[usize], start: usize, grad: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (full_shape[0], full_shape[1], full_shape[2], full_shape[3]);
    let len = grad.shape()[1];
    let hw = h * w;
    let mut out = vec![T::zero(); n * c * hw];
    for s in 0..n {
        let base = (s * c + start) * hw;
        out[base..base + len * hw].copy_from_slice(&grad.data()[s * len * hw..(s + 1) * len * hw]);
    }
    Tensor::new(full_shape, out).expect("unslice shape")
}

pub fn check_same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("zip_map shape")
}

/// `out[n, o] = bias[o] + sum_c input[n, c] * weight[o, c]`.
pub fn linear_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c) = input.dims2("linear")?;
    let (classes, wc) = weight.dims2("linear")?;
    if wc != c || bias.shape() != [classes] {
        return Err(Error::dim(
            "linear",
            format!(
                "input {:?}, weight {:?}, bias {:?} do not agree",
                input.shape(),
                weight.shape(),
                bias.shape()
            ),
        ));
    }
    let mut out = Vec::with_capacity(n * classes);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        n, c, classes, T::one(), input.data(), c as isize, 1, weight.data(), 1, c as isize,
        T::one(), &mut out, classes as isize, 1,
    );
    Tensor::new(&[n, classes], out)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c) = (input.shape()[0], input.shape()[1]);
    let classes = weight.shape()[0];
    let mut dx = vec![T::zero(); n * c];
    T::gemm(
        n, classes, c, T::one(), grad_out.data(), classes as isize, 1, weight.data(), c as isize,
        1, T::zero(), &mut dx, c as isize, 1,
    );
    let mut dw = vec![T::zero(); classes * c];
    T::gemm(
        classes, n, c, T::one(), grad_out.data(), 1, classes as isize, input.data(), c as isize,
        1, T::zero(), &mut dw, c as isize, 1,
    );
    let mut db = vec![T::zero(); classes];
    for row in grad_out.data().chunks(classes) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    (
        Tensor::new(&[n, c], dx).expect("linear dx"),
        Tensor::new(&[classes, c], dw).expect("linear dw"),
        Tensor::new(&[classes], db).expect("linear db"),
    )
}

/// Mean cross-entropy of row-wise softmax. Returns `(loss, probabilities)`.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let (n, classes) = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("{} labels for a batch of {n}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut probs = vec![T::zero(); n * classes];
    let mut loss = T::zero();
    for (i, (row, p)) in logits
        .data()
        .chunks(classes)
        .zip(probs.chunks_mut(classes))
        .enumerate()
    {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (pj, &v) in p.iter_mut().zip(row) {
            *pj = (v - max).exp();
            z += *pj;
        }
        for pj in p.iter_mut() {
            *pj = *pj / z;
        }
        // -log softmax = log z - (x_label - max)
        loss += z.ln() - (row[labels[i]] - max);
    }
    Ok((
        loss / T::from_f64(n as f64),
        Tensor::new(&[n, classes], probs)?,
    ))
}

pub fn softmax_cross_entropy_backward<T: Real>(
    probs: &Tensor<T>,
    labels: &[usize],
    upstream: T,
) -> Tensor<T> {
    let (n, classes) = (probs.shape()[0], probs.shape()[1]);
    let scale = upstream / T::from_f64(n as f64);
    let mut g = probs.data().to_vec();
    for (i, row) in g.chunks_mut(classes).enumerate() {
        row[labels[i]] -= T::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Tensor::new(probs.shape(), g).expect("ce grad shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_span_matches_bounds_scan() {
        for n_out in 1..6 {
            for stride in 1..4 {
                for tap in 0..4 {
                    for padding in 0..3 {
                        for size in 1..8 {
                            let inside: Vec<usize> = (0..n_out)
                                .filter(|&o| {
                                    let i = (o * stride + tap) as isize - padding as isize;
                                    i >= 0 && i < size as isize
                                })
                                .collect();
                            let (lo, hi) = valid_span(n_out, stride, tap, padding, size);
                            assert_eq!((lo..hi).collect::<Vec<_>>(), inside);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conv_output_size_formula() {
        let g = ConvGeometry::new(&[1, 3, 32, 32], &[8, 3, 3, 3], 2, 1).unwrap();
        assert_eq!((g.h_out, g.w_out), (16, 16));
        let g = ConvGeometry::new(&[1, 3, 7, 5], &[8, 3, 1, 1], 1, 0).unwrap();
        assert_eq!((g.h_out, g.w_out), (7, 5));
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_empty_output() {
        assert!(matches!(
            ConvGeometry::new(&[1, 3, 8, 8], &[4, 2, 3, 3], 1, 1),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            ConvGeometry::new(&[1, 1, 2, 2], &[1, 1, 3, 3], 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn batchnorm_train_rejects_single_value_per_channel() {
        let x = Tensor::<f64>::ones(&[1, 2, 1, 1]);
        let g = Tensor::ones(&[2]);
        let b = Tensor::zeros(&[2]);
        assert!(matches!(
            batchnorm_train_forward(&x, &g, &b, 1e-5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn softmax_rejects_out_of_range_label() {
        let logits = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 3]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn avg_pool_odd_corner_is_single_element() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 7, 7], |i| i as f64);
        let y = avg_pool2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.data()[15], 48.0);
        // right edge column window covers rows 0..2 of column 6
        assert_eq!(y.data()[3], (6.0 + 13.0) / 2.0);
    }
}
