//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations are
//! appended in execution order, so the tape is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::kernels::{self, BatchNormSaved, ConvGeometry};
use crate::tensor::{Real, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Exponential moving averages used by batch norm in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f64> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `r <- (1 - momentum) r + momentum * batch`; the variance term uses the
    /// unbiased batch estimate.
    pub fn update(&mut self, saved: &BatchNormSaved<T>, count: usize, momentum: T) {
        let keep = T::one() - momentum;
        let unbias = T::from_f64(count as f64 / (count as f64 - 1.0));
        for ch in 0..self.mean.len() {
            self.mean[ch] = keep * self.mean[ch] + momentum * saved.mean[ch];
            self.var[ch] = keep * self.var[ch] + momentum * saved.var[ch] * unbias;
        }
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        geometry: ConvGeometry,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        saved: BatchNormSaved<T>,
        train: bool,
    },
    Relu {
        input: usize,
    },
    AvgPool2 {
        input: usize,
    },
    GlobalAvgPool {
        input: usize,
    },
    Concat {
        inputs: Vec<usize>,
    },
    SliceChannels {
        input: usize,
        start: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: usize,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    Sum {
        input: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of a forward computation.
pub struct Tape<T: Real = f64> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the variable does not require a gradient or is unreachable
    /// from the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc
            .add_assign(&g)
            .expect("gradient shape matches its value"),
        None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "variable {v:?} was not recorded on this tape"
            )));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.idx(v).expect("foreign variable")].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.idx(v).map(|i| self.rg(i)).unwrap_or(false)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let (i, w) = (self.idx(input)?, self.idx(weight)?);
        let (out, geometry) =
            kernels::conv2d_forward(&self.nodes[i].value, &self.nodes[w].value, stride, padding)?;
        let rg = self.rg(i) || self.rg(w);
        Ok(self.push(
            out,
            Op::Conv2d {
                input: i,
                weight: w,
                geometry,
            },
            rg,
        ))
    }

    /// Batch norm. In [`Mode::Train`] the batch statistics normalise the input
    /// and are folded into `stats`; in [`Mode::Eval`] `stats` is read only.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: Mode,
        eps: T,
        momentum: T,
    ) -> Result<Var> {
        match mode {
            Mode::Train => {
                let v = self.batch_norm_train(input, gamma, beta, eps)?;
                if let Op::BatchNorm { saved, .. } = &self.nodes[v.index].op {
                    let s = self.nodes[v.index].value.shape();
                    stats.update(saved, s[0] * s[2] * s[3], momentum);
                }
                Ok(v)
            }
            Mode::Eval => self.batch_norm_eval(input, gamma, beta, stats, eps),
        }
    }

    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        if eps <= T::zero() {
            return Err(Error::Config("batchnorm epsilon must be positive".into()));
        }
        let (i, g, b) = (self.idx(input)?, self.idx(gamma)?, self.idx(beta)?);
        let (out, saved) = kernels::batchnorm_train_forward(
            &self.nodes[i].value,
            &self.nodes[g].value,
            &self.nodes[b].value,
            eps,
        )?;
        let rg = self.rg(i) || self.rg(g) || self.rg(b);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input: i,
                gamma: g,
                beta: b,
                saved,
                train: true,
            },
            rg,
        ))
    }

    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats<T>,
        eps: T,
    ) -> Result<Var> {
        if eps <= T::zero() {
            return Err(Error::Config("batchnorm epsilon must be positive".into()));
        }
        let (i, g, b) = (self.idx(input)?, self.idx(gamma)?, self.idx(beta)?);
        let (out, saved) = kernels::batchnorm_eval_forward(
            &self.nodes[i].value,
            &self.nodes[g].value,
            &self.nodes[b].value,
            &stats.mean,
            &stats.var,
            eps,
        )?;
        let rg = self.rg(i) || self.rg(g) || self.rg(b);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input: i,
                gamma: g,
                beta: b,
                saved,
                train: false,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let i = self.idx(input)?;
        let out = kernels::relu_forward(&self.nodes[i].value);
        let rg = self.rg(i);
        Ok(self.push(out, Op::Relu { input: i }, rg))
    }

    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let i = self.idx(input)?;
        let out = kernels::avg_pool2_forward(&self.nodes[i].value)?;
        let rg = self.rg(i);
        Ok(self.push(out, Op::AvgPool2 { input: i }, rg))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let i = self.idx(input)?;
        let out = kernels::global_avg_pool_forward(&self.nodes[i].value)?;
        let rg = self.rg(i);
        Ok(self.push(out, Op::GlobalAvgPool { input: i }, rg))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let idx = inputs
            .iter()
            .map(|&v| self.idx(v))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let out = kernels::concat_channels(&refs)?;
        let rg = idx.iter().any(|&i| self.rg(i));
        Ok(self.push(out, Op::Concat { inputs: idx }, rg))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let i = self.idx(input)?;
        let out = kernels::slice_channels(&self.nodes[i].value, start, len)?;
        let rg = self.rg(i);
        Ok(self.push(out, Op::SliceChannels { input: i, start }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        kernels::check_same_shape("add", &self.nodes[ia].value, &self.nodes[ib].value)?;
        let out = kernels::zip_map(&self.nodes[ia].value, &self.nodes[ib].value, |x, y| x + y);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Add { a: ia, b: ib }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        kernels::check_same_shape("sub", &self.nodes[ia].value, &self.nodes[ib].value)?;
        let out = kernels::zip_map(&self.nodes[ia].value, &self.nodes[ib].value, |x, y| x - y);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Sub { a: ia, b: ib }, rg))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (i, w, b) = (self.idx(input)?, self.idx(weight)?, self.idx(bias)?);
        let out = kernels::linear_forward(
            &self.nodes[i].value,
            &self.nodes[w].value,
            &self.nodes[b].value,
        )?;
        let rg = self.rg(i) || self.rg(w) || self.rg(b);
        Ok(self.push(
            out,
            Op::Linear {
                input: i,
                weight: w,
                bias: b,
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy over the batch; yields a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let i = self.idx(logits)?;
        let (loss, probs) = kernels::softmax_cross_entropy(&self.nodes[i].value, labels)?;
        let rg = self.rg(i);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits: i,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let i = self.idx(input)?;
        let s = self.nodes[i].value.sum();
        let rg = self.rg(i);
        Ok(self.push(Tensor::scalar(s), Op::Sum { input: i }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Intermediate gradients are released
    /// as soon as they have been propagated; leaf gradients are kept.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.idx(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let seed = Tensor::ones(self.nodes[root].value.shape());
        self.backward_with(loss, seed)
    }

    /// Vector-Jacobian product: propagate `seed` (shaped like `output`) back
    /// through the tape.
    pub fn backward_with(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        let root = self.idx(output)?;
        if seed.shape() != self.nodes[root].value.shape() {
            return Err(Error::dim(
                "backward",
                format!(
                    "seed shape {:?} does not match output shape {:?}",
                    seed.shape(),
                    self.nodes[root].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(seed);

        for idx in (0..=root).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                geometry,
            } => {
                let (dx, dw) = kernels::conv2d_backward(
                    geometry,
                    val(*input),
                    val(*weight),
                    g,
                    self.rg(*input),
                    self.rg(*weight),
                );
                if let Some(dx) = dx {
                    accumulate(&mut grads[*input], dx);
                }
                if let Some(dw) = dw {
                    accumulate(&mut grads[*weight], dw);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
                train,
            } => {
                let (dx, dg, db) = kernels::batchnorm_backward(saved, val(*gamma), g, *train);
                if self.rg(*input) {
                    accumulate(&mut grads[*input], dx);
                }
                if self.rg(*gamma) {
                    accumulate(&mut grads[*gamma], dg);
                }
                if self.rg(*beta) {
                    accumulate(&mut grads[*beta], db);
                }
            }
            Op::Relu { input } => {
                accumulate(&mut grads[*input], kernels::relu_backward(val(*input), g));
            }
            Op::AvgPool2 { input } => {
                accumulate(
                    &mut grads[*input],
                    kernels::avg_pool2_backward(val(*input).shape(), g),
                );
            }
            Op::GlobalAvgPool { input } => {
                accumulate(
                    &mut grads[*input],
                    kernels::global_avg_pool_backward(val(*input).shape(), g),
                );
            }
            Op::Concat { inputs } => {
                let mut start = 0;
                for &i in inputs {
                    let c = val(i).shape()[1];
                    if self.rg(i) {
                        let part = kernels::slice_channels(g, start, c).expect("concat slice");
                        accumulate(&mut grads[i], part);
                    }
                    start += c;
                }
            }
            Op::SliceChannels { input, start } => {
                accumulate(
                    &mut grads[*input],
                    kernels::unslice_channels(val(*input).shape(), *start, g),
                );
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    accumulate(&mut grads[*a], g.clone());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[*b], g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.rg(*a) {
                    accumulate(&mut grads[*a], g.clone());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[*b], g.map(|v| -v));
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (dx, dw, db) = kernels::linear_backward(val(*input), val(*weight), g);
                if self.rg(*input) {
                    accumulate(&mut grads[*input], dx);
                }
                if self.rg(*weight) {
                    accumulate(&mut grads[*weight], dw);
                }
                if self.rg(*bias) {
                    accumulate(&mut grads[*bias], db);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let d = kernels::softmax_cross_entropy_backward(probs, labels, g.data()[0]);
                accumulate(&mut grads[*logits], d);
            }
            Op::Sum { input } => {
                let shape = val(*input).shape().to_vec();
                accumulate(&mut grads[*input], Tensor::full(&shape, g.data()[0]));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5), true);
        let loss = tape.sum(w).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::from_fn(&[4], |i| i as f64), true);
        let ww = tape.add(w, w).unwrap();
        let loss = tape.sum(ww).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn backward_on_foreign_variable_is_usage_error() {
        let mut a = Tape::<f64>::new();
        let mut b = Tape::<f64>::new();
        let x = a.leaf(Tensor::scalar(1.0), true);
        let _ = b.leaf(Tensor::scalar(1.0), true);
        assert!(matches!(b.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::ones(&[2]), true);
        assert!(matches!(t.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::ones(&[3]), false);
        let w = t.leaf(Tensor::ones(&[3]), true);
        let s = t.add(x, w).unwrap();
        let loss = t.sum(s).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get(x).is_none());
        assert!(g.get(w).is_some());
    }
}
