//! Instantiated RDenseCNN / PDenseCNN networks.
//!
//! Layout for a spec with growth rate `k`, `m` layers per block and `B` blocks:
//!
//! ```text
//! stem:        conv3x3(C_in -> 4k, stride s, pad 1) -> avg_pool2
//! block i:     m x [BN -> ReLU -> conv1x1(c -> 4k) -> BN -> ReLU -> conv3x3(4k -> k)], concatenated
//! transition:  BN -> ReLU -> conv1x1(4k + m k -> 4k) -> avg_pool2      (blocks 1..B-1)
//! skip:        + avg_pool2(block input)                                 (residual only)
//! head:        BN -> ReLU -> global_avg_pool -> linear(4k + m k -> classes)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::ArchSpec;
use crate::autograd::{Gradients, Mode, RunningStats, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LINEAR_INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug)]
struct BnRef {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

#[derive(Clone, Debug)]
struct DenseLayer {
    bn1: BnRef,
    conv1: ParamId,
    bn2: BnRef,
    conv2: ParamId,
}

#[derive(Clone, Debug)]
struct Transition {
    bn: BnRef,
    conv: ParamId,
}

#[derive(Clone, Debug)]
struct Head {
    bn: BnRef,
    weight: ParamId,
    bias: ParamId,
}

/// A built network: parameters, batch-norm running statistics and layout.
#[derive(Clone, Debug)]
pub struct Network<T: Real = f64> {
    spec: ArchSpec,
    params: ParamStore<T>,
    stats: Vec<RunningStats<T>>,
    stat_paths: Vec<String>,
    stem: ParamId,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    head: Head,
}

/// Result of a recorded forward pass.
pub struct Forward {
    pub logits: Var,
    /// Tape variable of each parameter, indexed by [`ParamId::index`].
    pub param_vars: Vec<Var>,
}

struct Builder<'a, T: Real> {
    params: ParamStore<T>,
    stats: Vec<RunningStats<T>>,
    stat_paths: Vec<String>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn conv(&mut self, path: String, c_out: usize, c_in: usize, ksize: usize) -> Result<ParamId> {
        let std = (2.0 / (ksize * ksize * c_out) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let shape = [c_out, c_in, ksize, ksize];
        let w = Tensor::from_fn(&shape, |_| T::from_f64(dist.sample(self.rng)));
        self.params.insert(path, ParamKind::ConvWeight, w)
    }

    fn bn(&mut self, path: String, c: usize) -> Result<BnRef> {
        let gamma = self
            .params
            .insert(format!("{path}/gamma"), ParamKind::BnGamma, Tensor::ones(&[c]))?;
        let beta = self
            .params
            .insert(format!("{path}/beta"), ParamKind::BnBeta, Tensor::zeros(&[c]))?;
        self.stats.push(RunningStats::new(c));
        self.stat_paths.push(path);
        Ok(BnRef {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        })
    }
}

/// Per-forward state: lazily lifted parameter leaves plus stats access.
struct Ctx<'a, T: Real> {
    tape: &'a mut Tape<T>,
    params: &'a ParamStore<T>,
    vars: Vec<Option<Var>>,
    stats: Stats<'a, T>,
    requires_grad: bool,
}

enum Stats<'a, T> {
    Update(&'a mut [RunningStats<T>]),
    Read(&'a [RunningStats<T>]),
}

impl<T: Real> Ctx<'_, T> {
    fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = self
            .tape
            .leaf(self.params.get(id).value.clone(), self.requires_grad);
        self.vars[id.0] = Some(v);
        v
    }

    fn bn(&mut self, x: Var, bn: BnRef) -> Result<Var> {
        let g = self.param(bn.gamma);
        let b = self.param(bn.beta);
        let eps = T::from_f64(BN_EPS);
        match &mut self.stats {
            Stats::Update(s) => self.tape.batch_norm(
                x,
                g,
                b,
                &mut s[bn.stats],
                Mode::Train,
                eps,
                T::from_f64(BN_MOMENTUM),
            ),
            Stats::Read(s) => self.tape.batch_norm_eval(x, g, b, &s[bn.stats], eps),
        }
    }

    fn bn_relu_conv(&mut self, x: Var, bn: BnRef, conv: ParamId, padding: usize) -> Result<Var> {
        let y = self.bn(x, bn)?;
        let y = self.tape.relu(y)?;
        let w = self.param(conv);
        self.tape.conv2d(y, w, 1, padding)
    }
}

impl<T: Real> Network<T> {
    /// Build and initialise a network. Conv weights are drawn from
    /// `N(0, 2 / (kh kw C_out))`, linear weights from `N(0, 0.01^2)`; BN starts at
    /// gamma = 1, beta = 0 and all biases at zero.
    pub fn build(spec: &ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: ParamStore::new(),
            stats: Vec::new(),
            stat_paths: Vec::new(),
            rng: &mut rng,
        };
        let k = spec.growth_rate;
        let k0 = spec.block_input_channels();
        let bottleneck = spec.bottleneck_channels();

        let stem = b.conv("stem/conv3x3/weight".into(), k0, spec.input_channels, 3)?;
        let mut blocks = Vec::with_capacity(spec.num_blocks);
        let mut transitions = Vec::with_capacity(spec.num_blocks - 1);
        let mut c = k0;
        for bi in 1..=spec.num_blocks {
            let mut layers = Vec::with_capacity(spec.layers_per_block);
            for li in 1..=spec.layers_per_block {
                let p = format!("block{bi}/layer{li}");
                let bn1 = b.bn(format!("{p}/bn1"), c)?;
                let conv1 = b.conv(format!("{p}/conv1x1/weight"), bottleneck, c, 1)?;
                let bn2 = b.bn(format!("{p}/bn2"), bottleneck)?;
                let conv2 = b.conv(format!("{p}/conv3x3/weight"), k, bottleneck, 3)?;
                layers.push(DenseLayer {
                    bn1,
                    conv1,
                    bn2,
                    conv2,
                });
                c += k;
            }
            blocks.push(layers);
            if bi < spec.num_blocks {
                let bn = b.bn(format!("transition{bi}/bn"), c)?;
                let conv = b.conv(format!("transition{bi}/conv1x1/weight"), k0, c, 1)?;
                transitions.push(Transition { bn, conv });
                c = k0;
            }
        }
        let bn = b.bn("head/bn".into(), c)?;
        let dist = Normal::new(0.0, LINEAR_INIT_STD).expect("finite std");
        let w = Tensor::from_fn(&[spec.num_classes, c], |_| T::from_f64(dist.sample(b.rng)));
        let weight = b.params.insert("head/fc/weight", ParamKind::LinearWeight, w)?;
        let bias = b.params.insert(
            "head/fc/bias",
            ParamKind::LinearBias,
            Tensor::zeros(&[spec.num_classes]),
        )?;

        Ok(Self {
            spec: spec.clone(),
            params: b.params,
            stats: b.stats,
            stat_paths: b.stat_paths,
            stem,
            blocks,
            transitions,
            head: Head { bn, weight, bias },
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    /// Batch-norm running statistics paired with their layer path.
    pub fn running_stats(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.stat_paths.iter().map(String::as_str).zip(&self.stats)
    }

    pub fn running_stats_mut(&mut self) -> impl Iterator<Item = (&str, &mut RunningStats<T>)> {
        self.stat_paths.iter().map(String::as_str).zip(self.stats.iter_mut())
    }

    /// Count of convolution weights in the built graph.
    pub fn conv_layer_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::ConvWeight)
            .count()
    }

    /// `(input, output)` channel counts of each dense block.
    pub fn dense_block_channels(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .map(|layers| {
                let first = self.params.get(layers[0].conv1).value.shape()[1];
                let last = layers.last().expect("non-empty block");
                let out = self.params.get(last.conv1).value.shape()[1] + self.spec.growth_rate;
                (first, out)
            })
            .collect()
    }

    /// Copy parameter values and running statistics from a network with the
    /// same parameter layout (e.g. residual <-> plane variants).
    pub fn copy_state_from(&mut self, other: &Network<T>) -> Result<()> {
        if !self.params.same_layout(&other.params) || self.stat_paths != other.stat_paths {
            return Err(Error::Config(
                "cannot copy state between networks with different layouts".into(),
            ));
        }
        for (dst, src) in self.params.iter_mut().zip(other.params.iter()) {
            dst.value = src.value.clone();
            dst.velocity = src.velocity.clone();
            dst.grad = None;
        }
        self.stats = other.stats.clone();
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4("forward")?;
        let s = &self.spec;
        if (c, h, w) != (s.input_channels, s.input_height, s.input_width) {
            return Err(Error::dim(
                "forward",
                format!(
                    "batch geometry {c}x{h}x{w} does not match {}x{}x{}",
                    s.input_channels, s.input_height, s.input_width
                ),
            ));
        }
        Ok(())
    }

    /// Record a forward pass. Train mode normalises with batch statistics and
    /// updates the running averages; eval mode reads them.
    pub fn forward(&mut self, tape: &mut Tape<T>, input: Var, mode: Mode) -> Result<Forward> {
        match mode {
            Mode::Eval => self.forward_eval(tape, input, true),
            Mode::Train => {
                self.check_input(tape.value(input))?;
                let mut stats = std::mem::take(&mut self.stats);
                let out = {
                    let mut ctx = Ctx {
                        tape,
                        params: &self.params,
                        vars: vec![None; self.params.len()],
                        stats: Stats::Update(&mut stats),
                        requires_grad: true,
                    };
                    self.run(&mut ctx, input)
                        .map(|logits| (logits, ctx.vars))
                };
                self.stats = stats;
                let (logits, vars) = out?;
                Ok(self.finish(tape, logits, vars))
            }
        }
    }

    /// Eval-mode forward that leaves the network untouched.
    pub fn forward_eval(&self, tape: &mut Tape<T>, input: Var, requires_grad: bool) -> Result<Forward> {
        self.check_input(tape.value(input))?;
        let (logits, vars) = {
            let mut ctx = Ctx {
                tape,
                params: &self.params,
                vars: vec![None; self.params.len()],
                stats: Stats::Read(&self.stats),
                requires_grad,
            };
            let logits = self.run(&mut ctx, input)?;
            (logits, ctx.vars)
        };
        Ok(self.finish(tape, logits, vars))
    }

    fn finish(&self, tape: &mut Tape<T>, logits: Var, vars: Vec<Option<Var>>) -> Forward {
        let param_vars = vars
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.unwrap_or_else(|| tape.leaf(self.params.get(ParamId(i)).value.clone(), true)))
            .collect();
        Forward { logits, param_vars }
    }

    /// Logits for a batch in eval mode, without keeping the tape.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone(), false);
        let f = self.forward_eval(&mut tape, x, false)?;
        Ok(tape.value(f.logits).clone())
    }

    fn run(&self, ctx: &mut Ctx<'_, T>, input: Var) -> Result<Var> {
        let w = ctx.param(self.stem);
        let x = ctx.tape.conv2d(input, w, self.spec.stem_stride, 1)?;
        let mut x = ctx.tape.avg_pool2(x)?;
        for bi in 0..self.spec.num_blocks {
            x = if bi < self.transitions.len() {
                self.residual_block_inner(ctx, x, bi)?
            } else {
                self.dense_block_inner(ctx, x, bi)?
            };
        }
        let y = ctx.bn(x, self.head.bn)?;
        let y = ctx.tape.relu(y)?;
        let y = ctx.tape.global_avg_pool(y)?;
        let w = ctx.param(self.head.weight);
        let b = ctx.param(self.head.bias);
        ctx.tape.linear(y, w, b)
    }

    fn dense_block_inner(&self, ctx: &mut Ctx<'_, T>, x: Var, block: usize) -> Result<Var> {
        let mut features = x;
        for layer in &self.blocks[block] {
            let y = ctx.bn_relu_conv(features, layer.bn1, layer.conv1, 0)?;
            let y = ctx.bn_relu_conv(y, layer.bn2, layer.conv2, 1)?;
            features = ctx.tape.concat_channels(&[features, y])?;
        }
        Ok(features)
    }

    fn transition_inner(&self, ctx: &mut Ctx<'_, T>, x: Var, block: usize) -> Result<Var> {
        let t = &self.transitions[block];
        let y = ctx.bn_relu_conv(x, t.bn, t.conv, 0)?;
        ctx.tape.avg_pool2(y)
    }

    fn residual_block_inner(&self, ctx: &mut Ctx<'_, T>, x: Var, block: usize) -> Result<Var> {
        let c = ctx.tape.value(x).shape()[1];
        let k0 = self.spec.block_input_channels();
        if self.spec.residual && c != k0 {
            return Err(Error::Config(format!(
                "residual dense block needs {k0} input channels for the skip sum, got {c}"
            )));
        }
        let h = self.dense_block_inner(ctx, x, block)?;
        let h = self.transition_inner(ctx, h, block)?;
        if self.spec.residual {
            let skip = ctx.tape.avg_pool2(x)?;
            ctx.tape.add(h, skip)
        } else {
            Ok(h)
        }
    }

    /// One dense block plus transition, with the pooled skip when the spec is
    /// residual. `block` is zero-based and must precede the last block.
    pub fn residual_dense_block(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        block: usize,
        mode: Mode,
    ) -> Result<Var> {
        if block >= self.transitions.len() {
            return Err(Error::Config(format!(
                "block {block} has no transition (network has {} transitions)",
                self.transitions.len()
            )));
        }
        let mut stats = std::mem::take(&mut self.stats);
        let out = {
            let mut ctx = Ctx {
                tape,
                params: &self.params,
                vars: vec![None; self.params.len()],
                stats: match mode {
                    Mode::Train => Stats::Update(&mut stats),
                    Mode::Eval => Stats::Read(&stats),
                },
                requires_grad: true,
            };
            self.residual_block_inner(&mut ctx, x, block)
        };
        self.stats = stats;
        out
    }

    /// Move gradients of every parameter from `grads` into the store.
    pub fn store_grads(&mut self, fwd: &Forward, grads: &mut Gradients<T>) {
        for (p, &v) in self.params.iter_mut().zip(&fwd.param_vars) {
            p.grad = Some(
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape())),
            );
        }
    }

    /// Train-mode forward, mean cross-entropy, backward; gradients land in the
    /// parameter store. Returns `(loss, logits)`.
    pub fn loss_and_grads(&mut self, batch: Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch, false);
        let fwd = self.forward(&mut tape, x, Mode::Train)?;
        let loss = tape.softmax_cross_entropy(fwd.logits, labels)?;
        let mut grads = tape.backward(loss)?;
        self.store_grads(&fwd, &mut grads);
        Ok((tape.value(loss).data()[0], tape.value(fwd.logits).clone()))
    }

    /// Reassemble a network from a parameter store and running statistics in
    /// the layout produced by [`Network::build`] for `spec`.
    pub fn from_state(
        spec: &ArchSpec,
        params: ParamStore<T>,
        stats: Vec<(String, RunningStats<T>)>,
    ) -> Result<Self> {
        let mut net = Self::build(spec, 0)?;
        if !net.params.same_layout(&params) {
            return Err(Error::Checkpoint(
                "parameter paths or shapes do not match the architecture".into(),
            ));
        }
        if stats.len() != net.stats.len()
            || stats
                .iter()
                .zip(&net.stat_paths)
                .zip(&net.stats)
                .any(|(((p, s), q), r)| p != q || s.channels() != r.channels())
        {
            return Err(Error::Checkpoint(
                "batch-norm statistics do not match the architecture".into(),
            ));
        }
        net.params = params;
        net.stats = stats.into_iter().map(|(_, s)| s).collect();
        Ok(net)
    }
}
