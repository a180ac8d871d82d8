//! Central finite-difference checks shared by the gradient tests and the
//! acceptance run. Each group returns `(case, worst relative error)` and
//! reports the first violating element as an error.

use rand::Rng;
use rdense::autograd::{Mode, RunningStats, Tape, Var};
use rdense::{ArchSpec, Network, Tensor};

use super::{away_from_zero, rng, uniform};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Floor for the relative-error denominator so exact zeros compare absolutely.
pub const FLOOR: f64 = 1e-6;
pub const SEEDS: [u64; 3] = [11, 22, 33];

pub type Outcome = Result<(String, f64), String>;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// `sum(f(inputs) * seed)` for fixed `seed`, recomputed on a fresh tape.
fn projected(inputs: &[Tensor<f64>], seed: &Tensor<f64>, f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone(), false)).collect();
    let y = f(&mut t, &vars);
    t.value(y).data().iter().zip(seed.data()).map(|(a, b)| a * b).sum()
}

/// Compare tape gradients of `f` against central differences for every
/// element of every input (capped at `max_elems` per input).
pub fn check(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    seed: u64,
    max_elems: usize,
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> Outcome {
    let mut r = rng(seed ^ 0xfeed);
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone(), true)).collect();
    let y = f(&mut t, &vars);
    let upstream = uniform(&mut r, t.value(y).shape());
    let grads = t.backward_with(y, upstream.clone()).map_err(|e| format!("{name}: {e}"))?;

    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).ok_or_else(|| format!("{name}: no gradient for input {k}"))?;
        if analytic.shape() != x.shape() {
            return Err(format!("{name}: gradient shape {:?} for input {:?}", analytic.shape(), x.shape()));
        }
        let picks: Vec<usize> = if x.len() <= max_elems {
            (0..x.len()).collect()
        } else {
            (0..max_elems).map(|_| r.random_range(0..x.len())).collect()
        };
        for i in picks {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (projected(&plus, &upstream, f) - projected(&minus, &upstream, f)) / (2.0 * STEP);
            let e = rel_err(analytic.data()[i], numeric);
            if e.is_nan() || e >= REL_TOL {
                return Err(format!(
                    "{name} seed {seed}: input {k} element {i}: analytic {} numeric {numeric} rel {e:e}",
                    analytic.data()[i]
                ));
            }
            worst = worst.max(e);
        }
    }
    Ok((format!("{name} seed {seed}"), worst))
}

pub fn conv(s: u64) -> Vec<Outcome> {
    let mut r = rng(s);
    let x = uniform(&mut r, &[2, 3, 5, 6]);
    let w = uniform(&mut r, &[4, 3, 3, 3]);
    let a = check("conv3x3", vec![x, w], s, 200, &|t, v| t.conv2d(v[0], v[1], 1, 1).unwrap());
    let x = uniform(&mut r, &[2, 2, 7, 7]);
    let w = uniform(&mut r, &[3, 2, 3, 3]);
    let b = check("conv3x3/s2", vec![x, w], s, 200, &|t, v| t.conv2d(v[0], v[1], 2, 1).unwrap());
    let x = uniform(&mut r, &[3, 5, 4, 4]);
    let w = uniform(&mut r, &[2, 5, 1, 1]);
    let c = check("conv1x1", vec![x, w], s, 200, &|t, v| t.conv2d(v[0], v[1], 1, 0).unwrap());
    vec![a, b, c]
}

pub fn batch_norm(s: u64) -> Vec<Outcome> {
    let mut r = rng(s);
    let x = uniform(&mut r, &[3, 4, 3, 3]);
    let g = away_from_zero(&mut r, &[4]);
    let b = uniform(&mut r, &[4]);
    let train = check("batchnorm/train", vec![x, g, b], s, 200, &|t, v| {
        t.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap()
    });
    let x = uniform(&mut r, &[2, 3, 4, 4]);
    let g = away_from_zero(&mut r, &[3]);
    let b = uniform(&mut r, &[3]);
    let stats = RunningStats {
        mean: vec![0.1, -0.2, 0.3],
        var: vec![0.5, 1.5, 2.0],
    };
    let eval = check("batchnorm/eval", vec![x, g, b], s, 200, &|t, v| {
        t.batch_norm_eval(v[0], v[1], v[2], &stats, 1e-5).unwrap()
    });
    vec![train, eval]
}

pub fn pointwise_and_pooling(s: u64) -> Vec<Outcome> {
    let mut r = rng(s);
    let mut out = Vec::new();
    let x = away_from_zero(&mut r, &[2, 3, 4, 5]);
    out.push(check("relu", vec![x], s, 200, &|t, v| t.relu(v[0]).unwrap()));
    let x = uniform(&mut r, &[2, 2, 5, 7]);
    out.push(check("avg_pool2/odd", vec![x], s, 200, &|t, v| t.avg_pool2(v[0]).unwrap()));
    let x = uniform(&mut r, &[2, 2, 4, 4]);
    out.push(check("avg_pool2/even", vec![x], s, 200, &|t, v| t.avg_pool2(v[0]).unwrap()));
    let x = uniform(&mut r, &[3, 4, 3, 2]);
    out.push(check("global_avg_pool", vec![x], s, 200, &|t, v| t.global_avg_pool(v[0]).unwrap()));
    let a = uniform(&mut r, &[2, 2, 3, 3]);
    let b = uniform(&mut r, &[2, 3, 3, 3]);
    out.push(check("concat", vec![a, b], s, 200, &|t, v| t.concat_channels(&[v[0], v[1]]).unwrap()));
    let x = uniform(&mut r, &[2, 5, 2, 2]);
    out.push(check("slice", vec![x], s, 200, &|t, v| t.slice_channels(v[0], 1, 3).unwrap()));
    let a = uniform(&mut r, &[2, 3, 2, 2]);
    let b = uniform(&mut r, &[2, 3, 2, 2]);
    out.push(check("add", vec![a.clone(), b.clone()], s, 200, &|t, v| t.add(v[0], v[1]).unwrap()));
    out.push(check("sub", vec![a, b], s, 200, &|t, v| t.sub(v[0], v[1]).unwrap()));
    out
}

pub fn linear_and_loss(s: u64) -> Vec<Outcome> {
    let mut r = rng(s);
    let x = uniform(&mut r, &[4, 6]);
    let w = uniform(&mut r, &[5, 6]);
    let b = uniform(&mut r, &[5]);
    let lin = check("linear", vec![x, w, b], s, 200, &|t, v| t.linear(v[0], v[1], v[2]).unwrap());
    let logits = uniform(&mut r, &[4, 5]).map(|v| 3.0 * v);
    let labels = [0usize, 4, 2, 2];
    let xent = check("softmax_xent", vec![logits], s, 200, &|t, v| {
        t.softmax_cross_entropy(v[0], &labels).unwrap()
    });
    let x = uniform(&mut r, &[3, 4]);
    let sum = check("sum", vec![x], s, 200, &|t, v| t.sum(v[0]).unwrap());
    vec![lin, xent, sum]
}

pub fn fan_out(s: u64) -> Vec<Outcome> {
    let mut r = rng(s);
    let x = uniform(&mut r, &[2, 2, 4, 4]);
    let w = uniform(&mut r, &[2, 2, 3, 3]);
    // x feeds the conv, the skip and the concat
    vec![check("fan_out", vec![x, w], s, 200, &|t, v| {
        let y = t.conv2d(v[0], v[1], 1, 1).unwrap();
        let z = t.add(y, v[0]).unwrap();
        t.concat_channels(&[z, v[0]]).unwrap()
    })]
}

pub fn tiny_spec() -> ArchSpec {
    ArchSpec::custom(4, 2, 2).with_input(1, 10, 10).with_classes(5)
}

/// Composite residual dense block + transition, differentiated with respect
/// to its input through the network's own wiring.
pub fn residual_block(s: u64) -> Vec<Outcome> {
    let spec = tiny_spec();
    let mut r = rng(s);
    let x = uniform(&mut r, &[3, spec.block_input_channels(), 5, 5]);
    let net = Network::<f64>::build(&spec, s).unwrap();
    let f = |t: &mut Tape<f64>, v: &[Var]| {
        let mut n = net.clone();
        n.residual_dense_block(t, v[0], 0, Mode::Train).unwrap()
    };
    vec![check("residual_dense_block", vec![x], s, 120, &f)]
}

/// Perturb sampled parameter elements of the whole network and compare with
/// the stored gradients of the mean cross-entropy.
pub fn network(spec: &ArchSpec, seed: u64, per_param: usize) -> Outcome {
    let mut r = rng(seed + 100);
    let (c, h, w) = (spec.input_channels, spec.input_height, spec.input_width);
    let x = uniform(&mut r, &[4, c, h, w]);
    let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..spec.num_classes)).collect();
    let mut net = Network::<f64>::build(spec, seed).unwrap();
    // move away from the symmetric init so every BN sees varied inputs
    for p in net.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v += 0.05 * r.random_range(-1.0..1.0);
        }
    }
    let base = net.clone();
    net.loss_and_grads(x.clone(), &labels).unwrap();

    let loss_at = |n: &Network<f64>| -> f64 {
        let mut n = n.clone();
        n.loss_and_grads(x.clone(), &labels).unwrap().0
    };
    let mut worst = 0.0f64;
    for (pi, p) in net.params().iter().enumerate() {
        let g = p.grad.as_ref().ok_or_else(|| format!("{}: no gradient stored", p.path))?;
        for _ in 0..per_param.min(p.value.len()) {
            let i = r.random_range(0..p.value.len());
            let mut plus = base.clone();
            plus.params_mut().iter_mut().nth(pi).unwrap().value.data_mut()[i] += STEP;
            let mut minus = base.clone();
            minus.params_mut().iter_mut().nth(pi).unwrap().value.data_mut()[i] -= STEP;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * STEP);
            let e = rel_err(g.data()[i], numeric);
            if e.is_nan() || e >= REL_TOL {
                return Err(format!(
                    "{} seed {seed}: {}[{i}] analytic {} numeric {numeric} rel {e:e}",
                    spec.name,
                    p.path,
                    g.data()[i]
                ));
            }
            worst = worst.max(e);
        }
    }
    Ok((format!("{} seed {seed}", spec.name), worst))
}

/// Input gradient of the logits with running statistics in use.
pub fn network_eval_input(s: u64) -> Vec<Outcome> {
    let spec = tiny_spec();
    let mut r = rng(s);
    let x = uniform(&mut r, &[2, 1, 10, 10]);
    let mut net = Network::<f64>::build(&spec, s).unwrap();
    for (_, st) in net.running_stats_mut() {
        for v in st.var.iter_mut() {
            *v = 0.5 + r.random_range(0.0..1.0);
        }
    }
    let f = |t: &mut Tape<f64>, v: &[Var]| net.forward_eval(t, v[0], true).unwrap().logits;
    vec![check("network/eval/input", vec![x], s, 60, &f)]
}

/// Every group above, all seeds.
pub fn full_suite() -> Vec<Outcome> {
    let mut out = Vec::new();
    for s in SEEDS {
        out.extend(conv(s));
        out.extend(batch_norm(s));
        out.extend(pointwise_and_pooling(s));
        out.extend(linear_and_loss(s));
        out.extend(fan_out(s));
        out.extend(residual_block(s));
        out.push(network(&tiny_spec(), s, 4));
        out.push(network(&tiny_spec().plane(), s, 3));
        out.extend(network_eval_input(s));
    }
    out
}
