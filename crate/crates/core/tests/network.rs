//! Built networks: layout, parameter store, forward semantics.

mod common;

use common::{max_abs_diff, naive_conv, rng, uniform};
use rand::Rng;
use rdense::autograd::{Mode, Tape};
use rdense::network::BN_EPS;
use rdense::{count_params, ArchSpec, Network, Tensor};

fn tiny16() -> ArchSpec {
    ArchSpec::custom(4, 2, 2).with_input(1, 16, 16)
}

/// Parameter count written out layer by layer.
fn enumerate_params(k: usize, m: usize, blocks: usize, c_in: usize, classes: usize) -> usize {
    let k0 = 4 * k;
    let mut total = k0 * c_in * 9; // stem
    for b in 0..blocks {
        let mut c = k0;
        for _ in 0..m {
            total += 2 * c; // bn1
            total += 4 * k * c; // 1x1 bottleneck
            total += 2 * 4 * k; // bn2
            total += k * 4 * k * 9; // 3x3
            c += k;
        }
        if b + 1 < blocks {
            total += 2 * c + k0 * c; // transition bn + 1x1
        }
    }
    let c = k0 + m * k;
    total + 2 * c + classes * c + classes
}

#[test]
fn tiny_store_matches_hand_enumeration() {
    let net = Network::<f64>::build(&tiny16(), 0).unwrap();
    assert_eq!(net.num_params(), enumerate_params(4, 2, 2, 1, 10));
    assert_eq!(net.num_params(), 4602);
}

#[test]
fn channel_trace_and_spatial_trace_of_the_small_family() {
    let spec = ArchSpec::preset("rdense-12-100").unwrap();
    let net = Network::<f64>::build(&spec, 0).unwrap();
    assert_eq!(net.dense_block_channels(), vec![(48, 240); 3]);
    assert_eq!(spec.head_channels(), 240);
    let report = rdense::analyzer::report(&spec).unwrap();
    let trace: Vec<usize> = report.stages().iter().map(|s| s.output_height).collect();
    assert_eq!(trace, vec![32, 16, 16, 8, 8, 4, 4, 1]);
}

#[test]
fn dense_blocks_add_m_times_k_channels() {
    for (k, m, b) in [(4, 2, 2), (6, 3, 3), (12, 16, 3), (16, 5, 4)] {
        let spec = ArchSpec::custom(k, m, b);
        let net = Network::<f64>::build(&spec, 1).unwrap();
        for (cin, cout) in net.dense_block_channels() {
            assert_eq!(cin, 4 * k);
            assert_eq!(cout, cin + m * k);
        }
    }
}

#[test]
fn depth_audit() {
    for name in ArchSpec::preset_names() {
        let spec = ArchSpec::preset(&name).unwrap();
        let (m, b) = (spec.layers_per_block, spec.num_blocks);
        let net = Network::<f64>::build(&spec, 0).unwrap();
        assert_eq!(net.conv_layer_count(), 2 * m * b + 1 + (b - 1), "{name}");
    }
    let conv = |n: &str| Network::<f64>::build(&ArchSpec::preset(n).unwrap(), 0).unwrap().conv_layer_count();
    assert_eq!(conv("rdense-12-100"), 99);
    assert_eq!(conv("rdense-12-132"), 132);
}

#[test]
fn plane_variant_shares_paths_shapes_and_init() {
    for name in ["rdense-12-100", "rdense-16-196"] {
        let spec = ArchSpec::preset(name).unwrap();
        let r = Network::<f64>::build(&spec, 2).unwrap();
        let p = Network::<f64>::build(&spec.clone().plane(), 2).unwrap();
        let rp: Vec<_> = r.params().iter().map(|x| (x.path.clone(), x.value.shape().to_vec())).collect();
        let pp: Vec<_> = p.params().iter().map(|x| (x.path.clone(), x.value.shape().to_vec())).collect();
        assert_eq!(rp, pp);
        assert_eq!(r.params(), p.params());
    }
}

#[test]
fn init_follows_the_declared_distributions() {
    let spec = ArchSpec::preset("rdense-12-100").unwrap();
    let net = Network::<f64>::build(&spec, 5).unwrap();
    let p = net.params().find("block2/layer7/conv1x1/weight").unwrap();
    let v = p.value.data();
    let sd = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let want = (2.0f64 / 48.0).sqrt(); // 1x1 kernel, 48 outputs
    assert!((sd / want - 1.0).abs() < 0.05, "sd {sd} want {want}");
    let fc = net.params().find("head/fc/weight").unwrap().value.data();
    let sd = (fc.iter().map(|x| x * x).sum::<f64>() / fc.len() as f64).sqrt();
    assert!((sd / 0.01 - 1.0).abs() < 0.1, "fc sd {sd}");
    assert!(net.params().find("head/fc/bias").unwrap().value.data().iter().all(|&b| b == 0.0));
    assert!(net.params().find("head/bn/gamma").unwrap().value.data().iter().all(|&g| g == 1.0));
    assert!(net.params().find("head/bn/beta").unwrap().value.data().iter().all(|&g| g == 0.0));
    let again = Network::<f64>::build(&spec, 5).unwrap();
    assert_eq!(net.params(), again.params());
    let other = Network::<f64>::build(&spec, 6).unwrap();
    assert_ne!(net.params(), other.params());
}

#[test]
fn zeros_give_finite_and_repeatable_logits() {
    for name in ["rdense-12-100", "pdense-12-100"] {
        let net = Network::<f64>::build(&ArchSpec::preset(name).unwrap(), 0).unwrap();
        let x = Tensor::zeros(&[2, 3, 32, 32]);
        let a = net.predict(&x).unwrap();
        assert!(a.all_finite());
        assert_eq!(a, net.predict(&x).unwrap());
    }
}

fn bn_eval(x: &Tensor<f64>, net: &Network<f64>, path: &str) -> Tensor<f64> {
    let g = net.params().value(&format!("{path}/gamma")).unwrap().data().to_vec();
    let b = net.params().value(&format!("{path}/beta")).unwrap().data().to_vec();
    let st = net.running_stats().find(|(p, _)| *p == path).unwrap().1;
    let (c, hw) = (x.shape()[1], x.shape()[2] * x.shape()[3]);
    Tensor::from_fn(x.shape(), |i| {
        let ch = (i / hw) % c;
        let v = x.data()[i];
        let y = (v - st.mean[ch]) / (st.var[ch] + BN_EPS).sqrt() * g[ch] + b[ch];
        y.max(0.0) // every BN here feeds a ReLU
    })
}

fn pool(x: &Tensor<f64>) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    Tensor::from_fn(&[n, c, ho, wo], |i| {
        let (plane, oy, ox) = (i / (ho * wo), (i / wo) % ho, i % wo);
        let mut sum = 0.0;
        let mut cnt = 0.0;
        for y in 2 * oy..(2 * oy + 2).min(h) {
            for xx in 2 * ox..(2 * ox + 2).min(w) {
                sum += x.data()[(plane * h + y) * w + xx];
                cnt += 1.0;
            }
        }
        sum / cnt
    })
}

fn cat(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, ca, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    let cb = b.shape()[1];
    let mut out = Vec::new();
    for s in 0..n {
        out.extend_from_slice(&a.data()[s * ca * h * w..(s + 1) * ca * h * w]);
        out.extend_from_slice(&b.data()[s * cb * h * w..(s + 1) * cb * h * w]);
    }
    Tensor::new(&[n, ca + cb, h, w], out).unwrap()
}

/// The whole eval-mode forward pass written without the tape.
fn straight_line(net: &Network<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let spec = net.spec();
    let w = |p: &str| net.params().value(p).unwrap().clone();
    let mut h = pool(&naive_conv(x, &w("stem/conv3x3/weight"), spec.stem_stride, 1));
    for b in 1..=spec.num_blocks {
        let input = h.clone();
        for l in 1..=spec.layers_per_block {
            let p = format!("block{b}/layer{l}");
            let y = naive_conv(&bn_eval(&h, net, &format!("{p}/bn1")), &w(&format!("{p}/conv1x1/weight")), 1, 0);
            let y = naive_conv(&bn_eval(&y, net, &format!("{p}/bn2")), &w(&format!("{p}/conv3x3/weight")), 1, 1);
            h = cat(&h, &y);
        }
        if b < spec.num_blocks {
            let t = naive_conv(
                &bn_eval(&h, net, &format!("transition{b}/bn")),
                &w(&format!("transition{b}/conv1x1/weight")),
                1,
                0,
            );
            h = pool(&t);
            if spec.residual {
                let skip = pool(&input);
                h = Tensor::from_fn(h.shape(), |i| h.data()[i] + skip.data()[i]);
            }
        }
    }
    let h = bn_eval(&h, net, "head/bn");
    let (n, c, hw) = (h.shape()[0], h.shape()[1], h.shape()[2] * h.shape()[3]);
    let g: Vec<f64> = h.data().chunks(hw).map(|v| v.iter().sum::<f64>() / hw as f64).collect();
    let fw = w("head/fc/weight");
    let fb = w("head/fc/bias");
    let classes = spec.num_classes;
    Tensor::from_fn(&[n, classes], |i| {
        let (s, o) = (i / classes, i % classes);
        fb.data()[o] + (0..c).map(|ch| g[s * c + ch] * fw.data()[o * c + ch]).sum::<f64>()
    })
}

#[test]
fn forward_matches_straight_line_composition() {
    for (spec, seed) in [(tiny16(), 1), (tiny16().plane(), 2), (ArchSpec::custom(3, 3, 3).with_input(3, 11, 13), 3)] {
        let mut net = Network::<f64>::build(&spec, seed).unwrap();
        let mut r = rng(seed + 50);
        // non-trivial running statistics and affine parameters
        for (_, st) in net.running_stats_mut() {
            for v in st.mean.iter_mut() {
                *v = r.random_range(-0.3..0.3);
            }
            for v in st.var.iter_mut() {
                *v = r.random_range(0.5..2.0);
            }
        }
        for p in net.params_mut().iter_mut() {
            if p.path.ends_with("gamma") || p.path.ends_with("beta") || p.path.ends_with("bias") {
                for v in p.value.data_mut() {
                    *v += r.random_range(-0.2..0.2);
                }
            }
        }
        let x = uniform(&mut r, &[3, spec.input_channels, spec.input_height, spec.input_width]);
        let got = net.predict(&x).unwrap();
        let want = straight_line(&net, &x);
        let d = max_abs_diff(got.data(), want.data());
        assert!(d < 1e-10, "{}: {d:e}", spec.name);
    }
}

#[test]
fn residual_block_with_dead_transition_is_the_pooled_skip() {
    let spec = tiny16();
    let mut net = Network::<f64>::build(&spec, 4).unwrap();
    for p in net.params_mut().iter_mut() {
        if p.path.starts_with("transition1/conv1x1") || p.path.starts_with("transition1/bn/beta") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut r = rng(4);
    let x = uniform(&mut r, &[2, 16, 8, 8]);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let y = net.residual_dense_block(&mut tape, xv, 0, Mode::Train).unwrap();
    let xp = pool(&x);
    assert_eq!(tape.value(y).shape(), &[2, 16, 4, 4]);
    assert_eq!(tape.value(y).data(), xp.data());
}

#[test]
fn residual_minus_skip_is_the_plane_output() {
    for seed in [1, 2, 3] {
        let spec = tiny16();
        let mut res = Network::<f64>::build(&spec, seed).unwrap();
        let mut plane = Network::<f64>::build(&spec.clone().plane(), seed).unwrap();
        let mut r = rng(seed);
        let x = uniform(&mut r, &[2, 16, 7, 7]);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let a = res.residual_dense_block(&mut tape, xv, 0, Mode::Train).unwrap();
        let b = plane.residual_dense_block(&mut tape, xv, 0, Mode::Train).unwrap();
        let skip = pool(&x);
        let diff: Vec<f64> = tape.value(a).data().iter().zip(skip.data()).map(|(u, v)| u - v).collect();
        assert!(max_abs_diff(&diff, tape.value(b).data()) < 1e-15);
    }
}

#[test]
fn residual_block_requires_block_input_width() {
    let mut net = Network::<f64>::build(&tiny16(), 0).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::zeros(&[1, 12, 4, 4]), false);
    assert!(net.residual_dense_block(&mut tape, xv, 0, Mode::Eval).is_err());
    let xv = tape.leaf(Tensor::zeros(&[1, 16, 4, 4]), false);
    assert!(net.residual_dense_block(&mut tape, xv, 1, Mode::Eval).is_err());
}

#[test]
fn nearly_every_parameter_receives_gradient() {
    for spec in [tiny16(), ArchSpec::custom(6, 3, 3).with_input(3, 16, 16)] {
        for seed in [0, 1, 2] {
            let mut net = Network::<f64>::build(&spec, seed).unwrap();
            let mut r = rng(seed + 9);
            let x = uniform(&mut r, &[32, spec.input_channels, spec.input_height, spec.input_width]);
            let labels: Vec<usize> = (0..32).map(|_| r.random_range(0..spec.num_classes)).collect();
            net.loss_and_grads(x, &labels).unwrap();
            let (mut nz, mut total) = (0usize, 0usize);
            for p in net.params().iter() {
                let g = p.grad.as_ref().unwrap();
                assert!(g.all_finite());
                nz += g.data().iter().filter(|v| **v != 0.0).count();
                total += g.len();
            }
            let frac = nz as f64 / total as f64;
            assert!(frac >= 0.99, "{} seed {seed}: {frac}", spec.name);
        }
    }
}

#[test]
fn store_size_equals_analyzer_count() {
    for name in ArchSpec::preset_names() {
        let spec = ArchSpec::preset(&name).unwrap();
        let net = Network::<f32>::build(&spec, 0).unwrap();
        assert_eq!(net.num_params() as u64, count_params(&spec).unwrap(), "{name}");
    }
}

#[test]
fn geometry_mismatch_is_a_dimension_error() {
    let net = Network::<f64>::build(&tiny16(), 0).unwrap();
    assert!(matches!(
        net.predict(&Tensor::zeros(&[1, 3, 16, 16])),
        Err(rdense::Error::Dimension { .. })
    ));
}
