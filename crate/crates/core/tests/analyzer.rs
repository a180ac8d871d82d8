//! Parameter and FLOP accounting.

use proptest::prelude::*;
use rdense::analyzer::{millions, report};
use rdense::{count_flops, count_params, ArchSpec, Network};

/// Multiply-accumulates written out layer by layer, ceil-mode pooling.
fn enumerate_macs(k: usize, m: usize, blocks: usize, c_in: usize, hw: usize, classes: usize) -> u64 {
    let k0 = 4 * k;
    let mut s = hw; // stem keeps size (stride 1, pad 1)
    let mut macs = (k0 * c_in * 9 * s * s) as u64;
    s = s.div_ceil(2);
    for b in 0..blocks {
        let mut c = k0;
        for _ in 0..m {
            macs += (4 * k * c * s * s) as u64;
            macs += (k * 4 * k * 9 * s * s) as u64;
            c += k;
        }
        if b + 1 < blocks {
            macs += (k0 * c * s * s) as u64;
            s = s.div_ceil(2);
        }
    }
    macs + (classes * (k0 + m * k)) as u64
}

#[test]
fn tiny_totals_match_enumeration() {
    let spec = ArchSpec::custom(4, 2, 2).with_input(1, 16, 16);
    assert_eq!(count_params(&spec).unwrap(), 4602);
    assert_eq!(count_flops(&spec).unwrap(), enumerate_macs(4, 2, 2, 1, 16, 10));
    let odd = ArchSpec::custom(5, 3, 3).with_input(3, 27, 27);
    assert_eq!(count_flops(&odd).unwrap(), enumerate_macs(5, 3, 3, 3, 27, 10));
}

#[test]
fn rdense_12_100_counts() {
    let spec = ArchSpec::preset("rdense-12-100").unwrap();
    let r = report(&spec).unwrap();
    assert_eq!(r.total_params, 612_826);
    assert_eq!(r.total_flops, 68_495_712);
    assert_eq!(r.total_flops, enumerate_macs(12, 16, 3, 3, 32, 10));
    let digits = spec.clone().with_input(1, 28, 28);
    assert_eq!(count_flops(&digits).unwrap(), enumerate_macs(12, 16, 3, 1, 28, 10));
    assert_eq!(millions(r.total_params, 2), "0.61M");
}

#[test]
fn report_totals_equal_row_sums() {
    for name in ArchSpec::preset_names() {
        let r = report(&ArchSpec::preset(&name).unwrap()).unwrap();
        assert_eq!(r.rows.iter().map(|x| x.params).sum::<u64>(), r.total_params);
        assert_eq!(r.rows.iter().map(|x| x.macs).sum::<u64>(), r.total_flops);
    }
}

#[test]
fn json_rendering_has_stable_keys() {
    let r = report(&ArchSpec::preset("rdense-12-100").unwrap()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    let obj = v.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["rows", "spec", "total_flops", "total_params"]);
    let row = v["rows"][0].as_object().unwrap();
    for key in ["path", "stage", "kind", "output", "params", "macs"] {
        assert!(row.contains_key(key), "{key}");
    }
    assert_eq!(v["rows"][0]["path"], "stem/conv3x3");
    let back: rdense::CostReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn human_rendering_shows_rounded_totals() {
    let r = report(&ArchSpec::preset("rdense-12-100").unwrap()).unwrap();
    let text = r.render_human(false);
    assert!(text.contains("0.61M"));
    assert!(text.contains("68.5M"));
    assert!(text.contains("Dense Block-3"));
    let detailed = r.render_human(true);
    assert!(detailed.contains("block3/layer16/conv3x3"));
}

#[test]
fn area_ratio_of_the_two_input_sizes() {
    let spec = ArchSpec::preset("rdense-12-100").unwrap();
    let a = count_flops(&spec).unwrap() as f64;
    let b = count_flops(&spec.clone().with_input(1, 28, 28)).unwrap() as f64;
    let ratio = a / b;
    assert!((1.25..=1.35).contains(&ratio), "{ratio}");
}

#[test]
fn plane_and_residual_cost_the_same() {
    for name in ArchSpec::preset_names() {
        let spec = ArchSpec::preset(&name).unwrap();
        let (r, p) = (spec.clone().residual(), spec.clone().plane());
        assert_eq!(count_params(&r).unwrap(), count_params(&p).unwrap());
        assert_eq!(count_flops(&r).unwrap(), count_flops(&p).unwrap());
    }
}

#[test]
fn unknown_preset_lists_valid_names() {
    let err = ArchSpec::preset("bogus").unwrap_err().to_string();
    assert!(err.contains("rdense-12-100") && err.contains("pdense-") && err.contains("196"), "{err}");
    assert!(ArchSpec::preset("rdense-12-101").is_err());
    assert!(ArchSpec::preset("rdense-0-100").is_err());
}

fn small_spec() -> impl Strategy<Value = ArchSpec> {
    (1..=6usize, 1..=4usize, 1..=4usize, 1..=3usize, 4..=20usize, 4..=20usize, 2..=12usize, any::<bool>(), 1..=2usize)
        .prop_map(|(k, m, b, c, h, w, classes, residual, stride)| {
            let s = ArchSpec::custom(k, m, b)
                .with_input(c, h, w)
                .with_classes(classes)
                .with_stem_stride(stride);
            if residual {
                s
            } else {
                s.plane()
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn analyzer_agrees_with_instantiation(spec in small_spec()) {
        let net = Network::<f64>::build(&spec, 0).unwrap();
        prop_assert_eq!(count_params(&spec).unwrap(), net.num_params() as u64);
    }

    #[test]
    fn counts_grow_with_every_size_knob(spec in small_spec()) {
        let p = count_params(&spec).unwrap();
        let f = count_flops(&spec).unwrap();
        let bigger = [
            ArchSpec { growth_rate: spec.growth_rate + 1, ..spec.clone() },
            ArchSpec { layers_per_block: spec.layers_per_block + 1, ..spec.clone() },
            ArchSpec { num_blocks: spec.num_blocks + 1, ..spec.clone() },
        ];
        for s in bigger {
            prop_assert!(count_params(&s).unwrap() > p);
            prop_assert!(count_flops(&s).unwrap() > f);
        }
    }
}
