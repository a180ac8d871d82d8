//! Static parameter and FLOP accounting.
//!
//! Counting convention: one FLOP per multiply-accumulate, over convolutions
//! and the final linear layer only. Batch norm, ReLU, pooling and the residual
//! sum contribute parameters (BN) but no FLOPs. Spatial sizes follow ceil-mode
//! 2x2 pooling.
//!
//! The arithmetic here is derived from the [`ArchSpec`] alone and never looks
//! at a built network, so it can be cross-checked against one.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    /// Layer path, matching the parameter-store prefix where one exists.
    pub path: String,
    /// Coarse stage label, e.g. `Dense Block-2`.
    pub stage: String,
    pub kind: String,
    /// Output shape as `[C, H, W]` (or `[classes]` for the head).
    pub output: Vec<usize>,
    pub params: u64,
    pub macs: u64,
}

/// Per-stage aggregate, in the shape of an architecture table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub output_height: usize,
    pub output_width: usize,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub spec: ArchSpec,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_flops: u64,
}

struct Walker {
    rows: Vec<CostRow>,
    c: usize,
    h: usize,
    w: usize,
}

impl Walker {
    fn row(&mut self, path: String, stage: &str, kind: &str, params: u64, macs: u64) {
        self.rows.push(CostRow {
            path,
            stage: stage.to_string(),
            kind: kind.to_string(),
            output: vec![self.c, self.h, self.w],
            params,
            macs,
        });
    }

    fn conv(&mut self, path: String, stage: &str, c_out: usize, ksize: usize, stride: usize) {
        let pad = ksize / 2;
        self.h = (self.h + 2 * pad - ksize) / stride + 1;
        self.w = (self.w + 2 * pad - ksize) / stride + 1;
        let params = (c_out * self.c * ksize * ksize) as u64;
        let macs = params * (self.h * self.w) as u64;
        self.c = c_out;
        self.row(path, stage, &format!("conv{ksize}x{ksize}"), params, macs);
    }

    fn bn(&mut self, path: String, stage: &str) {
        let p = 2 * self.c as u64;
        self.row(path, stage, "batchnorm", p, 0);
    }

    fn pool(&mut self, path: String, stage: &str) {
        self.h = self.h.div_ceil(2);
        self.w = self.w.div_ceil(2);
        self.row(path, stage, "avg_pool2", 0, 0);
    }
}

/// Full per-layer cost table for `spec`.
pub fn report(spec: &ArchSpec) -> Result<CostReport> {
    spec.validate()?;
    let k = spec.growth_rate;
    let k0 = spec.block_input_channels();
    let mut wk = Walker {
        rows: Vec::new(),
        c: spec.input_channels,
        h: spec.input_height,
        w: spec.input_width,
    };
    wk.conv("stem/conv3x3".into(), "Convolution", k0, 3, spec.stem_stride);
    wk.pool("stem/pool".into(), "Avg. Pooling");
    for b in 1..=spec.num_blocks {
        let stage = format!("Dense Block-{b}");
        let block_in = wk.c;
        for l in 1..=spec.layers_per_block {
            let p = format!("block{b}/layer{l}");
            let c_in = wk.c;
            wk.bn(format!("{p}/bn1"), &stage);
            wk.conv(format!("{p}/conv1x1"), &stage, spec.bottleneck_channels(), 1, 1);
            wk.bn(format!("{p}/bn2"), &stage);
            wk.conv(format!("{p}/conv3x3"), &stage, k, 3, 1);
            wk.c = c_in + k;
            wk.row(format!("{p}/concat"), &stage, "concat", 0, 0);
        }
        debug_assert_eq!(wk.c, block_in + spec.layers_per_block * k);
        if b < spec.num_blocks {
            let stage = format!("Trans Block-{b}");
            wk.bn(format!("transition{b}/bn"), &stage);
            wk.conv(format!("transition{b}/conv1x1"), &stage, k0, 1, 1);
            wk.pool(format!("transition{b}/pool"), &stage);
            if spec.residual {
                wk.row(format!("transition{b}/skip"), &stage, "residual_add", 0, 0);
            }
        }
    }
    wk.bn("head/bn".into(), "Classification");
    wk.h = 1;
    wk.w = 1;
    wk.row("head/global_pool".into(), "Classification", "global_avg_pool", 0, 0);
    let c = wk.c;
    let classes = spec.num_classes;
    wk.rows.push(CostRow {
        path: "head/fc".into(),
        stage: "Classification".into(),
        kind: "linear".into(),
        output: vec![classes],
        params: (classes * c + classes) as u64,
        macs: (classes * c) as u64,
    });

    let total_params = wk.rows.iter().map(|r| r.params).sum();
    let total_flops = wk.rows.iter().map(|r| r.macs).sum();
    Ok(CostReport {
        spec: spec.clone(),
        rows: wk.rows,
        total_params,
        total_flops,
    })
}

pub fn count_params(spec: &ArchSpec) -> Result<u64> {
    Ok(report(spec)?.total_params)
}

pub fn count_flops(spec: &ArchSpec) -> Result<u64> {
    Ok(report(spec)?.total_flops)
}

/// `1234567` -> `"1.23M"` with the given number of decimals.
pub fn millions(v: u64, decimals: usize) -> String {
    format!("{:.*}M", decimals, v as f64 / 1e6)
}

impl CostReport {
    /// Aggregate rows by stage, in order; the spatial size is that of the
    /// stage's last row.
    pub fn stages(&self) -> Vec<StageSummary> {
        let mut out: Vec<StageSummary> = Vec::new();
        for r in &self.rows {
            let (h, w) = match r.output[..] {
                [_, h, w] => (h, w),
                _ => (1, 1),
            };
            match out.last_mut() {
                Some(s) if s.stage == r.stage => {
                    s.params += r.params;
                    s.macs += r.macs;
                    s.output_height = h;
                    s.output_width = w;
                }
                _ => out.push(StageSummary {
                    stage: r.stage.clone(),
                    output_height: h,
                    output_width: w,
                    params: r.params,
                    macs: r.macs,
                }),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text rendering: stage table, then totals.
    pub fn render_human(&self, detailed: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.spec);
        let _ = writeln!(s);
        if detailed {
            let _ = writeln!(
                s,
                "{:<34} {:<16} {:>14} {:>12} {:>14}",
                "layer", "kind", "output", "params", "MACs"
            );
            for r in &self.rows {
                let out = r
                    .output
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join("x");
                let _ = writeln!(
                    s,
                    "{:<34} {:<16} {:>14} {:>12} {:>14}",
                    r.path, r.kind, out, r.params, r.macs
                );
            }
        } else {
            let _ = writeln!(
                s,
                "{:<16} {:>12} {:>12} {:>14}",
                "stage", "output", "params", "MACs"
            );
            for st in self.stages() {
                let _ = writeln!(
                    s,
                    "{:<16} {:>12} {:>12} {:>14}",
                    st.stage,
                    format!("{}x{}", st.output_height, st.output_width),
                    st.params,
                    st.macs
                );
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "total parameters: {} ({})",
            millions(self.total_params, 2),
            self.total_params
        );
        let _ = writeln!(
            s,
            "total FLOPs:      {} ({})",
            millions(self.total_flops, 1),
            self.total_flops
        );
        s
    }
}
