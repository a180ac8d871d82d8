//! Declarative architecture descriptions and the named presets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depth labels of the 32x32 family (three dense blocks).
pub const SMALL_FAMILY_DEPTHS: [(u32, usize); 3] = [(100, 16), (123, 20), (147, 24)];
/// Depth labels of the 128x128 family (four dense blocks).
pub const LARGE_FAMILY_DEPTHS: [(u32, usize); 3] = [(132, 16), (164, 20), (196, 24)];

/// Configuration of one residual (or plane) densely connected network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    /// New feature maps contributed by every dense layer (`k`).
    pub growth_rate: usize,
    /// Dense layers per block (`m`).
    pub layers_per_block: usize,
    pub num_blocks: usize,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub num_classes: usize,
    /// `false` drops the pooled skip around each dense+transition pair.
    pub residual: bool,
    pub stem_stride: usize,
}

impl ArchSpec {
    /// A custom spec with 3x32x32 input and 10 classes.
    pub fn custom(growth_rate: usize, layers_per_block: usize, num_blocks: usize) -> Self {
        Self {
            name: format!("rdense-k{growth_rate}-m{layers_per_block}-b{num_blocks}"),
            growth_rate,
            layers_per_block,
            num_blocks,
            input_channels: 3,
            input_height: 32,
            input_width: 32,
            num_classes: 10,
            residual: true,
            stem_stride: 1,
        }
    }

    /// `k=4, m=2, B=2` on 1x28x28 digits. Small enough for desk-scale runs.
    pub fn tiny() -> Self {
        Self::custom(4, 2, 2)
            .with_input(1, 28, 28)
            .with_name("rdense-tiny")
    }

    /// Parse `rdense-{k}-{depth}` or `pdense-{k}-{depth}`.
    ///
    /// Depths 100/123/147 select three blocks with 3x32x32 input and 10 classes;
    /// 132/164/196 select four blocks with 3x128x128 input and 1000 classes.
    pub fn preset(name: &str) -> Result<Self> {
        let bad = || Error::Input(format!("unknown preset '{name}'; valid presets: {}", preset_help()));
        let mut parts = name.split('-');
        let residual = match parts.next() {
            Some("rdense") => true,
            Some("pdense") => false,
            _ => return Err(bad()),
        };
        let k: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let depth: u32 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() || k == 0 {
            return Err(bad());
        }
        let (blocks, m, (c, h, w), classes) =
            if let Some(&(_, m)) = SMALL_FAMILY_DEPTHS.iter().find(|(d, _)| *d == depth) {
                (3, m, (3, 32, 32), 10)
            } else if let Some(&(_, m)) = LARGE_FAMILY_DEPTHS.iter().find(|(d, _)| *d == depth) {
                (4, m, (3, 128, 128), 1000)
            } else {
                return Err(bad());
            };
        Ok(Self {
            name: name.to_string(),
            growth_rate: k,
            layers_per_block: m,
            num_blocks: blocks,
            input_channels: c,
            input_height: h,
            input_width: w,
            num_classes: classes,
            residual,
            stem_stride: 1,
        })
    }

    /// Every preset name for growth rates 12 and 16.
    pub fn preset_names() -> Vec<String> {
        let mut v = Vec::new();
        for prefix in ["rdense", "pdense"] {
            for k in [12, 16] {
                for (d, _) in SMALL_FAMILY_DEPTHS.iter().chain(&LARGE_FAMILY_DEPTHS) {
                    v.push(format!("{prefix}-{k}-{d}"));
                }
            }
        }
        v
    }

    pub fn with_input(mut self, channels: usize, height: usize, width: usize) -> Self {
        self.input_channels = channels;
        self.input_height = height;
        self.input_width = width;
        self
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.num_classes = classes;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_stem_stride(mut self, stride: usize) -> Self {
        self.stem_stride = stride;
        self
    }

    /// The same architecture without residual skips. Renames `rdense-*` to `pdense-*`.
    pub fn plane(mut self) -> Self {
        self.residual = false;
        if let Some(rest) = self.name.strip_prefix("rdense") {
            self.name = format!("pdense{rest}");
        }
        self
    }

    pub fn residual(mut self) -> Self {
        self.residual = true;
        if let Some(rest) = self.name.strip_prefix("pdense") {
            self.name = format!("rdense{rest}");
        }
        self
    }

    /// Channel count entering every dense block and leaving every transition.
    pub fn block_input_channels(&self) -> usize {
        4 * self.growth_rate
    }

    pub fn bottleneck_channels(&self) -> usize {
        4 * self.growth_rate
    }

    /// Channels after the last dense block, i.e. the head's input.
    pub fn head_channels(&self) -> usize {
        self.block_input_channels() + self.layers_per_block * self.growth_rate
    }

    /// Convolutions in the network: two per dense layer, the stem, and one per transition.
    pub fn conv_layer_count(&self) -> usize {
        2 * self.layers_per_block * self.num_blocks + 1 + (self.num_blocks - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("growth_rate", self.growth_rate),
            ("layers_per_block", self.layers_per_block),
            ("num_blocks", self.num_blocks),
            ("input_channels", self.input_channels),
            ("num_classes", self.num_classes),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{field} must be positive")));
            }
        }
        if !(1..=2).contains(&self.stem_stride) {
            return Err(Error::Config(format!(
                "stem_stride must be 1 or 2, got {}",
                self.stem_stride
            )));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::Config(format!(
                "input {}x{} collapses to an empty feature map before the head",
                self.input_height, self.input_width
            )));
        }
        Ok(())
    }

    /// Field-by-field differences, for checkpoint mismatch diagnostics.
    pub fn diff(&self, other: &ArchSpec) -> Vec<String> {
        let mut out = Vec::new();
        macro_rules! cmp {
            ($($f:ident),*) => {$(
                if self.$f != other.$f {
                    out.push(format!("{}: {:?} != {:?}", stringify!($f), self.$f, other.$f));
                }
            )*};
        }
        cmp!(
            growth_rate,
            layers_per_block,
            num_blocks,
            input_channels,
            input_height,
            input_width,
            num_classes,
            residual,
            stem_stride
        );
        out
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (k={}, m={}, B={}, input {}x{}x{}, {} classes, {})",
            self.name,
            self.growth_rate,
            self.layers_per_block,
            self.num_blocks,
            self.input_channels,
            self.input_height,
            self.input_width,
            self.num_classes,
            if self.residual { "residual" } else { "plane" }
        )
    }
}

pub fn preset_help() -> String {
    "rdense-{k}-{100|123|147|132|164|196} and pdense-{k}-{...} for any positive k, e.g. rdense-12-100"
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_map_depth_to_blocks_and_layers() {
        for (name, b, m) in [
            ("rdense-12-100", 3, 16),
            ("rdense-12-123", 3, 20),
            ("rdense-12-147", 3, 24),
            ("rdense-16-132", 4, 16),
            ("rdense-16-164", 4, 20),
            ("pdense-16-196", 4, 24),
        ] {
            let s = ArchSpec::preset(name).unwrap();
            assert_eq!((s.num_blocks, s.layers_per_block), (b, m), "{name}");
            assert_eq!(s.residual, name.starts_with('r'));
        }
    }

    #[test]
    fn unknown_presets_rejected() {
        for bad in ["bogus", "rdense-12", "rdense-12-101", "xdense-12-100", "rdense-0-100", "rdense-12-100-1"] {
            assert!(matches!(ArchSpec::preset(bad), Err(Error::Input(_))), "{bad}");
        }
    }

    #[test]
    fn depth_audit() {
        assert_eq!(ArchSpec::preset("rdense-12-100").unwrap().conv_layer_count(), 99);
        assert_eq!(ArchSpec::preset("rdense-12-132").unwrap().conv_layer_count(), 132);
        assert_eq!(ArchSpec::preset("rdense-12-123").unwrap().conv_layer_count(), 123);
        assert_eq!(ArchSpec::preset("rdense-16-196").unwrap().conv_layer_count(), 196);
    }

    #[test]
    fn plane_renames_and_diff_reports_fields() {
        let r = ArchSpec::preset("rdense-12-100").unwrap();
        let p = r.clone().plane();
        assert_eq!(p.name, "pdense-12-100");
        assert_eq!(r.diff(&p), vec!["residual: true != false".to_string()]);
    }

    #[test]
    fn validate_rejects_degenerate() {
        assert!(ArchSpec::custom(0, 2, 2).validate().is_err());
        assert!(ArchSpec::custom(4, 2, 2).with_stem_stride(3).validate().is_err());
        assert!(ArchSpec::custom(4, 2, 2).with_input(1, 0, 4).validate().is_err());
        assert!(ArchSpec::tiny().validate().is_ok());
    }
}
