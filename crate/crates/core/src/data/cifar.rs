//! CIFAR-10 / CIFAR-100 binary batches.
//!
//! CIFAR-10 records are `label(1) | R(1024) G(1024) B(1024)`; CIFAR-100 records
//! carry `coarse(1) fine(1)` before the same 3072 pixel bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_file, Dataset, Split};
use crate::error::{Error, Result};

pub const PIXELS: usize = 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CifarVariant {
    C10,
    C100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        match self {
            CifarVariant::C10 => 1 + PIXELS,
            CifarVariant::C100 => 2 + PIXELS,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            CifarVariant::C10 => 10,
            CifarVariant::C100 => 100,
        }
    }

    pub fn files(self, split: Split) -> Vec<&'static str> {
        match (self, split) {
            (CifarVariant::C10, Split::Train) => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            (CifarVariant::C10, Split::Test) => vec!["test_batch.bin"],
            (CifarVariant::C100, Split::Train) => vec!["train.bin"],
            (CifarVariant::C100, Split::Test) => vec!["test.bin"],
        }
    }

    /// Directory name used by the published archives.
    pub fn archive_dir(self) -> &'static str {
        match self {
            CifarVariant::C10 => "cifar-10-batches-bin",
            CifarVariant::C100 => "cifar-100-binary",
        }
    }
}

/// One decoded record. `coarse` is only present for CIFAR-100.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CifarRecord {
    pub coarse: Option<u8>,
    pub label: u8,
    pub pixels: Vec<u8>,
}

pub fn decode_records(bytes: &[u8], variant: CifarVariant, path: &Path) -> Result<Vec<CifarRecord>> {
    let len = variant.record_len();
    if !bytes.len().is_multiple_of(len) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: (bytes.len() - bytes.len() % len) as u64,
            detail: format!(
                "file size {} is not a multiple of the {len}-byte record",
                bytes.len()
            ),
        });
    }
    let classes = variant.classes();
    bytes
        .chunks_exact(len)
        .enumerate()
        .map(|(i, rec)| {
            let (coarse, label, px) = match variant {
                CifarVariant::C10 => (None, rec[0], &rec[1..]),
                CifarVariant::C100 => (Some(rec[0]), rec[1], &rec[2..]),
            };
            if label as usize >= classes {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: (i * len + len - PIXELS - 1) as u64,
                    detail: format!("label {label} out of range for {classes} classes"),
                });
            }
            Ok(CifarRecord {
                coarse,
                label,
                pixels: px.to_vec(),
            })
        })
        .collect()
}

pub fn encode_records(records: &[CifarRecord], variant: CifarVariant) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * variant.record_len());
    for r in records {
        if variant == CifarVariant::C100 {
            out.push(r.coarse.unwrap_or(0));
        }
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

fn resolve_dir(root: &Path, variant: CifarVariant, split: Split) -> PathBuf {
    let nested = root.join(variant.archive_dir());
    if nested.join(variant.files(split)[0]).is_file() {
        nested
    } else {
        root.to_path_buf()
    }
}

/// Load a split from `root` (or `root/<archive dir>`), scaling to `[0, 1]`.
/// CIFAR-100 uses the fine labels.
pub fn load_cifar(root: &Path, variant: CifarVariant, split: Split) -> Result<Dataset> {
    let dir = resolve_dir(root, variant, split);
    let paths: Vec<PathBuf> = variant.files(split).iter().map(|f| dir.join(f)).collect();
    let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles { expected: missing });
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in &paths {
        for rec in decode_records(&read_file(p)?, variant, p)? {
            pixels.extend(rec.pixels.iter().map(|&v| v as f32 / 255.0));
            labels.push(rec.label as usize);
        }
    }
    Dataset::new(pixels, [3, 32, 32], labels, variant.classes(), split)
}
