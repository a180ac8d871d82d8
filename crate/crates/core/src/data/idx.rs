//! IDX files as used by MNIST and Fashion-MNIST.
//!
//! Header: big-endian `u32` magic (`0x00000803` images, `0x00000801` labels),
//! then one big-endian `u32` per dimension, then unsigned bytes.

use std::path::Path;

use super::{read_file, Dataset, Split};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

/// Canonical file names under a dataset root.
pub const TRAIN_FILES: [&str; 2] = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte"];
pub const TEST_FILES: [&str; 2] = ["t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            detail: "header truncated".into(),
        })
}

/// Decoded raw contents of an IDX images file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn decode_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: format!("bad magic {magic}, expected {IMAGES_MAGIC} for an images file"),
        });
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() != need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(need) as u64,
            detail: format!(
                "payload holds {} bytes, header declares {count} images of {rows}x{cols} ({need} bytes total)",
                bytes.len()
            ),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: format!("bad magic {magic}, expected {LABELS_MAGIC} for a labels file"),
        });
    }
    let count = be_u32(bytes, 4, path)? as usize;
    if bytes.len() != 8 + count {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(8 + count) as u64,
            detail: format!(
                "payload holds {} bytes, header declares {count} labels",
                bytes.len().saturating_sub(8)
            ),
        });
    }
    Ok(bytes[8..].to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Load an images/labels pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let missing: Vec<_> = [images_path, labels_path]
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.to_path_buf())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles { expected: missing });
    }
    let images = decode_images(&read_file(images_path)?, images_path)?;
    let labels = decode_labels(&read_file(labels_path)?, labels_path)?;
    if labels.len() != images.count {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            detail: format!(
                "{} labels but {} declares {} images",
                labels.len(),
                images_path.display(),
                images.count
            ),
        });
    }
    if let Some(pos) = labels.iter().position(|&l| l >= 10) {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 8 + pos as u64,
            detail: format!("label {} out of range 0..10", labels[pos]),
        });
    }
    let pixels = images.pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(
        pixels,
        [1, images.rows, images.cols],
        labels.into_iter().map(usize::from).collect(),
        10,
        split,
    )
}

/// Load `split` from a directory holding the four canonical IDX files.
pub fn load_idx_dir(root: &Path, split: Split) -> Result<Dataset> {
    let files = match split {
        Split::Train => TRAIN_FILES,
        Split::Test => TEST_FILES,
    };
    let (img, lab) = (root.join(files[0]), root.join(files[1]));
    let missing: Vec<_> = [&img, &lab]
        .into_iter()
        .filter(|p| !p.is_file())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles { expected: missing });
    }
    load_idx(&img, &lab, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_magic_rejected_for_images() {
        let bytes = encode_labels(&[1, 2, 3]);
        let err = decode_images(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }

    #[test]
    fn truncated_payload_names_offset() {
        let img = IdxImages {
            count: 2,
            rows: 2,
            cols: 2,
            pixels: vec![0; 8],
        };
        let mut bytes = encode_images(&img);
        bytes.pop();
        match decode_images(&bytes, Path::new("x")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 23),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(decode_images(&bytes[..10], Path::new("x")).is_err());
    }
}
