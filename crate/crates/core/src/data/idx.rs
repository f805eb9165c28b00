//! Reader (and fixture writer) for the big-endian IDX container used by MNIST-style datasets.

use std::path::Path;

use super::LabeledDataset;
use crate::codec::{read_file, write_file_atomic};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, context: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            context: context.to_string(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, context: &str, name: &'static str) -> Result<()> {
    if be_u32(bytes, 0, context).ok() != Some(expected) {
        return Err(Error::Format {
            context: context.to_string(),
            expected: name,
        });
    }
    Ok(())
}

/// Loads an image/label file pair. Pixels become `byte / 255`, images are
/// flattened row-major, and the class count is `max label + 1` (at least 2).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (ictx, lctx) = (ip.display().to_string(), lp.display().to_string());
    let images = read_file(ip)?;
    let labels = read_file(lp)?;

    check_magic(&images, IDX_IMAGES_MAGIC, &ictx, "IDX image")?;
    let n = be_u32(&images, 4, &ictx)? as usize;
    let rows = be_u32(&images, 8, &ictx)? as usize;
    let cols = be_u32(&images, 12, &ictx)? as usize;
    let dim = rows * cols;
    let pixels = &images[16..];
    if pixels.len() < n * dim {
        return Err(Error::Truncated { context: ictx });
    }

    check_magic(&labels, IDX_LABELS_MAGIC, &lctx, "IDX label")?;
    let nl = be_u32(&labels, 4, &lctx)? as usize;
    if nl != n {
        return Err(Error::shape("load_idx", format!("{n} images but {nl} labels")));
    }
    let ys = &labels[8..];
    if ys.len() < n {
        return Err(Error::Truncated { context: lctx });
    }

    let features: Vec<f64> = pixels[..n * dim].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = ys[..n].iter().map(|&y| y as usize).collect();
    let classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
    let name = ip
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    LabeledDataset::new(name, Tensor::matrix(n, dim, features)?, labels, classes)
}

/// Writes an IDX image file; `images` holds `n` images of `rows × cols` bytes.
pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::shape("write_idx_images", "image size mismatch"));
        }
        out.extend_from_slice(img);
    }
    write_file_atomic(path.as_ref(), &out)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_file_atomic(path.as_ref(), &out)
}
