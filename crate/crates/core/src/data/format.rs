//! Binary dataset container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    [u8; 8]   "SDLABDS1" (labeled) or "SDLABGL1" (gallery)
//! version  u32       1
//! n        u32       rows
//! dim      u32       features per row
//! classes  u32       class count (0 for a gallery)
//! features f64 × n·dim, row-major
//! labels   u32 × n   (labeled)  |  ids u64 × n  (gallery)
//! name     u32 length + UTF-8 bytes
//! ```

use std::path::Path;

use super::{LabeledDataset, UnlabeledGallery};
use crate::codec::{read_file, write_file_atomic, ByteReader, ByteWriter};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"SDLABDS1";
pub const GALLERY_MAGIC: &[u8; 8] = b"SDLABGL1";
pub const FORMAT_VERSION: u32 = 1;

fn header(w: &mut ByteWriter, magic: &[u8; 8], n: usize, dim: usize, classes: usize) -> Result<()> {
    w.bytes(magic);
    w.u32(FORMAT_VERSION);
    w.len_u32(n, "row count")?;
    w.len_u32(dim, "dimension")?;
    w.len_u32(classes, "class count")
}

pub(crate) fn encode_dataset(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    header(&mut w, DATASET_MAGIC, ds.len(), ds.dim(), ds.num_classes)?;
    w.f64s(ds.features.data());
    for &y in &ds.labels {
        w.len_u32(y, "label")?;
    }
    w.string(&ds.name)?;
    Ok(w.into_bytes())
}

pub(crate) fn decode_dataset(bytes: &[u8], context: &str) -> Result<LabeledDataset> {
    let mut r = ByteReader::new(bytes, context);
    r.magic(DATASET_MAGIC, "labeled dataset")?;
    r.version(FORMAT_VERSION)?;
    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let features = r.f64s(n * dim)?;
    let labels = (0..n)
        .map(|_| r.u32().map(|y| y as usize))
        .collect::<Result<Vec<_>>>()?;
    let name = r.string()?;
    r.finish()?;
    let features = Tensor::matrix(n, dim, features)?;
    LabeledDataset::new(name, features, labels, classes).map_err(|e| r.corrupt(e.to_string()))
}

pub(crate) fn encode_gallery(g: &UnlabeledGallery) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    header(&mut w, GALLERY_MAGIC, g.len(), g.dim(), 0)?;
    w.f64s(g.features.data());
    for &id in &g.ids {
        w.u64(id);
    }
    w.string(&g.name)?;
    Ok(w.into_bytes())
}

pub(crate) fn decode_gallery(bytes: &[u8], context: &str) -> Result<UnlabeledGallery> {
    let mut r = ByteReader::new(bytes, context);
    r.magic(GALLERY_MAGIC, "gallery")?;
    r.version(FORMAT_VERSION)?;
    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let classes = r.u32()?;
    if classes != 0 {
        return Err(r.corrupt(format!("gallery declares {classes} classes")));
    }
    let features = r.f64s(n * dim)?;
    let ids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let name = r.string()?;
    r.finish()?;
    let features = Tensor::matrix(n, dim, features)?;
    UnlabeledGallery::new(name, features, ids).map_err(|e| r.corrupt(e.to_string()))
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &LabeledDataset) -> Result<()> {
    write_file_atomic(path.as_ref(), &encode_dataset(ds)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    decode_dataset(&read_file(path)?, &path.display().to_string())
}

pub fn save_gallery(path: impl AsRef<Path>, g: &UnlabeledGallery) -> Result<()> {
    write_file_atomic(path.as_ref(), &encode_gallery(g)?)
}

pub fn load_gallery(path: impl AsRef<Path>) -> Result<UnlabeledGallery> {
    let path = path.as_ref();
    decode_gallery(&read_file(path)?, &path.display().to_string())
}
