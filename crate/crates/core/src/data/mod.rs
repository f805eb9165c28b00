//! Labeled and unlabeled sample sets, their file formats, and minibatch order.

mod format;
mod idx;
mod synthetic;

pub use format::{
    load_dataset, load_gallery, save_dataset, save_gallery, DATASET_MAGIC, FORMAT_VERSION, GALLERY_MAGIC,
};
pub use idx::{load_idx, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synthetic::{generate_synthetic, MixtureOracle, SyntheticConfig, SyntheticData};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Features with annotated class indices (the training or validation split).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (n, _) = features.dims2("dataset")?;
        if n == 0 {
            return Err(Error::invalid("a labeled dataset needs at least one sample"));
        }
        if labels.len() != n {
            return Err(Error::shape(
                "dataset",
                format!("{n} feature rows but {} labels", labels.len()),
            ));
        }
        if num_classes < 2 {
            return Err(Error::invalid("a labeled dataset needs at least 2 classes"));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Unlabeled features keyed by stable sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledGallery {
    pub name: String,
    pub features: Tensor,
    pub ids: Vec<u64>,
}

impl UnlabeledGallery {
    pub fn new(name: impl Into<String>, features: Tensor, ids: Vec<u64>) -> Result<Self> {
        let (n, _) = features.dims2("gallery")?;
        if ids.len() != n {
            return Err(Error::shape(
                "gallery",
                format!("{n} feature rows but {} ids", ids.len()),
            ));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("gallery ids must be unique"));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("gallery features"));
        }
        Ok(Self {
            name: name.into(),
            features,
            ids,
        })
    }

    /// A gallery with no rows but a known feature width.
    pub fn empty(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            features: Tensor::zeros(&[0, dim]),
            ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at the given positions, keeping their ids.
    pub fn subset(&self, name: impl Into<String>, positions: &[usize]) -> Self {
        Self {
            name: name.into(),
            features: self.features.select_rows(positions),
            ids: positions.iter().map(|&i| self.ids[i]).collect(),
        }
    }
}

/// Shuffled minibatches of `0..n` for one epoch.
///
/// The order is a Fisher–Yates permutation from the `"shuffle"` stream of
/// `seed` indexed by `epoch`; the last batch may be short.
pub fn batch_iterator(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 1 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let perm = Stream::indexed(seed, "shuffle", epoch).permutation(n);
    Ok(perm.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
