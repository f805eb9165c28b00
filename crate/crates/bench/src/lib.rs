//! Fixtures shared by the benchmarks.

use softdistill_core::data::{generate_synthetic, SyntheticConfig, SyntheticData};
use softdistill_core::{softmax_rows, Stream, Tensor};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut s = Stream::new(seed, "bench-matrix");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| s.normal()).collect()).expect("shape")
}

pub fn random_probs(rows: usize, cols: usize, seed: u64) -> Tensor {
    softmax_rows(&random_matrix(rows, cols, seed)).expect("finite logits")
}

/// The default task with a gallery of `gallery_size` rows.
pub fn task(gallery_size: usize) -> SyntheticData {
    generate_synthetic(&SyntheticConfig {
        gallery_size,
        ..SyntheticConfig::default()
    })
    .expect("valid config")
}
