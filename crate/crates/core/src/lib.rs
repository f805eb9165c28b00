//! Label-free knowledge distillation at desk scale.
//!
//! A frozen teacher MLP labels a curated unlabeled gallery with its predicted
//! distributions; a student is trained to match those distributions alone,
//! then briefly finetuned on the annotated set.
//!
//! ```
//! use softdistill_core::{forward, init_mlp, MlpSpec, Tensor};
//!
//! let spec = MlpSpec::new(vec![4, 8, 3]).unwrap();
//! let params = init_mlp(&spec, 7);
//! let logits = forward(&params, &Tensor::zeros(&[2, 4])).unwrap();
//! assert_eq!(logits.shape(), &[2, 3]);
//! ```

pub mod autograd;
mod codec;
pub mod curation;
pub mod data;
mod error;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use autograd::{log_softmax_rows, softmax_rows, OpKind, Tape, Var};
pub use curation::{
    curate, dedup_against_validation, score_gallery, select_top_k_per_class, CurationConfig, CurationReport,
    SoftLabelSet,
};
pub use data::{
    generate_synthetic, load_dataset, load_gallery, save_dataset, save_gallery, LabeledDataset, SyntheticConfig,
    SyntheticData, UnlabeledGallery,
};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, grad_check_many};
pub use losses::LossKind;
pub use nn::{forward, frobenius_norms, generalization_bound_proxy, init_mlp, MlpSpec, ModelParams};
pub use optim::{lr_at, sgd_momentum_step, OptimState, ScheduleConfig};
pub use pipeline::{distill, evaluate, finetune, train_teacher, Checkpoint, MetricsRecord, Stage, TrainConfig};
pub use rng::Stream;
pub use tensor::Tensor;
