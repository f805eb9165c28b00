use super::{evaluate, Stage, StageOutput, Targets, TrainConfig, TrainRun};
use crate::curation::{teacher_probs, SoftLabelSet};
use crate::data::{LabeledDataset, UnlabeledGallery};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::nn::{init_mlp, MlpSpec, ModelParams};
use crate::tensor::Tensor;

fn check_io(spec: &MlpSpec, dim: usize, classes: usize, what: &str) -> Result<()> {
    if spec.input_dim() != dim || spec.num_classes() != classes {
        return Err(Error::shape(
            "pipeline",
            format!("{what} {spec} does not fit data with {dim} features and {classes} classes"),
        ));
    }
    Ok(())
}

/// Supervised training on hard labels with L2 decay.
pub fn train_teacher(
    train: &LabeledDataset,
    val: &LabeledDataset,
    spec: &MlpSpec,
    cfg: &TrainConfig,
) -> Result<StageOutput> {
    if cfg.loss != LossKind::HardCE {
        return Err(Error::Config(format!(
            "teacher training uses hard_ce, got {}",
            cfg.loss
        )));
    }
    cfg.validate()?;
    check_io(spec, train.dim(), train.num_classes, "teacher")?;
    let init = init_mlp(spec, cfg.seed);
    let mut run = TrainRun::new(
        Stage::Teacher,
        init,
        &train.features,
        Targets::Hard(&train.labels),
        val,
        cfg,
    )?;
    run.run_to_end()?;
    Ok(run.finish())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherQuality {
    /// Mean validation cross-entropy.
    pub measured: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Compares the teacher's mean validation loss against `bound`.
pub fn assert_teacher_quality(teacher: &ModelParams, val: &LabeledDataset, bound: f64) -> Result<TeacherQuality> {
    if bound.is_nan() || bound <= 0.0 {
        return Err(Error::invalid(format!("quality bound must be > 0, got {bound}")));
    }
    let (_, measured) = evaluate(teacher, val)?;
    Ok(TeacherQuality {
        measured,
        bound,
        passed: measured <= bound,
    })
}

/// Features of `T` followed by those of `U`.
fn stack_features(train: &LabeledDataset, unlabeled: &UnlabeledGallery) -> Result<Tensor> {
    if !unlabeled.is_empty() && unlabeled.dim() != train.dim() {
        return Err(Error::shape(
            "distill",
            format!("train dim {} vs unlabeled dim {}", train.dim(), unlabeled.dim()),
        ));
    }
    let mut data = Vec::with_capacity((train.len() + unlabeled.len()) * train.dim());
    data.extend_from_slice(train.features.data());
    data.extend_from_slice(unlabeled.features.data());
    Tensor::matrix(train.len() + unlabeled.len(), train.dim(), data)
}

/// Teacher probabilities for every row of `T ∪ U`, in that order.
///
/// Rows from `T` carry their index as id, rows from `U` their gallery id.
/// Labels of `T` are never consulted.
pub fn precompute_soft_labels(
    teacher: &ModelParams,
    train: &LabeledDataset,
    unlabeled: &UnlabeledGallery,
) -> Result<SoftLabelSet> {
    let features = stack_features(train, unlabeled)?;
    if teacher.spec().input_dim() != features.cols() {
        return Err(Error::shape("precompute_soft_labels", "teacher input dim mismatch"));
    }
    let ids = (0..train.len() as u64).chain(unlabeled.ids.iter().copied()).collect();
    SoftLabelSet::from_probs(ids, teacher_probs(teacher, &features)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QualityGate {
    /// Refuse to distill from a teacher whose validation loss exceeds the bound.
    Enforce(f64),
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherMode {
    /// Teacher rows computed once before training.
    Cached,
    /// Teacher evaluated on each minibatch.
    Online,
}

#[derive(Debug, Clone)]
pub struct DistillOptions {
    pub gate: QualityGate,
    pub teacher_mode: TeacherMode,
    /// Student starting point; defaults to a fresh init from the run seed.
    pub init: Option<ModelParams>,
}

impl Default for DistillOptions {
    fn default() -> Self {
        Self {
            gate: QualityGate::Enforce(0.8),
            teacher_mode: TeacherMode::Cached,
            init: None,
        }
    }
}

/// Trains a student on `T ∪ U` against teacher probabilities only.
pub fn distill(
    teacher: &ModelParams,
    student_spec: &MlpSpec,
    train: &LabeledDataset,
    unlabeled: &UnlabeledGallery,
    val: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<StageOutput> {
    distill_with(
        teacher,
        student_spec,
        train,
        unlabeled,
        val,
        cfg,
        &DistillOptions::default(),
    )
}

/// [`distill`] with an explicit quality gate, teacher mode, and student init.
///
/// Only the features of `train` are read.
pub fn distill_with(
    teacher: &ModelParams,
    student_spec: &MlpSpec,
    train: &LabeledDataset,
    unlabeled: &UnlabeledGallery,
    val: &LabeledDataset,
    cfg: &TrainConfig,
    opts: &DistillOptions,
) -> Result<StageOutput> {
    if !cfg.loss.is_label_free() {
        return Err(Error::Config(
            "distillation only accepts soft_ce or js; hard labels are never used".into(),
        ));
    }
    cfg.validate()?;
    let classes = teacher.spec().num_classes();
    check_io(student_spec, teacher.spec().input_dim(), classes, "student")?;
    check_io(teacher.spec(), train.dim(), val.num_classes, "teacher")?;
    if let QualityGate::Enforce(bound) = opts.gate {
        let q = assert_teacher_quality(teacher, val, bound)?;
        if !q.passed {
            return Err(Error::TeacherQuality {
                measured: q.measured,
                bound,
            });
        }
    }
    let init = match &opts.init {
        Some(p) => {
            if p.spec() != student_spec {
                return Err(Error::shape("distill", "initial params do not match the student spec"));
            }
            p.clone()
        }
        None => init_mlp(student_spec, cfg.seed),
    };
    let features = stack_features(train, unlabeled)?;
    let cached;
    let targets = match opts.teacher_mode {
        TeacherMode::Cached if cfg.epochs == 0 => Targets::OnlineTeacher(teacher),
        TeacherMode::Cached => {
            cached = teacher_probs(teacher, &features)?;
            Targets::Soft(&cached)
        }
        TeacherMode::Online => Targets::OnlineTeacher(teacher),
    };
    let mut run = TrainRun::new(Stage::Distill, init, &features, targets, val, cfg)?;
    run.run_to_end()?;
    Ok(run.finish())
}

/// Hard-label training on `T` only, continuing from `params`.
pub fn finetune(
    params: &ModelParams,
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<StageOutput> {
    if cfg.loss != LossKind::HardCE {
        return Err(Error::Config(format!("finetuning uses hard_ce, got {}", cfg.loss)));
    }
    cfg.validate()?;
    check_io(params.spec(), train.dim(), train.num_classes, "student")?;
    let mut run = TrainRun::new(
        Stage::Finetune,
        params.clone(),
        &train.features,
        Targets::Hard(&train.labels),
        val,
        cfg,
    )?;
    run.run_to_end()?;
    Ok(run.finish())
}
