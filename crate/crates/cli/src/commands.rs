//! Pipeline stages as commands. Each reads its inputs from and writes its
//! outputs to fixed locations under the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use softdistill_core::curation::curate;
use softdistill_core::data::{generate_synthetic, load_dataset, load_gallery, save_dataset, save_gallery};
use softdistill_core::pipeline::{
    assert_teacher_quality, distill_with, evaluate, finetune, load_checkpoint, save_checkpoint, train_teacher,
    write_metrics_csv, Checkpoint,
};
use softdistill_core::{LabeledDataset, MetricsRecord, ModelParams, UnlabeledGallery};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const RESOLVED_CONFIG: &str = "config.resolved.ini";
pub const EVALUATE_HEADER: &str = "model,split,accuracy,loss";

/// Stable artifact locations under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("data/train.sdds")
    }

    pub fn val(&self) -> PathBuf {
        self.root.join("data/val.sdds")
    }

    pub fn gallery(&self) -> PathBuf {
        self.root.join("data/gallery.sdgl")
    }

    pub fn planted_duplicates(&self) -> PathBuf {
        self.root.join("data/planted_duplicates.txt")
    }

    pub fn data_summary(&self) -> PathBuf {
        self.root.join("data/summary.txt")
    }

    pub fn model(&self, stage: &str) -> PathBuf {
        self.root.join(stage).join("model.ckpt")
    }

    pub fn metrics(&self, stage: &str) -> PathBuf {
        self.root.join(stage).join("metrics.csv")
    }

    pub fn curated(&self) -> PathBuf {
        self.root.join("curation/curated.sdgl")
    }

    pub fn curation_report(&self) -> PathBuf {
        self.root.join("curation/report.txt")
    }

    pub fn teacher_quality(&self) -> PathBuf {
        self.root.join("distill/teacher_quality.txt")
    }

    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluate.csv")
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.root.join(RESOLVED_CONFIG)
    }

    /// Relative paths in the config are taken relative to the output directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

pub(crate) fn create_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

/// Writes via a sibling temporary file and a rename, so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    create_parent(path)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn require(path: PathBuf, what: &'static str, producer: &'static str) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact { what, path, producer })
    }
}

fn train_set(layout: &Layout) -> Result<LabeledDataset, CliError> {
    Ok(load_dataset(require(layout.train(), "training set", "gen-data")?)?)
}

fn val_set(layout: &Layout) -> Result<LabeledDataset, CliError> {
    Ok(load_dataset(require(layout.val(), "validation set", "gen-data")?)?)
}

fn load_model(path: PathBuf, what: &'static str, producer: &'static str) -> Result<ModelParams, CliError> {
    Ok(load_checkpoint(require(path, what, producer)?)?.params)
}

fn save_stage(layout: &Layout, stage: &str, cp: &Checkpoint, metrics: &[MetricsRecord]) -> Result<(), CliError> {
    let model = layout.model(stage);
    create_parent(&model)?;
    save_checkpoint(&model, cp)?;
    write_metrics_csv(layout.metrics(stage), metrics)?;
    Ok(())
}

fn last_val(metrics: &[MetricsRecord]) -> String {
    metrics.last().map_or_else(
        || "no epochs run".to_string(),
        |m| format!("val_acc={} val_loss={}", m.val_acc, m.val_loss),
    )
}

pub fn gen_data(cfg: &ExperimentConfig, layout: &Layout) -> Result<String, CliError> {
    let data = generate_synthetic(&cfg.dataset)?;
    create_parent(&layout.train())?;
    save_dataset(layout.train(), &data.train)?;
    save_dataset(layout.val(), &data.val)?;
    save_gallery(layout.gallery(), &data.gallery)?;
    let dups: String = data.planted_duplicates.iter().map(|id| format!("{id}\n")).collect();
    write_atomic(&layout.planted_duplicates(), dups.as_bytes())?;

    let bayes = data.oracle.bayes_accuracy(&data.val);
    let mut s = String::new();
    let _ = writeln!(s, "train = {}", data.train.len());
    let _ = writeln!(s, "val = {}", data.val.len());
    let _ = writeln!(s, "gallery = {}", data.gallery.len());
    let _ = writeln!(s, "planted_duplicates = {}", data.planted_duplicates.len());
    let _ = writeln!(s, "bayes_val_accuracy = {bayes}");
    write_atomic(&layout.data_summary(), s.as_bytes())?;
    Ok(format!(
        "gen-data: train={} val={} gallery={} bayes_val_accuracy={bayes}",
        data.train.len(),
        data.val.len(),
        data.gallery.len()
    ))
}

pub fn train_teacher_cmd(cfg: &ExperimentConfig, layout: &Layout) -> Result<String, CliError> {
    let (train, val) = (train_set(layout)?, val_set(layout)?);
    let out = train_teacher(&train, &val, &cfg.teacher_spec, &cfg.teacher)?;
    save_stage(layout, "teacher", &out.checkpoint, &out.metrics)?;
    Ok(format!("train-teacher: {}", last_val(&out.metrics)))
}

pub fn curate_cmd(cfg: &ExperimentConfig, layout: &Layout) -> Result<String, CliError> {
    let gallery = load_gallery(require(layout.gallery(), "gallery", "gen-data")?)?;
    let val = val_set(layout)?;
    let teacher = load_model(layout.model("teacher"), "teacher checkpoint", "train-teacher")?;
    let (curated, report) = curate(&gallery, &val, &teacher, &cfg.curation)?;
    create_parent(&layout.curated())?;
    save_gallery(layout.curated(), &curated)?;
    write_atomic(&layout.curation_report(), report.to_text().as_bytes())?;
    Ok(format!(
        "curate: gallery={} dedup_removed={} selected={}",
        report.gallery_in,
        report.dedup_removed.len(),
        report.selected
    ))
}

pub fn distill_cmd(cfg: &ExperimentConfig, layout: &Layout) -> Result<String, CliError> {
    let teacher = load_model(layout.model("teacher"), "teacher checkpoint", "train-teacher")?;
    let unlabeled: UnlabeledGallery = load_gallery(require(layout.curated(), "curated gallery", "curate")?)?;
    let (train, val) = (train_set(layout)?, val_set(layout)?);

    let q = assert_teacher_quality(&teacher, &val, cfg.distill.quality_bound)?;
    let text = format!(
        "measured_val_loss = {}\nbound = {}\npassed = {}\ngate = {}\n",
        q.measured,
        q.bound,
        q.passed,
        cfg.distill.gate.as_str()
    );
    write_atomic(&layout.teacher_quality(), text.as_bytes())?;

    let opts = cfg.distill.options();
    let out = distill_with(
        &teacher,
        &cfg.student_spec,
        &train,
        &unlabeled,
        &val,
        &cfg.distill.train,
        &opts,
    )?;
    save_stage(layout, "distill", &out.checkpoint, &out.metrics)?;
    Ok(format!("distill: |U|={} {}", unlabeled.len(), last_val(&out.metrics)))
}

pub fn finetune_cmd(cfg: &ExperimentConfig, layout: &Layout) -> Result<String, CliError> {
    let student = load_model(layout.model("distill"), "distilled student checkpoint", "distill")?;
    let (train, val) = (train_set(layout)?, val_set(layout)?);
    let out = finetune(&student, &train, &val, &cfg.finetune)?;
    save_stage(layout, "finetune", &out.checkpoint, &out.metrics)?;
    Ok(format!("finetune: {}", last_val(&out.metrics)))
}

/// Scores every model checkpoint present on both splits.
pub fn evaluate_cmd(_cfg: &ExperimentConfig, layout: &Layout) -> Result<String, CliError> {
    let (train, val) = (train_set(layout)?, val_set(layout)?);
    let mut csv = format!("{EVALUATE_HEADER}\n");
    let mut summary = Vec::new();
    for stage in ["teacher", "distill", "finetune"] {
        let path = layout.model(stage);
        if !path.is_file() {
            continue;
        }
        let params = load_checkpoint(&path)?.params;
        for (split, ds) in [("train", &train), ("val", &val)] {
            let (acc, loss) = evaluate(&params, ds)?;
            let _ = writeln!(csv, "{stage},{split},{acc},{loss}");
            if split == "val" {
                summary.push(format!("{stage}={acc}"));
            }
        }
    }
    if summary.is_empty() {
        return Err(CliError::MissingArtifact {
            what: "model checkpoint",
            path: layout.model("teacher"),
            producer: "train-teacher",
        });
    }
    write_atomic(&layout.evaluation(), csv.as_bytes())?;
    Ok(format!("evaluate: val accuracy {}", summary.join(" ")))
}
