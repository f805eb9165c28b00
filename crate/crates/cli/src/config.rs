//! Experiment configuration: `key = value` lines grouped under `[section]` headers.
//!
//! ```text
//! seed = 0
//!
//! [dataset]
//! train_size = 2000
//!
//! [distill]
//! weight_decay = 1e-4
//! ```
//!
//! Every key has a default except the top-level `seed`; the `[dataset]`
//! section must be present even if empty. Unknown sections and keys are
//! rejected.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use softdistill_core::curation::CurationConfig;
use softdistill_core::data::SyntheticConfig;
use softdistill_core::pipeline::{DistillOptions, QualityGate, TrainConfig};
use softdistill_core::{LossKind, MlpSpec};

use crate::error::CliError;

const SECTIONS: [&str; 9] = [
    "", "dataset", "teacher", "student", "curation", "distill", "finetune", "sweep", "plot",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Enforce,
    Skip,
}

impl Gate {
    pub fn as_str(self) -> &'static str {
        match self {
            Gate::Enforce => "enforce",
            Gate::Skip => "skip",
        }
    }
}

impl FromStr for Gate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "enforce" => Ok(Gate::Enforce),
            "skip" => Ok(Gate::Skip),
            _ => Err("enforce or skip".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillSection {
    pub train: TrainConfig,
    /// Largest acceptable teacher validation loss.
    pub quality_bound: f64,
    pub gate: Gate,
}

impl DistillSection {
    pub fn options(&self) -> DistillOptions {
        DistillOptions {
            gate: match self.gate {
                Gate::Enforce => QualityGate::Enforce(self.quality_bound),
                Gate::Skip => QualityGate::Skip,
            },
            ..DistillOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepAxes {
    pub weight_decay: Vec<f64>,
    pub teacher_checkpoint: Vec<PathBuf>,
    pub unlabeled_volume: Vec<usize>,
    pub epochs: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepAxes {
    pub fn has_axis(&self) -> bool {
        !(self.weight_decay.is_empty()
            && self.teacher_checkpoint.is_empty()
            && self.unlabeled_volume.is_empty()
            && self.epochs.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSection {
    pub csv: PathBuf,
    pub series: String,
    pub x: String,
    pub y: String,
    /// Optional `column=value` row filter.
    pub filter: Option<(String, String)>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub record_wall_clock: bool,
    pub dataset: SyntheticConfig,
    pub teacher_spec: MlpSpec,
    pub teacher: TrainConfig,
    pub student_spec: MlpSpec,
    pub curation: CurationConfig,
    pub distill: DistillSection,
    pub finetune: TrainConfig,
    pub sweep: SweepAxes,
    pub plot: PlotSection,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw `section.key → value` table, before defaults and type conversion.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
    sections: Vec<String>,
}

fn full_key(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw = RawConfig::default();
        let mut section = String::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = strip_comment(line).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::syntax(lineno, "unterminated section header"))?
                    .trim();
                if name.is_empty() || !SECTIONS.contains(&name) {
                    return Err(CliError::UnknownSection {
                        section: name.to_string(),
                        line: lineno,
                    });
                }
                if raw.sections.iter().any(|s| s == name) {
                    return Err(CliError::syntax(lineno, format!("section [{name}] repeated")));
                }
                raw.sections.push(name.to_string());
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::syntax(lineno, "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(CliError::syntax(lineno, format!("bad key {key:?}")));
            }
            let full = full_key(&section, key);
            let entry = Entry {
                value: value.trim().to_string(),
                line: lineno,
            };
            if raw.entries.insert(full.clone(), entry).is_some() {
                return Err(CliError::syntax(lineno, format!("key {full} repeated")));
            }
        }
        Ok(raw)
    }

    /// Applies a `section.key=value` (or top-level `key=value`) override.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {assignment:?}")))?;
        let key = key.trim();
        let section = key.rsplit_once('.').map_or("", |(s, _)| s);
        if !SECTIONS.contains(&section) {
            return Err(CliError::UnknownSection {
                section: section.to_string(),
                line: 0,
            });
        }
        if !section.is_empty() && !self.sections.iter().any(|s| s == section) {
            self.sections.push(section.to_string());
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                line: 0,
            },
        );
        Ok(())
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut r = Resolver {
            raw: self,
            used: Vec::new(),
        };
        let cfg = r.config()?;
        if let Some((key, e)) = self.entries.iter().find(|(k, _)| !r.used.contains(k)) {
            return Err(CliError::UnknownKey {
                key: key.clone(),
                line: e.line,
            });
        }
        Ok(cfg)
    }
}

fn strip_comment(line: &str) -> &str {
    let t = line.trim_start();
    if t.starts_with('#') || t.starts_with(';') {
        return "";
    }
    match line.find(" #") {
        Some(pos) => &line[..pos],
        None => line,
    }
}

struct Resolver<'a> {
    raw: &'a RawConfig,
    used: Vec<String>,
}

impl Resolver<'_> {
    fn value(&mut self, key: &str) -> Option<&Entry> {
        let e = self.raw.entries.get(key)?;
        self.used.push(key.to_string());
        Some(e)
    }

    fn get<T: FromStr>(&mut self, key: &str, expected: &'static str) -> Result<Option<T>, CliError> {
        match self.value(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| CliError::Type {
                key: key.to_string(),
                value: e.value.clone(),
                expected,
            }),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, expected: &'static str, default: T) -> Result<T, CliError> {
        Ok(self.get(key, expected)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&mut self, key: &str, expected: &'static str) -> Result<Option<Vec<T>>, CliError> {
        let Some(e) = self.value(key) else {
            return Ok(None);
        };
        if e.value.is_empty() {
            return Ok(Some(Vec::new()));
        }
        let bad = || CliError::Type {
            key: key.to_string(),
            value: e.value.clone(),
            expected,
        };
        e.value
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    fn spec(&mut self, key: &str, default: Vec<usize>, d: usize, k: usize) -> Result<MlpSpec, CliError> {
        let widths = self.list(key, "comma-separated layer widths")?.unwrap_or(default);
        let spec = MlpSpec::new(widths).map_err(|e| CliError::Invalid {
            key: key.to_string(),
            detail: e.to_string(),
        })?;
        if spec.input_dim() != d || spec.num_classes() != k {
            return Err(CliError::Invalid {
                key: key.to_string(),
                detail: format!("{spec} must start at dims = {d} and end at classes = {k}"),
            });
        }
        Ok(spec)
    }

    fn train(&mut self, section: &str, base: TrainConfig) -> Result<TrainConfig, CliError> {
        let key = |k: &str| format!("{section}.{k}");
        let cfg = TrainConfig {
            loss: base.loss,
            base_lr: self.or(&key("base_lr"), "a number", base.base_lr)?,
            momentum: self.or(&key("momentum"), "a number", base.momentum)?,
            weight_decay: self.or(&key("weight_decay"), "a number", base.weight_decay)?,
            epochs: self.or(&key("epochs"), "a nonnegative integer", base.epochs)?,
            warmup_epochs: self.or(&key("warmup_epochs"), "a nonnegative integer", base.warmup_epochs)?,
            batch_size: self.or(&key("batch_size"), "a positive integer", base.batch_size)?,
            eval_every: self.or(&key("eval_every"), "a positive integer", base.eval_every)?,
            ..base
        };
        cfg.validate().map_err(|e| CliError::Invalid {
            key: format!("[{section}]"),
            detail: e.to_string(),
        })?;
        Ok(cfg)
    }

    fn config(&mut self) -> Result<ExperimentConfig, CliError> {
        let seed: u64 = self
            .get("seed", "a nonnegative integer")?
            .ok_or(CliError::MissingKey("seed".into()))?;
        if !self.raw.sections.iter().any(|s| s == "dataset") {
            return Err(CliError::MissingKey("[dataset]".into()));
        }
        let out = self.get::<PathBuf>("out", "a path")?;
        let record_wall_clock = self.or("record_wall_clock", "true or false", false)?;

        let dd = SyntheticConfig::default();
        let dataset = SyntheticConfig {
            classes: self.or("dataset.classes", "an integer", dd.classes)?,
            extra_classes: self.or("dataset.extra_classes", "an integer", dd.extra_classes)?,
            dims: self.or("dataset.dims", "an integer", dd.dims)?,
            mean_scale: self.or("dataset.mean_scale", "a number", dd.mean_scale)?,
            stddev: self.or("dataset.stddev", "a number", dd.stddev)?,
            train_size: self.or("dataset.train_size", "an integer", dd.train_size)?,
            val_size: self.or("dataset.val_size", "an integer", dd.val_size)?,
            gallery_size: self.or("dataset.gallery_size", "an integer", dd.gallery_size)?,
            duplicate_fraction: self.or("dataset.duplicate_fraction", "a number", dd.duplicate_fraction)?,
            seed,
        };
        dataset.validate().map_err(|e| CliError::Invalid {
            key: "[dataset]".into(),
            detail: e.to_string(),
        })?;
        let (d, k) = (dataset.dims, dataset.classes);

        let stage_base = |base: TrainConfig| TrainConfig {
            seed,
            record_wall_clock,
            ..base
        };
        let teacher_spec = self.spec("teacher.widths", vec![d, 256, 256, k], d, k)?;
        let teacher = self.train("teacher", stage_base(TrainConfig::teacher()))?;
        let student_spec = self.spec("student.widths", vec![d, 32, k], d, k)?;

        let cd = CurationConfig::default();
        let curation = CurationConfig {
            similarity_threshold: self.or("curation.similarity_threshold", "a number", cd.similarity_threshold)?,
            k: self.or("curation.k", "a nonnegative integer", cd.k)?,
        };
        curation.validate().map_err(|e| CliError::Invalid {
            key: "curation.similarity_threshold".into(),
            detail: e.to_string(),
        })?;

        let loss: LossKind = self.or("distill.loss", "soft_ce or js", LossKind::JSDiv)?;
        if !loss.is_label_free() {
            return Err(CliError::Invalid {
                key: "distill.loss".into(),
                detail: "distillation accepts soft_ce or js only".into(),
            });
        }
        let distill_train = self.train(
            "distill",
            TrainConfig {
                loss,
                ..stage_base(TrainConfig::distill())
            },
        )?;
        let quality_bound: f64 = self.or("distill.quality_bound", "a positive number", 0.8)?;
        if quality_bound.is_nan() || quality_bound <= 0.0 {
            return Err(CliError::Invalid {
                key: "distill.quality_bound".into(),
                detail: "must be > 0".into(),
            });
        }
        let gate = self.or("distill.gate", "enforce or skip", Gate::Enforce)?;
        let finetune = self.train("finetune", TrainConfig::finetune(&distill_train))?;

        let seeds = self
            .list("sweep.seeds", "comma-separated integers")?
            .unwrap_or_else(|| vec![seed]);
        let sweep = SweepAxes {
            weight_decay: self
                .list("sweep.weight_decay", "comma-separated numbers")?
                .unwrap_or_default(),
            teacher_checkpoint: self
                .list("sweep.teacher_checkpoint", "comma-separated paths")?
                .unwrap_or_default(),
            unlabeled_volume: self
                .list("sweep.unlabeled_volume", "comma-separated integers")?
                .unwrap_or_default(),
            epochs: self
                .list("sweep.epochs", "comma-separated integers")?
                .unwrap_or_default(),
            seeds,
        };

        let filter = match self.get::<String>("plot.filter", "column=value")? {
            None => None,
            Some(s) if s.is_empty() => None,
            Some(s) => {
                let (c, v) = s.split_once('=').ok_or_else(|| CliError::Type {
                    key: "plot.filter".into(),
                    value: s.clone(),
                    expected: "column=value",
                })?;
                Some((c.trim().to_string(), v.trim().to_string()))
            }
        };
        let plot = PlotSection {
            csv: self.or("plot.csv", "a path", PathBuf::from("distill/metrics.csv"))?,
            series: self.or("plot.series", "a column name", "stage".to_string())?,
            x: self.or("plot.x", "a column name", "epoch".to_string())?,
            y: self.or("plot.y", "a column name", "train_loss".to_string())?,
            filter,
            output: self.or("plot.output", "a path", PathBuf::from("plot.svg"))?,
        };

        Ok(ExperimentConfig {
            seed,
            out,
            record_wall_clock,
            dataset,
            teacher_spec,
            teacher,
            student_spec,
            curation,
            distill: DistillSection {
                train: distill_train,
                quality_bound,
                gate,
            },
            finetune,
            sweep,
            plot,
        })
    }
}

pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut raw = RawConfig::parse(text)?;
    for o in overrides {
        raw.set(o)?;
    }
    raw.resolve()
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config_str(&text, overrides)
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

fn write_train(s: &mut String, t: &TrainConfig) {
    let _ = writeln!(s, "base_lr = {}", t.base_lr);
    let _ = writeln!(s, "momentum = {}", t.momentum);
    let _ = writeln!(s, "weight_decay = {}", t.weight_decay);
    let _ = writeln!(s, "epochs = {}", t.epochs);
    let _ = writeln!(s, "warmup_epochs = {}", t.warmup_epochs);
    let _ = writeln!(s, "batch_size = {}", t.batch_size);
    let _ = writeln!(s, "eval_every = {}", t.eval_every);
}

impl ExperimentConfig {
    /// Every setting spelled out; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(out) = &self.out {
            let _ = writeln!(s, "out = {}", out.display());
        }
        s.push_str(&self.run_text());

        let sw = &self.sweep;
        let _ = writeln!(s, "\n[sweep]");
        let _ = writeln!(s, "weight_decay = {}", join(&sw.weight_decay));
        let paths: Vec<String> = sw.teacher_checkpoint.iter().map(|p| p.display().to_string()).collect();
        let _ = writeln!(s, "teacher_checkpoint = {}", paths.join(", "));
        let _ = writeln!(s, "unlabeled_volume = {}", join(&sw.unlabeled_volume));
        let _ = writeln!(s, "epochs = {}", join(&sw.epochs));
        let _ = writeln!(s, "seeds = {}", join(&sw.seeds));

        let p = &self.plot;
        let _ = writeln!(s, "\n[plot]");
        let _ = writeln!(s, "csv = {}", p.csv.display());
        let _ = writeln!(s, "series = {}", p.series);
        let _ = writeln!(s, "x = {}", p.x);
        let _ = writeln!(s, "y = {}", p.y);
        let filter = p.filter.as_ref().map_or(String::new(), |(c, v)| format!("{c}={v}"));
        let _ = writeln!(s, "filter = {filter}");
        let _ = writeln!(s, "output = {}", p.output.display());
        s
    }

    /// The settings that determine training results: everything except the
    /// seed line, output location, sweep axes and plot options.
    pub fn run_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "record_wall_clock = {}", self.record_wall_clock);

        let d = &self.dataset;
        let _ = writeln!(s, "\n[dataset]");
        let _ = writeln!(s, "classes = {}", d.classes);
        let _ = writeln!(s, "extra_classes = {}", d.extra_classes);
        let _ = writeln!(s, "dims = {}", d.dims);
        let _ = writeln!(s, "mean_scale = {}", d.mean_scale);
        let _ = writeln!(s, "stddev = {}", d.stddev);
        let _ = writeln!(s, "train_size = {}", d.train_size);
        let _ = writeln!(s, "val_size = {}", d.val_size);
        let _ = writeln!(s, "gallery_size = {}", d.gallery_size);
        let _ = writeln!(s, "duplicate_fraction = {}", d.duplicate_fraction);

        let _ = writeln!(s, "\n[teacher]");
        let _ = writeln!(s, "widths = {}", join(self.teacher_spec.widths()));
        write_train(&mut s, &self.teacher);

        let _ = writeln!(s, "\n[student]");
        let _ = writeln!(s, "widths = {}", join(self.student_spec.widths()));

        let _ = writeln!(s, "\n[curation]");
        let _ = writeln!(s, "similarity_threshold = {}", self.curation.similarity_threshold);
        let _ = writeln!(s, "k = {}", self.curation.k);

        let _ = writeln!(s, "\n[distill]");
        let _ = writeln!(s, "loss = {}", self.distill.train.loss);
        write_train(&mut s, &self.distill.train);
        let _ = writeln!(s, "quality_bound = {}", self.distill.quality_bound);
        let _ = writeln!(s, "gate = {}", self.distill.gate.as_str());

        let _ = writeln!(s, "\n[finetune]");
        write_train(&mut s, &self.finetune);
        s
    }
}
