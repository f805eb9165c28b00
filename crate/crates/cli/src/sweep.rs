//! Grid sweeps over distillation settings with resumable, append-only results.
//!
//! Every grid point × seed runs gen → (shared teacher) → curate → distill →
//! finetune in its own directory `sweep/runs/<key>/`. The key is a digest of
//! the run-relevant config, the point's settings and the teacher's bytes, so a
//! re-invocation skips exactly the runs whose results are already recorded.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use softdistill_core::curation::{curate, CurationConfig};
use softdistill_core::data::generate_synthetic;
use softdistill_core::pipeline::{
    distill_with, evaluate, finetune, load_checkpoint, metrics_to_csv, read_metrics_csv, save_checkpoint,
    train_teacher, write_metrics_csv, TrainConfig, METRICS_HEADER,
};
use softdistill_core::{ModelParams, SyntheticData, UnlabeledGallery};

use crate::commands::{create_parent, write_atomic, Layout};
use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const SWEEP_HEADER: &str = "key,weight_decay,teacher_checkpoint,unlabeled_volume,epochs,seed,\
unlabeled_used,distill_train_loss,distill_val_acc,bound_proxy,val_acc,val_loss,seconds";

const POINT_COLUMNS: &str = "key,weight_decay,teacher_checkpoint,unlabeled_volume,epochs,seed";

/// Label written in place of a path when the sweep uses its own default teacher.
pub const DEFAULT_TEACHER: &str = "default";

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub weight_decay: f64,
    /// `None` selects the default teacher.
    pub teacher_checkpoint: Option<PathBuf>,
    /// Nominal |U|; curation keeps `unlabeled_volume / classes` rows per class.
    pub unlabeled_volume: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl GridPoint {
    fn teacher_label(&self) -> String {
        self.teacher_checkpoint
            .as_ref()
            .map_or_else(|| DEFAULT_TEACHER.to_string(), |p| p.display().to_string())
    }

    fn columns(&self, key: &str) -> String {
        format!(
            "{key},{},{},{},{},{}",
            self.weight_decay,
            self.teacher_label(),
            self.unlabeled_volume,
            self.epochs,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub key: String,
    pub point: GridPoint,
    pub unlabeled_used: usize,
    pub distill_train_loss: f64,
    pub distill_val_acc: f64,
    pub bound_proxy: f64,
    /// Validation accuracy after finetuning.
    pub val_acc: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

impl SweepRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.point.columns(&self.key),
            self.unlabeled_used,
            self.distill_train_loss,
            self.distill_val_acc,
            self.bound_proxy,
            self.val_acc,
            self.val_loss,
            self.seconds
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return None;
        }
        let teacher_checkpoint = (f[2] != DEFAULT_TEACHER).then(|| PathBuf::from(f[2]));
        Some(Self {
            key: f[0].to_string(),
            point: GridPoint {
                weight_decay: f[1].parse().ok()?,
                teacher_checkpoint,
                unlabeled_volume: f[3].parse().ok()?,
                epochs: f[4].parse().ok()?,
                seed: f[5].parse().ok()?,
            },
            unlabeled_used: f[6].parse().ok()?,
            distill_train_loss: f[7].parse().ok()?,
            distill_val_acc: f[8].parse().ok()?,
            bound_proxy: f[9].parse().ok()?,
            val_acc: f[10].parse().ok()?,
            val_loss: f[11].parse().ok()?,
            seconds: f[12].parse().ok()?,
        })
    }
}

/// Rows of a finished sweep, in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// How many rows this invocation computed (the rest were already on disk).
    pub computed: usize,
}

impl SweepResult {
    /// Mean of `f` over the rows matching `select`.
    pub fn mean_by(&self, select: impl Fn(&GridPoint) -> bool, f: impl Fn(&SweepRow) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter(|r| select(&r.point)).map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub struct SweepPaths {
    pub csv: PathBuf,
    pub curves: PathBuf,
    pub runs: PathBuf,
    pub teacher: PathBuf,
}

impl SweepPaths {
    pub fn new(layout: &Layout) -> Self {
        let dir = layout.root().join("sweep");
        Self {
            csv: dir.join("results.csv"),
            curves: dir.join("curves.csv"),
            runs: dir.join("runs"),
            teacher: dir.join("teacher/model.ckpt"),
        }
    }
}

/// Cartesian product in axis order: weight decay, teacher, volume, epochs, then seed.
pub fn grid(cfg: &ExperimentConfig) -> Result<Vec<GridPoint>, CliError> {
    let axes = &cfg.sweep;
    if !axes.has_axis() {
        return Err(CliError::EmptyGrid(
            "sweep needs at least one of sweep.weight_decay, sweep.teacher_checkpoint, \
             sweep.unlabeled_volume, sweep.epochs"
                .into(),
        ));
    }
    if axes.seeds.is_empty() {
        return Err(CliError::EmptyGrid("sweep.seeds is empty".into()));
    }
    let or_default = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let wds = or_default(&axes.weight_decay, cfg.distill.train.weight_decay);
    let teachers: Vec<Option<PathBuf>> = if axes.teacher_checkpoint.is_empty() {
        vec![None]
    } else {
        axes.teacher_checkpoint.iter().cloned().map(Some).collect()
    };
    let volumes = if axes.unlabeled_volume.is_empty() {
        vec![cfg.curation.k * cfg.dataset.classes]
    } else {
        axes.unlabeled_volume.clone()
    };
    let epochs = if axes.epochs.is_empty() {
        vec![cfg.distill.train.epochs]
    } else {
        axes.epochs.clone()
    };

    let mut points = Vec::new();
    for &weight_decay in &wds {
        for teacher in &teachers {
            for &unlabeled_volume in &volumes {
                for &e in &epochs {
                    for &seed in &axes.seeds {
                        points.push(GridPoint {
                            weight_decay,
                            teacher_checkpoint: teacher.clone(),
                            unlabeled_volume,
                            epochs: e,
                            seed,
                        });
                    }
                }
            }
        }
    }
    Ok(points)
}

struct Teacher {
    params: ModelParams,
    digest: String,
}

fn load_teacher(path: &Path) -> Result<Teacher, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingArtifact {
            what: "teacher checkpoint",
            path: path.to_path_buf(),
            producer: "train-teacher",
        });
    }
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let params = load_checkpoint(path)?.params;
    Ok(Teacher {
        params,
        digest: hex(&Sha256::digest(&bytes)),
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// The config's default teacher: `teacher/model.ckpt` if the pipeline produced
/// one, otherwise trained here once and kept under `sweep/teacher/`.
fn default_teacher(cfg: &ExperimentConfig, layout: &Layout, data: &SyntheticData) -> Result<Teacher, CliError> {
    let staged = layout.model("teacher");
    if staged.is_file() {
        return load_teacher(&staged);
    }
    let own = SweepPaths::new(layout).teacher;
    if own.is_file() {
        let cp = load_checkpoint(&own)?;
        if cp.config_hash == cfg.teacher.hash() && cp.spec() == &cfg.teacher_spec {
            return load_teacher(&own);
        }
    }
    let out = train_teacher(&data.train, &data.val, &cfg.teacher_spec, &cfg.teacher)?;
    create_parent(&own)?;
    save_checkpoint(&own, &out.checkpoint)?;
    write_metrics_csv(own.with_file_name("metrics.csv"), &out.metrics)?;
    load_teacher(&own)
}

fn run_key(cfg: &ExperimentConfig, point: &GridPoint, teacher_digest: &str) -> String {
    let mut h = Sha256::new();
    h.update(cfg.run_text().as_bytes());
    h.update(
        format!(
            "\nweight_decay={:016x}\nteacher={teacher_digest}\nunlabeled_volume={}\nepochs={}\nseed={}\n",
            point.weight_decay.to_bits(),
            point.unlabeled_volume,
            point.epochs,
            point.seed
        )
        .as_bytes(),
    );
    hex(&h.finalize()[..8])
}

/// Reads recorded rows, dropping a trailing partial line left by an interrupted write.
fn recorded_rows(path: &Path) -> Result<HashMap<String, SweepRow>, CliError> {
    let mut rows = HashMap::new();
    if !path.exists() {
        return Ok(rows);
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let complete = match text.rfind('\n') {
        Some(end) => &text[..=end],
        None => "",
    };
    if complete.len() != text.len() {
        fs::write(path, complete).map_err(|e| CliError::io(path, e))?;
    }
    let mut lines = complete.lines();
    match lines.next() {
        None => return Ok(rows),
        Some(h) if h == SWEEP_HEADER => {}
        Some(h) => return Err(CliError::csv(path, format!("unexpected header {h:?}"))),
    }
    for (i, line) in lines.enumerate() {
        let row = SweepRow::parse(line).ok_or_else(|| CliError::csv(path, format!("malformed row {}", i + 2)))?;
        rows.insert(row.key.clone(), row);
    }
    Ok(rows)
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a SyntheticData,
    teachers: &'a BTreeMap<String, Teacher>,
    curated: &'a BTreeMap<(String, usize), UnlabeledGallery>,
    runs: &'a Path,
}

fn run_point(s: &Shared<'_>, point: &GridPoint, key: &str, teacher_label: &str) -> Result<SweepRow, CliError> {
    let start = Instant::now();
    let teacher = &s.teachers[teacher_label];
    let k = point.unlabeled_volume / s.cfg.dataset.classes;
    let unlabeled = &s.curated[&(teacher_label.to_string(), k)];

    let dcfg = TrainConfig {
        weight_decay: point.weight_decay,
        epochs: point.epochs,
        seed: point.seed,
        ..s.cfg.distill.train.clone()
    };
    let fcfg = TrainConfig {
        seed: point.seed,
        ..s.cfg.finetune.clone()
    };
    let opts = s.cfg.distill.options();
    let data = s.data;
    let d = distill_with(
        &teacher.params,
        &s.cfg.student_spec,
        &data.train,
        unlabeled,
        &data.val,
        &dcfg,
        &opts,
    )?;
    let f = finetune(&d.params, &data.train, &data.val, &fcfg)?;
    let (val_acc, val_loss) = evaluate(&f.params, &data.val)?;

    let dir = s.runs.join(key);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_metrics_csv(dir.join("distill_metrics.csv"), &d.metrics)?;
    write_metrics_csv(dir.join("finetune_metrics.csv"), &f.metrics)?;
    save_checkpoint(dir.join("model.ckpt"), &f.checkpoint)?;

    let last = d.metrics.last();
    Ok(SweepRow {
        key: key.to_string(),
        point: point.clone(),
        unlabeled_used: unlabeled.len(),
        distill_train_loss: last.map_or(f64::NAN, |m| m.train_loss),
        distill_val_acc: last.map_or(f64::NAN, |m| m.val_acc),
        bound_proxy: last.map_or(f64::NAN, |m| m.bound_proxy),
        val_acc,
        val_loss,
        seconds: if s.cfg.record_wall_clock {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    })
}

pub fn sweep(cfg: &ExperimentConfig, layout: &Layout, jobs: usize) -> Result<SweepResult, CliError> {
    let points = grid(cfg)?;
    let paths = SweepPaths::new(layout);
    let data = generate_synthetic(&cfg.dataset)?;

    let mut teachers = BTreeMap::new();
    for p in &points {
        let label = p.teacher_label();
        if teachers.contains_key(&label) {
            continue;
        }
        let t = match &p.teacher_checkpoint {
            Some(path) => load_teacher(&layout.resolve(path))?,
            None => default_teacher(cfg, layout, &data)?,
        };
        teachers.insert(label, t);
    }
    let keyed: Vec<(String, String, &GridPoint)> = points
        .iter()
        .map(|p| {
            let label = p.teacher_label();
            (run_key(cfg, p, &teachers[&label].digest), label, p)
        })
        .collect();

    let mut seen = std::collections::HashSet::new();
    if let Some((_, _, p)) = keyed.iter().find(|(key, _, _)| !seen.insert(key.as_str())) {
        return Err(CliError::Invalid {
            key: "[sweep]".into(),
            detail: format!("grid point {} repeats; axis values must be distinct", p.columns("")),
        });
    }

    let mut recorded = recorded_rows(&paths.csv)?;
    let pending: Vec<&(String, String, &GridPoint)> =
        keyed.iter().filter(|(key, _, _)| !recorded.contains_key(key)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;

    let mut needed: Vec<(String, usize)> = pending
        .iter()
        .map(|(_, label, p)| (label.clone(), p.unlabeled_volume / cfg.dataset.classes))
        .collect();
    needed.sort();
    needed.dedup();
    let curated: BTreeMap<(String, usize), UnlabeledGallery> = pool.install(|| {
        needed
            .par_iter()
            .map(|(label, k)| {
                let ccfg = CurationConfig { k: *k, ..cfg.curation };
                let (u, _) = curate(&data.gallery, &data.val, &teachers[label].params, &ccfg)?;
                Ok(((label.clone(), *k), u))
            })
            .collect::<Result<_, CliError>>()
    })?;

    create_parent(&paths.csv)?;
    let fresh = !paths.csv.exists() || fs::metadata(&paths.csv).map_or(true, |m| m.len() == 0);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&paths.csv)
        .map_err(|e| CliError::io(&paths.csv, e))?;
    if fresh {
        writeln!(file, "{SWEEP_HEADER}").map_err(|e| CliError::io(&paths.csv, e))?;
    }
    let writer = Mutex::new(file);
    let shared = Shared {
        cfg,
        data: &data,
        teachers: &teachers,
        curated: &curated,
        runs: &paths.runs,
    };
    let computed: Vec<SweepRow> = pool.install(|| {
        pending
            .par_iter()
            .map(|(key, label, point)| {
                let row = run_point(&shared, point, key, label)?;
                let line = format!("{}\n", row.to_line());
                let mut f = writer.lock().unwrap_or_else(|e| e.into_inner());
                f.write_all(line.as_bytes()).map_err(|e| CliError::io(&paths.csv, e))?;
                Ok(row)
            })
            .collect::<Result<_, CliError>>()
    })?;
    drop(writer);

    let n_computed = computed.len();
    for row in computed {
        recorded.insert(row.key.clone(), row);
    }
    let rows: Vec<SweepRow> = keyed.iter().map(|(key, _, _)| recorded[key].clone()).collect();

    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut curves = format!("{POINT_COLUMNS},{METRICS_HEADER}\n");
    for row in &rows {
        let _ = writeln!(csv, "{}", row.to_line());
        let prefix = row.point.columns(&row.key);
        for stage in ["distill", "finetune"] {
            let path = paths.runs.join(&row.key).join(format!("{stage}_metrics.csv"));
            if !path.is_file() {
                return Err(CliError::MissingArtifact {
                    what: "sweep run metrics",
                    path,
                    producer: "sweep",
                });
            }
            let metrics = read_metrics_csv(&path)?;
            for line in metrics_to_csv(&metrics).lines().skip(1) {
                let _ = writeln!(curves, "{prefix},{line}");
            }
        }
    }
    write_atomic(&paths.csv, csv.as_bytes())?;
    write_atomic(&paths.curves, curves.as_bytes())?;
    Ok(SweepResult {
        rows,
        computed: n_computed,
    })
}
