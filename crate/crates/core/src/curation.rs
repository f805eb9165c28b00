//! Selection of a useful unlabeled subset from a large gallery.
//!
//! Three stages, in order:
//! 1. drop gallery rows that are near-duplicates of any validation row
//!    (cosine similarity at or above a threshold), so evaluation stays fair;
//! 2. score the survivors with the teacher;
//! 3. keep the `k` most confident rows of each predicted class.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::autograd::softmax_rows;
use crate::data::{LabeledDataset, UnlabeledGallery};
use crate::error::{Error, Result};
use crate::nn::{forward, ModelParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurationConfig {
    /// Rows with cosine similarity ≥ this to any validation row are removed.
    pub similarity_threshold: f64,
    /// Rows kept per predicted class.
    pub k: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.995,
            k: 400,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.similarity_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!(
                "similarity_threshold must lie in (0, 1], got {t}"
            )));
        }
        Ok(())
    }
}

/// Teacher probabilities for a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelSet {
    pub ids: Vec<u64>,
    pub probs: Tensor,
    pub argmax: Vec<usize>,
    pub max_score: Vec<f64>,
}

impl SoftLabelSet {
    pub fn from_probs(ids: Vec<u64>, probs: Tensor) -> Result<Self> {
        let (n, k) = probs.dims2("soft labels")?;
        if ids.len() != n {
            return Err(Error::shape("soft labels", format!("{n} rows but {} ids", ids.len())));
        }
        let mut argmax = Vec::with_capacity(n);
        let mut max_score = Vec::with_capacity(n);
        for row in probs.data().chunks_exact(k) {
            let (c, s) = argmax_lowest(row);
            argmax.push(c);
            max_score.push(s);
        }
        Ok(Self {
            ids,
            probs,
            argmax,
            max_score,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }
}

/// Index and value of the row maximum; ties resolve to the lowest index.
pub fn argmax_lowest(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    (best, row[best])
}

/// Audit trail of one curation run.
#[derive(Debug, Clone, PartialEq)]
pub struct CurationReport {
    pub similarity_threshold: f64,
    pub k: usize,
    pub gallery_in: usize,
    pub dedup_removed: Vec<u64>,
    pub dedup_out: usize,
    pub scored: usize,
    pub selected: usize,
    /// Per predicted class: rows available after dedup.
    pub class_available: Vec<usize>,
    pub class_selected: Vec<usize>,
    /// Per predicted class: lowest max-score among kept rows.
    pub class_min_score: Vec<Option<f64>>,
}

impl CurationReport {
    /// Human-readable `key = value` rendering with one section per stage.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[config]");
        let _ = writeln!(s, "similarity_threshold = {}", self.similarity_threshold);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "\n[dedup]");
        let _ = writeln!(s, "in = {}", self.gallery_in);
        let _ = writeln!(s, "removed = {}", self.dedup_removed.len());
        let _ = writeln!(s, "out = {}", self.dedup_out);
        let ids: Vec<String> = self.dedup_removed.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "removed_ids = {}", ids.join(","));
        let _ = writeln!(s, "\n[select]");
        let _ = writeln!(s, "in = {}", self.scored);
        let _ = writeln!(s, "removed = {}", self.scored - self.selected);
        let _ = writeln!(s, "out = {}", self.selected);
        let _ = writeln!(s, "\n[classes]");
        let _ = writeln!(s, "# class = available, selected, min_score");
        for c in 0..self.class_selected.len() {
            let min = self.class_min_score[c].map_or_else(|| "-".to_string(), |v| format!("{v:.17e}"));
            let _ = writeln!(
                s,
                "{c} = {}, {}, {min}",
                self.class_available[c], self.class_selected[c]
            );
        }
        s
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, defined as 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_with_norms(a, b, dot(a, a), dot(b, b))
}

fn cosine_with_norms(a: &[f64], b: &[f64], sa: f64, sb: f64) -> f64 {
    if sa == 0.0 || sb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (sa * sb).sqrt()
}

/// Largest cosine similarity between each gallery row and any validation row.
pub fn max_similarity_to(gallery: &Tensor, reference: &Tensor) -> Result<Vec<f64>> {
    if gallery.cols() != reference.cols() {
        return Err(Error::shape(
            "dedup",
            format!("gallery dim {} vs validation dim {}", gallery.cols(), reference.cols()),
        ));
    }
    let ref_sq: Vec<f64> = (0..reference.rows())
        .map(|j| dot(reference.row(j), reference.row(j)))
        .collect();
    Ok((0..gallery.rows())
        .into_par_iter()
        .map(|i| {
            let g = gallery.row(i);
            let sg = dot(g, g);
            (0..reference.rows())
                .map(|j| cosine_with_norms(g, reference.row(j), sg, ref_sq[j]))
                .fold(0.0f64, f64::max)
        })
        .collect())
}

/// Removes gallery rows whose cosine similarity to any validation row reaches
/// the threshold. Returns the kept rows and the removed ids in gallery order.
pub fn dedup_against_validation(
    gallery: &UnlabeledGallery,
    val: &LabeledDataset,
    cfg: &CurationConfig,
) -> Result<(UnlabeledGallery, Vec<u64>)> {
    cfg.validate()?;
    let sims = max_similarity_to(&gallery.features, &val.features)?;
    let mut keep = Vec::new();
    let mut removed = Vec::new();
    for (i, s) in sims.into_iter().enumerate() {
        if s >= cfg.similarity_threshold {
            removed.push(gallery.ids[i]);
        } else {
            keep.push(i);
        }
    }
    Ok((gallery.subset(gallery.name.clone(), &keep), removed))
}

const SCORE_BLOCK: usize = 1024;

/// Teacher softmax for every gallery row, computed in blocks.
pub fn score_gallery(teacher: &ModelParams, gallery: &UnlabeledGallery) -> Result<SoftLabelSet> {
    if gallery.dim() != teacher.spec().input_dim() {
        return Err(Error::shape(
            "score_gallery",
            format!(
                "gallery dim {} vs teacher input dim {}",
                gallery.dim(),
                teacher.spec().input_dim()
            ),
        ));
    }
    let probs = teacher_probs(teacher, &gallery.features)?;
    SoftLabelSet::from_probs(gallery.ids.clone(), probs)
}

/// Row-wise teacher softmax of a feature matrix.
pub fn teacher_probs(teacher: &ModelParams, features: &Tensor) -> Result<Tensor> {
    let n = features.rows();
    let k = teacher.spec().num_classes();
    let blocks: Vec<Vec<usize>> = (0..n)
        .collect::<Vec<_>>()
        .chunks(SCORE_BLOCK)
        .map(<[usize]>::to_vec)
        .collect();
    let parts = blocks
        .par_iter()
        .map(|idx| softmax_rows(&forward(teacher, &features.select_rows(idx))?))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(n * k);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::matrix(n, k, data)
}

/// Ids of the `k` highest-scoring rows of every predicted class, ascending.
///
/// Within a class rows are ranked by max score descending, ties by ascending id.
pub fn select_top_k_per_class(soft: &SoftLabelSet, k: usize) -> Vec<u64> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); soft.num_classes()];
    for (i, &c) in soft.argmax.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut selected = Vec::new();
    for members in &mut by_class {
        members.sort_by(|&a, &b| {
            soft.max_score[b]
                .total_cmp(&soft.max_score[a])
                .then(soft.ids[a].cmp(&soft.ids[b]))
        });
        selected.extend(members.iter().take(k).map(|&i| soft.ids[i]));
    }
    selected.sort_unstable();
    selected
}

/// Dedup, score, then keep the per-class top `k`.
pub fn curate(
    gallery: &UnlabeledGallery,
    val: &LabeledDataset,
    teacher: &ModelParams,
    cfg: &CurationConfig,
) -> Result<(UnlabeledGallery, CurationReport)> {
    let (kept, removed) = dedup_against_validation(gallery, val, cfg)?;
    let soft = score_gallery(teacher, &kept)?;
    let selected = select_top_k_per_class(&soft, cfg.k);

    let position: HashMap<u64, usize> = kept.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let positions: Vec<usize> = selected.iter().map(|id| position[id]).collect();
    let curated = kept.subset("curated", &positions);

    let classes = soft.num_classes();
    let mut class_available = vec![0; classes];
    for &c in &soft.argmax {
        class_available[c] += 1;
    }
    let mut class_selected = vec![0; classes];
    let mut class_min_score: Vec<Option<f64>> = vec![None; classes];
    for &p in &positions {
        let c = soft.argmax[p];
        class_selected[c] += 1;
        let s = soft.max_score[p];
        class_min_score[c] = Some(class_min_score[c].map_or(s, |m: f64| m.min(s)));
    }
    let report = CurationReport {
        similarity_threshold: cfg.similarity_threshold,
        k: cfg.k,
        gallery_in: gallery.len(),
        dedup_out: kept.len(),
        dedup_removed: removed,
        scored: soft.len(),
        selected: curated.len(),
        class_available,
        class_selected,
        class_min_score,
    };
    Ok((curated, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_mlp, MlpSpec};

    fn val(rows: &[Vec<f64>]) -> LabeledDataset {
        let x = Tensor::from_rows(rows).unwrap();
        let n = rows.len();
        LabeledDataset::new("v", x, vec![0; n], 2).unwrap()
    }

    fn gallery(rows: &[Vec<f64>]) -> UnlabeledGallery {
        let n = rows.len() as u64;
        UnlabeledGallery::new("g", Tensor::from_rows(rows).unwrap(), (0..n).collect()).unwrap()
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 5.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn dedup_identical_scaled_and_orthogonal() {
        let v = val(&[vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 1.0]]);
        let g = gallery(&[
            vec![1.0, 2.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![2.5, 5.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ]);
        let cfg = CurationConfig::default();
        let (kept, removed) = dedup_against_validation(&g, &v, &cfg).unwrap();
        assert_eq!(removed, vec![0, 2]);
        assert_eq!(kept.ids, vec![1, 3]);

        let ortho = gallery(&[vec![0.0, 0.0, 0.0], vec![2.0, -1.0, 1.0]]);
        let (kept, removed) = dedup_against_validation(&ortho, &v, &cfg).unwrap();
        assert!(removed.is_empty());
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn dedup_threshold_one_still_catches_exact_copies() {
        let v = val(&[vec![0.3, -1.7, 2.2]]);
        let g = gallery(&[vec![0.3, -1.7, 2.2]]);
        let cfg = CurationConfig {
            similarity_threshold: 1.0,
            k: 1,
        };
        assert_eq!(dedup_against_validation(&g, &v, &cfg).unwrap().1, vec![0]);
    }

    #[test]
    fn dedup_dimension_mismatch() {
        let v = val(&[vec![1.0, 2.0]]);
        let g = gallery(&[vec![1.0, 2.0, 3.0]]);
        assert!(dedup_against_validation(&g, &v, &CurationConfig::default()).is_err());
    }

    #[test]
    fn zero_teacher_scores_uniform() {
        let spec = MlpSpec::new(vec![3, 4, 5]).unwrap();
        let g = gallery(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 4.0]]);
        let soft = score_gallery(&ModelParams::zeros(&spec), &g).unwrap();
        assert!(soft.probs.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        assert_eq!(soft.argmax, vec![0, 0]);
        assert!(soft.max_score.iter().all(|&s| (s - 0.2).abs() < 1e-15));
    }

    #[test]
    fn single_sample_matches_direct_forward() {
        let spec = MlpSpec::new(vec![3, 8, 4]).unwrap();
        let t = init_mlp(&spec, 2);
        let g = gallery(&[vec![0.5, -0.2, 1.0]]);
        let soft = score_gallery(&t, &g).unwrap();
        let direct = softmax_rows(&forward(&t, &g.features).unwrap()).unwrap();
        assert_eq!(soft.probs, direct);
    }

    #[test]
    fn top_k_example() {
        // (id, argmax, score): (0,A,.9) (1,A,.8) (2,A,.7) (3,B,.6) (4,B,.95)
        let probs = Tensor::from_rows(&[
            vec![0.9, 0.1],
            vec![0.8, 0.2],
            vec![0.7, 0.3],
            vec![0.4, 0.6],
            vec![0.05, 0.95],
        ])
        .unwrap();
        let soft = SoftLabelSet::from_probs((0..5).collect(), probs).unwrap();
        assert_eq!(select_top_k_per_class(&soft, 2), vec![0, 1, 3, 4]);
        assert!(select_top_k_per_class(&soft, 0).is_empty());
        assert_eq!(select_top_k_per_class(&soft, 100), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn ties_prefer_lower_id() {
        let probs = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.7, 0.3], vec![0.7, 0.3]]).unwrap();
        let soft = SoftLabelSet::from_probs(vec![9, 4, 2], probs).unwrap();
        assert_eq!(soft.argmax, vec![0, 0, 0]);
        assert_eq!(select_top_k_per_class(&soft, 1), vec![2]);
    }

    #[test]
    fn curate_gallery_equal_to_validation_is_empty() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let v = val(&rows);
        let g = gallery(&rows);
        let t = init_mlp(&MlpSpec::new(vec![2, 2]).unwrap(), 0);
        let (u, report) = curate(&g, &v, &t, &CurationConfig::default()).unwrap();
        assert!(u.is_empty());
        assert_eq!(report.dedup_removed, vec![0, 1, 2]);
        assert_eq!(report.dedup_out, 0);
        assert!(report.to_text().contains("removed_ids = 0,1,2"));
    }

    #[test]
    fn invalid_threshold() {
        let cfg = CurationConfig {
            similarity_threshold: 0.0,
            k: 1,
        };
        assert!(cfg.validate().is_err());
    }
}
