use std::collections::BTreeSet;

use softdistill_core::curation::{
    cosine, curate, dedup_against_validation, score_gallery, select_top_k_per_class, CurationConfig, SoftLabelSet,
};
use softdistill_core::data::{generate_synthetic, SyntheticConfig, UnlabeledGallery};
use softdistill_core::nn::{forward, init_mlp, MlpSpec};
use softdistill_core::pipeline::{train_teacher, TrainConfig};
use softdistill_core::{softmax_rows, Stream, Tensor};

/// Per-class sort by (score desc, id asc), written independently of the library.
fn brute_force_top_k(ids: &[u64], argmax: &[usize], score: &[f64], k: usize) -> Vec<u64> {
    let classes = argmax.iter().max().map_or(0, |m| m + 1);
    let mut out = Vec::new();
    for c in 0..classes {
        let mut members: Vec<(f64, u64)> = (0..ids.len())
            .filter(|&i| argmax[i] == c)
            .map(|i| (score[i], ids[i]))
            .collect();
        for i in 1..members.len() {
            let mut j = i;
            while j > 0 {
                let (a, b) = (members[j - 1], members[j]);
                let out_of_order = a.0 < b.0 || (a.0 == b.0 && a.1 > b.1);
                if !out_of_order {
                    break;
                }
                members.swap(j - 1, j);
                j -= 1;
            }
        }
        out.extend(members.iter().take(k).map(|m| m.1));
    }
    out.sort_unstable();
    out
}

#[test]
fn top_k_matches_brute_force_on_1000_samples() {
    let mut rng = Stream::new(1, "topk");
    let n = 1000;
    let k_classes = 7;
    let logits = Tensor::matrix(n, k_classes, (0..n * k_classes).map(|_| 3.0 * rng.normal()).collect()).unwrap();
    let mut probs = softmax_rows(&logits).unwrap();
    // Duplicate some rows so score ties exercise the id tie-break.
    for i in (0..n).step_by(10) {
        let src = probs.row(i).to_vec();
        let d = (i + 5) * k_classes;
        probs.data_mut()[d..d + k_classes].copy_from_slice(&src);
    }
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
    rng.shuffle(&mut ids);
    let soft = SoftLabelSet::from_probs(ids.clone(), probs).unwrap();
    for k in [0, 1, 13, 50, 200, 1000] {
        let got = select_top_k_per_class(&soft, k);
        let want = brute_force_top_k(&ids, &soft.argmax, &soft.max_score, k);
        assert_eq!(got, want, "k = {k}");
    }
}

#[test]
fn scoring_matches_per_sample_loop() {
    let spec = MlpSpec::new(vec![6, 12, 5]).unwrap();
    let t = init_mlp(&spec, 8);
    let mut rng = Stream::new(2, "g");
    let n = 1000;
    let g = UnlabeledGallery::new(
        "g",
        Tensor::matrix(n, 6, (0..n * 6).map(|_| rng.normal()).collect()).unwrap(),
        (0..n as u64).collect(),
    )
    .unwrap();
    let soft = score_gallery(&t, &g).unwrap();
    for i in 0..n {
        let one = Tensor::matrix(1, 6, g.features.row(i).to_vec()).unwrap();
        let z = forward(&t, &one).unwrap();
        let m = z.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.data().iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (c, ev) in e.iter().enumerate() {
            assert!((soft.probs.get(i, c) - ev / s).abs() < 1e-12);
        }
    }
}

#[test]
fn default_task_curation_invariants() {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let spec = MlpSpec::new(vec![32, 64, 10]).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        warmup_epochs: 1,
        ..TrainConfig::teacher()
    };
    let (t, _) = train_teacher(&data.train, &data.val, &spec, &cfg).unwrap().into_parts();
    let ccfg = CurationConfig::default();
    let (u, report) = curate(&data.gallery, &data.val, &t, &ccfg).unwrap();

    let removed: BTreeSet<u64> = report.dedup_removed.iter().copied().collect();
    assert!(!data.planted_duplicates.is_empty());
    assert!(data.planted_duplicates.iter().all(|id| removed.contains(id)));
    assert_eq!(report.gallery_in - report.dedup_removed.len(), report.dedup_out);
    assert_eq!(report.selected, u.len());
    assert!(u.len() <= 10 * ccfg.k);

    // Fairness, exhaustively.
    for i in 0..u.len() {
        for j in 0..data.val.len() {
            assert!(cosine(u.features.row(i), data.val.features.row(j)) < ccfg.similarity_threshold);
        }
    }
    let soft = score_gallery(&t, &u).unwrap();
    let mut counts = [0usize; 10];
    for &c in &soft.argmax {
        counts[c] += 1;
    }
    assert!(counts.iter().all(|&c| c <= ccfg.k));
    assert_eq!(counts.to_vec(), report.class_selected);

    // Idempotent and deterministic.
    let (again, _) = curate(&u, &data.val, &t, &ccfg).unwrap();
    assert_eq!(again.ids, u.ids);
    let (u2, r2) = curate(&data.gallery, &data.val, &t, &ccfg).unwrap();
    assert_eq!(u2, u);
    assert_eq!(r2.to_text(), report.to_text());
}

#[test]
fn disjoint_gallery_with_large_k_keeps_everything() {
    let data = generate_synthetic(&SyntheticConfig {
        gallery_size: 300,
        duplicate_fraction: 0.0,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let t = init_mlp(&MlpSpec::new(vec![32, 10]).unwrap(), 1);
    let cfg = CurationConfig {
        k: 300,
        ..CurationConfig::default()
    };
    let (kept, removed) = dedup_against_validation(&data.gallery, &data.val, &cfg).unwrap();
    assert!(removed.is_empty());
    let (u, _) = curate(&data.gallery, &data.val, &t, &cfg).unwrap();
    assert_eq!(u.ids, kept.ids);
    assert_eq!(u.len(), 300);
}
