use super::{LabeledDataset, UnlabeledGallery};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Isotropic Gaussian mixture with `classes` labeled classes plus
/// `extra_classes` that only appear in the unlabeled gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub extra_classes: usize,
    pub dims: usize,
    pub mean_scale: f64,
    pub stddev: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub gallery_size: usize,
    /// Fraction of gallery rows replaced by exact copies of validation rows.
    pub duplicate_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            extra_classes: 10,
            dims: 32,
            mean_scale: 0.6,
            stddev: 1.0,
            train_size: 2000,
            val_size: 2000,
            gallery_size: 20_000,
            duplicate_fraction: 0.01,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return bad(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.dims < 2 {
            return bad(format!("dims must be >= 2, got {}", self.dims));
        }
        for (name, n) in [
            ("train_size", self.train_size),
            ("val_size", self.val_size),
            ("gallery_size", self.gallery_size),
        ] {
            if n < self.classes {
                return bad(format!("{name} {n} is below the class count {}", self.classes));
            }
        }
        if !(self.mean_scale > 0.0 && self.mean_scale.is_finite()) {
            return bad(format!("mean_scale must be > 0, got {}", self.mean_scale));
        }
        if !(self.stddev > 0.0 && self.stddev.is_finite()) {
            return bad(format!("stddev must be > 0, got {}", self.stddev));
        }
        if !(0.0..=1.0).contains(&self.duplicate_fraction) {
            return bad(format!(
                "duplicate_fraction must lie in [0, 1], got {}",
                self.duplicate_fraction
            ));
        }
        Ok(())
    }
}

/// The generating mixture, kept so tests can compute Bayes-optimal predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOracle {
    /// `(classes + extra_classes) × dims`; the first `classes` rows are labeled.
    pub means: Tensor,
    pub stddev: f64,
    pub classes: usize,
}

impl MixtureOracle {
    /// Log density of `x` under class `c`.
    pub fn log_density(&self, x: &[f64], c: usize) -> f64 {
        let d = x.len() as f64;
        let var = self.stddev * self.stddev;
        let sq: f64 = x.iter().zip(self.means.row(c)).map(|(a, m)| (a - m) * (a - m)).sum();
        -0.5 * sq / var - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln()
    }

    /// Most probable labeled class under equal priors; ties go to the lower index.
    pub fn bayes_predict(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for c in 0..self.classes {
            let ll = self.log_density(x, c);
            if ll > best_ll {
                best = c;
                best_ll = ll;
            }
        }
        best
    }

    pub fn bayes_accuracy(&self, data: &LabeledDataset) -> f64 {
        let correct = (0..data.len())
            .filter(|&i| self.bayes_predict(data.features.row(i)) == data.labels[i])
            .count();
        correct as f64 / data.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub gallery: UnlabeledGallery,
    pub oracle: MixtureOracle,
    /// Gallery ids whose rows are exact copies of validation rows, ascending.
    pub planted_duplicates: Vec<u64>,
    /// Generating class of each gallery row (may be one of the extra classes).
    pub gallery_classes: Vec<usize>,
}

fn sample(means: &Tensor, classes: usize, n: usize, stddev: f64, rng: &mut Stream) -> (Tensor, Vec<usize>) {
    let d = means.cols();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        data.extend(means.row(c).iter().map(|m| m + stddev * rng.normal()));
    }
    (Tensor::matrix(n, d, data).expect("sized"), labels)
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let total_classes = cfg.classes + cfg.extra_classes;
    let mut rng = Stream::new(cfg.seed, "synthetic/means");
    let means_data = (0..total_classes * cfg.dims)
        .map(|_| cfg.mean_scale * rng.normal())
        .collect();
    let means = Tensor::matrix(total_classes, cfg.dims, means_data)?;

    let (tx, ty) = sample(
        &means,
        cfg.classes,
        cfg.train_size,
        cfg.stddev,
        &mut Stream::new(cfg.seed, "synthetic/train"),
    );
    let (vx, vy) = sample(
        &means,
        cfg.classes,
        cfg.val_size,
        cfg.stddev,
        &mut Stream::new(cfg.seed, "synthetic/val"),
    );
    let (mut gx, mut gclasses) = sample(
        &means,
        total_classes,
        cfg.gallery_size,
        cfg.stddev,
        &mut Stream::new(cfg.seed, "synthetic/gallery"),
    );

    let mut plant = Stream::new(cfg.seed, "synthetic/plant");
    let n_plant = (cfg.gallery_size as f64 * cfg.duplicate_fraction).round() as usize;
    let mut positions = plant.permutation(cfg.gallery_size);
    positions.truncate(n_plant);
    positions.sort_unstable();
    let d = cfg.dims;
    for &pos in &positions {
        let src = plant.below(cfg.val_size as u64) as usize;
        gx.data_mut()[pos * d..(pos + 1) * d].copy_from_slice(vx.row(src));
        gclasses[pos] = vy[src];
    }

    let train = LabeledDataset::new("train", tx, ty, cfg.classes)?;
    let val = LabeledDataset::new("val", vx, vy, cfg.classes)?;
    let gallery = UnlabeledGallery::new("gallery", gx, (0..cfg.gallery_size as u64).collect())?;
    Ok(SyntheticData {
        train,
        val,
        gallery,
        oracle: MixtureOracle {
            means,
            stddev: cfg.stddev,
            classes: cfg.classes,
        },
        planted_duplicates: positions.iter().map(|&p| p as u64).collect(),
        gallery_classes: gclasses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            classes: 3,
            extra_classes: 2,
            dims: 4,
            train_size: 31,
            val_size: 20,
            gallery_size: 200,
            duplicate_fraction: 0.05,
            seed: 5,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn sizes_and_balance() {
        let data = generate_synthetic(&small()).unwrap();
        assert_eq!(data.train.len(), 31);
        assert_eq!(data.val.len(), 20);
        assert_eq!(data.gallery.len(), 200);
        let counts = data.train.class_counts();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
        assert_eq!(data.oracle.means.shape(), &[5, 4]);
    }

    #[test]
    fn planted_rows_copy_validation_rows() {
        let data = generate_synthetic(&small()).unwrap();
        assert_eq!(data.planted_duplicates.len(), 10);
        for &id in &data.planted_duplicates {
            let row = data.gallery.features.row(id as usize);
            assert!((0..data.val.len()).any(|j| data.val.features.row(j) == row));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            generate_synthetic(&small()).unwrap(),
            generate_synthetic(&small()).unwrap()
        );
        let other = SyntheticConfig { seed: 6, ..small() };
        assert_ne!(
            generate_synthetic(&small()).unwrap().train,
            generate_synthetic(&other).unwrap().train
        );
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SyntheticConfig { classes: 1, ..small() },
            SyntheticConfig { dims: 1, ..small() },
            SyntheticConfig {
                train_size: 2,
                ..small()
            },
            SyntheticConfig { stddev: 0.0, ..small() },
            SyntheticConfig {
                duplicate_fraction: 1.5,
                ..small()
            },
        ] {
            assert!(generate_synthetic(&cfg).is_err());
        }
    }

    #[test]
    fn bayes_prefers_nearest_mean() {
        let oracle = MixtureOracle {
            means: Tensor::matrix(2, 2, vec![0.0, 0.0, 4.0, 0.0]).unwrap(),
            stddev: 1.0,
            classes: 2,
        };
        assert_eq!(oracle.bayes_predict(&[1.0, 3.0]), 0);
        assert_eq!(oracle.bayes_predict(&[3.0, -3.0]), 1);
        assert_eq!(oracle.bayes_predict(&[2.0, 0.0]), 0);
    }
}
