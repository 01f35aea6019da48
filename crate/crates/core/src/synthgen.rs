//! Deterministic synthetic GZSL bundles.
//!
//! Seen-class attributes are uniform on `[0, 1)^n`. Each unseen class draws a
//! fresh attribute vector `r`, finds the seen class nearest to it (L1), and
//! takes `corr · nearest + (1 − corr) · r`. Features come from one hidden
//! linear map `G ∈ R^{m×n}`: `f = G s + σ ε`. All values are rounded to `f32`
//! so a generated dataset round-trips through the bundle format exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datamodel::{ClassId, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    /// Feature dimension.
    pub m: usize,
    /// Semantic dimension.
    pub n: usize,
    /// 1 places every unseen class exactly on its nearest seen class.
    pub attribute_corr: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_seen: 20,
            n_unseen: 5,
            per_class_train: 50,
            per_class_test: 20,
            m: 32,
            n: 12,
            attribute_corr: 0.7,
            noise_sigma: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_seen < 2 {
            return bad(format!("n_seen must be ≥ 2, got {}", self.n_seen));
        }
        if self.n_unseen < 1 || self.per_class_train < 1 || self.per_class_test < 1 {
            return bad("class and instance counts must be ≥ 1".into());
        }
        if self.m < 2 || self.n < 2 {
            return bad(format!("dimensions must be ≥ 2, got m={} n={}", self.m, self.n));
        }
        if !(0.0..=1.0).contains(&self.attribute_corr) {
            return bad(format!("attribute_corr must lie in [0, 1], got {}", self.attribute_corr));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and ≥ 0, got {}", self.noise_sigma));
        }
        Ok(())
    }
}

fn round_f32(x: f64) -> f64 {
    f64::from(x as f32)
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Generates a dataset; class ids `0..n_seen` are seen, the rest unseen.
pub fn gen_dataset<T: Scalar>(spec: &SynthSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (m, n) = (spec.m, spec.n);

    let mut semantics: Vec<Vec<f64>> = (0..spec.n_seen)
        .map(|_| (0..n).map(|_| round_f32(rng.random::<f64>())).collect())
        .collect();
    for _ in 0..spec.n_unseen {
        let fresh: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let nearest = semantics[..spec.n_seen]
            .iter()
            .min_by(|a, b| l1(a, &fresh).total_cmp(&l1(b, &fresh)))
            .expect("at least two seen classes")
            .clone();
        let c = spec.attribute_corr;
        semantics.push(
            nearest
                .iter()
                .zip(&fresh)
                .map(|(&s, &r)| round_f32(c * s + (1.0 - c) * r))
                .collect(),
        );
    }

    let g_scale = 1.0 / (n as f64).sqrt();
    let g: Vec<f64> = (0..m * n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * g_scale)
        .collect();
    let project = |s: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| g[i * n..(i + 1) * n].iter().zip(s).map(|(a, b)| a * b).sum())
            .collect()
    };

    let mut features: Vec<T> = Vec::new();
    let mut labels = Vec::new();
    let mut split = SplitSpec::default();
    let mut push = |class: usize, rng: &mut ChaCha8Rng, features: &mut Vec<T>| {
        let mean = project(&semantics[class]);
        for mu in mean {
            let noise = if spec.noise_sigma > 0.0 {
                spec.noise_sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            features.push(T::of(round_f32(mu + noise)));
        }
        labels.push(ClassId(class as u32));
        labels.len() - 1
    };

    for c in 0..spec.n_seen {
        split.seen_classes.insert(ClassId(c as u32));
        for _ in 0..spec.per_class_train {
            let i = push(c, &mut rng, &mut features);
            split.train_idx.push(i);
        }
        for _ in 0..spec.per_class_test {
            let i = push(c, &mut rng, &mut features);
            split.test_seen_idx.push(i);
        }
    }
    for c in spec.n_seen..spec.n_seen + spec.n_unseen {
        split.unseen_classes.insert(ClassId(c as u32));
        for _ in 0..spec.per_class_test {
            let i = push(c, &mut rng, &mut features);
            split.test_unseen_idx.push(i);
        }
    }

    let instances = labels.len();
    let sem_flat: Vec<T> = semantics.iter().flatten().map(|&x| T::of(x)).collect();
    let dataset = Dataset {
        features: Matrix::from_vec(instances, m, features)?,
        labels,
        semantics: Matrix::from_vec(spec.n_seen + spec.n_unseen, n, sem_flat)?,
        split,
        semantic_scale: 1.0,
    };
    debug_assert!(dataset.validate().is_valid());
    Ok(dataset)
}
