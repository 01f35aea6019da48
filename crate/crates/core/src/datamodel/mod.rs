//! Dataset, split and class containers, plus the on-disk bundle format.

mod bundle;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub use bundle::{load_bundle, save_bundle, BUNDLE_VERSION, LABELS_MAGIC, MATRIX_MAGIC};

/// Dense class identifier; doubles as the row index into the semantics table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub u32);

impl ClassId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Seen/unseen class partition and instance index lists.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitSpec {
    pub seen_classes: BTreeSet<ClassId>,
    pub unseen_classes: BTreeSet<ClassId>,
    pub train_idx: Vec<usize>,
    pub test_seen_idx: Vec<usize>,
    pub test_unseen_idx: Vec<usize>,
}

/// Instance features, labels, per-class semantic vectors and the split.
///
/// `semantics` row `c` is the semantic vector of class `ClassId(c)`.
/// `semantic_scale` records the cumulative factor applied by
/// [`Dataset::scale_semantics`] (1.0 for raw attributes).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub features: Matrix<T>,
    pub labels: Vec<ClassId>,
    pub semantics: Matrix<T>,
    pub split: SplitSpec,
    pub semantic_scale: f64,
}

/// One violated dataset invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    EmptyDataset,
    LabelCount { labels: usize, instances: usize },
    NonFiniteFeature { instance: usize, dim: usize },
    NonFiniteSemantic { class: ClassId, dim: usize },
    UnknownClass(ClassId),
    ClassBothSeenAndUnseen(ClassId),
    IndexOutOfRange { section: &'static str, index: usize },
    DuplicateIndex { section: &'static str, index: usize },
    OverlappingSplit { index: usize },
    UnseenClassInTrain { instance: usize, class: ClassId },
    NotSeenClass { section: &'static str, instance: usize, class: ClassId },
    NotUnseenClass { instance: usize, class: ClassId },
    EmptySplit(&'static str),
    TooFewSeenClasses(usize),
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::EmptyDataset => write!(f, "empty dataset"),
            Finding::LabelCount { labels, instances } => {
                write!(f, "label count {labels} does not match instance count {instances}")
            }
            Finding::NonFiniteFeature { instance, dim } => {
                write!(f, "non-finite feature at ({instance},{dim})")
            }
            Finding::NonFiniteSemantic { class, dim } => {
                write!(f, "non-finite semantic at ({class},{dim})")
            }
            Finding::UnknownClass(c) => write!(f, "unknown class id {c}"),
            Finding::ClassBothSeenAndUnseen(c) => write!(f, "class {c} is both seen and unseen"),
            Finding::IndexOutOfRange { section, index } => {
                write!(f, "{section} index {index} out of range")
            }
            Finding::DuplicateIndex { section, index } => {
                write!(f, "{section} index {index} listed twice")
            }
            Finding::OverlappingSplit { index } => {
                write!(f, "overlapping split: instance {index} in both train and test_seen")
            }
            Finding::UnseenClassInTrain { instance, class } => {
                write!(f, "unseen class in train (instance {instance}, class {class})")
            }
            Finding::NotSeenClass {
                section,
                instance,
                class,
            } => write!(f, "{section} instance {instance} has class {class} outside the seen set"),
            Finding::NotUnseenClass { instance, class } => {
                write!(f, "test_unseen instance {instance} has class {class} outside the unseen set")
            }
            Finding::EmptySplit(section) => write!(f, "empty split section {section}"),
            Finding::TooFewSeenClasses(n) => write!(f, "need at least 2 seen classes, found {n}"),
        }
    }
}

/// Findings from [`Dataset::validate`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidDataset(self.to_string()))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, finding) in self.findings.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{finding}")?;
        }
        Ok(())
    }
}

impl<T: Scalar> Dataset<T> {
    pub fn num_instances(&self) -> usize {
        self.features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.semantics.rows()
    }

    /// Feature dimension `m`.
    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Semantic dimension `n`.
    pub fn semantic_dim(&self) -> usize {
        self.semantics.cols()
    }

    pub fn semantic(&self, class: ClassId) -> &[T] {
        self.semantics.row(class.index())
    }

    pub fn feature(&self, instance: usize) -> &[T] {
        self.features.row(instance)
    }

    /// `(class, semantic)` pairs for the given classes, in ascending class order.
    pub fn label_space<'a>(
        &'a self,
        classes: impl IntoIterator<Item = &'a ClassId>,
    ) -> Vec<(ClassId, &'a [T])> {
        let mut ids: Vec<ClassId> = classes.into_iter().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().map(|c| (c, self.semantic(c))).collect()
    }

    /// Label space over seen ∪ unseen classes.
    pub fn full_label_space(&self) -> Vec<(ClassId, &[T])> {
        self.label_space(self.split.seen_classes.iter().chain(&self.split.unseen_classes))
    }

    /// Checks every dataset invariant and lists each violation found.
    pub fn validate(&self) -> ValidationReport {
        let mut out = Vec::new();
        let n_inst = self.num_instances();
        let n_cls = self.num_classes();

        if n_inst == 0 {
            out.push(Finding::EmptyDataset);
        }
        if self.labels.len() != n_inst {
            out.push(Finding::LabelCount {
                labels: self.labels.len(),
                instances: n_inst,
            });
        }
        for i in 0..n_inst {
            if let Some(j) = self.features.row(i).iter().position(|x| !x.is_finite()) {
                out.push(Finding::NonFiniteFeature { instance: i, dim: j });
            }
        }
        for c in 0..n_cls {
            if let Some(j) = self.semantics.row(c).iter().position(|x| !x.is_finite()) {
                out.push(Finding::NonFiniteSemantic {
                    class: ClassId(c as u32),
                    dim: j,
                });
            }
        }

        let mut unknown = BTreeSet::new();
        for &l in &self.labels {
            if l.index() >= n_cls {
                unknown.insert(l);
            }
        }
        let split = &self.split;
        for &c in split.seen_classes.iter().chain(&split.unseen_classes) {
            if c.index() >= n_cls {
                unknown.insert(c);
            }
        }
        out.extend(unknown.into_iter().map(Finding::UnknownClass));

        for &c in split.seen_classes.intersection(&split.unseen_classes) {
            out.push(Finding::ClassBothSeenAndUnseen(c));
        }
        if split.seen_classes.len() < 2 {
            out.push(Finding::TooFewSeenClasses(split.seen_classes.len()));
        }

        let sections: [(&'static str, &[usize]); 3] = [
            ("train", &split.train_idx),
            ("test_seen", &split.test_seen_idx),
            ("test_unseen", &split.test_unseen_idx),
        ];
        for (name, idx) in sections {
            if idx.is_empty() {
                out.push(Finding::EmptySplit(name));
            }
            let mut seen = BTreeSet::new();
            for &i in idx {
                if i >= n_inst {
                    out.push(Finding::IndexOutOfRange {
                        section: name,
                        index: i,
                    });
                } else if !seen.insert(i) {
                    out.push(Finding::DuplicateIndex {
                        section: name,
                        index: i,
                    });
                }
            }
        }

        let train: BTreeSet<usize> = split.train_idx.iter().copied().collect();
        for &i in &split.test_seen_idx {
            if train.contains(&i) {
                out.push(Finding::OverlappingSplit { index: i });
            }
        }

        let label_of = |i: usize| self.labels.get(i).copied();
        for &i in &split.train_idx {
            if let Some(c) = label_of(i) {
                if split.unseen_classes.contains(&c) {
                    out.push(Finding::UnseenClassInTrain { instance: i, class: c });
                } else if !split.seen_classes.contains(&c) {
                    out.push(Finding::NotSeenClass {
                        section: "train",
                        instance: i,
                        class: c,
                    });
                }
            }
        }
        for &i in &split.test_seen_idx {
            if let Some(c) = label_of(i) {
                if !split.seen_classes.contains(&c) {
                    out.push(Finding::NotSeenClass {
                        section: "test_seen",
                        instance: i,
                        class: c,
                    });
                }
            }
        }
        for &i in &split.test_unseen_idx {
            if let Some(c) = label_of(i) {
                if !split.unseen_classes.contains(&c) {
                    out.push(Finding::NotUnseenClass { instance: i, class: c });
                }
            }
        }

        ValidationReport { findings: out }
    }

    /// Multiplies every semantic vector by one global factor so that the mean
    /// Euclidean norm over classes equals `target_mean_norm`.
    pub fn scale_semantics(&self, target_mean_norm: f64) -> Result<Self> {
        if !(target_mean_norm > 0.0 && target_mean_norm.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "target mean norm must be a positive real, got {target_mean_norm}"
            )));
        }
        let k = scale_factor_for(
            (0..self.num_classes()).map(|c| self.semantics.row(c)),
            target_mean_norm,
        )?;
        Ok(self.with_semantic_factor(k))
    }

    /// Copy with semantics multiplied by `k` and the factor folded into
    /// `semantic_scale`.
    pub fn with_semantic_factor(&self, k: f64) -> Self {
        let kt = T::of(k);
        let mut out = self.clone();
        out.semantics = self.semantics.map(|x| x * kt);
        out.semantic_scale *= k;
        out
    }

    /// Converts every stored value to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            features: self.features.map(|x| U::of(x.as_f64())),
            labels: self.labels.clone(),
            semantics: self.semantics.map(|x| U::of(x.as_f64())),
            split: self.split.clone(),
            semantic_scale: self.semantic_scale,
        }
    }
}

/// Factor `k` such that the mean Euclidean norm of `k·v` over `vectors`
/// equals `target`. Norms are accumulated in 64-bit.
pub fn scale_factor_for<'a, T: Scalar>(
    vectors: impl IntoIterator<Item = &'a [T]>,
    target: f64,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in vectors {
        sum += v.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
        count += 1;
    }
    if count == 0 || sum <= 0.0 || !sum.is_finite() {
        return Err(Error::InvalidDataset("degenerate semantics".into()));
    }
    Ok(target / (sum / count as f64))
}
