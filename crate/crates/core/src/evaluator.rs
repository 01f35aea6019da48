//! GZSL classification over the union label space and the u/s/h protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::datamodel::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::scalar::Scalar;

/// Class whose semantic maximizes `c(f, s)`; ties go to the lowest class id.
pub fn classify<T: Scalar>(
    model: &ModelParams<T>,
    f: &[T],
    label_space: &[(ClassId, &[T])],
) -> Result<ClassId> {
    let mut best: Option<(T, ClassId)> = None;
    for &(class, s) in label_space {
        let c = model.compat(f, s)?;
        let better = match best {
            None => true,
            Some((b, bc)) => c > b || (c == b && class < bc),
        };
        if better {
            best = Some((c, class));
        }
    }
    best.map(|(_, c)| c).ok_or(Error::Empty("empty label space"))
}

/// Per-class `(correct, total)` counts for the classes in `classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassCount {
    pub correct: usize,
    pub total: usize,
}

/// Top-1 accuracy of each class in `classes` over `(true, predicted)` pairs.
pub fn per_class_top1(
    predictions: &[(ClassId, ClassId)],
    classes: &BTreeSet<ClassId>,
) -> Result<BTreeMap<ClassId, f64>> {
    Ok(class_counts(predictions, classes)?
        .into_iter()
        .map(|(c, n)| (c, n.correct as f64 / n.total as f64))
        .collect())
}

fn class_counts(
    predictions: &[(ClassId, ClassId)],
    classes: &BTreeSet<ClassId>,
) -> Result<BTreeMap<ClassId, ClassCount>> {
    let mut counts: BTreeMap<ClassId, ClassCount> = classes
        .iter()
        .map(|&c| (c, ClassCount { correct: 0, total: 0 }))
        .collect();
    for &(truth, pred) in predictions {
        let entry = counts.get_mut(&truth).ok_or_else(|| {
            Error::InvalidArgument(format!("prediction for class {truth} outside the class set"))
        })?;
        entry.total += 1;
        if truth == pred {
            entry.correct += 1;
        }
    }
    if let Some((c, _)) = counts.iter().find(|(_, n)| n.total == 0) {
        return Err(Error::InvalidArgument(format!("class {c} has no examples")));
    }
    Ok(counts)
}

/// `2us/(u+s)`, or 0 when `u + s = 0`.
pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s > 0.0 {
        2.0 * u * s / (u + s)
    } else {
        0.0
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// u, s and h as fractions in `[0, 1]` plus the per-class breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_class_acc: BTreeMap<ClassId, f64>,
    pub counts: BTreeMap<ClassId, ClassCount>,
    pub seen_classes: BTreeSet<ClassId>,
    pub unseen_classes: BTreeSet<ClassId>,
    pub u: f64,
    pub s: f64,
    pub h: f64,
}

impl EvalReport {
    /// Builds the report from per-class counts; u and s average the per-class
    /// accuracies of the unseen and seen classes respectively.
    pub fn from_counts(
        counts: BTreeMap<ClassId, ClassCount>,
        seen_classes: BTreeSet<ClassId>,
        unseen_classes: BTreeSet<ClassId>,
    ) -> Self {
        let per_class_acc: BTreeMap<ClassId, f64> = counts
            .iter()
            .map(|(&c, n)| (c, n.correct as f64 / n.total as f64))
            .collect();
        let u = mean(unseen_classes.iter().map(|c| per_class_acc[c]));
        let s = mean(seen_classes.iter().map(|c| per_class_acc[c]));
        Self {
            h: harmonic_mean(u, s),
            per_class_acc,
            counts,
            seen_classes,
            unseen_classes,
            u,
            s,
        }
    }

    /// Recomputes `(u, s, h)` from `per_class_acc`.
    pub fn recompute(&self) -> (f64, f64, f64) {
        let u = mean(self.unseen_classes.iter().map(|c| self.per_class_acc[c]));
        let s = mean(self.seen_classes.iter().map(|c| self.per_class_acc[c]));
        (u, s, harmonic_mean(u, s))
    }

    /// Aligned text table with u, s, h as percentages to one decimal.
    pub fn table(&self) -> String {
        format!(
            "{:>7} {:>7} {:>7}\n{:>7.1} {:>7.1} {:>7.1}\n",
            "u", "s", "h",
            100.0 * self.u,
            100.0 * self.s,
            100.0 * self.h
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

/// Classifies every seen-test and unseen-test instance against the full
/// seen ∪ unseen label space and reports u, s and h. Averages run over the
/// classes present in each test split.
pub fn gzsl_report<T: Scalar>(model: &ModelParams<T>, dataset: &Dataset<T>) -> Result<EvalReport> {
    let split = &dataset.split;
    if split.test_seen_idx.is_empty() || split.test_unseen_idx.is_empty() {
        return Err(Error::Empty("empty test split"));
    }
    let dims = model.dims();
    if dims.m != dataset.feature_dim() || dims.n != dataset.semantic_dim() {
        return Err(Error::InvalidArgument(format!(
            "model expects m={}, n={} but dataset has m={}, n={}",
            dims.m,
            dims.n,
            dataset.feature_dim(),
            dataset.semantic_dim()
        )));
    }
    let space = dataset.full_label_space();
    let predict = |idx: &[usize]| -> Result<Vec<(ClassId, ClassId)>> {
        idx.iter()
            .map(|&i| Ok((dataset.labels[i], classify(model, dataset.feature(i), &space)?)))
            .collect()
    };
    let seen_preds = predict(&split.test_seen_idx)?;
    let unseen_preds = predict(&split.test_unseen_idx)?;
    let seen: BTreeSet<ClassId> = seen_preds.iter().map(|p| p.0).collect();
    let unseen: BTreeSet<ClassId> = unseen_preds.iter().map(|p| p.0).collect();

    let mut counts = class_counts(&seen_preds, &seen)?;
    counts.extend(class_counts(&unseen_preds, &unseen)?);
    Ok(EvalReport::from_counts(counts, seen, unseen))
}
