//! Semantic similarity functions and the nearest-semantic lookup used by
//! semantic borrowing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::ClassId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    /// Negative mean absolute error; same argmax as the L1 distance.
    #[default]
    NegMae,
    NegMse,
    Cosine,
    Ruzicka,
}

impl SimilarityMetric {
    pub const ALL: [SimilarityMetric; 4] = [
        SimilarityMetric::NegMae,
        SimilarityMetric::NegMse,
        SimilarityMetric::Cosine,
        SimilarityMetric::Ruzicka,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityMetric::NegMae => "neg_mae",
            SimilarityMetric::NegMse => "neg_mse",
            SimilarityMetric::Cosine => "cosine",
            SimilarityMetric::Ruzicka => "ruzicka",
        }
    }

    pub fn similarity<T: Scalar>(self, a: &[T], b: &[T]) -> Result<T> {
        match self {
            SimilarityMetric::NegMae => neg_mae(a, b),
            SimilarityMetric::NegMse => neg_mse(a, b),
            SimilarityMetric::Cosine => cosine(a, b),
            SimilarityMetric::Ruzicka => ruzicka(a, b),
        }
    }
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown similarity metric {s:?} (expected neg_mae, neg_mse, cosine or ruzicka)"
                ))
            })
    }
}

fn check_len<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "semantic vector length",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("empty semantic vector"));
    }
    Ok(())
}

/// `-(1/n) Σ |a_i - b_i|`.
pub fn neg_mae<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_len(a, b)?;
    let sum = a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y).abs());
    Ok(-(sum / T::of_usize(a.len())))
}

/// `-(1/n) Σ (a_i - b_i)²`.
pub fn neg_mse<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_len(a, b)?;
    let sum = a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    });
    Ok(-(sum / T::of_usize(a.len())))
}

pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_len(a, b)?;
    let na = crate::scalar::l2_norm(a);
    let nb = crate::scalar::l2_norm(b);
    if na == T::zero() || nb == T::zero() {
        return Err(Error::InvalidArgument(
            "cosine similarity of a zero vector".into(),
        ));
    }
    let c = crate::scalar::dot(a, b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

/// `Σ min(a_i, b_i) / Σ max(a_i, b_i)` over nonnegative vectors.
pub fn ruzicka<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_len(a, b)?;
    let mut num = T::zero();
    let mut den = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        if x < T::zero() || y < T::zero() {
            return Err(Error::InvalidArgument(
                "ruzicka similarity requires nonnegative entries".into(),
            ));
        }
        num += x.min(y);
        den += x.max(y);
    }
    if den == T::zero() {
        return Err(Error::InvalidArgument(
            "ruzicka similarity of two all-zero vectors".into(),
        ));
    }
    Ok(num / den)
}

/// Pool member most similar to `query`, skipping `exclude_class`.
///
/// Ties go to the lowest class id regardless of pool order.
pub fn nearest_semantic<'a, T: Scalar>(
    query: &[T],
    pool: &[(ClassId, &'a [T])],
    metric: SimilarityMetric,
    exclude_class: Option<ClassId>,
) -> Result<(ClassId, &'a [T])> {
    let mut best: Option<(T, ClassId, &'a [T])> = None;
    for &(class, sem) in pool {
        if Some(class) == exclude_class {
            continue;
        }
        let sim = metric.similarity(query, sem)?;
        let better = match best {
            None => true,
            Some((b, bc, _)) => sim > b || (sim == b && class < bc),
        };
        if better {
            best = Some((sim, class, sem));
        }
    }
    best.map(|(_, c, s)| (c, s))
        .ok_or(Error::Empty("borrowing pool empty after exclusion"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn neg_mae_examples() {
        assert_eq!(neg_mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(neg_mae(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), -1.0);
        assert_eq!(neg_mae(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), -1.5);
    }

    #[test]
    fn other_metric_examples() {
        assert_eq!(ruzicka(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(ruzicka(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(neg_mse(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), -5.0);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(
            neg_mae(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(ruzicka(&[-1.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(ruzicka(&[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn nearest_examples() {
        let c0 = [0.0, 0.0];
        let c1 = [1.0, 1.0];
        let pool = [(ClassId(0), &c0[..]), (ClassId(1), &c1[..])];
        let (c, _) = nearest_semantic(&[0.9, 1.2], &pool, SimilarityMetric::NegMae, None).unwrap();
        assert_eq!(c, ClassId(1));

        let c3 = [0.3, 0.7];
        let c5 = [1.0, 0.0];
        let pool = [(ClassId(5), &c5[..]), (ClassId(3), &c3[..])];
        for m in SimilarityMetric::ALL {
            let (c, s) = nearest_semantic(&c3, &pool, m, None).unwrap();
            assert_eq!((c, s), (ClassId(3), &c3[..]), "{m}");
        }
    }

    #[test]
    fn nearest_ties_go_to_lowest_id() {
        let a = [0.0, 2.0];
        let b = [2.0, 0.0];
        let pool = [(ClassId(7), &a[..]), (ClassId(2), &b[..])];
        let (c, _) = nearest_semantic(&[1.0, 1.0], &pool, SimilarityMetric::NegMae, None).unwrap();
        assert_eq!(c, ClassId(2));
    }

    #[test]
    fn exclusion_and_empty_pool() {
        let a = [1.0, 1.0];
        let b = [0.0, 0.0];
        let pool = [(ClassId(0), &a[..]), (ClassId(1), &b[..])];
        let (c, _) =
            nearest_semantic(&a, &pool, SimilarityMetric::NegMae, Some(ClassId(0))).unwrap();
        assert_eq!(c, ClassId(1));
        let only = [(ClassId(0), &a[..])];
        assert!(matches!(
            nearest_semantic(&a, &only, SimilarityMetric::NegMae, Some(ClassId(0))),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in SimilarityMetric::ALL {
            assert_eq!(m.name().parse::<SimilarityMetric>().unwrap(), m);
        }
        assert!("l2".parse::<SimilarityMetric>().is_err());
    }

    fn pair(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(0.01f64..5.0, len),
            prop::collection::vec(0.01f64..5.0, len),
        )
    }

    proptest! {
        #[test]
        fn metrics_symmetric((a, b) in (1usize..10).prop_flat_map(pair)) {
            for m in SimilarityMetric::ALL {
                prop_assert_eq!(m.similarity(&a, &b).unwrap(), m.similarity(&b, &a).unwrap());
            }
        }

        #[test]
        fn metric_ranges((a, b) in (1usize..10).prop_flat_map(pair)) {
            prop_assert!(neg_mae(&a, &b).unwrap() <= 0.0);
            prop_assert!(neg_mse(&a, &b).unwrap() <= 0.0);
            let c = cosine(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            let r = ruzicka(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(ruzicka(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn neg_mae_zero_iff_equal((a, b) in (1usize..10).prop_flat_map(pair)) {
            prop_assert_eq!(neg_mae(&a, &b).unwrap() == 0.0, a == b);
            prop_assert_eq!(neg_mae(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn argmax_invariant_under_common_scaling(
            query in prop::collection::vec(0.0f64..4.0, 4),
            pool in prop::collection::vec(prop::collection::vec(0.0f64..4.0, 4), 2..20),
            k in 0.1f64..10.0,
        ) {
            // Dyadic-ish values make scaled comparisons exact enough that
            // genuine ties stay ties; reject the rare near-tie cases.
            let query: Vec<f64> = query.iter().map(|x| (x * 8.0).round() / 8.0 + 0.125).collect();
            let pool: Vec<Vec<f64>> = pool
                .iter()
                .map(|v| v.iter().map(|x| (x * 8.0).round() / 8.0 + 0.125).collect())
                .collect();
            let entries: Vec<(ClassId, &[f64])> =
                pool.iter().enumerate().map(|(i, v)| (ClassId(i as u32), v.as_slice())).collect();
            let sq: Vec<f64> = query.iter().map(|x| x * k).collect();
            let sp: Vec<Vec<f64>> = pool.iter().map(|v| v.iter().map(|x| x * k).collect()).collect();
            let sentries: Vec<(ClassId, &[f64])> =
                sp.iter().enumerate().map(|(i, v)| (ClassId(i as u32), v.as_slice())).collect();
            for m in SimilarityMetric::ALL {
                let mut sims: Vec<f64> =
                    pool.iter().map(|v| m.similarity(&query, v).unwrap()).collect();
                sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let near_tie = sims.len() > 1
                    && sims[0] != sims[1]
                    && (sims[0] - sims[1]).abs() < 1e-9 * (1.0 + sims[0].abs());
                prop_assume!(!near_tie);
                let base = nearest_semantic(&query, &entries, m, None).unwrap().0;
                let scaled = nearest_semantic(&sq, &sentries, m, None).unwrap().0;
                if base != scaled {
                    // Only acceptable if both are exact ties in the unscaled space.
                    let sb = m.similarity(&query, &pool[base.index()]).unwrap();
                    let ss = m.similarity(&query, &pool[scaled.index()]).unwrap();
                    prop_assert!((sb - ss).abs() <= 1e-12 * (1.0 + sb.abs()), "{m}: {base} vs {scaled}");
                }
            }
        }
    }
}
