//! Reference implementations used to check the production code paths.
//!
//! Nothing here shares code with `similarity`, `models` or `evaluator`; the
//! similarity formulas and both forward passes are re-derived with explicit
//! loops so agreement is meaningful.

#![allow(clippy::needless_range_loop)]

use crate::datamodel::ClassId;
use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::scalar::Scalar;
use crate::similarity::SimilarityMetric;

/// Central differences `(L(θ + εe_k) − L(θ − εe_k)) / 2ε` for every `k`.
pub fn finite_diff_grad<F>(mut loss: F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let centre = loss(params)?;
    if !centre.is_finite() {
        return Err(Error::NonFinite(format!("loss at base point is {centre}")));
    }
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        theta[k] = params[k] + eps;
        let plus = loss(&theta)?;
        theta[k] = params[k] - eps;
        let minus = loss(&theta)?;
        theta[k] = params[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss perturbed along coordinate {k}")));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

fn reference_similarity(metric: SimilarityMetric, a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    match metric {
        SimilarityMetric::NegMae => {
            let mut d = 0.0;
            for i in 0..a.len() {
                d += (a[i] - b[i]).abs();
            }
            -d / n
        }
        SimilarityMetric::NegMse => {
            let mut d = 0.0;
            for i in 0..a.len() {
                d += (a[i] - b[i]) * (a[i] - b[i]);
            }
            -d / n
        }
        SimilarityMetric::Cosine => {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for i in 0..a.len() {
                ab += a[i] * b[i];
                aa += a[i] * a[i];
                bb += b[i] * b[i];
            }
            (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
        }
        SimilarityMetric::Ruzicka => {
            let (mut lo, mut hi) = (0.0, 0.0);
            for i in 0..a.len() {
                lo += a[i].min(b[i]);
                hi += a[i].max(b[i]);
            }
            lo / hi
        }
    }
}

/// Scores every candidate, then picks the maximum with lowest-id tie-break.
fn argmax_lowest_id(scores: &[(ClassId, f64)]) -> Result<ClassId> {
    if scores.is_empty() {
        return Err(Error::Empty("empty candidate set"));
    }
    let top = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(scores
        .iter()
        .filter(|s| s.1 == top)
        .map(|s| s.0)
        .min()
        .expect("at least one score equals the maximum"))
}

/// Exhaustive nearest-semantic scan.
pub fn brute_force_nearest<T: Scalar>(
    query: &[T],
    pool: &[(ClassId, &[T])],
    metric: SimilarityMetric,
) -> Result<ClassId> {
    let q: Vec<f64> = query.iter().map(|x| x.as_f64()).collect();
    let scores: Vec<(ClassId, f64)> = pool
        .iter()
        .map(|(c, s)| {
            let s: Vec<f64> = s.iter().map(|x| x.as_f64()).collect();
            (*c, reference_similarity(metric, &q, &s))
        })
        .collect();
    argmax_lowest_id(&scores)
}

/// Compatibility recomputed from first principles with explicit loops.
pub fn reference_compat<T: Scalar>(model: &ModelParams<T>, f: &[T], s: &[T]) -> f64 {
    let f: Vec<f64> = f.iter().map(|x| x.as_f64()).collect();
    let s: Vec<f64> = s.iter().map(|x| x.as_f64()).collect();
    match model {
        ModelParams::Linear { w } => {
            let mut total = 0.0;
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    total += f[i] * w[(i, j)].as_f64() * s[j];
                }
            }
            total
        }
        ModelParams::Nonlinear(net) => {
            let dense = |layer: &crate::models::Layer<T>, x: &[f64], relu: bool| -> Vec<f64> {
                let mut out = Vec::with_capacity(layer.weight.rows());
                for r in 0..layer.weight.rows() {
                    let mut z = layer.bias[r].as_f64();
                    for c in 0..layer.weight.cols() {
                        z += layer.weight[(r, c)].as_f64() * x[c];
                    }
                    out.push(if relu { z.max(0.0) } else { z });
                }
                out
            };
            let hidden = dense(&net.embed_hidden, &s, true);
            let embedded = dense(&net.embed_out, &hidden, true);
            let joint: Vec<f64> = f.iter().chain(&embedded).copied().collect();
            let rel = dense(&net.relation_hidden, &joint, true);
            let z = dense(&net.relation_out, &rel, false)[0];
            1.0 / (1.0 + (-z).exp())
        }
    }
}

/// Exhaustive classification over `label_space` via [`reference_compat`].
pub fn brute_force_classify<T: Scalar>(
    model: &ModelParams<T>,
    f: &[T],
    label_space: &[(ClassId, &[T])],
) -> Result<ClassId> {
    let scores: Vec<(ClassId, f64)> = label_space
        .iter()
        .map(|(c, s)| (*c, reference_compat(model, f, s)))
        .collect();
    argmax_lowest_id(&scores)
}
