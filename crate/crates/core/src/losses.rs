//! Ranking and squared-error losses, semantic borrowing, and the overall
//! objective.
//!
//! The per-anchor terms are:
//!
//! | term | linear model | nonlinear model |
//! |------|--------------|-----------------|
//! | base | feature-side + semantic-side hinge | squared error vs {0, 1} |
//! | borrow | hinge with the borrowed semantic as positive | squared error with the borrowed semantic as positive |
//!
//! and the objective over one batch pair is
//! `Σ base + α Σ borrow + β · decay(θ)` with `decay = ‖θ‖₂` or `‖θ‖₂²`.
//!
//! Semantics inside a batch are deduplicated by class. Wrong features for an
//! anchor are the batch features of other classes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::ClassId;
use crate::error::{Error, Result};
use crate::models::{CompatibilityOutput, ModelParams, Variant};
use crate::scalar::{l2_norm, Scalar};
use crate::similarity::{nearest_semantic, SimilarityMetric};

/// One training example of the anchor batch.
#[derive(Debug, Clone, Copy)]
pub struct Anchor<'a, T> {
    pub feature: &'a [T],
    pub semantic: &'a [T],
    pub class: ClassId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `‖θ‖₂`
    #[default]
    Norm,
    /// `‖θ‖₂²`
    Squared,
}

impl DecayMode {
    pub fn name(self) -> &'static str {
        match self {
            DecayMode::Norm => "norm",
            DecayMode::Squared => "squared",
        }
    }
}

impl fmt::Display for DecayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecayMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "norm" => Ok(DecayMode::Norm),
            "squared" => Ok(DecayMode::Squared),
            _ => Err(Error::InvalidArgument(format!(
                "unknown decay mode {s:?} (expected norm or squared)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub decay_mode: DecayMode,
    pub metric: SimilarityMetric,
    /// Permit α ≥ 1 (α-sensitivity experiments).
    pub allow_large_alpha: bool,
    /// When false the borrowing term is not evaluated at all.
    pub borrowing: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.0,
            decay_mode: DecayMode::Norm,
            metric: SimilarityMetric::NegMae,
            allow_large_alpha: false,
            borrowing: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha, self.allow_large_alpha)?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "β must be a finite nonnegative real, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// α ∈ [0, 1) unless large values are explicitly allowed; α = 0 is the
/// no-borrowing baseline.
pub fn check_alpha(alpha: f64, allow_large: bool) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "α must be a finite nonnegative real, got {alpha}"
        )));
    }
    if alpha >= 1.0 && !allow_large {
        return Err(Error::InvalidArgument(format!(
            "α ∈ (0,1) required, got {alpha} (pass --allow-large-alpha for sensitivity sweeps)"
        )));
    }
    Ok(())
}

/// Identifies one compatibility evaluation: anchor feature `feature` (index
/// into the anchor batch) against the semantic vector of `class`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey {
    pub feature: usize,
    pub class: ClassId,
}

/// Which part of the objective to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Base,
    Borrow,
    Decay,
    Total,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [LossTerm::Base, LossTerm::Borrow, LossTerm::Decay, LossTerm::Total];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Base => "base",
            LossTerm::Borrow => "sb",
            LossTerm::Decay => "decay",
            LossTerm::Total => "total",
        }
    }
}

/// Value of every objective term on one batch pair, plus the coefficients
/// `∂L/∂c(f, s)` for every compatibility evaluated.
#[derive(Debug, Clone)]
pub struct LossBreakdown<T> {
    pub base: T,
    pub sb: T,
    pub decay: T,
    pub total: T,
    pub alpha: T,
    pub beta: T,
    /// `∂base/∂c`
    pub base_upstream: BTreeMap<PairKey, T>,
    /// `∂sb/∂c`
    pub sb_upstream: BTreeMap<PairKey, T>,
    /// `∂total/∂c = ∂base/∂c + α ∂sb/∂c`
    pub upstream_grads: BTreeMap<PairKey, T>,
    /// Borrowed class per anchor (`None` where borrowing was skipped).
    pub borrowed: Vec<Option<ClassId>>,
    /// Anchors whose borrowing pool had fewer than two classes after
    /// excluding the anchor's own class.
    pub skipped_sb: usize,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn value(&self, term: LossTerm) -> T {
        match term {
            LossTerm::Base => self.base,
            LossTerm::Borrow => self.sb,
            LossTerm::Decay => self.decay,
            LossTerm::Total => self.total,
        }
    }

    /// `total - (base + α·sb + β·decay)`; zero by construction.
    pub fn consistency_residual(&self) -> T {
        self.total - (self.base + self.alpha * self.sb + self.beta * self.decay)
    }
}

/// `(value, ∂/∂positive, ∂/∂others)` of `mean_k max(0, 1 + others_k − positive)`.
fn ranking_hinge<T: Scalar>(positive: T, others: &[T]) -> (T, T, Vec<T>) {
    let inv = T::one() / T::of_usize(others.len());
    let mut value = T::zero();
    let mut d_pos = T::zero();
    let d_others = others
        .iter()
        .map(|&o| {
            let arg = T::one() + o - positive;
            if arg > T::zero() {
                value += arg;
                d_pos -= inv;
                inv
            } else {
                T::zero()
            }
        })
        .collect();
    (value * inv, d_pos, d_others)
}

/// `(value, ∂/∂positive, ∂/∂others)` of `mean_k others_k² + (positive − 1)²`.
fn target_mse<T: Scalar>(positive: T, others: &[T]) -> (T, T, Vec<T>) {
    let inv = T::one() / T::of_usize(others.len());
    let two = T::of(2.0);
    let neg = others.iter().fold(T::zero(), |acc, &o| acc + o * o) * inv;
    let d = positive - T::one();
    let d_others = others.iter().map(|&o| two * o * inv).collect();
    (neg + d * d, two * d, d_others)
}

fn nonempty<T>(others: &[T], what: &'static str) -> Result<()> {
    if others.is_empty() {
        Err(Error::Empty(what))
    } else {
        Ok(())
    }
}

/// Feature-side hinge: mean over wrong semantics of
/// `max(0, 1 + c(f_i, s) − c(f_i, s_i))`.
pub fn hinge_feature_loss<T: Scalar>(c_correct: T, c_others: &[T]) -> Result<T> {
    nonempty(c_others, "no wrong semantics to rank against")?;
    Ok(ranking_hinge(c_correct, c_others).0)
}

/// Semantic-side hinge: mean over wrong features of
/// `max(0, 1 + c(f, s_i) − c(f_i, s_i))`.
pub fn hinge_semantic_loss<T: Scalar>(c_correct: T, c_other_features: &[T]) -> Result<T> {
    nonempty(c_other_features, "no wrong features to rank against")?;
    Ok(ranking_hinge(c_correct, c_other_features).0)
}

/// Squared error against target 1 for the correct pair and 0 (averaged) for
/// wrong pairs.
pub fn mse_base_loss<T: Scalar>(c_correct: T, c_others: &[T]) -> Result<T> {
    nonempty(c_others, "no wrong semantics to score")?;
    Ok(target_mse(c_correct, c_others).0)
}

/// Hinge with the borrowed semantic as positive, against the rest of the pool.
pub fn sb_hinge_loss<T: Scalar>(c_borrowed: T, c_others: &[T]) -> Result<T> {
    nonempty(c_others, "borrowing pool has no other semantics")?;
    Ok(ranking_hinge(c_borrowed, c_others).0)
}

/// Squared-error borrowing term: borrowed semantic targets 1, rest of the
/// pool targets 0.
pub fn sb_mse_loss<T: Scalar>(c_borrowed: T, c_others: &[T]) -> Result<T> {
    nonempty(c_others, "borrowing pool has no other semantics")?;
    Ok(target_mse(c_borrowed, c_others).0)
}

/// Decay value and its gradient coefficient `k` such that `∂decay/∂θ = k θ`.
/// The gradient of `‖θ‖₂` at `θ = 0` is taken as 0.
pub fn decay_term<T: Scalar>(theta: &[T], mode: DecayMode) -> (T, T) {
    match mode {
        DecayMode::Norm => {
            let norm = l2_norm(theta);
            let k = if norm > T::zero() { T::one() / norm } else { T::zero() };
            (norm, k)
        }
        DecayMode::Squared => {
            let sq = theta.iter().fold(T::zero(), |acc, &x| acc + x * x);
            (sq, T::of(2.0))
        }
    }
}

/// Compatibilities of every anchor feature against every class in the batch
/// pair, with forward caches.
struct CompatTable<T> {
    classes: Vec<ClassId>,
    rows: Vec<Vec<CompatibilityOutput<T>>>,
}

impl<T: Scalar> CompatTable<T> {
    fn build(
        model: &ModelParams<T>,
        anchors: &[Anchor<'_, T>],
        semantics: &BTreeMap<ClassId, &[T]>,
    ) -> Result<Self> {
        let classes: Vec<ClassId> = semantics.keys().copied().collect();
        let rows = anchors
            .iter()
            .map(|a| {
                semantics
                    .values()
                    .map(|s| model.compat_forward(a.feature, s))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { classes, rows })
    }

    fn get(&self, feature: usize, class: ClassId) -> &CompatibilityOutput<T> {
        let pos = self
            .classes
            .binary_search(&class)
            .expect("class present in compatibility table");
        &self.rows[feature][pos]
    }

    fn value(&self, feature: usize, class: ClassId) -> T {
        self.get(feature, class).value
    }
}

fn add<T: Scalar>(map: &mut BTreeMap<PairKey, T>, feature: usize, class: ClassId, v: T) {
    if v != T::zero() {
        *map.entry(PairKey { feature, class }).or_insert(T::zero()) += v;
    }
}

struct Evaluation<T> {
    breakdown: LossBreakdown<T>,
    table: CompatTable<T>,
    decay_coeff: T,
}

fn evaluate<T: Scalar>(
    model: &ModelParams<T>,
    anchors: &[Anchor<'_, T>],
    pool: &[(ClassId, &[T])],
    cfg: &LossConfig,
) -> Result<Evaluation<T>> {
    cfg.validate()?;

    let mut even_sem: BTreeMap<ClassId, &[T]> = BTreeMap::new();
    for a in anchors {
        even_sem.entry(a.class).or_insert(a.semantic);
    }
    if even_sem.len() < 2 {
        return Err(Error::Empty(
            "batch too small: anchor batch needs at least two distinct classes",
        ));
    }
    let mut pool_sem: BTreeMap<ClassId, &[T]> = BTreeMap::new();
    for &(c, s) in pool {
        pool_sem.entry(c).or_insert(s);
    }
    let mut all_sem = even_sem.clone();
    if cfg.borrowing {
        for (&c, &s) in &pool_sem {
            all_sem.entry(c).or_insert(s);
        }
    }

    let table = CompatTable::build(model, anchors, &all_sem)?;
    let variant = model.variant();

    let mut base = T::zero();
    let mut base_up = BTreeMap::new();
    for (i, a) in anchors.iter().enumerate() {
        let wrong: Vec<ClassId> = even_sem.keys().copied().filter(|&c| c != a.class).collect();
        let c_wrong: Vec<T> = wrong.iter().map(|&c| table.value(i, c)).collect();
        let c_pos = table.value(i, a.class);
        match variant {
            Variant::Linear => {
                let (lf, dpos, dw) = ranking_hinge(c_pos, &c_wrong);
                add(&mut base_up, i, a.class, dpos);
                for (&c, &d) in wrong.iter().zip(&dw) {
                    add(&mut base_up, i, c, d);
                }

                let wrong_feats: Vec<usize> = anchors
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.class != a.class)
                    .map(|(j, _)| j)
                    .collect();
                let c_wf: Vec<T> = wrong_feats.iter().map(|&j| table.value(j, a.class)).collect();
                let (ls, dpos, dwf) = ranking_hinge(c_pos, &c_wf);
                add(&mut base_up, i, a.class, dpos);
                for (&j, &d) in wrong_feats.iter().zip(&dwf) {
                    add(&mut base_up, j, a.class, d);
                }
                base += lf + ls;
            }
            Variant::Nonlinear => {
                let (l, dpos, dw) = target_mse(c_pos, &c_wrong);
                add(&mut base_up, i, a.class, dpos);
                for (&c, &d) in wrong.iter().zip(&dw) {
                    add(&mut base_up, i, c, d);
                }
                base += l;
            }
        }
    }

    let mut sb = T::zero();
    let mut sb_up = BTreeMap::new();
    let mut borrowed = vec![None; anchors.len()];
    let mut skipped_sb = 0;
    if cfg.borrowing {
        for (i, a) in anchors.iter().enumerate() {
            let candidates: Vec<(ClassId, &[T])> = pool_sem
                .iter()
                .filter(|(&c, _)| c != a.class)
                .map(|(&c, &s)| (c, s))
                .collect();
            if candidates.len() < 2 {
                skipped_sb += 1;
                continue;
            }
            let (cj, _) = nearest_semantic(a.semantic, &candidates, cfg.metric, None)?;
            borrowed[i] = Some(cj);
            let others: Vec<ClassId> =
                candidates.iter().map(|&(c, _)| c).filter(|&c| c != cj).collect();
            let c_others: Vec<T> = others.iter().map(|&c| table.value(i, c)).collect();
            let c_j = table.value(i, cj);
            let (l, dpos, dothers) = match variant {
                Variant::Linear => ranking_hinge(c_j, &c_others),
                Variant::Nonlinear => target_mse(c_j, &c_others),
            };
            sb += l;
            add(&mut sb_up, i, cj, dpos);
            for (&c, &d) in others.iter().zip(&dothers) {
                add(&mut sb_up, i, c, d);
            }
        }
    }

    let theta = model.flatten();
    let (decay, decay_coeff) = decay_term(&theta, cfg.decay_mode);
    let alpha = T::of(cfg.alpha);
    let beta = T::of(cfg.beta);
    let total = base + alpha * sb + beta * decay;

    let mut upstream = base_up.clone();
    for (&k, &v) in &sb_up {
        let e = upstream.entry(k).or_insert(T::zero());
        *e += alpha * v;
    }

    if !total.is_finite() {
        let bad = anchors
            .iter()
            .enumerate()
            .find(|(i, a)| !table.value(*i, a.class).is_finite())
            .map(|(i, _)| format!(" (anchor {i})"))
            .unwrap_or_default();
        return Err(Error::NonFinite(format!("objective evaluated to {total}{bad}")));
    }

    Ok(Evaluation {
        breakdown: LossBreakdown {
            base,
            sb,
            decay,
            total,
            alpha,
            beta,
            base_upstream: base_up,
            sb_upstream: sb_up,
            upstream_grads: upstream,
            borrowed,
            skipped_sb,
        },
        table,
        decay_coeff,
    })
}

/// Evaluates the objective on one batch pair.
///
/// `anchors` is the anchor minibatch; `pool` holds the borrowing candidates.
/// For each anchor the borrowed semantic is the pool semantic most similar to
/// the anchor's own (under `cfg.metric`) among classes other than the anchor's;
/// the remaining pool classes (still excluding the anchor's class) are its
/// negatives. Anchors left with fewer than two candidate classes skip
/// borrowing and are counted in [`LossBreakdown::skipped_sb`].
pub fn total_loss<T: Scalar>(
    model: &ModelParams<T>,
    anchors: &[Anchor<'_, T>],
    pool: &[(ClassId, &[T])],
    cfg: &LossConfig,
) -> Result<LossBreakdown<T>> {
    Ok(evaluate(model, anchors, pool, cfg)?.breakdown)
}

/// Objective breakdown together with the flat parameter gradient of `term`.
pub fn loss_and_gradient<T: Scalar>(
    model: &ModelParams<T>,
    anchors: &[Anchor<'_, T>],
    pool: &[(ClassId, &[T])],
    cfg: &LossConfig,
    term: LossTerm,
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    let ev = evaluate(model, anchors, pool, cfg)?;
    let mut grad = vec![T::zero(); model.num_params()];
    let upstream = match term {
        LossTerm::Base => Some(&ev.breakdown.base_upstream),
        LossTerm::Borrow => Some(&ev.breakdown.sb_upstream),
        LossTerm::Total => Some(&ev.breakdown.upstream_grads),
        LossTerm::Decay => None,
    };
    if let Some(up) = upstream {
        for (k, &coeff) in up {
            model.accumulate_grad(ev.table.get(k.feature, k.class), coeff, &mut grad);
        }
    }
    let decay_scale = match term {
        LossTerm::Decay => ev.decay_coeff,
        LossTerm::Total => ev.breakdown.beta * ev.decay_coeff,
        _ => T::zero(),
    };
    if decay_scale != T::zero() {
        for (g, th) in grad.iter_mut().zip(model.flatten()) {
            *g += decay_scale * th;
        }
    }
    Ok((ev.breakdown, grad))
}

/// Base loss of anchor `i` alone, hinge form (linear model).
pub fn linear_base_loss<T: Scalar>(
    model: &ModelParams<T>,
    anchors: &[Anchor<'_, T>],
    i: usize,
) -> Result<T> {
    let a = anchors
        .get(i)
        .ok_or_else(|| Error::InvalidArgument(format!("anchor index {i} out of range")))?;
    let mut wrong_sem: BTreeMap<ClassId, &[T]> = BTreeMap::new();
    for b in anchors {
        if b.class != a.class {
            wrong_sem.entry(b.class).or_insert(b.semantic);
        }
    }
    if wrong_sem.is_empty() {
        return Err(Error::Empty(
            "batch too small: anchor batch needs at least two distinct classes",
        ));
    }
    let c_pos = model.compat(a.feature, a.semantic)?;
    let c_ws = wrong_sem
        .values()
        .map(|s| model.compat(a.feature, s))
        .collect::<Result<Vec<_>>>()?;
    let c_wf = anchors
        .iter()
        .filter(|b| b.class != a.class)
        .map(|b| model.compat(b.feature, a.semantic))
        .collect::<Result<Vec<_>>>()?;
    Ok(hinge_feature_loss(c_pos, &c_ws)? + hinge_semantic_loss(c_pos, &c_wf)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::models::{MlpConfig, ModelDims};
    use proptest::prelude::*;

    #[test]
    fn hinge_feature_examples() {
        assert_eq!(hinge_feature_loss(2.0, &[0.5]).unwrap(), 0.0);
        assert_eq!(hinge_feature_loss(0.0, &[0.0]).unwrap(), 1.0);
        assert!((hinge_feature_loss(1.0, &[0.8, 0.3]).unwrap() - 0.55f64).abs() < 1e-12);
        assert!(hinge_feature_loss::<f64>(1.0, &[]).is_err());
    }

    #[test]
    fn hinge_semantic_examples() {
        assert_eq!(hinge_semantic_loss(2.0, &[0.5]).unwrap(), 0.0);
        assert!((hinge_semantic_loss(0.2, &[0.2, 0.2]).unwrap() - 1.0f64).abs() < 1e-12);
        assert_eq!(hinge_semantic_loss(0.0, &[-5.0]).unwrap(), 0.0);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_base_loss(1.0, &[0.0]).unwrap(), 0.0);
        assert_eq!(mse_base_loss(0.5, &[0.5]).unwrap(), 0.5);
        assert_eq!(mse_base_loss(0.0, &[1.0]).unwrap(), 2.0);
        assert!(mse_base_loss::<f64>(0.0, &[]).is_err());
    }

    #[test]
    fn sb_examples() {
        assert_eq!(sb_hinge_loss(2.0, &[0.5]).unwrap(), 0.0);
        assert_eq!(sb_hinge_loss(0.5, &[0.5]).unwrap(), 1.0);
        assert!((sb_hinge_loss(1.0, &[0.9, 0.1]).unwrap() - 0.5f64).abs() < 1e-12);
        assert_eq!(sb_mse_loss(1.0, &[0.0]).unwrap(), 0.0);
        assert_eq!(sb_mse_loss(0.0, &[0.0]).unwrap(), 1.0);
        assert!((sb_mse_loss(0.8, &[0.2, 0.4]).unwrap() - 0.14f64).abs() < 1e-12);
        assert!(sb_mse_loss::<f64>(0.8, &[]).is_err());
    }

    #[test]
    fn decay_modes() {
        let (v, k) = decay_term(&[3.0, 4.0], DecayMode::Norm);
        assert_eq!((v, k), (5.0, 0.2));
        let (v, k) = decay_term(&[3.0, 4.0], DecayMode::Squared);
        assert_eq!((v, k), (25.0, 2.0));
        assert_eq!(decay_term(&[0.0f64; 3], DecayMode::Norm), (0.0, 0.0));
    }

    #[test]
    fn alpha_range() {
        assert!(check_alpha(0.0, false).is_ok());
        assert!(check_alpha(0.5, false).is_ok());
        let err = check_alpha(1.5, false).unwrap_err().to_string();
        assert!(err.contains("α ∈ (0,1)"), "{err}");
        assert!(check_alpha(2.0, true).is_ok());
        assert!(check_alpha(-0.1, true).is_err());
        assert!(check_alpha(f64::NAN, true).is_err());
    }

    /// Two-dim identity model on one-hot features/semantics: each anchor's
    /// correct compatibility is 1 and every cross term is 0.
    fn one_hot_setup() -> (ModelParams<f64>, Vec<Vec<f64>>) {
        let eye = Matrix::<f64>::identity_padded(3, 3);
        let vs = vec![vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 2.0]];
        (ModelParams::Linear { w: eye.map(|x| x / 2.0) }, vs)
    }

    #[test]
    fn base_loss_zero_when_margins_hold() {
        let (model, vs) = one_hot_setup();
        let anchors: Vec<Anchor<f64>> = (0..3)
            .map(|c| Anchor {
                feature: &vs[c],
                semantic: &vs[c],
                class: ClassId(c as u32),
            })
            .collect();
        // correct = 2, cross = 0.
        for i in 0..3 {
            assert_eq!(linear_base_loss(&model, &anchors, i).unwrap(), 0.0);
        }
        let cfg = LossConfig {
            alpha: 0.0,
            ..LossConfig::default()
        };
        let b = total_loss(&model, &anchors, &[], &cfg).unwrap();
        assert_eq!(b.base, 0.0);
    }

    #[test]
    fn base_loss_all_equal_is_two() {
        let zero = ModelParams::<f64>::zeros(Variant::Linear, ModelDims::with_default_hidden(3, 3));
        let (_, vs) = one_hot_setup();
        let anchors: Vec<Anchor<f64>> = (0..3)
            .map(|c| Anchor {
                feature: &vs[c],
                semantic: &vs[c],
                class: ClassId(c as u32),
            })
            .collect();
        assert_eq!(linear_base_loss(&zero, &anchors, 1).unwrap(), 2.0);
        let cfg = LossConfig {
            alpha: 0.0,
            beta: 0.0,
            ..LossConfig::default()
        };
        let b = total_loss(&zero, &anchors, &[], &cfg).unwrap();
        assert_eq!(b.base, 6.0);
        assert_eq!(b.total, 6.0);
    }

    #[test]
    fn batch_too_small() {
        let (model, vs) = one_hot_setup();
        let anchors = [
            Anchor {
                feature: &vs[0][..],
                semantic: &vs[0][..],
                class: ClassId(0),
            },
            Anchor {
                feature: &vs[1][..],
                semantic: &vs[0][..],
                class: ClassId(0),
            },
        ];
        assert!(linear_base_loss(&model, &anchors, 0).is_err());
        assert!(total_loss(&model, &anchors, &[], &LossConfig::default()).is_err());
    }

    fn random_batch(seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<ClassId>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let sems: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let classes: Vec<ClassId> = (0..4).map(|i| ClassId([0, 1, 1, 2][i])).collect();
        let feats: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        (feats, sems, classes)
    }

    #[test]
    fn borrowing_excludes_own_class_and_picks_nearest() {
        let (feats, sems, classes) = random_batch(3);
        let anchors: Vec<Anchor<f64>> = feats
            .iter()
            .zip(&classes)
            .map(|(f, &c)| Anchor {
                feature: f,
                semantic: &sems[c.index()],
                class: c,
            })
            .collect();
        let pool: Vec<(ClassId, &[f64])> =
            (1..6).map(|c| (ClassId(c as u32), sems[c].as_slice())).collect();
        let model = ModelParams::<f64>::init(
            Variant::Linear,
            ModelDims {
                m: 4,
                n: 3,
                mlp: MlpConfig { h1: 0, h2: 0 },
            },
            1,
        )
        .unwrap();
        let b = total_loss(&model, &anchors, &pool, &LossConfig::default()).unwrap();
        assert_eq!(b.skipped_sb, 0);
        for (a, borrowed) in anchors.iter().zip(&b.borrowed) {
            let j = borrowed.unwrap();
            assert_ne!(j, a.class);
            let dj: f64 = sems[j.index()].iter().zip(a.semantic).map(|(x, y)| (x - y).abs()).sum();
            for &(c, s) in &pool {
                if c != a.class {
                    let d: f64 = s.iter().zip(a.semantic).map(|(x, y)| (x - y).abs()).sum();
                    assert!(dj <= d);
                }
            }
        }
    }

    #[test]
    fn degenerate_pool_skips_borrowing() {
        let (feats, sems, classes) = random_batch(4);
        let anchors: Vec<Anchor<f64>> = feats
            .iter()
            .zip(&classes)
            .map(|(f, &c)| Anchor {
                feature: f,
                semantic: &sems[c.index()],
                class: c,
            })
            .collect();
        // Pool {1, 2}: anchors of class 1 and 2 only have one candidate left.
        let pool: Vec<(ClassId, &[f64])> =
            (1..3).map(|c| (ClassId(c as u32), sems[c].as_slice())).collect();
        let model = ModelParams::<f64>::zeros(Variant::Linear, ModelDims::with_default_hidden(4, 3));
        let b = total_loss(&model, &anchors, &pool, &LossConfig::default()).unwrap();
        assert_eq!(b.skipped_sb, 3);
        assert!(b.borrowed[0].is_some());
    }

    #[test]
    fn alpha_zero_matches_borrowing_disabled() {
        let (feats, sems, classes) = random_batch(5);
        let anchors: Vec<Anchor<f64>> = feats
            .iter()
            .zip(&classes)
            .map(|(f, &c)| Anchor {
                feature: f,
                semantic: &sems[c.index()],
                class: c,
            })
            .collect();
        let pool: Vec<(ClassId, &[f64])> =
            (3..6).map(|c| (ClassId(c as u32), sems[c].as_slice())).collect();
        for variant in [Variant::Linear, Variant::Nonlinear] {
            let model = ModelParams::<f64>::init(variant, ModelDims::with_default_hidden(4, 3), 8).unwrap();
            let with = LossConfig {
                alpha: 0.0,
                beta: 0.3,
                ..LossConfig::default()
            };
            let without = LossConfig {
                borrowing: false,
                ..with
            };
            let (a, ga) = loss_and_gradient(&model, &anchors, &pool, &with, LossTerm::Total).unwrap();
            let (b, gb) = loss_and_gradient(&model, &anchors, &pool, &without, LossTerm::Total).unwrap();
            assert_eq!(a.total.to_bits(), b.total.to_bits());
            assert_eq!(a.total, a.base + 0.3 * a.decay);
            assert!(a.sb > 0.0);
            let ba: Vec<u64> = ga.iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u64> = gb.iter().map(|x| x.to_bits()).collect();
            assert_eq!(ba, bb);
        }
    }

    proptest! {
        #[test]
        fn hinge_nonnegative_and_monotone(pos in -3.0f64..3.0, others in prop::collection::vec(-3.0f64..3.0, 1..6), k in 0usize..6, bump in 0.0f64..2.0) {
            let l = hinge_feature_loss(pos, &others).unwrap();
            prop_assert!(l >= 0.0);
            let k = k % others.len();
            let mut up = others.clone();
            up[k] += bump;
            prop_assert!(hinge_feature_loss(pos, &up).unwrap() >= l);
            prop_assert!(sb_hinge_loss(pos + bump, &others).unwrap() <= l);
            prop_assert!(mse_base_loss(pos, &others).unwrap() >= 0.0);
        }

        #[test]
        fn hinge_zero_when_margin_met(others in prop::collection::vec(-3.0f64..3.0, 1..6), slack in 0.0f64..2.0) {
            let top = others.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(hinge_feature_loss(top + 1.0 + slack, &others).unwrap(), 0.0);
        }

        #[test]
        fn mse_monotone_in_wrong_pairs(pos in 0.0f64..1.0, others in prop::collection::vec(0.0f64..1.0, 1..6), k in 0usize..6, bump in 0.0f64..1.0) {
            let k = k % others.len();
            let mut up = others.clone();
            up[k] += bump;
            prop_assert!(mse_base_loss(pos, &up).unwrap() >= mse_base_loss(pos, &others).unwrap());
            let zero = mse_base_loss(pos, &others).unwrap() == 0.0;
            prop_assert_eq!(zero, pos == 1.0 && others.iter().all(|&o| o == 0.0));
        }

        #[test]
        fn total_is_consistent(seed in 0u64..500, alpha in 0.0f64..0.99, beta in 0.0f64..1.0, squared in any::<bool>()) {
            let (feats, sems, classes) = random_batch(seed);
            let anchors: Vec<Anchor<f64>> = feats.iter().zip(&classes)
                .map(|(f, &c)| Anchor { feature: f, semantic: &sems[c.index()], class: c })
                .collect();
            let pool: Vec<(ClassId, &[f64])> = (0..6).map(|c| (ClassId(c as u32), sems[c].as_slice())).collect();
            let model = ModelParams::<f64>::init(Variant::Nonlinear, ModelDims::with_default_hidden(4, 3), seed).unwrap();
            let cfg = LossConfig {
                alpha, beta,
                decay_mode: if squared { DecayMode::Squared } else { DecayMode::Norm },
                ..LossConfig::default()
            };
            let b = total_loss(&model, &anchors, &pool, &cfg).unwrap();
            prop_assert_eq!(b.consistency_residual(), 0.0);
        }
    }
}
