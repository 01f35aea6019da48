//! Finite-difference verification of the analytic objective gradients on
//! random toy batches, for each model variant and loss term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::ClassId;
use crate::error::Result;
use crate::losses::{loss_and_gradient, Anchor, DecayMode, LossConfig, LossTerm};
use crate::models::{MlpConfig, ModelDims, ModelParams, Variant};
use crate::oracle::finite_diff_grad;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    /// Random toy batches per (variant, term).
    pub cases: usize,
    pub max_m: usize,
    pub max_n: usize,
    pub max_batch: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub decay_mode: DecayMode,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            cases: 20,
            max_m: 8,
            max_n: 6,
            max_batch: 6,
            eps: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            alpha: 0.1,
            beta: 0.05,
            decay_mode: DecayMode::Norm,
        }
    }
}

/// Outcome for one (variant, term) family.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyResult {
    pub variant: Variant,
    pub term: LossTerm,
    pub cases: usize,
    /// Largest `|analytic − numeric| / max(1, |analytic|)` over all cases
    /// and coordinates.
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub families: Vec<FamilyResult>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.families.iter().all(|f| f.passed)
    }
}

/// A random toy problem: anchor batch, borrowing pool, model.
pub struct ToyCase {
    pub features: Vec<Vec<f64>>,
    pub classes: Vec<ClassId>,
    pub semantics: Vec<Vec<f64>>,
    pub pool: Vec<ClassId>,
    pub model: ModelParams<f64>,
}

impl ToyCase {
    pub fn anchors(&self) -> Vec<Anchor<'_, f64>> {
        self.features
            .iter()
            .zip(&self.classes)
            .map(|(f, &c)| Anchor {
                feature: f,
                semantic: &self.semantics[c.index()],
                class: c,
            })
            .collect()
    }

    pub fn pool_entries(&self) -> Vec<(ClassId, &[f64])> {
        self.pool.iter().map(|&c| (c, self.semantics[c.index()].as_slice())).collect()
    }

    /// True when no ReLU pre-activation or hinge argument sits within
    /// `margin` of its kink.
    fn away_from_kinks(&self, margin: f64) -> bool {
        let n_classes = self.semantics.len();
        let mut table = vec![vec![0.0; n_classes]; self.features.len()];
        for (i, f) in self.features.iter().enumerate() {
            for (c, s) in self.semantics.iter().enumerate() {
                let out = self.model.compat_forward(f, s).expect("toy dimensions agree");
                if out.min_abs_preactivation().is_some_and(|z| z < margin) {
                    return false;
                }
                table[i][c] = out.value;
            }
        }
        if self.model.variant() == Variant::Nonlinear {
            return true;
        }
        // Any hinge argument has the form 1 + c(a, x) − c(b, y) with either
        // a = b or x = y.
        for i in 0..table.len() {
            for x in 0..n_classes {
                for y in 0..n_classes {
                    if x != y && (1.0 + table[i][x] - table[i][y]).abs() < margin {
                        return false;
                    }
                }
                for j in 0..table.len() {
                    if i != j && (1.0 + table[j][x] - table[i][x]).abs() < margin {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Draws a toy case with `m ≤ max_m`, `n ≤ max_n`, batch `≤ max_batch`,
/// re-sampling until every kink is at least `margin` away.
pub fn sample_toy_case(
    variant: Variant,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
    margin: f64,
) -> ToyCase {
    loop {
        let m = rng.random_range(2..=opts.max_m.max(2));
        let n = rng.random_range(2..=opts.max_n.max(2));
        let batch = rng.random_range(3..=opts.max_batch.max(3));
        let n_anchor_classes = rng.random_range(2..=batch.min(4));
        let n_pool = rng.random_range(3..=5);
        let n_classes = n_anchor_classes + n_pool;

        let semantics: Vec<Vec<f64>> = (0..n_classes)
            .map(|_| (0..n).map(|_| rng.random_range(0.05..1.0)).collect())
            .collect();
        let mut classes: Vec<ClassId> = (0..batch)
            .map(|i| ClassId((i % n_anchor_classes) as u32))
            .collect();
        classes.rotate_left(rng.random_range(0..batch));
        let features: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        // Pool overlaps the anchor classes by one so own-class exclusion is
        // exercised.
        let pool: Vec<ClassId> = (n_anchor_classes - 1..n_classes).map(|c| ClassId(c as u32)).collect();
        let dims = ModelDims {
            m,
            n,
            mlp: MlpConfig {
                h1: rng.random_range(2..=6),
                h2: rng.random_range(2..=6),
            },
        };
        let mut model = ModelParams::init(variant, dims, rng.random()).expect("positive dims");
        // Spread the bilinear scores so hinge terms are a mix of active and
        // inactive.
        if variant == Variant::Linear {
            let scaled: Vec<f64> = model.flatten().iter().map(|w| w * 3.0).collect();
            model.assign_flat(&scaled);
        } else {
            // Nonzero biases keep the ReLU units from sharing a kink at zero
            // input.
            let theta: Vec<f64> = model
                .flatten()
                .iter()
                .map(|w| if *w == 0.0 { rng.random_range(-0.3..0.3) } else { *w })
                .collect();
            model.assign_flat(&theta);
        }
        let case = ToyCase {
            features,
            classes,
            semantics,
            pool,
            model,
        };
        if case.away_from_kinks(margin) {
            return case;
        }
    }
}

/// Signature of an analytic gradient provider; the default is
/// [`loss_and_gradient`].
pub type AnalyticGrad<'a> = dyn Fn(
        &ModelParams<f64>,
        &[Anchor<'_, f64>],
        &[(ClassId, &[f64])],
        &LossConfig,
        LossTerm,
    ) -> Result<Vec<f64>>
    + 'a;

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    run_gradcheck_with(opts, &|model, anchors, pool, cfg, term| {
        Ok(loss_and_gradient(model, anchors, pool, cfg, term)?.1)
    })
}

/// Runs the check against a caller-supplied analytic gradient (used to show
/// that a broken gradient is caught).
pub fn run_gradcheck_with(opts: &GradcheckOptions, analytic: &AnalyticGrad<'_>) -> Result<GradcheckReport> {
    let cfg = LossConfig {
        alpha: opts.alpha,
        beta: opts.beta,
        decay_mode: opts.decay_mode,
        allow_large_alpha: true,
        ..LossConfig::default()
    };
    let mut families = Vec::new();
    for variant in [Variant::Linear, Variant::Nonlinear] {
        for term in [LossTerm::Base, LossTerm::Borrow, LossTerm::Total] {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(match variant {
                Variant::Linear => 10,
                Variant::Nonlinear => 20,
            });
            let mut worst: f64 = 0.0;
            for _ in 0..opts.cases {
                let case = sample_toy_case(variant, opts, &mut rng, 1e-3);
                let anchors = case.anchors();
                let pool = case.pool_entries();
                let g = analytic(&case.model, &anchors, &pool, &cfg, term)?;
                let numeric = finite_diff_grad(
                    |theta| {
                        let p = ModelParams::unflatten(theta, &case.model)?;
                        Ok(crate::losses::total_loss(&p, &anchors, &pool, &cfg)?.value(term))
                    },
                    &case.model.flatten(),
                    opts.eps,
                )?;
                for (a, n) in g.iter().zip(&numeric) {
                    worst = worst.max((a - n).abs() / a.abs().max(1.0));
                }
                if g.len() != numeric.len() {
                    worst = f64::INFINITY;
                }
            }
            families.push(FamilyResult {
                variant,
                term,
                cases: opts.cases,
                max_rel_error: worst,
                passed: worst < opts.tolerance,
            });
        }
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        families,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_check_passes() {
        let report = run_gradcheck(&GradcheckOptions {
            cases: 5,
            ..GradcheckOptions::default()
        })
        .unwrap();
        for f in &report.families {
            assert!(f.passed, "{f:?}");
        }
        assert_eq!(report.families.len(), 6);
    }

    #[test]
    fn sign_flipped_gradient_fails() {
        let report = run_gradcheck_with(
            &GradcheckOptions {
                cases: 3,
                ..GradcheckOptions::default()
            },
            &|model, anchors, pool, cfg, term| {
                let g = loss_and_gradient(model, anchors, pool, cfg, term)?.1;
                Ok(g.into_iter().map(|x| -x).collect())
            },
        )
        .unwrap();
        assert!(!report.all_passed());
        assert!(report.families.iter().filter(|f| !f.passed).count() >= 5);
    }
}
