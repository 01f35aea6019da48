//! Minibatch SGD (optional heavy-ball momentum) and Adam over flat parameter
//! vectors. Weight decay lives in the objective, not here.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::InvalidArgument(format!(
                "unknown optimizer {s:?} (expected sgd or adam)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T> {
    pub lr: T,
    pub momentum: T,
    /// Velocity; allocated on first use when momentum is nonzero.
    pub velocity: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState<T> {
    Sgd(SgdState<T>),
    Adam(AdamState<T>),
}

impl<T: Scalar> OptimizerState<T> {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerState::Sgd(SgdState {
            lr: T::of(lr),
            momentum: T::of(momentum),
            velocity: None,
        })
    }

    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn adam(lr: f64, num_params: usize) -> Self {
        OptimizerState::Adam(AdamState {
            lr: T::of(lr),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
        })
    }

    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64, num_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(lr, momentum),
            OptimizerKind::Adam => Self::adam(lr, num_params),
        }
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        match self {
            OptimizerState::Sgd(s) => sgd_step(params, grad, s),
            OptimizerState::Adam(s) => adam_step(params, grad, s),
        }
    }
}

fn check(params: &[impl Scalar], grad: &[impl Scalar]) -> Result<()> {
    if params.len() != grad.len() {
        return Err(Error::DimensionMismatch {
            what: "gradient length",
            expected: params.len(),
            found: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grad[i])));
    }
    Ok(())
}

/// `v ← μ v + g; θ ← θ − lr · v` (plain `θ ← θ − lr · g` when μ = 0).
pub fn sgd_step<T: Scalar>(params: &mut [T], grad: &[T], state: &mut SgdState<T>) -> Result<()> {
    check(params, grad)?;
    if state.momentum == T::zero() {
        for (p, &g) in params.iter_mut().zip(grad) {
            *p -= state.lr * g;
        }
        return Ok(());
    }
    let v = state.velocity.get_or_insert_with(|| vec![T::zero(); grad.len()]);
    if v.len() != grad.len() {
        return Err(Error::DimensionMismatch {
            what: "momentum buffer length",
            expected: grad.len(),
            found: v.len(),
        });
    }
    for ((p, vi), &g) in params.iter_mut().zip(v.iter_mut()).zip(grad) {
        *vi = state.momentum * *vi + g;
        *p -= state.lr * *vi;
    }
    Ok(())
}

/// Adam with bias-corrected moments.
pub fn adam_step<T: Scalar>(params: &mut [T], grad: &[T], state: &mut AdamState<T>) -> Result<()> {
    check(params, grad)?;
    if state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(Error::DimensionMismatch {
            what: "Adam moment length",
            expected: grad.len(),
            found: state.m.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let one = T::one();
    let bc1 = one - state.beta1.powi(t);
    let bc2 = one - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (one - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (one - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sgd_examples() {
        let mut st = OptimizerState::<f64>::sgd(0.1, 0.0);
        let mut p = vec![1.0];
        st.step(&mut p, &[0.0]).unwrap();
        assert_eq!(p, vec![1.0]);
        st.step(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        let mut st = OptimizerState::<f64>::sgd(0.1, 0.9);
        let mut p = vec![0.0];
        st.step(&mut p, &[1.0]).unwrap();
        st.step(&mut p, &[1.0]).unwrap();
        // v1 = 1, v2 = 1.9; θ = -0.1 - 0.19
        assert!((p[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn adam_examples() {
        let mut st = OptimizerState::<f64>::adam(0.001, 1);
        let mut p = vec![0.5];
        st.step(&mut p, &[0.0]).unwrap();
        assert_eq!(p, vec![0.5]);

        let mut st = OptimizerState::<f64>::adam(0.001, 1);
        let mut p = vec![0.5];
        st.step(&mut p, &[1.0]).unwrap();
        // m̂ = 1, v̂ = 1 → update = lr / (1 + ε)
        assert!((0.5 - p[0] - 0.001).abs() < 1e-10);

        let mut st = OptimizerState::<f64>::adam(0.001, 1);
        let mut p = vec![0.0];
        st.step(&mut p, &[1.0]).unwrap();
        let u1 = p[0].abs();
        let before = p[0];
        st.step(&mut p, &[-1.0]).unwrap();
        let u2 = (p[0] - before).abs();
        assert!(u2 < u1, "{u2} vs {u1}");
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut st = OptimizerState::<f64>::sgd(0.1, 0.0);
        let mut p = vec![1.0, 2.0];
        assert!(matches!(st.step(&mut p, &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(st.step(&mut p, &[1.0, f64::NAN]), Err(Error::NonFinite(_))));
        let mut st = OptimizerState::<f64>::adam(0.1, 2);
        assert!(st.step(&mut p, &[f64::INFINITY, 0.0]).is_err());
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn sgd_on_quadratic_converges_monotonically() {
        for lr in [0.05, 0.2, 0.45, 0.9] {
            let mut st = OptimizerState::<f64>::sgd(lr, 0.0);
            let mut p = vec![3.0f64];
            let mut prev = p[0].abs();
            for _ in 0..200 {
                let g = [2.0 * p[0]];
                st.step(&mut p, &g).unwrap();
                assert!(p[0].abs() <= prev);
                prev = p[0].abs();
            }
            assert!(prev < 1e-2);
        }
    }

    proptest! {
        #[test]
        fn steps_are_deterministic(p in prop::collection::vec(-5.0f64..5.0, 1..8), seed in 0u64..1000) {
            let g: Vec<f64> = p.iter().enumerate().map(|(i, x)| x * 0.3 + (seed + i as u64) as f64 * 1e-3).collect();
            for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
                let mut a = OptimizerState::<f64>::new(kind, 0.01, 0.5, p.len());
                let mut b = a.clone();
                let (mut pa, mut pb) = (p.clone(), p.clone());
                for _ in 0..3 {
                    a.step(&mut pa, &g).unwrap();
                    b.step(&mut pb, &g).unwrap();
                }
                prop_assert_eq!(&pa, &pb);
                prop_assert_eq!(&a, &b);
            }
        }
    }
}
