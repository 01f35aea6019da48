//! Compatibility functions `c(f, s; θ)`.
//!
//! * [`ModelParams::Linear`]: bilinear `fᵀ W s` with `W ∈ R^{m×n}`.
//! * [`ModelParams::Nonlinear`]: a relation model. One MLP (`n → h1 → m`)
//!   embeds the semantic vector into feature space; a second MLP
//!   (`2m → h2 → 1`) scores the concatenation `[f; embed(s)]`. Every layer is
//!   ReLU-activated except the final one, which is a sigmoid.
//!
//! Gradients are derived by hand for exactly these two architectures and
//! accumulate into a flat parameter vector laid out as [`ModelParams::flatten`].

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, relu, relu_grad, sigmoid, Scalar};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Linear,
    Nonlinear,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Linear => "linear",
            Variant::Nonlinear => "nonlinear",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Variant::Linear),
            "nonlinear" => Ok(Variant::Nonlinear),
            _ => Err(Error::InvalidArgument(format!(
                "unknown variant {s:?} (expected linear or nonlinear)"
            ))),
        }
    }
}

/// Hidden widths of the relation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden units of the semantic-embedding MLP.
    pub h1: usize,
    /// Hidden units of the relation MLP.
    pub h2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Feature dimension.
    pub m: usize,
    /// Semantic dimension.
    pub n: usize,
    pub mlp: MlpConfig,
}

impl ModelDims {
    /// Dimensions with the default hidden widths `h1 = h2 = m`.
    pub fn with_default_hidden(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            mlp: MlpConfig { h1: m, h2: m },
        }
    }
}

/// Affine layer `W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Matrix::zeros(out, inp),
            bias: vec![T::zero(); out],
        }
    }

    fn uniform_fan_in(out: usize, inp: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        let mut layer = Self::zeros(out, inp);
        for w in layer.weight.as_mut_slice() {
            *w = T::of(rng.random_range(-bound..=bound));
        }
        layer
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        let mut z = self.weight.matvec(x);
        for (zi, &b) in z.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        z
    }

    fn len(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// Parameters of the two-MLP relation model.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationNet<T> {
    /// `n → h1`
    pub embed_hidden: Layer<T>,
    /// `h1 → m`
    pub embed_out: Layer<T>,
    /// `2m → h2`
    pub relation_hidden: Layer<T>,
    /// `h2 → 1`
    pub relation_out: Layer<T>,
}

impl<T: Scalar> RelationNet<T> {
    fn layers(&self) -> [&Layer<T>; 4] {
        [
            &self.embed_hidden,
            &self.embed_out,
            &self.relation_hidden,
            &self.relation_out,
        ]
    }

    fn layers_mut(&mut self) -> [&mut Layer<T>; 4] {
        [
            &mut self.embed_hidden,
            &mut self.embed_out,
            &mut self.relation_hidden,
            &mut self.relation_out,
        ]
    }

    fn zeros(d: ModelDims) -> Self {
        Self {
            embed_hidden: Layer::zeros(d.mlp.h1, d.n),
            embed_out: Layer::zeros(d.m, d.mlp.h1),
            relation_hidden: Layer::zeros(d.mlp.h2, 2 * d.m),
            relation_out: Layer::zeros(1, d.mlp.h2),
        }
    }

    /// Semantic embedding `relu(W2 relu(W1 s + b1) + b2)`.
    pub fn embed(&self, s: &[T]) -> Vec<T> {
        let a1: Vec<T> = self.embed_hidden.apply(s).into_iter().map(relu).collect();
        self.embed_out.apply(&a1).into_iter().map(relu).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ModelParams<T> {
    Linear { w: Matrix<T> },
    Nonlinear(RelationNet<T>),
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub enum ForwardCache<T> {
    Linear {
        f: Vec<T>,
        s: Vec<T>,
    },
    Nonlinear {
        s: Vec<T>,
        z1: Vec<T>,
        a1: Vec<T>,
        z2: Vec<T>,
        /// `[f; relu(z2)]`
        x: Vec<T>,
        z3: Vec<T>,
        a3: Vec<T>,
        out: T,
    },
}

#[derive(Debug, Clone)]
pub struct CompatibilityOutput<T> {
    pub value: T,
    pub cache: ForwardCache<T>,
}

impl<T: Scalar> CompatibilityOutput<T> {
    /// Smallest |pre-activation| across ReLU units, or `None` for the linear
    /// model. Used by gradient checks to steer clear of kinks.
    pub fn min_abs_preactivation(&self) -> Option<T> {
        match &self.cache {
            ForwardCache::Linear { .. } => None,
            ForwardCache::Nonlinear { z1, z2, z3, .. } => z1
                .iter()
                .chain(z2)
                .chain(z3)
                .map(|z| z.abs())
                .reduce(T::min),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Zero-valued parameters of the given shape.
    pub fn zeros(variant: Variant, dims: ModelDims) -> Self {
        match variant {
            Variant::Linear => ModelParams::Linear {
                w: Matrix::zeros(dims.m, dims.n),
            },
            Variant::Nonlinear => ModelParams::Nonlinear(RelationNet::zeros(dims)),
        }
    }

    /// Seeded initialization: `W ~ U[-1/√n, 1/√n]` for the bilinear model,
    /// fan-in uniform weights and zero biases for the MLPs.
    pub fn init(variant: Variant, dims: ModelDims, seed: u64) -> Result<Self> {
        if dims.m == 0 || dims.n == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match variant {
            Variant::Linear => {
                let bound = 1.0 / (dims.n as f64).sqrt();
                let mut w = Matrix::zeros(dims.m, dims.n);
                for x in w.as_mut_slice() {
                    *x = T::of(rng.random_range(-bound..=bound));
                }
                ModelParams::Linear { w }
            }
            Variant::Nonlinear => {
                if dims.mlp.h1 == 0 || dims.mlp.h2 == 0 {
                    return Err(Error::InvalidArgument("hidden widths must be ≥ 1".into()));
                }
                ModelParams::Nonlinear(RelationNet {
                    embed_hidden: Layer::uniform_fan_in(dims.mlp.h1, dims.n, &mut rng),
                    embed_out: Layer::uniform_fan_in(dims.m, dims.mlp.h1, &mut rng),
                    relation_hidden: Layer::uniform_fan_in(dims.mlp.h2, 2 * dims.m, &mut rng),
                    relation_out: Layer::uniform_fan_in(1, dims.mlp.h2, &mut rng),
                })
            }
        })
    }

    pub fn variant(&self) -> Variant {
        match self {
            ModelParams::Linear { .. } => Variant::Linear,
            ModelParams::Nonlinear(_) => Variant::Nonlinear,
        }
    }

    /// Dimensions; hidden widths are reported as 0 for the linear model.
    pub fn dims(&self) -> ModelDims {
        match self {
            ModelParams::Linear { w } => ModelDims {
                m: w.rows(),
                n: w.cols(),
                mlp: MlpConfig { h1: 0, h2: 0 },
            },
            ModelParams::Nonlinear(net) => ModelDims {
                m: net.embed_out.weight.rows(),
                n: net.embed_hidden.weight.cols(),
                mlp: MlpConfig {
                    h1: net.embed_hidden.weight.rows(),
                    h2: net.relation_hidden.weight.rows(),
                },
            },
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            ModelParams::Linear { w } => w.rows() * w.cols(),
            ModelParams::Nonlinear(net) => net.layers().iter().map(|l| l.len()).sum(),
        }
    }

    fn check_inputs(&self, f: &[T], s: &[T]) -> Result<()> {
        let d = self.dims();
        if f.len() != d.m {
            return Err(Error::DimensionMismatch {
                what: "feature length",
                expected: d.m,
                found: f.len(),
            });
        }
        if s.len() != d.n {
            return Err(Error::DimensionMismatch {
                what: "semantic length",
                expected: d.n,
                found: s.len(),
            });
        }
        Ok(())
    }

    /// Compatibility value without keeping intermediates.
    pub fn compat(&self, f: &[T], s: &[T]) -> Result<T> {
        self.check_inputs(f, s)?;
        Ok(match self {
            ModelParams::Linear { w } => dot(f, &w.matvec(s)),
            ModelParams::Nonlinear(net) => {
                let mut x = f.to_vec();
                x.extend(net.embed(s));
                let a3: Vec<T> = net.relation_hidden.apply(&x).into_iter().map(relu).collect();
                sigmoid(net.relation_out.apply(&a3)[0])
            }
        })
    }

    /// Compatibility value plus the intermediates needed by
    /// [`ModelParams::accumulate_grad`].
    pub fn compat_forward(&self, f: &[T], s: &[T]) -> Result<CompatibilityOutput<T>> {
        self.check_inputs(f, s)?;
        Ok(match self {
            ModelParams::Linear { w } => CompatibilityOutput {
                value: dot(f, &w.matvec(s)),
                cache: ForwardCache::Linear {
                    f: f.to_vec(),
                    s: s.to_vec(),
                },
            },
            ModelParams::Nonlinear(net) => {
                let z1 = net.embed_hidden.apply(s);
                let a1: Vec<T> = z1.iter().copied().map(relu).collect();
                let z2 = net.embed_out.apply(&a1);
                let mut x = f.to_vec();
                x.extend(z2.iter().copied().map(relu));
                let z3 = net.relation_hidden.apply(&x);
                let a3: Vec<T> = z3.iter().copied().map(relu).collect();
                let out = sigmoid(net.relation_out.apply(&a3)[0]);
                CompatibilityOutput {
                    value: out,
                    cache: ForwardCache::Nonlinear {
                        s: s.to_vec(),
                        z1,
                        a1,
                        z2,
                        x,
                        z3,
                        a3,
                        out,
                    },
                }
            }
        })
    }

    /// Adds `upstream · ∂c/∂θ` into `grad`, a flat vector in
    /// [`ModelParams::flatten`] layout.
    pub fn accumulate_grad(&self, out: &CompatibilityOutput<T>, upstream: T, grad: &mut [T]) {
        debug_assert_eq!(grad.len(), self.num_params());
        if upstream == T::zero() {
            return;
        }
        match (self, &out.cache) {
            (ModelParams::Linear { w }, ForwardCache::Linear { f, s }) => {
                let n = w.cols();
                for (i, &fi) in f.iter().enumerate() {
                    let g = upstream * fi;
                    for (gij, &sj) in grad[i * n..(i + 1) * n].iter_mut().zip(s) {
                        *gij += g * sj;
                    }
                }
            }
            (
                ModelParams::Nonlinear(net),
                ForwardCache::Nonlinear {
                    s,
                    z1,
                    a1,
                    z2,
                    x,
                    z3,
                    a3,
                    out,
                },
            ) => {
                let [g1, g2, g3, g4] = split_layers(net, grad);

                let dz4 = upstream * *out * (T::one() - *out);
                let da3 = layer_backward(&net.relation_out, a3, &[dz4], g4);
                let dz3: Vec<T> = da3.iter().zip(z3).map(|(&d, &z)| d * relu_grad(z)).collect();
                let dx = layer_backward(&net.relation_hidden, x, &dz3, g3);
                let m = z2.len();
                let dz2: Vec<T> = dx[m..].iter().zip(z2).map(|(&d, &z)| d * relu_grad(z)).collect();
                let da1 = layer_backward(&net.embed_out, a1, &dz2, g2);
                let dz1: Vec<T> = da1.iter().zip(z1).map(|(&d, &z)| d * relu_grad(z)).collect();
                layer_backward(&net.embed_hidden, s, &dz1, g1);
            }
            _ => panic!("forward cache does not match model variant"),
        }
    }

    /// `upstream · ∂c(f, s)/∂θ`, shaped like `self`.
    pub fn compat_grad(&self, f: &[T], s: &[T], upstream: T) -> Result<Self> {
        let out = self.compat_forward(f, s)?;
        let mut g = vec![T::zero(); self.num_params()];
        self.accumulate_grad(&out, upstream, &mut g);
        Self::unflatten(&g, self)
    }

    /// Parameters as one vector: the bilinear matrix row-major, or for the
    /// relation model each layer's weights (row-major) then bias, in the order
    /// embed_hidden, embed_out, relation_hidden, relation_out.
    pub fn flatten(&self) -> Vec<T> {
        match self {
            ModelParams::Linear { w } => w.as_slice().to_vec(),
            ModelParams::Nonlinear(net) => {
                let mut v = Vec::with_capacity(self.num_params());
                for l in net.layers() {
                    v.extend_from_slice(l.weight.as_slice());
                    v.extend_from_slice(&l.bias);
                }
                v
            }
        }
    }

    /// Inverse of [`ModelParams::flatten`] using `template` for shapes.
    pub fn unflatten(values: &[T], template: &Self) -> Result<Self> {
        if values.len() != template.num_params() {
            return Err(Error::DimensionMismatch {
                what: "flat parameter length",
                expected: template.num_params(),
                found: values.len(),
            });
        }
        let mut out = template.clone();
        out.assign_flat(values);
        Ok(out)
    }

    /// Overwrites parameters in place from a flat vector of matching length.
    pub fn assign_flat(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.num_params(), "flat parameter length");
        match self {
            ModelParams::Linear { w } => w.as_mut_slice().copy_from_slice(values),
            ModelParams::Nonlinear(net) => {
                let mut rest = values;
                for l in net.layers_mut() {
                    let (wv, r) = rest.split_at(l.weight.rows() * l.weight.cols());
                    l.weight.as_mut_slice().copy_from_slice(wv);
                    let (bv, r) = r.split_at(l.bias.len());
                    l.bias.copy_from_slice(bv);
                    rest = r;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let flat: Vec<U> = self.flatten().into_iter().map(|x| U::of(x.as_f64())).collect();
        let mut out = ModelParams::<U>::zeros(self.variant(), self.dims());
        out.assign_flat(&flat);
        out
    }
}

/// Per-layer mutable views into a flat gradient for the relation model.
fn split_layers<'g, T: Scalar>(net: &RelationNet<T>, grad: &'g mut [T]) -> [&'g mut [T]; 4] {
    let [l1, l2, l3, _] = net.layers().map(Layer::len);
    let (g1, rest) = grad.split_at_mut(l1);
    let (g2, rest) = rest.split_at_mut(l2);
    let (g3, g4) = rest.split_at_mut(l3);
    [g1, g2, g3, g4]
}

/// Accumulates weight/bias gradients of `z = W x + b` into `g` given `dz`, and
/// returns `Wᵀ dz`.
fn layer_backward<T: Scalar>(layer: &Layer<T>, x: &[T], dz: &[T], g: &mut [T]) -> Vec<T> {
    let cols = layer.weight.cols();
    let (gw, gb) = g.split_at_mut(layer.weight.rows() * cols);
    for (i, &d) in dz.iter().enumerate() {
        if d == T::zero() {
            continue;
        }
        for (gij, &xj) in gw[i * cols..(i + 1) * cols].iter_mut().zip(x) {
            *gij += d * xj;
        }
        gb[i] += d;
    }
    layer.weight.tr_matvec(dz)
}
