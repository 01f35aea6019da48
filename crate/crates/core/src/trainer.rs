//! Paired-minibatch training.
//!
//! Each epoch shuffles the training instances and cuts them into consecutive
//! minibatches. Batch `2t` supplies the anchors and batch `2t+1` supplies the
//! borrowing pool (its class semantics, deduplicated). A trailing unpaired
//! batch is dropped.
//!
//! The trainer only ever reads training instances and seen-class semantics:
//! [`TrainView`] copies exactly those out of the dataset up front, so test
//! instances and unseen-class semantics cannot influence a run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datamodel::{scale_factor_for, ClassId, Dataset};
use crate::error::{Error, Result};
use crate::losses::{loss_and_gradient, Anchor, LossBreakdown, LossConfig, LossTerm};
use crate::matrix::Matrix;
use crate::models::{Checkpoint, MlpConfig, ModelDims, ModelParams, Variant};
use crate::optimizer::{OptimizerKind, OptimizerState};
use crate::scalar::Scalar;

/// Where each anchor's borrowing candidates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    /// Semantics of the classes in the paired odd minibatch.
    #[default]
    PairedBatch,
    /// Every seen training class (the anchor's own class is still excluded).
    FullTrainSet,
}

impl PoolMode {
    pub fn name(self) -> &'static str {
        match self {
            PoolMode::PairedBatch => "paired_batch",
            PoolMode::FullTrainSet => "full_train_set",
        }
    }
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired_batch" => Ok(PoolMode::PairedBatch),
            "full_train_set" => Ok(PoolMode::FullTrainSet),
            _ => Err(Error::InvalidArgument(format!(
                "unknown pool mode {s:?} (expected paired_batch or full_train_set)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub loss: LossConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Defaults to SGD for the linear model and Adam for the nonlinear one.
    pub optimizer: Option<OptimizerKind>,
    /// Defaults to 0.1 (SGD) or 1e-3 (Adam).
    pub lr: Option<f64>,
    pub momentum: f64,
    pub seed: u64,
    /// Hidden widths; each defaults to the feature dimension.
    pub h1: Option<usize>,
    pub h2: Option<usize>,
    /// Target mean semantic norm, or `None` to train on raw semantics.
    pub scale_target: Option<f64>,
    pub pool_mode: PoolMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Linear,
            loss: LossConfig::default(),
            batch_size: 32,
            epochs: 20,
            optimizer: None,
            lr: None,
            momentum: 0.0,
            seed: 0,
            h1: None,
            h2: None,
            scale_target: Some(1.0),
            pool_mode: PoolMode::PairedBatch,
        }
    }
}

impl TrainConfig {
    pub fn optimizer_kind(&self) -> OptimizerKind {
        self.optimizer.unwrap_or(match self.variant {
            Variant::Linear => OptimizerKind::Sgd,
            Variant::Nonlinear => OptimizerKind::Adam,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.optimizer_kind() {
            OptimizerKind::Sgd => 0.1,
            OptimizerKind::Adam => 1e-3,
        })
    }

    pub fn model_dims(&self, m: usize, n: usize) -> ModelDims {
        ModelDims {
            m,
            n,
            mlp: MlpConfig {
                h1: self.h1.unwrap_or(m),
                h2: self.h2.unwrap_or(m),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch_size must be ≥ 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be ≥ 1".into()));
        }
        self.loss.validate()?;
        let lr = self.learning_rate();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be finite and ≥ 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.h1 == Some(0) || self.h2 == Some(0) {
            return Err(Error::InvalidArgument("hidden widths must be ≥ 1".into()));
        }
        if let Some(t) = self.scale_target {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "scale_target must be a positive real, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Training instances and seen-class semantics copied out of a dataset.
#[derive(Debug, Clone)]
pub struct TrainView<T> {
    pub features: Matrix<T>,
    pub labels: Vec<ClassId>,
    /// Seen-class semantics after scaling.
    pub semantics: BTreeMap<ClassId, Vec<T>>,
    /// Factor applied to the dataset's semantics.
    pub semantic_scale: f64,
}

impl<T: Scalar> TrainView<T> {
    /// Copies training rows and seen semantics; with `scale_target` the
    /// semantics are rescaled so their mean norm (over seen classes) hits the
    /// target.
    pub fn new(dataset: &Dataset<T>, scale_target: Option<f64>) -> Result<Self> {
        let split = &dataset.split;
        if split.train_idx.is_empty() {
            return Err(Error::Empty("no training instances"));
        }
        let mut labels = Vec::with_capacity(split.train_idx.len());
        for &i in &split.train_idx {
            let l = *dataset.labels.get(i).ok_or_else(|| {
                Error::InvalidDataset(format!("train index {i} out of range"))
            })?;
            if !split.seen_classes.contains(&l) {
                return Err(Error::InvalidDataset(format!(
                    "train instance {i} has class {l} outside the seen set"
                )));
            }
            labels.push(l);
        }
        if split.train_idx.iter().any(|&i| i >= dataset.num_instances()) {
            return Err(Error::InvalidDataset("train index out of range".into()));
        }
        let features = dataset.features.select_rows(&split.train_idx);
        if let Some(pos) = features.as_slice().iter().position(|x| !x.is_finite()) {
            let row = pos / features.cols().max(1);
            return Err(Error::InvalidDataset(format!(
                "non-finite feature at ({},{})",
                split.train_idx[row],
                pos % features.cols().max(1)
            )));
        }

        let mut semantics = BTreeMap::new();
        for &c in &split.seen_classes {
            if c.index() >= dataset.num_classes() {
                return Err(Error::InvalidDataset(format!("unknown class id {c}")));
            }
            let s = dataset.semantic(c);
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidDataset(format!("non-finite semantic for seen class {c}")));
            }
            semantics.insert(c, s.to_vec());
        }
        let distinct: BTreeSet<ClassId> = labels.iter().copied().collect();
        if distinct.len() < 2 {
            return Err(Error::InvalidDataset(
                "training set must cover at least 2 seen classes".into(),
            ));
        }

        let semantic_scale = match scale_target {
            Some(target) => scale_factor_for(semantics.values().map(Vec::as_slice), target)?,
            None => 1.0,
        };
        if semantic_scale != 1.0 {
            let k = T::of(semantic_scale);
            for v in semantics.values_mut() {
                for x in v.iter_mut() {
                    *x *= k;
                }
            }
        }
        Ok(Self {
            features,
            labels,
            semantics,
            semantic_scale,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantics.values().next().map_or(0, Vec::len)
    }

    fn anchor(&self, row: usize) -> Anchor<'_, T> {
        let class = self.labels[row];
        Anchor {
            feature: self.features.row(row),
            semantic: &self.semantics[&class],
            class,
        }
    }

    fn class_entries(&self, classes: impl IntoIterator<Item = ClassId>) -> Vec<(ClassId, &[T])> {
        let set: BTreeSet<ClassId> = classes.into_iter().collect();
        set.into_iter().map(|c| (c, self.semantics[&c].as_slice())).collect()
    }
}

/// Anchor rows and borrowing-pool rows (indices into a [`TrainView`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPair {
    pub even: Vec<usize>,
    pub odd: Vec<usize>,
}

/// Shuffles the training rows and pairs consecutive minibatches.
pub fn make_batch_pairs<T: Scalar>(
    view: &TrainView<T>,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BatchPair>> {
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!("batch_size must be ≥ 2, got {batch_size}")));
    }
    if view.len() < 2 * batch_size {
        return Err(Error::InvalidArgument(format!(
            "cannot form a batch pair: {} training instances < 2 × batch_size {batch_size}",
            view.len()
        )));
    }
    let classes: BTreeSet<ClassId> = view.labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::InvalidDataset("training set must cover at least 2 seen classes".into()));
    }
    let mut order: Vec<usize> = (0..view.len()).collect();
    order.shuffle(rng);
    Ok(order
        .chunks_exact(2 * batch_size)
        .map(|c| BatchPair {
            even: c[..batch_size].to_vec(),
            odd: c[batch_size..].to_vec(),
        })
        .collect())
}

/// Runs the objective on one batch pair, steps the optimizer, and returns the
/// loss measured before the step.
pub fn train_step<T: Scalar>(
    model: &mut ModelParams<T>,
    pair: &BatchPair,
    view: &TrainView<T>,
    config: &TrainConfig,
    optimizer: &mut OptimizerState<T>,
) -> Result<LossBreakdown<T>> {
    let anchors: Vec<Anchor<'_, T>> = pair.even.iter().map(|&r| view.anchor(r)).collect();
    let pool = match config.pool_mode {
        PoolMode::PairedBatch => view.class_entries(pair.odd.iter().map(|&r| view.labels[r])),
        PoolMode::FullTrainSet => view.class_entries(view.semantics.keys().copied()),
    };
    let (breakdown, grad) = loss_and_gradient(model, &anchors, &pool, &config.loss, LossTerm::Total)?;
    let mut theta = model.flatten();
    optimizer.step(&mut theta, &grad)?;
    if let Some(i) = theta.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("parameter {i} became {} after update", theta[i])));
    }
    model.assign_flat(&theta);
    Ok(breakdown)
}

/// Loss summary for one epoch.
///
/// `base` and `sb` are means per anchor, `decay` the mean over steps, and
/// `total = base + α·sb + β·decay` of those means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub base: f64,
    pub sb: f64,
    pub decay: f64,
    pub total: f64,
    pub skipped_sb_count: usize,
    /// Pairs whose anchor batch held a single class and were not trained on.
    pub skipped_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub seed: u64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub history: TrainHistory,
}

/// Trains from scratch. Deterministic given `config.seed`.
pub fn train<T: Scalar>(dataset: &Dataset<T>, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(dataset, config, |_, _| Ok(()))
}

/// [`train`] with a hook called after every epoch with that epoch's record
/// and the current parameters (per-epoch checkpointing, progress output).
pub fn train_with<T: Scalar>(
    dataset: &Dataset<T>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ModelParams<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let started = Instant::now();
    let view = TrainView::new(dataset, config.scale_target)?;
    let dims = config.model_dims(view.feature_dim(), view.semantic_dim());
    let mut model = ModelParams::init(config.variant, dims, config.seed)?;
    let mut optimizer = OptimizerState::new(
        config.optimizer_kind(),
        config.learning_rate(),
        config.momentum,
        model.num_params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let alpha = config.loss.alpha;
    let beta = config.loss.beta;
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let pairs = make_batch_pairs(&view, config.batch_size, &mut rng)?;
        let (mut base, mut sb, mut decay) = (0.0, 0.0, 0.0);
        let (mut anchors, mut sb_anchors, mut steps) = (0usize, 0usize, 0usize);
        let (mut skipped_sb, mut skipped_steps) = (0usize, 0usize);
        for pair in &pairs {
            let first = view.labels[pair.even[0]];
            if pair.even.iter().all(|&r| view.labels[r] == first) {
                skipped_steps += 1;
                continue;
            }
            let b = train_step(&mut model, pair, &view, config, &mut optimizer).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, step {steps}: {msg}")),
                other => other,
            })?;
            base += b.base.as_f64();
            sb += b.sb.as_f64();
            decay += b.decay.as_f64();
            anchors += pair.even.len();
            sb_anchors += pair.even.len() - b.skipped_sb;
            skipped_sb += b.skipped_sb;
            steps += 1;
        }
        let mean = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
        let (base, sb, decay) = (mean(base, anchors), mean(sb, sb_anchors), mean(decay, steps));
        let record = EpochRecord {
            epoch,
            base,
            sb,
            decay,
            total: base + alpha * sb + beta * decay,
            skipped_sb_count: skipped_sb,
            skipped_steps,
        };
        on_epoch(&record, &model)?;
        records.push(record);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params: model,
            semantic_scale: view.semantic_scale,
        },
        history: TrainHistory {
            epochs: records,
            seed: config.seed,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    })
}
