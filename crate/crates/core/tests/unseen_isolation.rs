//! Training must never read test instances or unseen-class semantics.

use gzsl_sb::datamodel::Dataset;
use gzsl_sb::models::{save_checkpoint, Variant};
use gzsl_sb::synthgen::{gen_dataset, SynthSpec};
use gzsl_sb::trainer::{train, TrainConfig};

fn poisoned(d: &Dataset<f32>) -> Dataset<f32> {
    let mut p = d.clone();
    let m = p.feature_dim();
    for &i in p.split.test_seen_idx.iter().chain(&p.split.test_unseen_idx) {
        for j in 0..m {
            p.features[(i, j)] = f32::NAN;
        }
    }
    let n = p.semantic_dim();
    for &c in &p.split.unseen_classes.clone() {
        for j in 0..n {
            p.semantics[(c.index(), j)] = f32::NAN;
        }
    }
    p
}

#[test]
fn nan_poisoned_test_data_leaves_checkpoint_unchanged() {
    let spec = SynthSpec {
        n_seen: 6,
        n_unseen: 3,
        per_class_train: 10,
        per_class_test: 5,
        seed: 2,
        ..SynthSpec::default()
    };
    let clean = gen_dataset::<f32>(&spec).unwrap();
    let dirty = poisoned(&clean);
    assert!(!dirty.validate().is_valid());
    let dir = tempfile::tempdir().unwrap();
    for variant in [Variant::Linear, Variant::Nonlinear] {
        let config = TrainConfig {
            variant,
            epochs: 3,
            batch_size: 8,
            seed: 4,
            ..TrainConfig::default()
        };
        let a = train(&clean, &config).unwrap();
        let b = train(&dirty, &config).unwrap();
        let (pa, pb) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&pa, &a.checkpoint).unwrap();
        save_checkpoint(&pb, &b.checkpoint).unwrap();
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap(), "{variant:?}");
        assert_eq!(a.history.epochs, b.history.epochs);
    }
}
