use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gzsl_sb::datamodel::load_bundle;
use gzsl_sb::evaluator::gzsl_report;
use gzsl_sb::models::load_checkpoint;
use gzsl_sb::trainer::{train, TrainConfig};
use gzsl_sb_cli::{
    cmd_eval, cmd_gradcheck, cmd_inspect, cmd_sweep, cmd_synth, cmd_train, parse_list, CellStatus, CliError,
    HISTORY_FILE, MANIFEST_FILE,
};

const SMALL_SPEC: &str = "n_seen=5\nn_unseen=2\nper_class_train=12\nper_class_test=6\nm=8\nn=5\nseed=3\n";
const SMALL_TRAIN: &str = "alpha=0.1\nbatch_size=8\nepochs=4\nseed=2\n";

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn synth_small(dir: &Path) -> PathBuf {
    let spec = write(dir, "spec.txt", SMALL_SPEC);
    let bundle = dir.join("bundle");
    cmd_synth(&spec, &bundle).unwrap();
    bundle
}

#[test]
fn synth_is_valid_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write(tmp.path(), "spec.txt", SMALL_SPEC);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cmd_synth(&spec, &a).unwrap();
    cmd_synth(&spec, &b).unwrap();
    assert!(load_bundle::<f32>(&a).unwrap().validate().is_valid());
    for name in ["meta.txt", "features.bin", "semantics.bin", "labels.bin", "split.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert!(a.join(MANIFEST_FILE).exists());

    let missing = cmd_synth(&tmp.path().join("nope.txt"), &tmp.path().join("c")).unwrap_err();
    assert!(matches!(missing, CliError::Usage(_)));
    assert_eq!(missing.exit_code(), 1);
}

#[test]
fn train_writes_reloadable_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synth_small(tmp.path());
    let config = write(tmp.path(), "train.txt", SMALL_TRAIN);
    let out = tmp.path().join("run");
    let artifacts = cmd_train(&config, &bundle, &out).unwrap();
    let ckpt = load_checkpoint::<f64>(&artifacts.checkpoint).unwrap();
    assert!(ckpt.params.is_finite());
    let history = fs::read_to_string(out.join(HISTORY_FILE)).unwrap();
    assert_eq!(history.lines().count(), 4);
    for line in history.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["total"].as_f64().unwrap().is_finite());
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 2);
    // The recorded config reproduces the run.
    let snapshot = write(tmp.path(), "snapshot.txt", manifest["config"].as_str().unwrap());
    let again = cmd_train(&snapshot, &bundle, &tmp.path().join("again")).unwrap();
    assert_eq!(fs::read(&artifacts.checkpoint).unwrap(), fs::read(&again.checkpoint).unwrap());
}

#[test]
fn train_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synth_small(tmp.path());
    let big = write(tmp.path(), "big.txt", "alpha=1.5\n");
    let err = cmd_train(&big, &bundle, &tmp.path().join("x")).unwrap_err();
    assert!(err.to_string().contains("α ∈ (0,1)"), "{err}");
    assert_eq!(err.exit_code(), 1);

    let unknown = write(tmp.path(), "unknown.txt", "epochs=3\nlearning_rate=0.1\n");
    let err = cmd_train(&unknown, &bundle, &tmp.path().join("x")).unwrap_err().to_string();
    assert!(err.contains("line 2") && err.contains("learning_rate"), "{err}");

    let config = write(tmp.path(), "ok.txt", SMALL_TRAIN);
    let err = cmd_train(&config, &tmp.path().join("no_bundle"), &tmp.path().join("x")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn eval_matches_library_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synth_small(tmp.path());
    let config = write(tmp.path(), "train.txt", SMALL_TRAIN);
    let run = tmp.path().join("run");
    let artifacts = cmd_train(&config, &bundle, &run).unwrap();
    let report = cmd_eval(&artifacts.checkpoint, &bundle, Some(&run)).unwrap();
    for v in [report.u, report.s, report.h] {
        assert!((0.0..=1.0).contains(&v));
    }
    let (u, s, h) = report.recompute();
    assert_eq!((u, s, h), (report.u, report.s, report.h));

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["h"].as_f64().unwrap(), 100.0 * report.h);

    let dataset = load_bundle::<f32>(&bundle).unwrap().cast::<f64>();
    let lib_config = TrainConfig::from_kv_str(SMALL_TRAIN).unwrap();
    let outcome = train(&dataset, &lib_config).unwrap();
    let scaled = dataset.with_semantic_factor(outcome.checkpoint.semantic_scale);
    let lib_report = gzsl_report(&outcome.checkpoint.params, &scaled).unwrap();
    assert_eq!(lib_report, report);
}

#[test]
fn eval_rejects_dimension_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synth_small(tmp.path());
    let config = write(tmp.path(), "train.txt", SMALL_TRAIN);
    let artifacts = cmd_train(&config, &bundle, &tmp.path().join("run")).unwrap();
    let other_spec = write(tmp.path(), "other.txt", &SMALL_SPEC.replace("m=8", "m=9"));
    let other = tmp.path().join("other");
    cmd_synth(&other_spec, &other).unwrap();
    let err = cmd_eval(&artifacts.checkpoint, &other, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("feature dimension"), "{err}");
}

#[test]
fn sweep_grid_is_complete_and_sorted() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synth_small(tmp.path());
    let config = write(tmp.path(), "train.txt", "batch_size=8\nepochs=2\n");
    let alphas = [2.0, 0.0, 1.0, 0.01, 0.1];
    let seeds = [5, 1, 2, 3, 4];
    let out = tmp.path().join("sweep");
    let result = cmd_sweep(&config, &bundle, &alphas, &seeds, true, Some(&out)).unwrap();
    assert_eq!(result.rows.len(), 25);
    assert!(result.warnings.is_empty());
    let keys: Vec<(f64, u64)> = result.rows.iter().map(|r| (r.alpha, r.seed)).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    assert_eq!(keys, sorted);
    assert!(result.rows.iter().all(|r| matches!(r.status, CellStatus::Ok { .. })));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
    assert_eq!(csv.lines().next().unwrap(), "alpha,seed,u,s,h,status");

    // Parallel cells give the same numbers as a second run.
    let again = cmd_sweep(&config, &bundle, &alphas, &seeds, true, None).unwrap();
    assert_eq!(again.rows, result.rows);
}

#[test]
fn sweep_edge_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synth_small(tmp.path());
    let config = write(tmp.path(), "train.txt", "batch_size=8\nepochs=1\n");

    assert!(matches!(parse_list::<f64>("--alphas", " , "), Err(CliError::Usage(_))));
    assert_eq!(parse_list::<f64>("--alphas", "0, 0.1,2").unwrap(), vec![0.0, 0.1, 2.0]);
    assert!(cmd_sweep(&config, &bundle, &[], &[1], false, None).is_err());

    let dup = cmd_sweep(&config, &bundle, &[0.1, 0.1], &[1, 2, 1], false, None).unwrap();
    assert_eq!(dup.rows.len(), 2);
    assert_eq!(dup.warnings.len(), 4);

    let err = cmd_sweep(&config, &bundle, &[0.1, 2.0], &[1], false, None).unwrap_err();
    assert!(err.to_string().contains("α ∈ (0,1)"));

    let diverging = write(tmp.path(), "diverge.txt", "batch_size=8\nepochs=3\nlr=1e300\n");
    let failed = cmd_sweep(&diverging, &bundle, &[0.0, 0.1], &[1], false, None).unwrap();
    assert_eq!(failed.rows.len(), 2);
    assert!(failed.rows.iter().all(|r| matches!(r.status, CellStatus::Failed(_))));
    assert!(failed.to_csv().lines().skip(1).all(|l| l.contains(",,,") && l.contains("failed: ")));
    let text = failed.to_csv();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(reader.records().count(), 2);
}

#[test]
fn gradcheck_and_inspect() {
    let report = cmd_gradcheck(None).unwrap();
    assert!(report.all_passed());
    assert_eq!(report.families.len(), 6);
    let table = gzsl_sb_cli::gradcheck_table(&report);
    assert_eq!(table.lines().count(), 7);

    let tmp = tempfile::tempdir().unwrap();
    let bundle = synth_small(tmp.path());
    let text = cmd_inspect(&bundle).unwrap();
    assert!(text.contains("5 seen, 2 unseen") && text.contains("valid        yes"), "{text}");
    let config = write(tmp.path(), "train.txt", SMALL_TRAIN);
    let artifacts = cmd_train(&config, &bundle, &tmp.path().join("run")).unwrap();
    let text = cmd_inspect(&artifacts.checkpoint).unwrap();
    assert!(text.contains("variant      linear") && text.contains("parameters   40"), "{text}");
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_gzsl-sb");
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synth_small(tmp.path());
    let config = write(tmp.path(), "train.txt", SMALL_TRAIN);
    let run = |args: &[&str]| Command::new(bin).args(args).output().unwrap();
    let p = |p: &Path| p.to_str().unwrap().to_string();

    let ok = run(&["train", "--config", &p(&config), "--bundle", &p(&bundle), "--out", &p(&tmp.path().join("r"))]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let ckpt = tmp.path().join("r").join("model.ckpt");
    let eval = run(&["eval", "--checkpoint", &p(&ckpt), "--bundle", &p(&bundle)]);
    assert_eq!(eval.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&eval.stdout).starts_with("      u       s       h\n"));

    let bad = write(tmp.path(), "bad.txt", "alpha=1.5\n");
    let usage = run(&["train", "--config", &p(&bad), "--bundle", &p(&bundle), "--out", &p(&tmp.path().join("x"))]);
    assert_eq!(usage.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&usage.stderr).contains("α ∈ (0,1)"));

    let data = run(&["eval", "--checkpoint", &p(&ckpt), "--bundle", &p(&tmp.path().join("missing"))]);
    assert_eq!(data.status.code(), Some(2));

    let sweep = run(&[
        "sweep", "--config", &p(&config), "--bundle", &p(&bundle), "--alphas", "0,0.1", "--seeds", "1,1",
    ]);
    assert_eq!(sweep.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&sweep.stderr).contains("warning: duplicate"));
    assert_eq!(String::from_utf8_lossy(&sweep.stdout).lines().count(), 3);

    let empty = run(&["sweep", "--config", &p(&config), "--bundle", &p(&bundle), "--alphas", "", "--seeds", "1"]);
    assert_eq!(empty.status.code(), Some(1));

    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}
