//! Command implementations behind the `gzsl-sb` binary.
//!
//! Every command reads its inputs from disk, writes its artifacts next to a
//! `manifest.json`, and returns the in-memory result so tests can drive the
//! commands directly.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;

use gzsl_sb::datamodel::{self, load_bundle, save_bundle};
use gzsl_sb::evaluator::{gzsl_report, EvalReport};
use gzsl_sb::gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
use gzsl_sb::models::{load_checkpoint, save_checkpoint, Checkpoint};
use gzsl_sb::synthgen::{gen_dataset, SynthSpec};
use gzsl_sb::trainer::{train, EpochRecord, TrainConfig};
use gzsl_sb::{ErrorKind, ModelParams};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] gzsl_sb::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            },
            CliError::Io { .. } | CliError::Json(_) => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Everything needed to re-run a command.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Verbatim config text, canonicalized where the command parses one.
    pub config: Option<String>,
    pub bundle: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub seed: Option<u64>,
    pub extra: serde_json::Value,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_time_secs: f64,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: None,
            bundle: None,
            checkpoint: None,
            report: None,
            seed: None,
            extra: serde_json::Value::Null,
            started_unix: unix_now(),
            finished_unix: 0.0,
            wall_time_secs: 0.0,
            clock: Some(Instant::now()),
        }
    }

    fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished_unix = unix_now();
        self.wall_time_secs = self.clock.map_or(0.0, |c| c.elapsed().as_secs_f64());
        let mut json = serde_json::to_vec_pretty(&self)?;
        json.push(b'\n');
        write_file(&dir.join(MANIFEST_FILE), &json)?;
        Ok(self)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Generates a synthetic bundle into `out` from a synth spec file.
pub fn cmd_synth(spec_path: &Path, out: &Path) -> Result<gzsl_sb::Dataset32> {
    let mut manifest = RunManifest::new("synth");
    let spec = SynthSpec::from_kv_str(&read_config(spec_path)?)?;
    let dataset = gen_dataset::<f32>(&spec)?;
    save_bundle(&dataset, out)?;
    manifest.config = Some(spec.to_kv_string());
    manifest.bundle = Some(out.to_path_buf());
    manifest.seed = Some(spec.seed);
    manifest.finish(out)?;
    Ok(dataset)
}

fn load_for_training(bundle: &Path) -> Result<gzsl_sb::Dataset> {
    Ok(load_bundle::<f32>(bundle)?.cast::<f64>())
}

/// Trains on `dataset` and scores the result on its test splits.
pub fn train_and_eval(dataset: &gzsl_sb::Dataset, config: &TrainConfig) -> Result<(Checkpoint<f64>, EvalReport)> {
    let outcome = train(dataset, config)?;
    let report = evaluate(&outcome.checkpoint, dataset)?;
    Ok((outcome.checkpoint, report))
}

fn evaluate(ckpt: &Checkpoint<f64>, dataset: &gzsl_sb::Dataset) -> Result<EvalReport> {
    let dims = ckpt.params.dims();
    if dims.m != dataset.feature_dim() {
        return Err(gzsl_sb::Error::DimensionMismatch {
            what: "checkpoint feature dimension vs bundle",
            expected: dims.m,
            found: dataset.feature_dim(),
        }
        .into());
    }
    if dims.n != dataset.semantic_dim() {
        return Err(gzsl_sb::Error::DimensionMismatch {
            what: "checkpoint semantic dimension vs bundle",
            expected: dims.n,
            found: dataset.semantic_dim(),
        }
        .into());
    }
    let scaled = dataset.with_semantic_factor(ckpt.semantic_scale);
    Ok(gzsl_report(&ckpt.params, &scaled)?)
}

pub fn history_jsonl(epochs: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for record in epochs {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub manifest: RunManifest,
}

/// Trains from a config file and bundle; writes checkpoint, JSON-lines
/// history and manifest into `out`.
pub fn cmd_train(config_path: &Path, bundle: &Path, out: &Path) -> Result<TrainArtifacts> {
    let mut manifest = RunManifest::new("train");
    let config = TrainConfig::from_kv_str(&read_config(config_path)?)?;
    let dataset = load_for_training(bundle)?;
    let outcome = train(&dataset, &config)?;

    create_dir(out)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    let history = out.join(HISTORY_FILE);
    save_checkpoint(&checkpoint, &outcome.checkpoint)?;
    write_file(&history, history_jsonl(&outcome.history.epochs)?.as_bytes())?;

    manifest.config = Some(config.to_kv_string());
    manifest.bundle = Some(bundle.to_path_buf());
    manifest.checkpoint = Some(checkpoint.clone());
    manifest.seed = Some(config.seed);
    manifest.extra = serde_json::json!({
        "history": history,
        "train_wall_time_secs": outcome.history.wall_time_secs,
        "semantic_scale": outcome.checkpoint.semantic_scale,
    });
    let manifest = manifest.finish(out)?;
    Ok(TrainArtifacts {
        checkpoint,
        history,
        manifest,
    })
}

/// Report as written to disk: percentages plus the per-class breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct ReportJson {
    pub u: f64,
    pub s: f64,
    pub h: f64,
    pub per_class: Vec<PerClassJson>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerClassJson {
    pub class: u32,
    pub split: &'static str,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl ReportJson {
    pub fn from_report(r: &EvalReport) -> Self {
        let per_class = r
            .counts
            .iter()
            .map(|(c, n)| PerClassJson {
                class: c.0,
                split: if r.unseen_classes.contains(c) { "unseen" } else { "seen" },
                correct: n.correct,
                total: n.total,
                accuracy: 100.0 * r.per_class_acc[c],
            })
            .collect();
        Self {
            u: 100.0 * r.u,
            s: 100.0 * r.s,
            h: 100.0 * r.h,
            per_class,
        }
    }
}

/// Evaluates a checkpoint on a bundle. With `out`, writes `report.json` and a
/// manifest there.
pub fn cmd_eval(checkpoint: &Path, bundle: &Path, out: Option<&Path>) -> Result<EvalReport> {
    let mut manifest = RunManifest::new("eval");
    let ckpt = load_checkpoint::<f64>(checkpoint)?;
    let dataset = load_for_training(bundle)?;
    let report = evaluate(&ckpt, &dataset)?;
    if let Some(out) = out {
        create_dir(out)?;
        let path = out.join(REPORT_FILE);
        let mut json = serde_json::to_vec_pretty(&ReportJson::from_report(&report))?;
        json.push(b'\n');
        write_file(&path, &json)?;
        manifest.bundle = Some(bundle.to_path_buf());
        manifest.checkpoint = Some(checkpoint.to_path_buf());
        manifest.report = Some(path);
        manifest.finish(out)?;
    }
    Ok(report)
}

/// Parses a comma-separated list, e.g. `0,0.1,2`.
pub fn parse_list<V: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<V>>
where
    V::Err: std::fmt::Display,
{
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(CliError::Usage(format!("{flag}: empty list")));
    }
    items
        .iter()
        .map(|s| s.parse().map_err(|e| CliError::Usage(format!("{flag}: bad entry {s:?} ({e})"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok { u: f64, s: f64, h: f64 },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub seed: u64,
    pub status: CellStatus,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub warnings: Vec<String>,
}

impl SweepOutcome {
    /// `alpha,seed,u,s,h,status` with u, s, h in percent; failed cells leave
    /// u, s, h empty and carry the error in `status`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let write = |w: &mut csv::Writer<Vec<u8>>, rec: [String; 6]| w.write_record(&rec).expect("in-memory write");
        write(&mut w, ["alpha", "seed", "u", "s", "h", "status"].map(String::from));
        for row in &self.rows {
            let (a, seed) = (row.alpha.to_string(), row.seed.to_string());
            let rec = match &row.status {
                CellStatus::Ok { u, s, h } => [
                    a,
                    seed,
                    format!("{:.4}", 100.0 * u),
                    format!("{:.4}", 100.0 * s),
                    format!("{:.4}", 100.0 * h),
                    "ok".into(),
                ],
                CellStatus::Failed(msg) => [a, seed, String::new(), String::new(), String::new(), format!("failed: {msg}")],
            };
            write(&mut w, rec);
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV of UTF-8 fields")
    }
}

/// One train+eval per `(alpha, seed)`; cells run in parallel and failures are
/// recorded in place. Rows come back sorted by `(alpha, seed)`.
pub fn sweep(
    base: &TrainConfig,
    dataset: &gzsl_sb::Dataset,
    alphas: &[f64],
    seeds: &[u64],
) -> Result<SweepOutcome> {
    if alphas.is_empty() {
        return Err(CliError::Usage("empty alpha list".into()));
    }
    if seeds.is_empty() {
        return Err(CliError::Usage("empty seed list".into()));
    }
    for &a in alphas {
        gzsl_sb::losses::check_alpha(a, base.loss.allow_large_alpha)?;
    }
    let mut cells = Vec::new();
    let mut seen = BTreeSet::new();
    let mut warnings = Vec::new();
    for &alpha in alphas {
        for &seed in seeds {
            if seen.insert((alpha.to_bits(), seed)) {
                cells.push((alpha, seed));
            } else {
                warnings.push(format!("duplicate cell alpha={alpha} seed={seed} ignored"));
            }
        }
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let rows = cells
        .par_iter()
        .map(|&(alpha, seed)| {
            let mut config = base.clone();
            config.loss.alpha = alpha;
            config.seed = seed;
            let status = match train_and_eval(dataset, &config) {
                Ok((_, r)) => CellStatus::Ok { u: r.u, s: r.s, h: r.h },
                Err(e) => CellStatus::Failed(e.to_string()),
            };
            SweepRow { alpha, seed, status }
        })
        .collect();
    Ok(SweepOutcome { rows, warnings })
}

/// [`sweep`] from files. With `out`, writes `sweep.csv` and a manifest there.
pub fn cmd_sweep(
    config_path: &Path,
    bundle: &Path,
    alphas: &[f64],
    seeds: &[u64],
    allow_large_alpha: bool,
    out: Option<&Path>,
) -> Result<SweepOutcome> {
    let mut manifest = RunManifest::new("sweep");
    let config = TrainConfig::from_kv_str_with(&read_config(config_path)?, allow_large_alpha)?;
    let dataset = load_for_training(bundle)?;
    let outcome = sweep(&config, &dataset, alphas, seeds)?;
    if let Some(out) = out {
        create_dir(out)?;
        let path = out.join("sweep.csv");
        write_file(&path, outcome.to_csv().as_bytes())?;
        manifest.config = Some(config.to_kv_string());
        manifest.bundle = Some(bundle.to_path_buf());
        manifest.report = Some(path);
        manifest.extra = serde_json::json!({
            "alphas": alphas,
            "seeds": seeds,
            "allow_large_alpha": allow_large_alpha,
            "warnings": outcome.warnings,
        });
        manifest.finish(out)?;
    }
    Ok(outcome)
}

/// Gradient check using α, β, decay mode and seed from an optional config.
pub fn cmd_gradcheck(config_path: Option<&Path>) -> Result<GradcheckReport> {
    let mut opts = GradcheckOptions::default();
    if let Some(path) = config_path {
        let config = TrainConfig::from_kv_str_with(&read_config(path)?, true)?;
        opts.alpha = config.loss.alpha;
        opts.beta = config.loss.beta;
        opts.decay_mode = config.loss.decay_mode;
        opts.seed = config.seed;
    }
    Ok(run_gradcheck(&opts)?)
}

pub fn gradcheck_table(report: &GradcheckReport) -> String {
    let mut out = format!("{:<10} {:<6} {:>12} {:>5}\n", "variant", "term", "max_rel_err", "ok");
    for f in &report.families {
        out.push_str(&format!(
            "{:<10} {:<6} {:>12.3e} {:>5}\n",
            f.variant.name(),
            f.term.name(),
            f.max_rel_error,
            if f.passed { "pass" } else { "FAIL" }
        ));
    }
    out
}

/// Human-readable summary of a bundle directory or a checkpoint file.
pub fn cmd_inspect(path: &Path) -> Result<String> {
    let mut out = Vec::new();
    if path.is_dir() {
        let d = load_bundle::<f32>(path)?;
        let report = d.validate();
        writeln!(out, "bundle {}", path.display()).ok();
        writeln!(out, "instances    {}", d.num_instances()).ok();
        writeln!(out, "m (feature)  {}", d.feature_dim()).ok();
        writeln!(out, "n (semantic) {}", d.semantic_dim()).ok();
        writeln!(out, "classes      {} seen, {} unseen", d.split.seen_classes.len(), d.split.unseen_classes.len()).ok();
        writeln!(
            out,
            "splits       train {}, test_seen {}, test_unseen {}",
            d.split.train_idx.len(),
            d.split.test_seen_idx.len(),
            d.split.test_unseen_idx.len()
        )
        .ok();
        writeln!(out, "scale        {}", d.semantic_scale).ok();
        let seen: Vec<&[f32]> = d.split.seen_classes.iter().map(|&c| d.semantic(c)).collect();
        if let Ok(k) = datamodel::scale_factor_for(seen.iter().copied(), 1.0) {
            writeln!(out, "seen mean ‖s‖ {:.6}", 1.0 / k).ok();
        }
        writeln!(out, "valid        {}", if report.is_valid() { "yes".to_string() } else { report.to_string() }).ok();
    } else {
        let ckpt = load_checkpoint::<f64>(path)?;
        let dims = ckpt.params.dims();
        let theta = ckpt.params.flatten();
        let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        writeln!(out, "checkpoint {}", path.display()).ok();
        writeln!(out, "variant      {}", ckpt.params.variant().name()).ok();
        writeln!(out, "m, n         {}, {}", dims.m, dims.n).ok();
        if matches!(ckpt.params, ModelParams::Nonlinear(_)) {
            writeln!(out, "h1, h2       {}, {}", dims.mlp.h1, dims.mlp.h2).ok();
        }
        writeln!(out, "parameters   {}", theta.len()).ok();
        writeln!(out, "‖θ‖          {norm:.6}").ok();
        writeln!(out, "scale        {}", ckpt.semantic_scale).ok();
        writeln!(out, "finite       {}", ckpt.params.is_finite()).ok();
    }
    Ok(String::from_utf8(out).expect("formatted text is UTF-8"))
}
