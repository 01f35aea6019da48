//! Flat `key=value` configuration text, one key per line, `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::synthgen::SynthSpec;
use crate::trainer::TrainConfig;

/// Parses `key=value` lines into `key → (line, value)`; unknown and duplicate
/// keys are errors that name the line.
pub fn parse_kv(text: &str, known: &[&str]) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected key=value, got {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !known.contains(&key) {
            return Err(Error::Config {
                line,
                message: format!("unknown key {key:?}"),
            });
        }
        if let Some((first, _)) = out.insert(key.to_string(), (line, value.to_string())) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key {key:?} (first set on line {first})"),
            });
        }
    }
    Ok(out)
}

fn value<V: FromStr>(line: usize, key: &str, raw: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| Error::Config {
        line,
        message: format!("bad value for {key}: {raw:?} ({e})"),
    })
}

fn optional<V: FromStr>(line: usize, key: &str, raw: &str) -> Result<Option<V>>
where
    V::Err: std::fmt::Display,
{
    if raw == "none" {
        Ok(None)
    } else {
        value(line, key, raw).map(Some)
    }
}

fn show<V: ToString>(v: Option<V>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

const TRAIN_KEYS: &[&str] = &[
    "variant",
    "alpha",
    "beta",
    "decay_mode",
    "metric",
    "batch_size",
    "epochs",
    "lr",
    "seed",
    "h1",
    "h2",
    "scale_target",
    "optimizer",
    "momentum",
    "pool_mode",
];

impl TrainConfig {
    /// Missing keys keep their defaults. The result is validated.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        Self::from_kv_str_with(text, false)
    }

    /// As [`TrainConfig::from_kv_str`], optionally permitting α ≥ 1.
    pub fn from_kv_str_with(text: &str, allow_large_alpha: bool) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.loss.allow_large_alpha = allow_large_alpha;
        for (key, (line, raw)) in parse_kv(text, TRAIN_KEYS)? {
            let (l, k, r) = (line, key.as_str(), raw.as_str());
            match k {
                "variant" => c.variant = value(l, k, r)?,
                "alpha" => c.loss.alpha = value(l, k, r)?,
                "beta" => c.loss.beta = value(l, k, r)?,
                "decay_mode" => c.loss.decay_mode = value(l, k, r)?,
                "metric" => c.loss.metric = value(l, k, r)?,
                "batch_size" => c.batch_size = value(l, k, r)?,
                "epochs" => c.epochs = value(l, k, r)?,
                "lr" => c.lr = optional(l, k, r)?,
                "seed" => c.seed = value(l, k, r)?,
                "h1" => c.h1 = optional(l, k, r)?,
                "h2" => c.h2 = optional(l, k, r)?,
                "scale_target" => c.scale_target = optional(l, k, r)?,
                "optimizer" => c.optimizer = optional(l, k, r)?,
                "momentum" => c.momentum = value(l, k, r)?,
                "pool_mode" => c.pool_mode = value(l, k, r)?,
                _ => unreachable!("key filtered by parse_kv"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Every key written explicitly; `from_kv_str` reproduces `self` except
    /// for `loss.allow_large_alpha`, which is a command-line switch.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant={}", self.variant.name());
        let _ = writeln!(s, "alpha={:?}", self.loss.alpha);
        let _ = writeln!(s, "beta={:?}", self.loss.beta);
        let _ = writeln!(s, "decay_mode={}", self.loss.decay_mode.name());
        let _ = writeln!(s, "metric={}", self.loss.metric.name());
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "lr={}", show(self.lr.map(|v| format!("{v:?}"))));
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "h1={}", show(self.h1));
        let _ = writeln!(s, "h2={}", show(self.h2));
        let _ = writeln!(s, "scale_target={}", show(self.scale_target.map(|v| format!("{v:?}"))));
        let _ = writeln!(s, "optimizer={}", show(self.optimizer));
        let _ = writeln!(s, "momentum={:?}", self.momentum);
        let _ = writeln!(s, "pool_mode={}", self.pool_mode.name());
        s
    }
}

const SYNTH_KEYS: &[&str] = &[
    "n_seen",
    "n_unseen",
    "per_class_train",
    "per_class_test",
    "m",
    "n",
    "attribute_corr",
    "noise_sigma",
    "seed",
];

impl SynthSpec {
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut s = SynthSpec::default();
        for (key, (line, raw)) in parse_kv(text, SYNTH_KEYS)? {
            let (l, k, r) = (line, key.as_str(), raw.as_str());
            match k {
                "n_seen" => s.n_seen = value(l, k, r)?,
                "n_unseen" => s.n_unseen = value(l, k, r)?,
                "per_class_train" => s.per_class_train = value(l, k, r)?,
                "per_class_test" => s.per_class_test = value(l, k, r)?,
                "m" => s.m = value(l, k, r)?,
                "n" => s.n = value(l, k, r)?,
                "attribute_corr" => s.attribute_corr = value(l, k, r)?,
                "noise_sigma" => s.noise_sigma = value(l, k, r)?,
                "seed" => s.seed = value(l, k, r)?,
                _ => unreachable!("key filtered by parse_kv"),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "n_seen={}\nn_unseen={}\nper_class_train={}\nper_class_test={}\nm={}\nn={}\n\
             attribute_corr={:?}\nnoise_sigma={:?}\nseed={}\n",
            self.n_seen,
            self.n_unseen,
            self.per_class_train,
            self.per_class_test,
            self.m,
            self.n,
            self.attribute_corr,
            self.noise_sigma,
            self.seed
        )
    }
}
