//! Flat sectioned key=value run configuration.
//!
//! Grammar, line oriented:
//!   - `[section]` opens a section; keys inside are `section.key`.
//!   - `key = value` assigns; whitespace around both is trimmed.
//!   - empty lines and lines starting with `#` are ignored.
//!
//! Resolution order: built-in defaults, then the config file, then
//! command-line `key=value` overrides. Unknown keys are rejected. The
//! resolved snapshot written into every run directory re-parses to the
//! identical configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Registry of every known key with its default ("" = unset optional).
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("run.seed", "0"),
    // synthetic dataset generation
    ("synth.kind", "domains"), // domains | detection
    ("synth.n_x", "1500"),
    ("synth.n_y", "500"),
    ("synth.n", "400"),
    ("synth.size", "64"),
    ("synth.classes", "3"),
    ("synth.style", "underwater"), // underwater | terrestrial
    ("synth.turbidity", "false"),
    // cycle translation training
    ("gan.x_manifest", ""),
    ("gan.y_manifest", ""),
    ("gan.lambda_cyc", "10"),
    ("gan.base_lr", "0.0002"),
    ("gan.constant_epochs", "100"),
    ("gan.decay_epochs", "100"),
    ("gan.batch_size", "1"),
    ("gan.image_size", "64"),
    ("gan.epochs", ""),
    ("gan.steps_per_epoch", ""),
    ("gan.checkpoint_interval", "20"),
    ("gan.fid_interval", "20"),
    ("gan.fid_probe", "64"),
    ("gan.non_saturating", "false"),
    ("gan.gen_channels", "8"),
    ("gan.disc_channels", "8"),
    // translation
    ("translate.generator", ""),
    ("translate.manifest", ""),
    ("translate.direction", "x_to_y"), // x_to_y | y_to_x
    // train-mix
    ("mix.existing_manifest", ""),
    ("mix.augmented_manifest", ""),
    ("mix.eval_manifest", ""),
    ("mix.existing_fraction", "0.6"),
    ("mix.augmented_fraction", "0.4"),
    ("mix.total", ""),
    // detector training
    ("det.train_manifest", ""),
    ("det.eval_manifest", ""),
    ("det.image_size", "64"),
    ("det.classes", "3"),
    ("det.use_sea", "true"),
    ("det.feature_channels", "32"),
    ("det.iters_hi", "1600"),
    ("det.iters_lo", "2000"),
    ("det.lr_hi", "0.001"),
    ("det.lr_lo", "0.0001"),
    ("det.batch_size", "4"),
    ("det.momentum", "0.9"),
    ("det.weight_decay", "0.0005"),
    ("det.checkpoint_interval", ""),
    ("det.score_threshold", "0.05"),
    ("det.nms_threshold", "0.3"),
    ("det.iou_threshold", "0.5"),
    // evaluation
    ("eval.task", "detect"), // detect | fid
    ("eval.model", ""),
    ("eval.manifest", ""),
    ("eval.real_manifest", ""),
    ("eval.generated_manifest", ""),
    ("eval.encoder_seed", "0"),
    ("eval.image_size", "64"),
    ("eval.score_threshold", "0.05"),
    ("eval.nms_threshold", "0.3"),
    ("eval.iou_threshold", "0.5"),
    // attention visualization
    ("attn.model", ""),
    ("attn.manifest", ""),
    ("attn.count", "4"),
    ("attn.dump_scores", "false"),
];

#[derive(Debug)]
pub enum ConfigError {
    UnknownKey(String),
    BadSyntax { line: usize, content: String },
    BadValue { key: String, value: String, want: &'static str },
    Io(std::io::Error),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::UnknownKey(k) => write!(f, "unknown configuration key {k:?}"),
            ConfigError::BadSyntax { line, content } => {
                write!(f, "bad config syntax at line {line}: {content:?}")
            }
            ConfigError::BadValue { key, value, want } => {
                write!(f, "bad value {value:?} for {key:?}: expected {want}")
            }
            ConfigError::Io(e) => write!(f, "config io error: {e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KNOWN_KEYS.iter().any(|(k, _)| *k == key)
}

pub fn defaults() -> Resolved {
    Resolved {
        values: KNOWN_KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
    }
}

/// Parse `[section]` / `key = value` lines into (section.key, value) pairs.
fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::BadSyntax { line: i + 1, content: raw.to_string() });
        };
        let key = key.trim();
        let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        out.push((full, value.trim().to_string()));
    }
    Ok(out)
}

impl Resolved {
    /// defaults <- config file <- overrides, rejecting unknown keys.
    pub fn build(
        config_file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Resolved, ConfigError> {
        let mut resolved = defaults();
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
            for (key, value) in parse_pairs(&text)? {
                if !known(&key) {
                    return Err(ConfigError::UnknownKey(key));
                }
                resolved.values.insert(key, value);
            }
        }
        for (key, value) in overrides {
            if !known(key) {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
            resolved.values.insert(key.clone(), value.clone());
        }
        Ok(resolved)
    }

    #[cfg(test)]
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        debug_assert!(known(key), "unknown key {key}");
        self.values.insert(key.to_string(), value.into());
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key:?} missing from registry"))
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.raw(key).is_empty()
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.raw(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.raw(key).into(),
            want: "unsigned integer",
        })
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.raw(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.raw(key).into(),
            want: "unsigned integer",
        })
    }

    pub fn get_opt_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        if self.is_set(key) {
            Ok(Some(self.get_usize(key)?))
        } else {
            Ok(None)
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.raw(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.raw(key).into(),
            want: "number",
        })
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, ConfigError> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(ConfigError::BadValue {
                key: key.into(),
                value: other.into(),
                want: "boolean",
            }),
        }
    }

    pub fn get_path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        if !self.is_set(key) {
            return Err(ConfigError::BadValue {
                key: key.into(),
                value: String::new(),
                want: "a path (key is required for this subcommand)",
            });
        }
        Ok(PathBuf::from(self.raw(key)))
    }

    /// Snapshot grouped by section; parsing it back yields an identical
    /// resolved configuration.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let mut section = String::new();
        for (key, value) in &self.values {
            let (sec, name) = key.split_once('.').unwrap_or(("", key.as_str()));
            if sec != section {
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{sec}]");
                section = sec.to_string();
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }
}

/// Split a command-line `KEY=VALUE` override.
pub fn parse_override(arg: &str) -> Result<(String, String), ConfigError> {
    match arg.split_once('=') {
        Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
        None => Err(ConfigError::BadSyntax { line: 0, content: arg.to_string() }),
    }
}
