//! Run-directory protocol: exclusive lock, resolved-config snapshot before
//! any work, metadata and summary at the end, FAILED marker plus partial
//! artifacts on error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::Resolved;

pub const SUMMARY_SCHEMA: &str = "summary.v1";
pub const META_SCHEMA: &str = "meta.v1";

#[derive(Serialize)]
struct Meta<'a> {
    schema: &'a str,
    subcommand: &'a str,
    seed: u64,
    fingerprints: &'a BTreeMap<String, String>,
    formats: BTreeMap<&'a str, serde_json::Value>,
}

pub struct RunDir {
    pub path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    /// Create the output directory, take the lock and write the snapshot.
    pub fn prepare(out: &Path, resolved: &Resolved) -> Result<RunDir> {
        fs::create_dir_all(out)
            .with_context(|| format!("creating output directory {}", out.display()))?;
        let lock = out.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "output directory {} is locked by another run (remove {} if stale)",
                    out.display(),
                    lock.display()
                );
            }
            Err(e) => return Err(e).context("taking run lock"),
        }
        fs::write(out.join("config.resolved"), resolved.snapshot())
            .context("writing resolved config snapshot")?;
        Ok(RunDir { path: out.to_path_buf(), lock })
    }

    pub fn write_meta(
        &self,
        subcommand: &str,
        seed: u64,
        fingerprints: &BTreeMap<String, String>,
    ) -> Result<()> {
        let mut formats = BTreeMap::new();
        formats.insert(
            "checkpoint",
            serde_json::json!(gamma_core::checkpoint::VERSION),
        );
        formats.insert("annotations", serde_json::json!(gamma::data::ANNOTATION_SCHEMA));
        formats.insert("detections", serde_json::json!(gamma::data::DETECTION_SCHEMA));
        formats.insert("eval", serde_json::json!(gamma::metrics::EVAL_SCHEMA));
        let meta = Meta { schema: META_SCHEMA, subcommand, seed, fingerprints, formats };
        let mut body = serde_json::to_string(&meta)?;
        body.push('\n');
        fs::write(self.path.join("meta.json"), body)?;
        Ok(())
    }

    pub fn finish_ok(self, subcommand: &str, extras: serde_json::Map<String, serde_json::Value>) -> Result<()> {
        let mut summary = serde_json::Map::new();
        summary.insert("schema".into(), SUMMARY_SCHEMA.into());
        summary.insert("subcommand".into(), subcommand.into());
        summary.insert("success".into(), true.into());
        summary.extend(extras);
        let mut body = serde_json::to_string(&serde_json::Value::Object(summary))?;
        body.push('\n');
        fs::write(self.path.join("summary.json"), body)?;
        let _ = fs::remove_file(&self.lock);
        Ok(())
    }

    pub fn finish_err(self, subcommand: &str, error: &str) {
        let _ = fs::write(self.path.join("FAILED"), format!("{error}\n"));
        let summary = serde_json::json!({
            "schema": SUMMARY_SCHEMA,
            "subcommand": subcommand,
            "success": false,
            "error": error,
        });
        if let Ok(mut body) = serde_json::to_string(&summary) {
            body.push('\n');
            let _ = fs::write(self.path.join("summary.json"), body);
        }
        let _ = fs::remove_file(&self.lock);
    }
}
