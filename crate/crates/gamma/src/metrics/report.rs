//! Line-delimited evaluation report.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detection::EvalResult;
use crate::GammaError;

pub const EVAL_SCHEMA: &str = "eval.v1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportClass {
    pub class: usize,
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub flagged_no_gt: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub schema: String,
    pub task: String,
    pub iou_threshold: f64,
    pub map: f64,
    pub per_class: Vec<ReportClass>,
    pub dataset_fingerprint: String,
}

pub fn write_report(
    result: &EvalResult,
    dataset_fingerprint: &str,
    path: &Path,
) -> Result<(), GammaError> {
    let report = Report {
        schema: EVAL_SCHEMA.into(),
        task: "detect".into(),
        iou_threshold: result.iou_threshold,
        map: result.map,
        per_class: result
            .per_class
            .iter()
            .map(|(&class, e)| ReportClass {
                class,
                ap: e.ap,
                tp: e.tp,
                fp: e.fp,
                fn_count: e.fn_count,
                flagged_no_gt: e.flagged_no_gt,
            })
            .collect(),
        dataset_fingerprint: dataset_fingerprint.into(),
    };
    let mut body = serde_json::to_string(&report).expect("report serializes");
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Report, GammaError> {
    let body = fs::read_to_string(path)?;
    let report: Report = serde_json::from_str(body.trim()).map_err(|e| {
        GammaError::Ingestion { path: path.to_path_buf(), reason: format!("bad report: {e}") }
    })?;
    if report.schema != EVAL_SCHEMA {
        return Err(GammaError::Ingestion {
            path: path.to_path_buf(),
            reason: format!("schema {:?} != {EVAL_SCHEMA:?}", report.schema),
        });
    }
    Ok(report)
}
