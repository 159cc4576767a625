//! Quantitative evaluation: distribution distance for generated images and
//! IoU / AP / mAP for detection.

mod detection;
mod embed;
mod fid;
mod gaussian;
mod report;
mod sqrtm;

pub use detection::{average_precision, evaluate_detections, iou, mean_ap, ClassEval, EvalResult};
pub use embed::{embed_images, EmbedEncoder};
pub use fid::fid;
pub use gaussian::{fit_gaussian, GaussianStats};
pub use report::{read_report, write_report, Report, EVAL_SCHEMA};
pub use sqrtm::{matrix_sqrt, sym_eigen};
