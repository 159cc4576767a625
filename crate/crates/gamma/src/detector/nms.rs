//! Greedy non-maximum suppression with deterministic tie-breaking.

use crate::boxes::Box2;
use crate::metrics::iou;
use crate::GammaError;

/// Indices of the kept boxes, in suppression (descending-score) order.
/// Ties break by score descending, then box lexicographic.
pub fn nms(detections: &[(Box2, f64)], iou_threshold: f64) -> Result<Vec<usize>, GammaError> {
    if !(0.0 < iou_threshold && iou_threshold < 1.0) {
        return Err(GammaError::Contract(format!(
            "nms threshold must be in (0,1), got {iou_threshold}"
        )));
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| {
        detections[j]
            .1
            .partial_cmp(&detections[i].1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(detections[i].0.lex_cmp(&detections[j].0))
    });
    let mut suppressed = vec![false; detections.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[rank + 1..] {
            if suppressed[j] {
                continue;
            }
            if iou(&detections[i].0, &detections[j].0)? > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}
