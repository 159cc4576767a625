//! IoU, per-class average precision and mAP.
//!
//! AP protocol: detections sorted by descending confidence (deterministic
//! lexicographic tie-break), greedy matching to the best unmatched ground
//! truth at IoU >= threshold, all-point interpolated area under the
//! precision-recall curve. The first match on a ground truth is the true
//! positive; duplicates are false positives.

use std::collections::BTreeMap;

use crate::boxes::{Annotation, Box2, Detection};
use crate::GammaError;

/// Intersection over union in [0, 1]; disjoint boxes give 0.
pub fn iou(a: &Box2, b: &Box2) -> Result<f64, GammaError> {
    a.validate()?;
    b.validate()?;
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassEval {
    /// None when the class has neither ground truth nor detections.
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    /// Set when detections exist for a class with no ground truth.
    pub flagged_no_gt: bool,
}

/// AP over (image_id, box, confidence) detections against (image_id, box)
/// ground truths of one class.
fn ap_tagged(
    detections: &[(usize, Box2, f64)],
    ground_truth: &[(usize, Box2)],
    iou_threshold: f64,
) -> Result<ClassEval, GammaError> {
    if ground_truth.is_empty() {
        return Ok(ClassEval {
            ap: if detections.is_empty() { None } else { Some(0.0) },
            tp: 0,
            fp: detections.len(),
            fn_count: 0,
            flagged_no_gt: true,
        });
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| {
        detections[j]
            .2
            .partial_cmp(&detections[i].2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(detections[i].1.lex_cmp(&detections[j].1))
    });
    let mut matched = vec![false; ground_truth.len()];
    let mut is_tp = Vec::with_capacity(order.len());
    for &di in &order {
        let (img, rect, _) = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, (g_img, g_rect)) in ground_truth.iter().enumerate() {
            if matched[gi] || g_img != img {
                continue;
            }
            let ov = iou(rect, g_rect)?;
            if ov >= iou_threshold && best.is_none_or(|(_, b)| ov > b) {
                best = Some((gi, ov));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[gi] = true;
                is_tp.push(true);
            }
            None => is_tp.push(false),
        }
    }
    let n_gt = ground_truth.len();
    let mut tp_cum = 0usize;
    let mut fp_cum = 0usize;
    let mut recalls = Vec::with_capacity(is_tp.len());
    let mut precisions = Vec::with_capacity(is_tp.len());
    for &t in &is_tp {
        if t {
            tp_cum += 1;
        } else {
            fp_cum += 1;
        }
        recalls.push(tp_cum as f64 / n_gt as f64);
        precisions.push(tp_cum as f64 / (tp_cum + fp_cum) as f64);
    }
    // all-point interpolation: running max of precision from the right
    let mut envelope = precisions.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..recalls.len() {
        if recalls[i] > prev_recall {
            ap += (recalls[i] - prev_recall) * envelope[i];
            prev_recall = recalls[i];
        }
    }
    Ok(ClassEval {
        ap: Some(ap),
        tp: tp_cum,
        fp: fp_cum,
        fn_count: n_gt - tp_cum,
        flagged_no_gt: false,
    })
}

/// Single-image AP for one class.
pub fn average_precision(
    detections: &[(Box2, f64)],
    ground_truth: &[Box2],
    iou_threshold: f64,
) -> Result<ClassEval, GammaError> {
    let dets: Vec<(usize, Box2, f64)> = detections.iter().map(|&(b, c)| (0, b, c)).collect();
    let gts: Vec<(usize, Box2)> = ground_truth.iter().map(|&b| (0, b)).collect();
    ap_tagged(&dets, &gts, iou_threshold)
}

/// Unweighted arithmetic mean of per-class APs.
pub fn mean_ap(aps: &[f64]) -> Result<f64, GammaError> {
    if aps.is_empty() {
        return Err(GammaError::Contract("mean_ap needs at least one defined AP".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub per_class: BTreeMap<usize, ClassEval>,
    pub map: f64,
    pub iou_threshold: f64,
}

/// Dataset-level evaluation: per-image detections against per-image
/// annotations for `num_classes` classes.
pub fn evaluate_detections(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<Annotation>],
    num_classes: usize,
    iou_threshold: f64,
) -> Result<EvalResult, GammaError> {
    if detections.len() != ground_truth.len() {
        return Err(GammaError::Contract(format!(
            "evaluate_detections: {} detection lists vs {} annotation lists",
            detections.len(),
            ground_truth.len()
        )));
    }
    let mut per_class = BTreeMap::new();
    let mut defined = Vec::new();
    for class in 0..num_classes {
        let dets: Vec<(usize, Box2, f64)> = detections
            .iter()
            .enumerate()
            .flat_map(|(img, ds)| {
                ds.iter()
                    .filter(|d| d.class_id == class)
                    .map(move |d| (img, d.rect, d.confidence))
            })
            .collect();
        let gts: Vec<(usize, Box2)> = ground_truth
            .iter()
            .enumerate()
            .flat_map(|(img, gs)| {
                gs.iter().filter(|a| a.class_id == class).map(move |a| (img, a.rect))
            })
            .collect();
        let eval = ap_tagged(&dets, &gts, iou_threshold)?;
        if let Some(ap) = eval.ap {
            defined.push(ap);
        }
        per_class.insert(class, eval);
    }
    let map = mean_ap(&defined)?;
    Ok(EvalResult { per_class, map, iou_threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Box2 {
        Box2 { x0, y0, x1, y1 }
    }

    #[test]
    fn iou_identical_disjoint_and_hand_case() {
        let a = rect(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let far = rect(20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&a, &far).unwrap(), 0.0);
        let b = rect(5.0, 5.0, 15.0, 15.0);
        assert!((iou(&a, &b).unwrap() - 25.0 / 175.0).abs() < 1e-12);
    }

    #[test]
    fn iou_degenerate_rejected() {
        let a = rect(0.0, 0.0, 10.0, 10.0);
        let bad = Box2 { x0: 1.0, y0: 1.0, x1: 1.0, y1: 4.0 };
        assert!(iou(&a, &bad).is_err());
    }

    #[test]
    fn perfect_single_detection() {
        let gt = [rect(2.0, 2.0, 8.0, 8.0)];
        let dets = [(gt[0], 0.9)];
        let eval = average_precision(&dets, &gt, 0.5).unwrap();
        assert_eq!(eval.ap, Some(1.0));
        assert_eq!((eval.tp, eval.fp, eval.fn_count), (1, 0, 0));
    }

    #[test]
    fn ranking_determines_ap() {
        let gt = [rect(2.0, 2.0, 8.0, 8.0)];
        let fp_box = rect(20.0, 20.0, 28.0, 28.0);
        // TP ranked above FP -> 1.0
        let eval = average_precision(&[(gt[0], 0.9), (fp_box, 0.5)], &gt, 0.5).unwrap();
        assert_eq!(eval.ap, Some(1.0));
        // FP ranked above TP -> 0.5
        let eval = average_precision(&[(gt[0], 0.5), (fp_box, 0.9)], &gt, 0.5).unwrap();
        assert_eq!(eval.ap, Some(0.5));
    }

    #[test]
    fn duplicate_detection_is_fp() {
        let gt = [rect(2.0, 2.0, 8.0, 8.0)];
        let eval = average_precision(&[(gt[0], 0.9), (gt[0], 0.8)], &gt, 0.5).unwrap();
        assert_eq!((eval.tp, eval.fp), (1, 1));
        assert_eq!(eval.ap, Some(1.0));
    }

    #[test]
    fn no_gt_flags() {
        let eval = average_precision(&[(rect(0.0, 0.0, 2.0, 2.0), 0.9)], &[], 0.5).unwrap();
        assert_eq!(eval.ap, Some(0.0));
        assert!(eval.flagged_no_gt);
        let eval = average_precision(&[], &[], 0.5).unwrap();
        assert_eq!(eval.ap, None);
        assert!(eval.flagged_no_gt);
    }

    #[test]
    fn table_mean_is_exact() {
        assert_eq!(mean_ap(&[95.6, 90.3, 93.1]).unwrap(), 93.0);
        assert_eq!(mean_ap(&[85.0]).unwrap(), 85.0);
        assert!((mean_ap(&[0.7, 0.7, 0.7]).unwrap() - 0.7).abs() < 1e-12);
    }
}
