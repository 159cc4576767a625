//! Brute-force reference implementations and random-instance generators
//! used only for verification. Each reference is deliberately written as
//! plain exhaustive scans, independent of the production code paths it
//! cross-checks.

use gamma_core::Rng;

use crate::boxes::Box2;

pub fn random_box(rng: &mut Rng, extent: f64) -> Box2 {
    let x0 = rng.uniform_in(0.0, extent - 2.0);
    let y0 = rng.uniform_in(0.0, extent - 2.0);
    let x1 = x0 + rng.uniform_in(1.0, extent - x0);
    let y1 = y0 + rng.uniform_in(1.0, extent - y0);
    Box2 { x0, y0, x1, y1 }
}

/// Area arithmetic written out longhand.
pub fn reference_iou(a: &Box2, b: &Box2) -> f64 {
    let ix0 = if a.x0 > b.x0 { a.x0 } else { b.x0 };
    let iy0 = if a.y0 > b.y0 { a.y0 } else { b.y0 };
    let ix1 = if a.x1 < b.x1 { a.x1 } else { b.x1 };
    let iy1 = if a.y1 < b.y1 { a.y1 } else { b.y1 };
    let iw = if ix1 > ix0 { ix1 - ix0 } else { 0.0 };
    let ih = if iy1 > iy0 { iy1 - iy0 } else { 0.0 };
    let inter = iw * ih;
    let area_a = (a.x1 - a.x0) * (a.y1 - a.y0);
    let area_b = (b.x1 - b.x0) * (b.y1 - b.y0);
    inter / (area_a + area_b - inter)
}

/// Suppression by repeated full scans for the best unsuppressed box.
pub fn reference_nms(detections: &[(Box2, f64)], threshold: f64) -> Vec<usize> {
    let n = detections.len();
    let mut alive = vec![true; n];
    let mut keep = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(j) => {
                    let better = detections[i].1 > detections[j].1
                        || (detections[i].1 == detections[j].1
                            && detections[i].0.lex_cmp(&detections[j].0)
                                == std::cmp::Ordering::Less);
                    Some(if better { i } else { j })
                }
            };
        }
        let Some(i) = best else { break };
        alive[i] = false;
        keep.push(i);
        for j in 0..n {
            if alive[j] && reference_iou(&detections[i].0, &detections[j].0) > threshold {
                alive[j] = false;
            }
        }
    }
    keep
}

/// Exhaustive average precision: greedy matching in confidence order, then
/// the interpolated area computed by scanning every prefix for the best
/// precision at or beyond each recall level.
pub fn reference_ap(
    detections: &[(Box2, f64)],
    ground_truth: &[Box2],
    iou_threshold: f64,
) -> Option<f64> {
    if ground_truth.is_empty() {
        return if detections.is_empty() { None } else { Some(0.0) };
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| {
        detections[j]
            .1
            .partial_cmp(&detections[i].1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(detections[i].0.lex_cmp(&detections[j].0))
    });
    let mut taken = vec![false; ground_truth.len()];
    let mut tp_flags = Vec::with_capacity(order.len());
    for &di in &order {
        let mut best_gi = None;
        let mut best_iou = 0.0;
        for (gi, gt) in ground_truth.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let ov = reference_iou(&detections[di].0, gt);
            if ov >= iou_threshold && ov > best_iou {
                best_iou = ov;
                best_gi = Some(gi);
            }
        }
        match best_gi {
            Some(gi) => {
                taken[gi] = true;
                tp_flags.push(true);
            }
            None => tp_flags.push(false),
        }
    }
    let n_gt = ground_truth.len() as f64;
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    let mut tp = 0.0;
    for (k, &flag) in tp_flags.iter().enumerate() {
        if flag {
            tp += 1.0;
        }
        precisions.push(tp / (k as f64 + 1.0));
        recalls.push(tp / n_gt);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for i in 0..recalls.len() {
        if recalls[i] <= prev {
            continue;
        }
        // best precision over every later-or-equal recall point
        let mut best = 0.0;
        for j in 0..recalls.len() {
            if recalls[j] >= recalls[i] && precisions[j] > best {
                best = precisions[j];
            }
        }
        ap += (recalls[i] - prev) * best;
        prev = recalls[i];
    }
    Some(ap)
}

/// A random AP instance: some detections located on ground truths (with
/// jitter), some spurious.
pub fn random_ap_instance(
    rng: &mut Rng,
    extent: f64,
    max_gt: usize,
    max_det: usize,
) -> (Vec<(Box2, f64)>, Vec<Box2>) {
    let n_gt = rng.uniform_usize(max_gt + 1);
    let gts: Vec<Box2> = (0..n_gt).map(|_| random_box(rng, extent)).collect();
    let n_det = rng.uniform_usize(max_det + 1);
    let mut dets = Vec::with_capacity(n_det);
    for _ in 0..n_det {
        let conf = rng.uniform_in(0.05, 1.0);
        if !gts.is_empty() && rng.uniform() < 0.6 {
            let g = gts[rng.uniform_usize(gts.len())];
            let jitter = rng.uniform_in(0.0, 0.35);
            let dx = rng.uniform_in(-jitter, jitter) * (g.x1 - g.x0);
            let dy = rng.uniform_in(-jitter, jitter) * (g.y1 - g.y0);
            let b = Box2 {
                x0: (g.x0 + dx).max(0.0),
                y0: (g.y0 + dy).max(0.0),
                x1: (g.x1 + dx).min(extent),
                y1: (g.y1 + dy).min(extent),
            };
            if b.x1 > b.x0 && b.y1 > b.y0 {
                dets.push((b, conf));
                continue;
            }
        }
        dets.push((random_box(rng, extent), conf));
    }
    (dets, gts)
}
