//! Detector optimization: IoU-based anchor/RoI assignment, sampled losses,
//! two-phase learning rate, momentum-SGD with weight decay.

use std::path::{Path, PathBuf};

use gamma_core::checkpoint;
use gamma_core::conv::RoiRect;
use gamma_core::optim::{SgdConfig, SgdState};
use gamma_core::{Graph, NodeId, Rng, Seed, Tensor};
use serde::{Deserialize, Serialize};

use crate::boxes::{Annotation, Box2, DetectionSample};
use crate::data::image_io::hwc_to_nchw;
use crate::metrics::iou;
use crate::nn::Vars;
use crate::GammaError;

use super::anchors::{anchor_grid, Anchor};
use super::codec;
use super::net::{detection_head, features_forward, rpn_raw};
use super::nms::nms;
use super::{DetectorConfig, DetectorModel, STRIDE};

/// Iteration counts and rates; defaults follow the full-scale recipe
/// (1e-3 for 1600 iterations, then 1e-4 for 2000 more, batches of four,
/// momentum 0.9, weight decay 5e-4). Desk runs scale the counts down.
#[derive(Debug, Clone)]
pub struct DetTrainConfig {
    pub iters_hi: usize,
    pub iters_lo: usize,
    pub lr_hi: f64,
    pub lr_lo: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Checkpoint cadence in iterations (None: only final).
    pub checkpoint_interval: Option<usize>,
}

impl Default for DetTrainConfig {
    fn default() -> Self {
        DetTrainConfig {
            iters_hi: 1600,
            iters_lo: 2000,
            lr_hi: 1e-3,
            lr_lo: 1e-4,
            batch_size: 4,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            checkpoint_interval: None,
        }
    }
}

pub fn detector_lr(iter: usize, config: &DetTrainConfig) -> f64 {
    if iter < config.iters_hi {
        config.lr_hi
    } else {
        config.lr_lo
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetTraceRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_rpn_cls: f64,
    pub loss_rpn_reg: f64,
    pub loss_head_cls: f64,
    pub loss_head_reg: f64,
    /// Positive anchors in the batch; zero means the regression term
    /// contributed nothing this step.
    pub rpn_pos: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AnchorLabel {
    Positive(usize),
    Negative,
    Ignore,
}

/// Threshold assignment plus the per-ground-truth argmax supplement, so
/// every annotated box owns at least one positive anchor.
fn assign_anchors(
    anchors: &[Anchor],
    gts: &[Annotation],
    pos_thr: f64,
    neg_thr: f64,
) -> Result<Vec<AnchorLabel>, GammaError> {
    let mut labels = vec![AnchorLabel::Negative; anchors.len()];
    if gts.is_empty() {
        return Ok(labels);
    }
    let mut best_gt_iou = vec![0.0_f64; gts.len()];
    let mut best_gt_anchor = vec![0usize; gts.len()];
    for (ai, anchor) in anchors.iter().enumerate() {
        let rect = anchor.rect();
        let mut best = 0.0;
        let mut best_gt = 0;
        for (gi, gt) in gts.iter().enumerate() {
            let ov = iou(&rect, &gt.rect)?;
            if ov > best {
                best = ov;
                best_gt = gi;
            }
            if ov > best_gt_iou[gi] {
                best_gt_iou[gi] = ov;
                best_gt_anchor[gi] = ai;
            }
        }
        labels[ai] = if best >= pos_thr {
            AnchorLabel::Positive(best_gt)
        } else if best < neg_thr {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        };
    }
    for (gi, &ai) in best_gt_anchor.iter().enumerate() {
        if best_gt_iou[gi] > 0.0 {
            labels[ai] = AnchorLabel::Positive(gi);
        }
    }
    Ok(labels)
}

/// Up to half positives, negatives fill the remainder; seeded.
fn sample_anchors(
    labels: &[AnchorLabel],
    want: usize,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut pos: Vec<usize> = (0..labels.len())
        .filter(|&i| matches!(labels[i], AnchorLabel::Positive(_)))
        .collect();
    let mut neg: Vec<usize> =
        (0..labels.len()).filter(|&i| labels[i] == AnchorLabel::Negative).collect();
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    pos.truncate(want / 2);
    neg.truncate(want - pos.len());
    (pos, neg)
}

/// Decode, clip, drop degenerates, suppress, keep the best `count`.
fn generate_proposals(
    anchors: &[Anchor],
    obj_logits: &[f64],
    deltas: &[f64],
    image_size: usize,
    nms_threshold: f64,
    count: usize,
) -> Result<Vec<Box2>, GammaError> {
    let mut scored: Vec<(Box2, f64)> = Vec::with_capacity(anchors.len());
    for (i, anchor) in anchors.iter().enumerate() {
        let rect = codec::decode(&anchor.rect(), &deltas[4 * i..4 * i + 4])
            .clip(image_size as f64, image_size as f64);
        if rect.x1 - rect.x0 < 1.0 || rect.y1 - rect.y0 < 1.0 {
            continue;
        }
        scored.push((rect, obj_logits[i]));
    }
    if scored.is_empty() {
        return Ok(Vec::new());
    }
    let keep = nms(&scored, nms_threshold)?;
    Ok(keep.into_iter().take(count).map(|i| scored[i].0).collect())
}

/// Best ground truth per RoI at IoU >= pos threshold; None is background.
fn assign_rois(
    rois: &[Box2],
    gts: &[Annotation],
    pos_iou: f64,
) -> Result<Vec<Option<usize>>, GammaError> {
    let mut out = Vec::with_capacity(rois.len());
    for roi in rois {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            let ov = iou(roi, &gt.rect)?;
            if ov >= pos_iou && best.is_none_or(|(_, b)| ov > b) {
                best = Some((gi, ov));
            }
        }
        out.push(best.map(|(gi, _)| gi));
    }
    Ok(out)
}

/// Loss nodes plus reporting values for one image.
pub struct ImageLossNodes {
    pub total: NodeId,
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub head_cls: f64,
    pub head_reg: f64,
    pub rpn_pos: usize,
}

pub(super) fn image_losses(
    g: &mut Graph,
    vars: &Vars,
    config: &DetectorConfig,
    anchors: &[Anchor],
    image: &Tensor,
    gts: &[Annotation],
    rng: &mut Rng,
) -> Result<ImageLossNodes, GammaError> {
    let image_node = g.input(image);
    let features = features_forward(g, vars, config, image_node)?;
    let (obj_rows, reg_rows) = rpn_raw(g, vars, config, features)?;

    // first stage: objectness + anchor regression on sampled anchors.
    // positive and negative pools are balanced by normalizing each side by
    // its own count, so a lone positive is not drowned by the negatives.
    let labels = assign_anchors(anchors, gts, config.rpn_pos_iou, config.rpn_neg_iou)?;
    let (pos, neg) = sample_anchors(&labels, config.rpn_sample, rng);
    let rpn_cls = if pos.is_empty() {
        let neg_sel = g.tape.gather_rows(obj_rows, &neg)?;
        let neg_flat = g.tape.reshape(neg_sel, vec![neg.len()])?;
        g.tape.bce_with_logits(neg_flat, &vec![0.0; neg.len()])?
    } else {
        let pos_sel = g.tape.gather_rows(obj_rows, &pos)?;
        let pos_flat = g.tape.reshape(pos_sel, vec![pos.len()])?;
        let pos_bce = g.tape.bce_with_logits(pos_flat, &vec![1.0; pos.len()])?;
        let neg_sel = g.tape.gather_rows(obj_rows, &neg)?;
        let neg_flat = g.tape.reshape(neg_sel, vec![neg.len()])?;
        let neg_bce = g.tape.bce_with_logits(neg_flat, &vec![0.0; neg.len()])?;
        let sum = g.tape.add(pos_bce, neg_bce)?;
        g.tape.scalar_mul(sum, 0.5)
    };

    let mut total = rpn_cls;
    let mut rpn_reg_val = 0.0;
    if !pos.is_empty() {
        let mut reg_targets = Vec::with_capacity(pos.len() * 4);
        for &i in &pos {
            let AnchorLabel::Positive(gi) = labels[i] else { unreachable!("sampled positives") };
            reg_targets.extend_from_slice(&codec::encode(&anchors[i].rect(), &gts[gi].rect));
        }
        let reg_sel = g.tape.gather_rows(reg_rows, &pos)?;
        let reg_sum = g.tape.smooth_l1_sum(reg_sel, &reg_targets, 1.0)?;
        let rpn_reg = g.tape.scalar_mul(reg_sum, 1.0 / pos.len() as f64);
        rpn_reg_val = g.tape.value(rpn_reg);
        total = g.tape.add(total, rpn_reg)?;
    }

    // second stage: proposals (plus ground-truth boxes) through the head
    let proposals = generate_proposals(
        anchors,
        g.tape.data(obj_rows),
        g.tape.data(reg_rows),
        config.image_size,
        config.rpn_nms_threshold,
        config.proposals_train,
    )?;
    let mut rois: Vec<Box2> = proposals;
    rois.extend(gts.iter().map(|a| a.rect));
    let assignments = assign_rois(&rois, gts, config.head_pos_iou)?;
    let mut pos_rois: Vec<usize> =
        (0..rois.len()).filter(|&i| assignments[i].is_some()).collect();
    let mut neg_rois: Vec<usize> =
        (0..rois.len()).filter(|&i| assignments[i].is_none()).collect();
    rng.shuffle(&mut pos_rois);
    rng.shuffle(&mut neg_rois);
    pos_rois.truncate(config.head_sample / 2);
    neg_rois.truncate(config.head_sample - pos_rois.len());
    let selected: Vec<usize> = pos_rois.iter().chain(neg_rois.iter()).copied().collect();

    let feat_extent = config.feature_size() as f64;
    let roi_rects: Vec<RoiRect> = selected
        .iter()
        .map(|&i| {
            let b = rois[i];
            RoiRect {
                x0: (b.x0 / STRIDE as f64).clamp(0.0, feat_extent - 0.01),
                y0: (b.y0 / STRIDE as f64).clamp(0.0, feat_extent - 0.01),
                x1: (b.x1 / STRIDE as f64).clamp(0.01, feat_extent),
                y1: (b.y1 / STRIDE as f64).clamp(0.01, feat_extent),
            }
        })
        .collect();
    let pooled = g.tape.roi_align(features, &roi_rects, config.roi_size, config.roi_size)?;
    let (cls_logits, head_reg_rows) = detection_head(g, vars, config, pooled)?;
    let head_labels: Vec<usize> = selected
        .iter()
        .map(|&i| assignments[i].map_or(0, |gi| gts[gi].class_id + 1))
        .collect();
    let head_cls = g.tape.softmax_cross_entropy(cls_logits, &head_labels)?;
    total = g.tape.add(total, head_cls)?;

    let mut head_reg_val = 0.0;
    let positives_in_selection: Vec<(usize, usize)> = selected
        .iter()
        .enumerate()
        .filter_map(|(row, &i)| assignments[i].map(|gi| (row, gi)))
        .collect();
    if !positives_in_selection.is_empty() {
        let mut spans = Vec::with_capacity(positives_in_selection.len());
        let mut reg_targets = Vec::with_capacity(positives_in_selection.len() * 4);
        for &(row, gi) in &positives_in_selection {
            let class = gts[gi].class_id;
            spans.push((row, 4 * class));
            let roi_box = rois[selected[row]];
            reg_targets.extend_from_slice(&codec::encode(&roi_box, &gts[gi].rect));
        }
        let reg_sel = g.tape.gather_spans(head_reg_rows, &spans, 4)?;
        let reg_sum = g.tape.smooth_l1_sum(reg_sel, &reg_targets, 1.0)?;
        let head_reg = g.tape.scalar_mul(reg_sum, 1.0 / positives_in_selection.len() as f64);
        head_reg_val = g.tape.value(head_reg);
        total = g.tape.add(total, head_reg)?;
    }

    Ok(ImageLossNodes {
        total,
        rpn_cls: g.tape.value(rpn_cls),
        rpn_reg: rpn_reg_val,
        head_cls: g.tape.value(head_cls),
        head_reg: head_reg_val,
        rpn_pos: pos.len(),
    })
}

/// Full training loop over annotated samples; one trace record per
/// iteration. A non-finite loss aborts, keeping the last checkpoint.
pub fn train_detector(
    samples: &[DetectionSample],
    model: &mut DetectorModel,
    config: &DetTrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<DetTraceRecord>, GammaError> {
    if samples.is_empty() {
        return Err(GammaError::Contract("need at least one annotated sample".into()));
    }
    model.config.validate()?;
    let seed = Seed(config.seed);
    let fs = model.config.feature_size();
    let anchors = anchor_grid(
        fs,
        fs,
        STRIDE,
        &model.config.anchor_scales,
        &model.config.anchor_aspects,
    );
    let nchw: Vec<Tensor> =
        samples.iter().map(|s| hwc_to_nchw(&s.image)).collect::<Result<_, _>>()?;
    let mut sampler =
        crate::data::dataset::EpochSampler::new(seed.derive("det_sample"), samples.len());
    let mut rng = seed.derive("det_train").rng();
    let mut sgd = SgdState::new(SgdConfig {
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    });
    let total_iters = config.iters_hi + config.iters_lo;
    let mut trace = Vec::with_capacity(total_iters);
    let mut last_checkpoint: Option<PathBuf> = None;

    for iter in 0..total_iters {
        let lr = detector_lr(iter, config);
        let mut g = Graph::new(&model.params);
        let mut totals: Vec<NodeId> = Vec::with_capacity(config.batch_size);
        let mut agg = [0.0_f64; 4];
        let mut rpn_pos = 0usize;
        for _ in 0..config.batch_size {
            let idx = sampler.next_index();
            let losses = image_losses(
                &mut g,
                &Vars::Trainable,
                &model.config,
                &anchors,
                &nchw[idx],
                &samples[idx].annotations,
                &mut rng,
            )
            .map_err(|e| match e {
                GammaError::Tensor(gamma_core::TensorError::NonFinite { .. }) => {
                    GammaError::TrainAbort {
                        at: format!("iteration {iter}"),
                        reason: format!("non-finite value: {e}"),
                        last_checkpoint: last_checkpoint.clone(),
                    }
                }
                other => other,
            })?;
            agg[0] += losses.rpn_cls;
            agg[1] += losses.rpn_reg;
            agg[2] += losses.head_cls;
            agg[3] += losses.head_reg;
            rpn_pos += losses.rpn_pos;
            totals.push(losses.total);
        }
        let mut acc = totals[0];
        for &t in &totals[1..] {
            acc = g.tape.add(acc, t)?;
        }
        let batch_loss = g.tape.scalar_mul(acc, 1.0 / config.batch_size as f64);
        g.tape.check_finite(batch_loss, "detector loss").map_err(|e| {
            GammaError::TrainAbort {
                at: format!("iteration {iter}"),
                reason: e.to_string(),
                last_checkpoint: last_checkpoint.clone(),
            }
        })?;
        let loss_total = g.tape.value(batch_loss);
        let grads = g.backward(batch_loss)?;
        sgd.step(&mut model.params, &grads, lr)?;
        let inv_b = 1.0 / config.batch_size as f64;
        trace.push(DetTraceRecord {
            iter,
            lr,
            loss_total,
            loss_rpn_cls: agg[0] * inv_b,
            loss_rpn_reg: agg[1] * inv_b,
            loss_head_cls: agg[2] * inv_b,
            loss_head_reg: agg[3] * inv_b,
            rpn_pos,
        });
        if let (Some(dir), Some(interval)) = (out_dir, config.checkpoint_interval) {
            if interval > 0 && (iter + 1) % interval == 0 {
                let path = dir.join(format!("detector_iter{:05}.ckpt", iter + 1));
                checkpoint::save(&model.params, &path)?;
                last_checkpoint = Some(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        checkpoint::save(&model.params, &dir.join("detector_final.ckpt"))?;
    }
    Ok(trace)
}

/// Internal pieces reused by inference.
pub(super) fn proposals_for_inference(
    model: &DetectorModel,
    anchors: &[Anchor],
    obj_logits: &[f64],
    deltas: &[f64],
) -> Result<Vec<Box2>, GammaError> {
    generate_proposals(
        anchors,
        obj_logits,
        deltas,
        model.config.image_size,
        model.config.rpn_nms_threshold,
        model.config.proposals_infer,
    )
}
