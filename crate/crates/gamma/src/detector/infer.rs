//! Inference: full pipeline forward, per-class suppression, confidence-
//! sorted detections clipped to the image.

use gamma_core::conv::RoiRect;
use gamma_core::{Graph, ParamSet, Tensor};

use crate::boxes::{Box2, Detection, DetectionSample};
use crate::data::image_io::hwc_to_nchw;
use crate::metrics::{evaluate_detections, EvalResult};
use crate::nn::Vars;
use crate::GammaError;

use super::anchors::anchor_grid;
use super::codec;
use super::net::{detection_head, features_forward, rpn_raw};
use super::nms::nms;
use super::train::proposals_for_inference;
use super::{DetectorModel, STRIDE};

pub fn infer(
    model: &DetectorModel,
    image: &Tensor,
    score_threshold: f64,
    nms_threshold: f64,
) -> Result<Vec<Detection>, GammaError> {
    let cfg = &model.config;
    let nchw = hwc_to_nchw(image)?;
    let empty = ParamSet::new();
    let mut g = Graph::new(&empty);
    let vars = Vars::Frozen(&model.params);
    let x = g.input(&nchw);
    let features = features_forward(&mut g, &vars, cfg, x)?;
    let (obj_rows, reg_rows) = rpn_raw(&mut g, &vars, cfg, features)?;
    let fs = cfg.feature_size();
    let anchors = anchor_grid(fs, fs, STRIDE, &cfg.anchor_scales, &cfg.anchor_aspects);
    let obj_flat: Vec<f64> = g.tape.data(obj_rows).to_vec();
    let reg_flat: Vec<f64> = g.tape.data(reg_rows).to_vec();
    let proposals = proposals_for_inference(model, &anchors, &obj_flat, &reg_flat)?;
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    let feat_extent = fs as f64;
    let rois: Vec<RoiRect> = proposals
        .iter()
        .map(|b| RoiRect {
            x0: (b.x0 / STRIDE as f64).clamp(0.0, feat_extent - 0.01),
            y0: (b.y0 / STRIDE as f64).clamp(0.0, feat_extent - 0.01),
            x1: (b.x1 / STRIDE as f64).clamp(0.01, feat_extent),
            y1: (b.y1 / STRIDE as f64).clamp(0.01, feat_extent),
        })
        .collect();
    let pooled = g.tape.roi_align(features, &rois, cfg.roi_size, cfg.roi_size)?;
    let (cls_logits, head_reg) = detection_head(&mut g, &vars, cfg, pooled)?;
    let probs_node = g.tape.softmax(cls_logits, 1)?;
    let probs = g.tape.data(probs_node);
    let reg = g.tape.data(head_reg);
    let k = cfg.num_classes;
    let img_extent = cfg.image_size as f64;

    let mut per_class: Vec<Vec<(Box2, f64)>> = vec![Vec::new(); k];
    for (ri, proposal) in proposals.iter().enumerate() {
        for class in 0..k {
            let p = probs[ri * (k + 1) + class + 1];
            if p < score_threshold {
                continue;
            }
            let deltas = &reg[ri * 4 * k + 4 * class..ri * 4 * k + 4 * class + 4];
            let rect = codec::decode(proposal, deltas).clip(img_extent, img_extent);
            if rect.x1 - rect.x0 < 1.0 || rect.y1 - rect.y0 < 1.0 {
                continue;
            }
            per_class[class].push((rect, p));
        }
    }
    let mut detections = Vec::new();
    for (class, dets) in per_class.iter().enumerate() {
        if dets.is_empty() {
            continue;
        }
        for &i in &nms(dets, nms_threshold)? {
            detections.push(Detection {
                rect: dets[i].0,
                class_id: class,
                confidence: dets[i].1,
            });
        }
    }
    detections.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.rect.lex_cmp(&b.rect))
    });
    Ok(detections)
}

/// Backbone features of one image under the frozen model, plus the
/// attention outputs when the block is present.
pub fn attention_snapshot(
    model: &DetectorModel,
    image: &Tensor,
) -> Result<crate::attention::AttentionOutput, GammaError> {
    if !model.config.use_attention || model.params.get("attn.gain").is_none() {
        return Err(GammaError::Contract(
            "model has no attention block to visualize".into(),
        ));
    }
    let nchw = hwc_to_nchw(image)?;
    let empty = ParamSet::new();
    let mut g = Graph::new(&empty);
    let vars = Vars::Frozen(&model.params);
    let x = g.input(&nchw);
    let f1 = super::net::backbone_forward(&mut g, &vars, &model.config, x)?;
    let f1_tensor = g.tape.tensor(f1);
    crate::attention::run_attention_prefixed(&model.params, "attn.", &f1_tensor)
}

/// Run inference over a sample set and score it.
pub fn evaluate_model(
    model: &DetectorModel,
    samples: &[DetectionSample],
    iou_threshold: f64,
    score_threshold: f64,
    nms_threshold: f64,
) -> Result<EvalResult, GammaError> {
    let mut all_dets = Vec::with_capacity(samples.len());
    let mut all_gts = Vec::with_capacity(samples.len());
    for s in samples {
        all_dets.push(infer(model, &s.image, score_threshold, nms_threshold)?);
        all_gts.push(s.annotations.clone());
    }
    evaluate_detections(&all_dets, &all_gts, model.config.num_classes, iou_threshold)
}
