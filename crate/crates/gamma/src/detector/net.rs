//! Forward passes of the detector networks.

use gamma_core::{Graph, NodeId};

use crate::attention;
use crate::nn::{bind, Vars};
use crate::GammaError;

use super::DetectorConfig;

/// Image-level features: six 3x3 convs with ReLU, strides 1,2,1,2,1,2
/// (total stride 8). Input (1,3,H,W), output (1,C,H/8,W/8).
pub fn backbone_forward(
    g: &mut Graph,
    vars: &Vars,
    config: &DetectorConfig,
    image: NodeId,
) -> Result<NodeId, GammaError> {
    let shape = g.tape.shape(image).to_vec();
    if shape.len() != 4
        || shape[1] != 3
        || shape[2] != config.image_size
        || shape[3] != config.image_size
    {
        return Err(GammaError::Contract(format!(
            "backbone input must be (1,3,{s},{s}), got {shape:?}",
            s = config.image_size
        )));
    }
    // instance norm keeps from-scratch feature scales healthy at any depth
    let mut h = image;
    for (i, stride) in [1usize, 2, 1, 2, 1, 2].iter().enumerate() {
        let w = bind(g, vars, &format!("backbone.c{i}.w"))?;
        let b = bind(g, vars, &format!("backbone.c{i}.b"))?;
        let y = g.tape.conv2d(h, w, Some(b), *stride, 1)?;
        let n = g.tape.instance_norm(y, 1e-5)?;
        h = g.tape.relu(n);
    }
    Ok(h)
}

/// Backbone then the attention fusion when enabled.
pub fn features_forward(
    g: &mut Graph,
    vars: &Vars,
    config: &DetectorConfig,
    image: NodeId,
) -> Result<NodeId, GammaError> {
    let f1 = backbone_forward(g, vars, config, image)?;
    if config.use_attention {
        Ok(attention::forward(g, vars, "attn.", f1)?.sa_map)
    } else {
        Ok(f1)
    }
}

/// Raw RPN outputs rearranged to per-anchor rows, index
/// (position * anchors_per_cell + anchor): objectness (N,1), deltas (N,4).
pub fn rpn_raw(
    g: &mut Graph,
    vars: &Vars,
    config: &DetectorConfig,
    features: NodeId,
) -> Result<(NodeId, NodeId), GammaError> {
    let shape = g.tape.shape(features).to_vec();
    let (fh, fw) = (shape[2], shape[3]);
    let hw = fh * fw;
    let a = config.anchors_per_cell();
    let w = bind(g, vars, "rpn.conv.w")?;
    let b = bind(g, vars, "rpn.conv.b")?;
    let mid = g.tape.conv2d(features, w, Some(b), 1, 1)?;
    let mid = g.tape.relu(mid);

    let w_obj = bind(g, vars, "rpn.obj.w")?;
    let b_obj = bind(g, vars, "rpn.obj.b")?;
    let obj = g.tape.conv2d(mid, w_obj, Some(b_obj), 1, 0)?;
    let obj = g.tape.reshape(obj, vec![a, hw])?;
    let obj = g.tape.transpose2d(obj)?;
    let obj_rows = g.tape.reshape(obj, vec![hw * a, 1])?;

    let w_reg = bind(g, vars, "rpn.reg.w")?;
    let b_reg = bind(g, vars, "rpn.reg.b")?;
    let reg = g.tape.conv2d(mid, w_reg, Some(b_reg), 1, 0)?;
    let reg = g.tape.reshape(reg, vec![4 * a, hw])?;
    let reg = g.tape.transpose2d(reg)?;
    let reg_rows = g.tape.reshape(reg, vec![hw * a, 4])?;
    Ok((obj_rows, reg_rows))
}

/// Second stage: pooled RoI features to per-RoI class logits over
/// classes + background and per-class box deltas.
pub fn detection_head(
    g: &mut Graph,
    vars: &Vars,
    _config: &DetectorConfig,
    pooled: NodeId,
) -> Result<(NodeId, NodeId), GammaError> {
    let shape = g.tape.shape(pooled).to_vec();
    if shape.len() != 4 {
        return Err(GammaError::Contract(format!("pooled stack must be rank-4, got {shape:?}")));
    }
    let rois = shape[0];
    if rois == 0 {
        return Err(GammaError::Contract("pooled stack must be non-empty".into()));
    }
    let dim = shape[1] * shape[2] * shape[3];
    let flat = g.tape.reshape(pooled, vec![rois, dim])?;
    let w = bind(g, vars, "head.fc.w")?;
    let b = bind(g, vars, "head.fc.b")?;
    let h = g.tape.matmul(flat, w)?;
    let h = g.tape.add_row_bias(h, b)?;
    let h = g.tape.relu(h);
    let w_cls = bind(g, vars, "head.cls.w")?;
    let b_cls = bind(g, vars, "head.cls.b")?;
    let cls = g.tape.matmul(h, w_cls)?;
    let cls_logits = g.tape.add_row_bias(cls, b_cls)?;
    let w_reg = bind(g, vars, "head.reg.w")?;
    let b_reg = bind(g, vars, "head.reg.b")?;
    let reg = g.tape.matmul(h, w_reg)?;
    let reg_rows = g.tape.add_row_bias(reg, b_reg)?;
    Ok((cls_logits, reg_rows))
}
