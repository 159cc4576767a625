//! SEA block: spatial self-attention over backbone features, fused back
//! into the feature map through a learnable scalar gain.
//!
//! Query/key projections reduce channels to C/8, values keep C. Scores are
//! softmaxed over key positions so every query row is a probability
//! distribution; the fused map is gain * attention + features, with the
//! gain starting at zero so a fresh block is exactly the identity.

use std::fs;
use std::io::Write;
use std::path::Path;

use gamma_core::{Graph, NodeId, ParamSet, Seed, Tape, Tensor};

use crate::data::image_io::{resize_bilinear, save_image, unit_to_u8};
use crate::nn::{bind, Vars};
use crate::GammaError;

/// Learnable state: 1x1 projection kernels plus the scalar gain.
pub fn build_attention_params(channels: usize, seed: Seed) -> Result<ParamSet, GammaError> {
    if channels % 8 != 0 {
        return Err(GammaError::Contract(format!(
            "attention channels must be divisible by 8, got {channels}"
        )));
    }
    let reduced = channels / 8;
    let mut rng = seed.derive("attention").rng();
    let mut params = ParamSet::new();
    let mut conv = |name: &str, c_out: usize, c_in: usize, rng: &mut gamma_core::Rng| {
        let data: Vec<f64> = (0..c_out * c_in).map(|_| rng.normal(0.0, 0.02)).collect();
        params.insert(name, Tensor::new(vec![c_out, c_in, 1, 1], data).expect("1x1 kernel"));
    };
    conv("wq.w", reduced, channels, &mut rng);
    conv("wk.w", reduced, channels, &mut rng);
    conv("wv.w", channels, channels, &mut rng);
    params.insert("gain", Tensor::scalar(0.0));
    Ok(params)
}

/// Node handles of one attention forward.
pub struct AttentionNodes {
    /// Row-stochastic (HW x HW) scores.
    pub scores: NodeId,
    /// Aggregated values, back in (1, C, H, W) layout.
    pub at_map: NodeId,
    /// gain * at_map + features.
    pub sa_map: NodeId,
}

/// 1x1-projected query/key/value, flattened to (HW x C/8, HW x C/8, HW x C).
pub fn project_qkv(
    g: &mut Graph,
    vars: &Vars,
    prefix: &str,
    features: NodeId,
) -> Result<(NodeId, NodeId, NodeId), GammaError> {
    let shape = g.tape.shape(features).to_vec();
    let (c, h, w) = match shape.as_slice() {
        [1, c, h, w] => (*c, *h, *w),
        _ => return Err(GammaError::Contract(format!("attention needs (1,C,H,W), got {shape:?}"))),
    };
    debug_assert_eq!(c % 8, 0, "enforced at construction");
    let hw = h * w;
    let project = |g: &mut Graph, name: &str, out_c: usize| -> Result<NodeId, GammaError> {
        let kernel = bind(g, vars, &format!("{prefix}{name}"))?;
        let projected = g.tape.conv2d(features, kernel, None, 1, 0)?;
        let flat = g.tape.reshape(projected, vec![out_c, hw])?;
        Ok(g.tape.transpose2d(flat)?)
    };
    let q = project(g, "wq.w", c / 8)?;
    let k = project(g, "wk.w", c / 8)?;
    let v = project(g, "wv.w", c)?;
    Ok((q, k, v))
}

/// q k^T softmaxed over the key axis: each query row sums to one.
pub fn attention_scores(tape: &mut Tape, q: NodeId, k: NodeId) -> Result<NodeId, GammaError> {
    let kt = tape.transpose2d(k)?;
    let affinity = tape.matmul(q, kt)?;
    Ok(tape.softmax(affinity, 1)?)
}

/// Convex combination of value rows per query position, reshaped spatially.
pub fn attention_map(
    tape: &mut Tape,
    scores: NodeId,
    v: NodeId,
    h: usize,
    w: usize,
) -> Result<NodeId, GammaError> {
    let mixed = tape.matmul(scores, v)?;
    let c = tape.shape(v)[1];
    let back = tape.transpose2d(mixed)?;
    Ok(tape.reshape(back, vec![1, c, h, w])?)
}

/// Full block: scores, aggregated map, and the gain-fused output.
pub fn forward(
    g: &mut Graph,
    vars: &Vars,
    prefix: &str,
    features: NodeId,
) -> Result<AttentionNodes, GammaError> {
    g.tape.check_finite(features, "attention input")?;
    let shape = g.tape.shape(features).to_vec();
    let (h, w) = (shape[2], shape[3]);
    let (q, k, v) = project_qkv(g, vars, prefix, features)?;
    let scores = attention_scores(&mut g.tape, q, k)?;
    let at_map = attention_map(&mut g.tape, scores, v, h, w)?;
    let gain = bind(g, vars, &format!("{prefix}gain"))?;
    let gated = g.tape.scale(at_map, gain)?;
    let sa_map = g.tape.add(gated, features)?;
    Ok(AttentionNodes { scores, at_map, sa_map })
}

/// Materialized outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub scores: Tensor,
    pub at_map: Tensor,
    pub sa_map: Tensor,
}

/// Frozen forward for visualization and tests.
pub fn run_attention(
    params: &ParamSet,
    features: &Tensor,
) -> Result<AttentionOutput, GammaError> {
    run_attention_prefixed(params, "", features)
}

/// Frozen forward with a parameter-name prefix (e.g. "attn." inside a
/// detector checkpoint).
pub fn run_attention_prefixed(
    params: &ParamSet,
    prefix: &str,
    features: &Tensor,
) -> Result<AttentionOutput, GammaError> {
    let empty = ParamSet::new();
    let mut g = Graph::new(&empty);
    let f = g.input(features);
    let nodes = forward(&mut g, &Vars::Frozen(params), prefix, f)?;
    Ok(AttentionOutput {
        scores: g.tape.tensor(nodes.scores),
        at_map: g.tape.tensor(nodes.at_map),
        sa_map: g.tape.tensor(nodes.sa_map),
    })
}

/// Channel-averaged attention magnitude, min-max normalized, upsampled to
/// the source image size; written as a grayscale PNG plus an alpha-blended
/// overlay next to it. Magnitudes rather than raw values: the learnable
/// gain may be negative, which would flip an averaged raw map away from
/// the attended regions.
pub fn export_attention_heatmap(
    output: &AttentionOutput,
    source_image: &Tensor,
    path: &Path,
) -> Result<(), GammaError> {
    let s = output.at_map.shape();
    let (c, fh, fw) = (s[1], s[2], s[3]);
    let img_shape = source_image.shape();
    if img_shape.len() != 3 || img_shape[2] != 3 {
        return Err(GammaError::Contract(format!(
            "source image must be HxWx3, got {img_shape:?}"
        )));
    }
    let (ih, iw) = (img_shape[0], img_shape[1]);
    let data = output.at_map.data();
    let mut mean = vec![0.0; fh * fw];
    for ch in 0..c {
        for i in 0..fh * fw {
            mean[i] += data[ch * fh * fw + i].abs();
        }
    }
    for v in &mut mean {
        *v /= c as f64;
    }
    let lo = mean.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: Vec<f64> = if hi - lo < 1e-12 {
        vec![128.0 / 255.0; fh * fw] // constant map: uniform mid-gray
    } else {
        mean.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    };
    // [0,1] heat as an HxWx1-like tensor in [-1,1] for the resizer
    let heat_small =
        Tensor::new(vec![fh, fw, 1], norm.iter().map(|&v| v * 2.0 - 1.0).collect())?;
    let heat = resize_bilinear(&heat_small, ih, iw)?;
    let gray: Vec<u8> = heat.data().iter().map(|&v| unit_to_u8(v)).collect();
    let mut rgb = Vec::with_capacity(ih * iw * 3);
    for &g8 in &gray {
        rgb.extend_from_slice(&[g8, g8, g8]);
    }
    let gray_tensor = Tensor::new(
        vec![ih, iw, 3],
        rgb.iter().map(|&b| b as f64 / 255.0 * 2.0 - 1.0).collect(),
    )?;
    save_image(&gray_tensor, path)?;

    let mut overlay = Vec::with_capacity(ih * iw * 3);
    for i in 0..ih * iw {
        for ch in 0..3 {
            let src = (source_image.data()[i * 3 + ch] + 1.0) / 2.0;
            let h01 = gray[i] as f64 / 255.0;
            overlay.push((0.5 * src + 0.5 * h01) * 2.0 - 1.0);
        }
    }
    let overlay_tensor = Tensor::new(vec![ih, iw, 3], overlay)?;
    let overlay_path = overlay_sibling(path);
    save_image(&overlay_tensor, &overlay_path)?;
    Ok(())
}

fn overlay_sibling(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("heatmap");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("png");
    path.with_file_name(format!("{stem}_overlay.{ext}"))
}

/// Debug dump: u32 rank + dims header, then little-endian f64 payload.
pub fn write_scores_binary(scores: &Tensor, path: &Path) -> Result<(), GammaError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&(scores.rank() as u32).to_le_bytes())?;
    for &d in scores.shape() {
        f.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in scores.data() {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
