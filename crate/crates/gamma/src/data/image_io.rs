//! Image decode/encode and geometry helpers.
//!
//! Images travel as HxWx3 f64 tensors in [-1, 1]; file formats are 8-bit
//! PNG and binary PPM (P6). The u8 <-> f64 mapping round-trips bit-exactly.

use std::fs;
use std::path::Path;

use gamma_core::{Tensor, TensorError};
use image::ColorType;

use crate::GammaError;

fn ingestion(path: &Path, reason: impl Into<String>) -> GammaError {
    GammaError::Ingestion { path: path.to_path_buf(), reason: reason.into() }
}

pub fn u8_to_unit(b: u8) -> f64 {
    b as f64 / 255.0 * 2.0 - 1.0
}

pub fn unit_to_u8(v: f64) -> u8 {
    (((v + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8
}

fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Tensor, TensorError> {
    let data: Vec<f64> = rgb.iter().map(|&b| u8_to_unit(b)).collect();
    Tensor::new(vec![height, width, 3], data)
}

fn to_rgb8(t: &Tensor) -> Vec<u8> {
    t.data().iter().map(|&v| unit_to_u8(v)).collect()
}

/// Decode an 8-bit PNG or binary PPM into an HxWx3 tensor in [-1, 1].
pub fn load_image(path: &Path) -> Result<Tensor, GammaError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "png" => {
            let img = image::open(path).map_err(|e| ingestion(path, e.to_string()))?;
            if img.color() != ColorType::Rgb8 {
                return Err(ingestion(
                    path,
                    format!("expected 8-bit RGB, got {:?}", img.color()),
                ));
            }
            let rgb = img.into_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            from_rgb8(w, h, rgb.as_raw()).map_err(GammaError::from)
        }
        "ppm" => {
            let bytes = fs::read(path).map_err(|e| ingestion(path, e.to_string()))?;
            let (w, h, pixels) = parse_ppm(&bytes).map_err(|m| ingestion(path, m))?;
            from_rgb8(w, h, &pixels).map_err(GammaError::from)
        }
        other => Err(ingestion(path, format!("unsupported extension {other:?}"))),
    }
}

/// Encode an HxWx3 tensor in [-1, 1] as PNG or PPM by extension.
pub fn save_image(t: &Tensor, path: &Path) -> Result<(), GammaError> {
    let shape = t.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(GammaError::Contract(format!("save_image needs HxWx3, got {shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let rgb = to_rgb8(t);
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "png" => image::save_buffer(path, &rgb, w as u32, h as u32, ColorType::Rgb8)
            .map_err(|e| ingestion(path, e.to_string())),
        "ppm" => {
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&rgb);
            fs::write(path, out).map_err(|e| ingestion(path, e.to_string()))
        }
        other => Err(ingestion(path, format!("unsupported extension {other:?}"))),
    }
}

fn parse_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let mut fields = Vec::new();
    if !bytes.starts_with(b"P6") {
        return Err("not a P6 ppm".into());
    }
    pos += 2;
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let f: usize = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| "bad header")?
            .parse()
            .map_err(|_| "bad header number")?;
        fields.push(f);
    }
    if fields[2] != 255 {
        return Err(format!("maxval {} unsupported", fields[2]));
    }
    pos += 1; // single whitespace after maxval
    let (w, h) = (fields[0], fields[1]);
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(format!("truncated pixel data: need {need}"));
    }
    Ok((w, h, bytes[pos..pos + need].to_vec()))
}

/// HxWx3 -> 1x3xHxW.
pub fn hwc_to_nchw(t: &Tensor) -> Result<Tensor, GammaError> {
    let s = t.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(GammaError::Contract(format!("expected HxWx3, got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[c * h * w + y * w + x] = t.data()[(y * w + x) * 3 + c];
            }
        }
    }
    Ok(Tensor::new(vec![1, 3, h, w], data)?)
}

/// 1x3xHxW (or 3xHxW) -> HxWx3.
pub fn nchw_to_hwc(t: &Tensor) -> Result<Tensor, GammaError> {
    let s = t.shape();
    let (h, w) = match s {
        [1, 3, h, w] => (*h, *w),
        [3, h, w] => (*h, *w),
        _ => return Err(GammaError::Contract(format!("expected 1x3xHxW, got {s:?}"))),
    };
    let src = t.data();
    let mut data = vec![0.0; h * w * 3];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                data[(y * w + x) * 3 + c] = src[c * h * w + y * w + x];
            }
        }
    }
    Ok(Tensor::new(vec![h, w, 3], data)?)
}

/// Bilinear resize of an HxWxC tensor to (out_h, out_w), pixel-center aligned.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, GammaError> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(GammaError::Contract(format!("resize needs HxWxC, got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let src = t.data();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut data = vec![0.0; out_h * out_w * c];
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let v00 = src[(y0 * w + x0) * c + ch];
                let v01 = src[(y0 * w + x1) * c + ch];
                let v10 = src[(y1 * w + x0) * c + ch];
                let v11 = src[(y1 * w + x1) * c + ch];
                data[(oy * out_w + ox) * c + ch] = v00 * (1.0 - wy) * (1.0 - wx)
                    + v01 * (1.0 - wy) * wx
                    + v10 * wy * (1.0 - wx)
                    + v11 * wy * wx;
            }
        }
    }
    Ok(Tensor::new(vec![out_h, out_w, c], data)?)
}

/// Aspect-preserving resize so min(H, W) == target.
pub fn resize_shorter_side(t: &Tensor, target: usize) -> Result<Tensor, GammaError> {
    if target == 0 {
        return Err(GammaError::Contract("resize target must be >= 1".into()));
    }
    let s = t.shape();
    let (h, w) = (s[0], s[1]);
    if h.min(w) == target {
        return Ok(t.clone());
    }
    let scale = target as f64 / h.min(w) as f64;
    let (out_h, out_w) = if h <= w {
        (target, (w as f64 * scale).round() as usize)
    } else {
        ((h as f64 * scale).round() as usize, target)
    };
    resize_bilinear(t, out_h, out_w)
}
