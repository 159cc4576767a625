//! Anchor grid: a deterministic function of feature-map size, stride and
//! the scale/aspect sets.

use crate::boxes::Box2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub scale_idx: usize,
    pub aspect_idx: usize,
}

impl Anchor {
    pub fn rect(&self) -> Box2 {
        Box2 {
            x0: self.cx - self.w / 2.0,
            y0: self.cy - self.h / 2.0,
            x1: self.cx + self.w / 2.0,
            y1: self.cy + self.h / 2.0,
        }
    }
}

/// Position-major grid: index = (y * fw + x) * (scales * aspects) + s * aspects + a,
/// matching the channel layout of the objectness and regression heads.
pub fn anchor_grid(
    fh: usize,
    fw: usize,
    stride: usize,
    scales: &[f64],
    aspects: &[f64],
) -> Vec<Anchor> {
    let mut anchors = Vec::with_capacity(fh * fw * scales.len() * aspects.len());
    for y in 0..fh {
        for x in 0..fw {
            let cx = (x as f64 + 0.5) * stride as f64;
            let cy = (y as f64 + 0.5) * stride as f64;
            for (scale_idx, &s) in scales.iter().enumerate() {
                for (aspect_idx, &r) in aspects.iter().enumerate() {
                    // aspect = h / w at constant area s^2
                    let w = s / r.sqrt();
                    let h = s * r.sqrt();
                    anchors.push(Anchor { cx, cy, w, h, scale_idx, aspect_idx });
                }
            }
        }
    }
    anchors
}
