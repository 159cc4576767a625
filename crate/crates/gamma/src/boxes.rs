//! Axis-aligned boxes and detection records shared across modules.

use gamma_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::GammaError;

/// (x_min, y_min, x_max, y_max) in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2 {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Box2 {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GammaError> {
        let b = Box2 { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GammaError> {
        if !(self.x0 < self.x1 && self.y0 < self.y1) {
            return Err(GammaError::Contract(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn intersection_area(&self, other: &Box2) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    pub fn clip(&self, width: f64, height: f64) -> Box2 {
        Box2 {
            x0: self.x0.clamp(0.0, width),
            y0: self.y0.clamp(0.0, height),
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
        }
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn scaled(&self, s: f64) -> Box2 {
        Box2 { x0: self.x0 * s, y0: self.y0 * s, x1: self.x1 * s, y1: self.y1 * s }
    }

    /// Total order for deterministic tie-breaking.
    pub fn lex_cmp(&self, other: &Box2) -> std::cmp::Ordering {
        let a = [self.x0, self.y0, self.x1, self.y1];
        let b = [other.x0, other.y0, other.x1, other.y1];
        for (x, y) in a.iter().zip(&b) {
            match x.partial_cmp(y) {
                Some(std::cmp::Ordering::Equal) | None => continue,
                Some(ord) => return ord,
            }
        }
        std::cmp::Ordering::Equal
    }
}

/// One ground-truth annotation row: box plus class label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub rect: Box2,
    pub class_id: usize,
}

/// Image plus its annotation rows.
#[derive(Debug, Clone)]
pub struct DetectionSample {
    /// H x W x 3 tensor in [-1, 1].
    pub image: Tensor,
    pub annotations: Vec<Annotation>,
}

impl DetectionSample {
    pub fn new(image: Tensor, annotations: Vec<Annotation>) -> Result<Self, GammaError> {
        let shape = image.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(GammaError::Contract(format!(
                "detection sample image must be HxWx3, got {shape:?}"
            )));
        }
        let (h, w) = (shape[0] as f64, shape[1] as f64);
        for a in &annotations {
            a.rect.validate()?;
            if a.rect.x0 < 0.0 || a.rect.y0 < 0.0 || a.rect.x1 > w || a.rect.y1 > h {
                return Err(GammaError::Contract(format!(
                    "annotation {a:?} outside {w}x{h} image"
                )));
            }
        }
        Ok(DetectionSample { image, annotations })
    }
}

/// A scored, classified output box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub rect: Box2,
    pub class_id: usize,
    pub confidence: f64,
}
