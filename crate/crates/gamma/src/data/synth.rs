//! Seeded synthetic scene generators: unpaired two-domain image sets and
//! annotated detection samples, all bitwise deterministic per seed.

use gamma_core::{Rng, Seed, Tensor};

use super::dataset::{DomainDataset, DomainTag};
use crate::boxes::{Annotation, Box2, DetectionSample};
use crate::GammaError;

/// Working buffer in [0, 1] HxWx3.
struct Canvas {
    h: usize,
    w: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Canvas { h, w, px: vec![0.0; h * w * 3] }
    }

    fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.w + x) * 3;
        self.px[i] = rgb[0];
        self.px[i + 1] = rgb[1];
        self.px[i + 2] = rgb[2];
    }

    /// Low-frequency value noise: coarse random grid, bilinear upsample.
    fn textured_background(&mut self, rng: &mut Rng, base: [f64; 3], amp: f64) {
        const G: usize = 5;
        let grid: Vec<f64> = (0..G * G).map(|_| rng.uniform_in(-amp, amp)).collect();
        for y in 0..self.h {
            let fy = y as f64 / (self.h - 1) as f64 * (G - 1) as f64;
            let y0 = (fy.floor() as usize).min(G - 2);
            let wy = fy - y0 as f64;
            for x in 0..self.w {
                let fx = x as f64 / (self.w - 1) as f64 * (G - 1) as f64;
                let x0 = (fx.floor() as usize).min(G - 2);
                let wx = fx - x0 as f64;
                let n = grid[y0 * G + x0] * (1.0 - wy) * (1.0 - wx)
                    + grid[y0 * G + x0 + 1] * (1.0 - wy) * wx
                    + grid[(y0 + 1) * G + x0] * wy * (1.0 - wx)
                    + grid[(y0 + 1) * G + x0 + 1] * wy * wx;
                let rgb = [
                    (base[0] + n).clamp(0.0, 1.0),
                    (base[1] + n).clamp(0.0, 1.0),
                    (base[2] + n * 0.8).clamp(0.0, 1.0),
                ];
                self.set(y, x, rgb);
            }
        }
    }

    /// Tensor in [-1, 1].
    fn into_tensor(self) -> Tensor {
        let data: Vec<f64> = self.px.into_iter().map(|v| v * 2.0 - 1.0).collect();
        Tensor::new(vec![self.h, self.w, 3], data).expect("canvas shape consistent")
    }
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Rect,
    Cross,
    Ellipse,
    Triangle,
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    color: [f64; 3],
}

impl Shape {
    fn bbox(&self) -> Box2 {
        Box2 {
            x0: self.cx - self.half_w,
            y0: self.cy - self.half_h,
            x1: self.cx + self.half_w,
            y1: self.cy + self.half_h,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.half_w;
        let dy = (y - self.cy) / self.half_h;
        if dx.abs() > 1.0 || dy.abs() > 1.0 {
            return false;
        }
        match self.kind {
            ShapeKind::Rect => true,
            ShapeKind::Ellipse => dx * dx + dy * dy <= 1.0,
            ShapeKind::Cross => dx.abs() <= 0.34 || dy.abs() <= 0.34,
            ShapeKind::Triangle => {
                // apex up: width shrinks linearly toward the top
                let t = (dy + 1.0) / 2.0; // 0 at top, 1 at base
                dx.abs() <= t
            }
        }
    }

    fn draw(&self, canvas: &mut Canvas) {
        let b = self.bbox();
        let y_lo = b.y0.floor().max(0.0) as usize;
        let y_hi = (b.y1.ceil() as usize).min(canvas.h);
        let x_lo = b.x0.floor().max(0.0) as usize;
        let x_hi = (b.x1.ceil() as usize).min(canvas.w);
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    canvas.set(y, x, self.color);
                }
            }
        }
    }
}

fn jitter_color(rng: &mut Rng, base: [f64; 3], amt: f64) -> [f64; 3] {
    [
        (base[0] + rng.uniform_in(-amt, amt)).clamp(0.0, 1.0),
        (base[1] + rng.uniform_in(-amt, amt)).clamp(0.0, 1.0),
        (base[2] + rng.uniform_in(-amt, amt)).clamp(0.0, 1.0),
    ]
}

/// Shape family per class: 0 bag-like quad, 1 cross arms, 2 soft blob.
fn class_shape(rng: &mut Rng, class_id: usize, cx: f64, cy: f64, half_w: f64, half_h: f64) -> Shape {
    let (kind, color) = match class_id {
        0 => (ShapeKind::Rect, jitter_color(rng, [0.93, 0.91, 0.88], 0.05)),
        1 => (ShapeKind::Cross, jitter_color(rng, [0.85, 0.46, 0.18], 0.05)),
        _ => (ShapeKind::Ellipse, jitter_color(rng, [0.45, 0.82, 0.42], 0.05)),
    };
    Shape { kind, cx, cy, half_w, half_h, color }
}

fn debris_shape(rng: &mut Rng, cx: f64, cy: f64, half_w: f64, half_h: f64) -> Shape {
    let kind = match rng.uniform_usize(3) {
        0 => ShapeKind::Rect,
        1 => ShapeKind::Triangle,
        _ => ShapeKind::Ellipse,
    };
    let color = [
        rng.uniform_in(0.6, 1.0),
        rng.uniform_in(0.6, 1.0),
        rng.uniform_in(0.55, 0.95),
    ];
    Shape { kind, cx, cy, half_w, half_h, color }
}

fn box_blur3(px: &mut [f64], h: usize, w: usize) {
    let src = px.to_vec();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                let mut cnt = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = y as i64 + dy;
                        let xx = x as i64 + dx;
                        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                            continue;
                        }
                        acc += src[(yy as usize * w + xx as usize) * 3 + c];
                        cnt += 1.0;
                    }
                }
                px[(y * w + x) * 3 + c] = acc / cnt;
            }
        }
    }
}

/// Global underwater restyle in [0, 1] space: blue-green tint, contrast
/// compression, box blur and a radial vignette. Deterministic.
fn underwater_transform01(px: &mut [f64], h: usize, w: usize, tint: f64) {
    for i in 0..h * w {
        let r = px[i * 3];
        let g = px[i * 3 + 1];
        let b = px[i * 3 + 2];
        px[i * 3] = r * (1.0 - 0.70 * tint);
        px[i * 3 + 1] = g * (1.0 - 0.28 * tint) + 0.10 * tint;
        px[i * 3 + 2] = b * (1.0 - 0.60 * tint) + 0.56 * tint;
    }
    for v in px.iter_mut() {
        *v = 0.5 + (*v - 0.5) * (1.0 - 0.30 * tint);
    }
    box_blur3(px, h, w);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let dmax = cy * cy + cx * cx;
    for y in 0..h {
        for x in 0..w {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / dmax;
            let s = 1.0 - 0.22 * tint * d;
            for c in 0..3 {
                px[(y * w + x) * 3 + c] = (px[(y * w + x) * 3 + c] * s).clamp(0.0, 1.0);
            }
        }
    }
}

/// Apply the underwater restyle to an HxWx3 tensor in [-1, 1].
pub fn underwater_style(t: &Tensor, tint: f64) -> Result<Tensor, GammaError> {
    let s = t.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(GammaError::Contract(format!("underwater_style needs HxWx3, got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    let mut px: Vec<f64> = t.data().iter().map(|v| (v + 1.0) / 2.0).collect();
    underwater_transform01(&mut px, h, w, tint);
    Ok(Tensor::new(vec![h, w, 3], px.into_iter().map(|v| v * 2.0 - 1.0).collect())?)
}

/// Turbidity degradation: extra blur, additive noise, contrast drop, haze.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Degradations {
    pub blur: bool,
    pub noise: bool,
    pub low_contrast: bool,
}

impl Degradations {
    pub fn turbidity() -> Self {
        Degradations { blur: true, noise: true, low_contrast: true }
    }

    pub fn none() -> Self {
        Degradations::default()
    }

    pub fn any(&self) -> bool {
        self.blur || self.noise || self.low_contrast
    }
}

fn degrade01(px: &mut [f64], h: usize, w: usize, flags: Degradations, rng: &mut Rng) {
    if flags.blur {
        box_blur3(px, h, w);
        box_blur3(px, h, w);
    }
    if flags.low_contrast {
        let haze = [0.42, 0.52, 0.58];
        for i in 0..h * w {
            for c in 0..3 {
                let v = 0.5 + (px[i * 3 + c] - 0.5) * 0.55;
                px[i * 3 + c] = v * 0.75 + haze[c] * 0.25;
            }
        }
    }
    if flags.noise {
        for v in px.iter_mut() {
            *v = (*v + rng.normal(0.0, 0.04)).clamp(0.0, 1.0);
        }
    }
}

fn render_terrestrial_scene(
    rng: &mut Rng,
    size: usize,
    classes: usize,
    class_pick: impl Fn(&mut Rng, usize) -> Option<usize>,
) -> (Canvas, Vec<Annotation>) {
    let mut canvas = Canvas::new(size, size);
    // warm sandy cast keeps the two domains separable in channel statistics
    let warm = rng.uniform_in(0.06, 0.14);
    let base_l = rng.uniform_in(0.55, 0.78);
    canvas.textured_background(rng, [base_l + warm, base_l, base_l - 2.0 * warm], 0.08);
    let n_objects = 1 + rng.uniform_usize(3);
    let margin = (size as f64 * 0.08).max(3.0);
    let mut annotations: Vec<Annotation> = Vec::new();
    let mut shapes: Vec<Shape> = Vec::new();
    for obj in 0..n_objects {
        let mut placed = None;
        for _try in 0..12 {
            let half_w = rng.uniform_in(0.09, 0.21) * size as f64;
            let half_h = rng.uniform_in(0.09, 0.21) * size as f64;
            let cx = rng.uniform_in(margin + half_w, size as f64 - margin - half_w);
            let cy = rng.uniform_in(margin + half_h, size as f64 - margin - half_h);
            let class_id = class_pick(rng, classes);
            let shape = match class_id {
                Some(c) => class_shape(rng, c, cx, cy, half_w, half_h),
                None => debris_shape(rng, cx, cy, half_w, half_h),
            };
            let bbox = shape.bbox();
            let crowded = annotations.iter().any(|a| {
                let inter = a.rect.intersection_area(&bbox);
                inter / a.rect.area().min(bbox.area()) > 0.2
            });
            if !crowded {
                placed = Some((shape, bbox, class_id));
                break;
            }
        }
        if let Some((shape, bbox, class_id)) = placed {
            shapes.push(shape);
            annotations.push(Annotation { rect: bbox, class_id: class_id.unwrap_or(0) });
        } else if obj == 0 {
            // guarantee at least one object
            let shape = debris_shape(rng, size as f64 / 2.0, size as f64 / 2.0, 8.0, 8.0);
            annotations.push(Annotation { rect: shape.bbox(), class_id: 0 });
            shapes.push(shape);
        }
    }
    for s in &shapes {
        s.draw(&mut canvas);
    }
    (canvas, annotations)
}

/// Unpaired two-domain image pair: bright shapes on light textured
/// backgrounds vs the same family restyled underwater. Draws for the two
/// domains are independent.
pub fn synth_domain_pair(
    seed: Seed,
    n_x: usize,
    n_y: usize,
    size: usize,
) -> Result<(DomainDataset, DomainDataset), GammaError> {
    if size < 32 {
        return Err(GammaError::Contract(format!("image size {size} < 32")));
    }
    let mut x_images = Vec::with_capacity(n_x);
    let mut rng_x = seed.derive("domain_x").rng();
    for _ in 0..n_x {
        let (canvas, _) = render_terrestrial_scene(&mut rng_x, size, 0, |_, _| None);
        x_images.push(canvas.into_tensor());
    }
    let mut y_images = Vec::with_capacity(n_y);
    let mut rng_y = seed.derive("domain_y").rng();
    for _ in 0..n_y {
        let (mut canvas, _) = render_terrestrial_scene(&mut rng_y, size, 0, |_, _| None);
        let tint = rng_y.uniform_in(0.85, 1.0);
        underwater_transform01(&mut canvas.px, size, size, tint);
        y_images.push(canvas.into_tensor());
    }
    Ok((
        DomainDataset::new(DomainTag::Terrestrial, x_images)?,
        DomainDataset::new(DomainTag::Underwater, y_images)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneStyle {
    Terrestrial,
    Underwater,
}

/// Annotated detection samples: 1-3 class-shaped objects per image with
/// exact ground-truth boxes, optional turbidity degradations.
pub fn synth_detection_set(
    seed: Seed,
    n: usize,
    size: usize,
    classes: usize,
    style: SceneStyle,
    degradations: Degradations,
) -> Result<Vec<DetectionSample>, GammaError> {
    if classes < 2 {
        return Err(GammaError::Contract(format!(
            "detection set needs >= 2 classes, got {classes}"
        )));
    }
    if size < 32 {
        return Err(GammaError::Contract(format!("image size {size} < 32")));
    }
    let mut rng = seed.derive("detection").rng();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let (mut canvas, annotations) =
            render_terrestrial_scene(&mut rng, size, classes, |r, k| Some(r.uniform_usize(k)));
        if style == SceneStyle::Underwater {
            let tint = rng.uniform_in(0.85, 1.0);
            underwater_transform01(&mut canvas.px, size, size, tint);
        }
        if degradations.any() {
            degrade01(&mut canvas.px, size, size, degradations, &mut rng);
        }
        samples.push(DetectionSample::new(canvas.into_tensor(), annotations)?);
    }
    Ok(samples)
}

/// Mean of one channel over a whole dataset (values in [-1, 1]).
pub fn channel_mean(ds: &DomainDataset, channel: usize) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for img in &ds.images {
        let d = img.data();
        let mut i = channel;
        while i < d.len() {
            acc += d[i];
            count += 1;
            i += 3;
        }
    }
    acc / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seed_deterministic() {
        let (x1, y1) = synth_domain_pair(Seed(5), 4, 3, 32).unwrap();
        let (x2, y2) = synth_domain_pair(Seed(5), 4, 3, 32).unwrap();
        for (a, b) in x1.images.iter().zip(&x2.images) {
            assert_eq!(a, b);
        }
        for (a, b) in y1.images.iter().zip(&y2.images) {
            assert_eq!(a, b);
        }
        let d1 = synth_detection_set(
            Seed(5),
            4,
            32,
            3,
            SceneStyle::Underwater,
            Degradations::none(),
        )
        .unwrap();
        let d2 = synth_detection_set(
            Seed(5),
            4,
            32,
            3,
            SceneStyle::Underwater,
            Degradations::none(),
        )
        .unwrap();
        for (a, b) in d1.iter().zip(&d2) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.annotations, b.annotations);
        }
    }

    #[test]
    fn style_gap_exists_in_blue_channel() {
        let (x, y) = synth_domain_pair(Seed(11), 16, 16, 48).unwrap();
        let bx = channel_mean(&x, 2);
        let by = channel_mean(&y, 2);
        assert!(by - bx > 0.10, "blue gap {} vs {}", by, bx);
        // and red drops underwater
        let rx = channel_mean(&x, 0);
        let ry = channel_mean(&y, 0);
        assert!(rx - ry > 0.10, "red gap {} vs {}", rx, ry);
    }

    #[test]
    fn detection_boxes_inside_bounds_and_count() {
        let n = 12;
        let size = 48;
        let samples = synth_detection_set(
            Seed(2),
            n,
            size,
            3,
            SceneStyle::Underwater,
            Degradations::turbidity(),
        )
        .unwrap();
        assert_eq!(samples.len(), n);
        for s in &samples {
            assert!(!s.annotations.is_empty() && s.annotations.len() <= 3);
            for a in &s.annotations {
                assert!(a.rect.x0 >= 0.0 && a.rect.y0 >= 0.0);
                assert!(a.rect.x1 <= size as f64 && a.rect.y1 <= size as f64);
                assert!(a.class_id < 3);
            }
        }
    }

    #[test]
    fn classes_below_two_rejected() {
        assert!(synth_detection_set(
            Seed(1),
            2,
            32,
            1,
            SceneStyle::Underwater,
            Degradations::none()
        )
        .is_err());
    }

    #[test]
    fn boxes_consistent_under_resize() {
        // scaling boxes by the image scale factor keeps IoU with the
        // rescaled ground truth high
        let samples = synth_detection_set(
            Seed(7),
            6,
            64,
            3,
            SceneStyle::Underwater,
            Degradations::none(),
        )
        .unwrap();
        for s in &samples {
            let resized = crate::data::image_io::resize_shorter_side(&s.image, 32).unwrap();
            assert_eq!(resized.shape()[0], 32);
            let scale = 0.5;
            for a in &s.annotations {
                let scaled = a.rect.scaled(scale);
                // the rescaled box must stay inside the resized image
                assert!(scaled.x1 <= 32.0 + 1e-9 && scaled.y1 <= 32.0 + 1e-9);
                let again = scaled.scaled(1.0 / scale);
                let iou = crate::metrics::iou(&a.rect, &again).unwrap();
                assert!(iou >= 0.95);
            }
        }
    }
}
