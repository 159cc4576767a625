//! Standard (dx, dy, dw, dh) box-regression parameterization.

use crate::boxes::Box2;

/// Clamp on dw/dh before exponentiation.
const MAX_LOG_SCALE: f64 = 4.0;

/// Encode a target box relative to a reference box.
pub fn encode(reference: &Box2, target: &Box2) -> [f64; 4] {
    let (rcx, rcy) = reference.center();
    let (tcx, tcy) = target.center();
    let (rw, rh) = (reference.width(), reference.height());
    [
        (tcx - rcx) / rw,
        (tcy - rcy) / rh,
        (target.width() / rw).ln(),
        (target.height() / rh).ln(),
    ]
}

/// Apply deltas to a reference box.
pub fn decode(reference: &Box2, deltas: &[f64]) -> Box2 {
    let (rcx, rcy) = reference.center();
    let (rw, rh) = (reference.width(), reference.height());
    let cx = rcx + deltas[0] * rw;
    let cy = rcy + deltas[1] * rh;
    let w = rw * deltas[2].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    let h = rh * deltas[3].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    Box2 { x0: cx - w / 2.0, y0: cy - h / 2.0, x1: cx + w / 2.0, y1: cy + h / 2.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_deltas_are_identity() {
        let b = Box2 { x0: 3.0, y0: 5.0, x1: 19.0, y1: 14.0 };
        let out = decode(&b, &[0.0, 0.0, 0.0, 0.0]);
        assert!((out.x0 - b.x0).abs() < 1e-12);
        assert!((out.y1 - b.y1).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut rng = gamma_core::Seed(33).rng();
        for _ in 0..200 {
            let cx = rng.uniform_in(10.0, 50.0);
            let cy = rng.uniform_in(10.0, 50.0);
            let anchor = Box2 { x0: cx - 8.0, y0: cy - 6.0, x1: cx + 8.0, y1: cy + 6.0 };
            let gx0 = rng.uniform_in(0.0, 40.0);
            let gy0 = rng.uniform_in(0.0, 40.0);
            let gt = Box2 {
                x0: gx0,
                y0: gy0,
                x1: gx0 + rng.uniform_in(2.0, 20.0),
                y1: gy0 + rng.uniform_in(2.0, 20.0),
            };
            let deltas = encode(&anchor, &gt);
            let back = decode(&anchor, &deltas);
            for (a, b) in [back.x0, back.y0, back.x1, back.y1]
                .iter()
                .zip([gt.x0, gt.y0, gt.x1, gt.y1].iter())
            {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
