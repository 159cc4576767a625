//! Adversarial and cycle-reconstruction objectives.

use gamma_core::{NodeId, Tape};

use crate::GammaError;

const SCORE_FLOOR: f64 = 1e-7;

fn count_saturated(tape: &Tape, scores: NodeId) -> u64 {
    tape.data(scores)
        .iter()
        .filter(|&&v| !(SCORE_FLOOR..=1.0 - SCORE_FLOOR).contains(&v))
        .count() as u64
}

/// mean(log d_real) + mean(log(1 - d_fake)), averaged over batch and patch
/// positions. Scores at exactly 0 or 1 are clamped into
/// [1e-7, 1 - 1e-7] and counted on the saturation counter. The
/// discriminator ascends this value; callers negate (and halve) for its
/// descent step.
pub fn adversarial_loss(
    tape: &mut Tape,
    d_real: NodeId,
    d_fake: NodeId,
    saturation_counter: &mut u64,
) -> Result<NodeId, GammaError> {
    *saturation_counter += count_saturated(tape, d_real) + count_saturated(tape, d_fake);
    let real_c = tape.clamp(d_real, SCORE_FLOOR, 1.0 - SCORE_FLOOR);
    let log_real = tape.ln(real_c);
    let real_term = tape.mean_all(log_real);
    let one_minus = tape.rsub_scalar(1.0, d_fake);
    let fake_c = tape.clamp(one_minus, SCORE_FLOOR, 1.0 - SCORE_FLOOR);
    let log_fake = tape.ln(fake_c);
    let fake_term = tape.mean_all(log_fake);
    Ok(tape.add(real_term, fake_term)?)
}

/// The generator-side term: mean log(1 - d_fake) as written, or the
/// non-saturating -mean log(d_fake) variant. Either way the generator
/// descends the returned value.
pub fn generator_fool_loss(
    tape: &mut Tape,
    d_fake: NodeId,
    non_saturating: bool,
    saturation_counter: &mut u64,
) -> Result<NodeId, GammaError> {
    *saturation_counter += count_saturated(tape, d_fake);
    if non_saturating {
        let fake_c = tape.clamp(d_fake, SCORE_FLOOR, 1.0 - SCORE_FLOOR);
        let log_fake = tape.ln(fake_c);
        let m = tape.mean_all(log_fake);
        Ok(tape.scalar_mul(m, -1.0))
    } else {
        let one_minus = tape.rsub_scalar(1.0, d_fake);
        let fake_c = tape.clamp(one_minus, SCORE_FLOOR, 1.0 - SCORE_FLOOR);
        let log_fake = tape.ln(fake_c);
        Ok(tape.mean_all(log_fake))
    }
}

/// Mean-L1 reconstruction penalty: mean|x_rec - x| + mean|y_rec - y|.
pub fn cycle_loss(
    tape: &mut Tape,
    x: NodeId,
    x_rec: NodeId,
    y: NodeId,
    y_rec: NodeId,
) -> Result<NodeId, GammaError> {
    if tape.shape(x) != tape.shape(x_rec) || tape.shape(y) != tape.shape(y_rec) {
        return Err(GammaError::Contract(format!(
            "cycle_loss shape mismatch: {:?}/{:?} and {:?}/{:?}",
            tape.shape(x),
            tape.shape(x_rec),
            tape.shape(y),
            tape.shape(y_rec)
        )));
    }
    let dx = tape.sub(x_rec, x)?;
    let ax = tape.abs(dx);
    let mx = tape.mean_all(ax);
    let dy = tape.sub(y_rec, y)?;
    let ay = tape.abs(dy);
    let my = tape.mean_all(ay);
    Ok(tape.add(mx, my)?)
}

/// adv_g + adv_f + lambda * cyc.
pub fn full_objective(adv_g: f64, adv_f: f64, cyc: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    adv_g + adv_f + lambda * cyc
}
