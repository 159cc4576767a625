//! Seeded mixing of existing and augmented training pools.

use gamma_core::Seed;

use crate::boxes::DetectionSample;
use crate::GammaError;

/// Fractions of the training mix drawn from each pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSpec {
    pub existing_fraction: f64,
    pub augmented_fraction: f64,
    pub seed: Seed,
}

impl MixSpec {
    /// The 60-40 default: 60% existing, 40% augmented.
    pub fn default_with_seed(seed: Seed) -> Self {
        MixSpec { existing_fraction: 0.6, augmented_fraction: 0.4, seed }
    }

    pub fn validate(&self) -> Result<(), GammaError> {
        if self.existing_fraction < 0.0 || self.augmented_fraction < 0.0 {
            return Err(GammaError::Contract("mix fractions must be >= 0".into()));
        }
        if (self.existing_fraction + self.augmented_fraction - 1.0).abs() > 1e-9 {
            return Err(GammaError::Contract(format!(
                "mix fractions must sum to 1, got {} + {}",
                self.existing_fraction, self.augmented_fraction
            )));
        }
        Ok(())
    }
}

/// Which pool a mixed element came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolTag {
    Existing,
    Augmented,
}

/// The seeded pick order: round(existing_fraction * total) existing
/// elements plus augmented remainder, sampled without replacement and
/// shuffled together. Pure function of (spec, pool sizes, total).
pub fn mix_indices(
    existing_len: usize,
    augmented_len: usize,
    spec: &MixSpec,
    total: usize,
) -> Result<Vec<(PoolTag, usize)>, GammaError> {
    spec.validate()?;
    let n_existing = (spec.existing_fraction * total as f64).round() as usize;
    let n_augmented = total - n_existing;
    if n_existing > existing_len {
        return Err(GammaError::Contract(format!(
            "mix needs {n_existing} existing samples, pool has {existing_len}"
        )));
    }
    if n_augmented > augmented_len {
        return Err(GammaError::Contract(format!(
            "mix needs {n_augmented} augmented samples, pool has {augmented_len}"
        )));
    }
    let mut rng = spec.seed.derive("mix_existing").rng();
    let pick_e = rng.sample_indices(existing_len, n_existing);
    let mut rng = spec.seed.derive("mix_augmented").rng();
    let pick_a = rng.sample_indices(augmented_len, n_augmented);
    let mut combined: Vec<(PoolTag, usize)> = pick_e
        .into_iter()
        .map(|i| (PoolTag::Existing, i))
        .chain(pick_a.into_iter().map(|i| (PoolTag::Augmented, i)))
        .collect();
    let mut rng = spec.seed.derive("mix_order").rng();
    let mut order: Vec<usize> = (0..combined.len()).collect();
    rng.shuffle(&mut order);
    let picked = order.into_iter().map(|i| combined[i]).collect();
    combined = picked;
    Ok(combined)
}

/// Seeded sample-level mix. Never touches evaluation pools; callers keep
/// those disjoint (asserted via manifest fingerprints at the file level).
pub fn mix_split(
    existing: &[DetectionSample],
    augmented: &[DetectionSample],
    spec: &MixSpec,
    total: usize,
) -> Result<Vec<DetectionSample>, GammaError> {
    let picks = mix_indices(existing.len(), augmented.len(), spec, total)?;
    Ok(picks
        .into_iter()
        .map(|(tag, i)| match tag {
            PoolTag::Existing => existing[i].clone(),
            PoolTag::Augmented => augmented[i].clone(),
        })
        .collect())
}
