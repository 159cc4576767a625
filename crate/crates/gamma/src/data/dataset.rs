//! In-memory image datasets with seeded epoch sampling.

use gamma_core::{Rng, Seed, Tensor};

use crate::GammaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    /// Source style (in-air imagery).
    Terrestrial,
    /// Target style (underwater-tinted imagery).
    Underwater,
}

/// A set of images from one visual domain; all share HxWx3 shape.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub tag: DomainTag,
    pub images: Vec<Tensor>,
}

impl DomainDataset {
    pub fn new(tag: DomainTag, images: Vec<Tensor>) -> Result<Self, GammaError> {
        if images.is_empty() {
            return Err(GammaError::Contract("domain dataset must not be empty".into()));
        }
        let shape = images[0].shape().to_vec();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(GammaError::Contract(format!("domain images must be HxWx3, got {shape:?}")));
        }
        if let Some(bad) = images.iter().find(|i| i.shape() != shape) {
            return Err(GammaError::Contract(format!(
                "mixed image shapes: {shape:?} vs {:?}",
                bad.shape()
            )));
        }
        Ok(DomainDataset { tag, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn size(&self) -> (usize, usize) {
        (self.images[0].shape()[0], self.images[0].shape()[1])
    }
}

/// Without-replacement sampling within an epoch, reshuffled per epoch from
/// the seed, so sample order is a pure function of (seed, epoch, position).
#[derive(Debug, Clone)]
pub struct EpochSampler {
    seed: Seed,
    n: usize,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
}

impl EpochSampler {
    pub fn new(seed: Seed, n: usize) -> Self {
        let mut s = EpochSampler { seed, n, order: Vec::new(), pos: 0, epoch: 0 };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng: Rng = self.seed.derive(&format!("epoch{}", self.epoch)).rng();
        self.order = (0..self.n).collect();
        rng.shuffle(&mut self.order);
        self.pos = 0;
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let idx = self.order[self.pos];
        self.pos += 1;
        idx
    }
}
