//! Fixed-seed random-projection conv encoder for distribution distances.
//!
//! Random conv features preserve the relative distances the pipeline needs;
//! the encoder is pluggable via its seed and never trained.

use gamma_core::{ParamSet, Seed, Tape, Tensor};

use crate::data::image_io::hwc_to_nchw;
use crate::GammaError;

const LAYERS: [(usize, usize); 3] = [(3, 8), (8, 16), (16, 16)];

/// Deterministic random-weight conv encoder; embedding = per-channel mean
/// and RMS of the last feature map (dimension 32).
#[derive(Debug, Clone)]
pub struct EmbedEncoder {
    params: ParamSet,
}

impl EmbedEncoder {
    pub fn new(seed: Seed) -> Self {
        let mut params = ParamSet::new();
        let mut rng = seed.derive("embed").rng();
        for (i, (c_in, c_out)) in LAYERS.iter().enumerate() {
            let fan_in = (c_in * 9) as f64;
            let std = (2.0 / fan_in).sqrt();
            let data: Vec<f64> =
                (0..c_out * c_in * 9).map(|_| rng.normal(0.0, std)).collect();
            params.insert(
                format!("conv{i}.w"),
                Tensor::new(vec![*c_out, *c_in, 3, 3], data).expect("layer shape"),
            );
        }
        EmbedEncoder { params }
    }

    pub fn embed_dim(&self) -> usize {
        2 * LAYERS[2].1
    }

    /// Embed one HxWx3 image in [-1, 1].
    pub fn embed(&self, image: &Tensor) -> Result<Vec<f64>, GammaError> {
        let nchw = hwc_to_nchw(image)?;
        let mut tape = Tape::new();
        let mut x = tape.leaf(&nchw, false);
        for i in 0..LAYERS.len() {
            let w = tape.leaf(self.params.get(&format!("conv{i}.w")).expect("built"), false);
            let y = tape.conv2d(x, w, None, 2, 1)?;
            x = tape.leaky_relu(y, 0.2);
        }
        let shape = tape.shape(x).to_vec();
        let (c, hw) = (shape[1], shape[2] * shape[3]);
        let feat = tape.data(x);
        let mut out = Vec::with_capacity(2 * c);
        for ch in 0..c {
            let plane = &feat[ch * hw..(ch + 1) * hw];
            out.push(plane.iter().sum::<f64>() / hw as f64);
        }
        for ch in 0..c {
            let plane = &feat[ch * hw..(ch + 1) * hw];
            out.push((plane.iter().map(|v| v * v).sum::<f64>() / hw as f64).sqrt());
        }
        Ok(out)
    }
}

/// Embed a set of images, preserving order.
pub fn embed_images(images: &[Tensor], encoder: &EmbedEncoder) -> Result<Vec<Vec<f64>>, GammaError> {
    images.iter().map(|img| encoder.embed(img)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_order_preserving() {
        let enc = EmbedEncoder::new(Seed(5));
        let mut rng = Seed(6).rng();
        let images: Vec<Tensor> = (0..4)
            .map(|_| {
                let data: Vec<f64> =
                    (0..32 * 32 * 3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                Tensor::new(vec![32, 32, 3], data).unwrap()
            })
            .collect();
        let e1 = embed_images(&images, &enc).unwrap();
        let e2 = embed_images(&images, &enc).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.len(), 4);
        assert_eq!(e1[0].len(), enc.embed_dim());
        // same image twice -> identical embeddings
        let twice = embed_images(&[images[0].clone(), images[0].clone()], &enc).unwrap();
        assert_eq!(twice[0], twice[1]);
    }

    #[test]
    fn size_mismatch_is_error() {
        let enc = EmbedEncoder::new(Seed(5));
        let bad = Tensor::zeros(vec![3, 32, 32]); // CHW, not HWC
        assert!(enc.embed(&bad).is_err());
    }
}
