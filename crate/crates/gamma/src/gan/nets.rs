//! Generator and discriminator topologies.
//!
//! Generator: 7x7 stem, two stride-2 downsamples, three residual blocks,
//! two nearest-upsample decoders, 7x7 tanh head; instance norm throughout.
//! Discriminator: four-layer patch classifier ending in sigmoid scores.

use gamma_core::{Graph, NodeId, ParamSet, Rng, Seed, Tensor};

use crate::nn::{bind, Vars};
use crate::GammaError;

use super::GanTrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenRole {
    /// Terrestrial to underwater style.
    XtoY,
    /// Underwater style back to terrestrial.
    YtoX,
}

const IN_EPS: f64 = 1e-5;

fn conv_weights(rng: &mut Rng, o: usize, i: usize, k: usize) -> Tensor {
    let data: Vec<f64> = (0..o * i * k * k).map(|_| rng.normal(0.0, 0.02)).collect();
    Tensor::new(vec![o, i, k, k], data).expect("conv kernel shape")
}

/// Generator parameters drawn i.i.d. from N(0, 0.02), deterministic per seed.
pub fn build_generator(config: &GanTrainConfig, seed: Seed) -> ParamSet {
    let f = config.gen_channels;
    let mut rng = seed.rng();
    let mut params = ParamSet::new();
    params.insert("enc0.w", conv_weights(&mut rng, f, 3, 7));
    params.insert("enc1.w", conv_weights(&mut rng, 2 * f, f, 3));
    params.insert("enc2.w", conv_weights(&mut rng, 4 * f, 2 * f, 3));
    for r in 0..3 {
        params.insert(format!("res{r}a.w"), conv_weights(&mut rng, 4 * f, 4 * f, 3));
        params.insert(format!("res{r}b.w"), conv_weights(&mut rng, 4 * f, 4 * f, 3));
    }
    params.insert("dec0.w", conv_weights(&mut rng, 2 * f, 4 * f, 3));
    params.insert("dec1.w", conv_weights(&mut rng, f, 2 * f, 3));
    params.insert("out.w", conv_weights(&mut rng, 3, f, 7));
    params.insert("out.b", Tensor::zeros(vec![3]));
    params
}

/// Patch discriminator parameters, N(0, 0.02) weights and zero biases.
pub fn build_discriminator(config: &GanTrainConfig, seed: Seed) -> ParamSet {
    let d = config.disc_channels;
    let mut rng = seed.rng();
    let mut params = ParamSet::new();
    params.insert("d0.w", conv_weights(&mut rng, d, 3, 4));
    params.insert("d0.b", Tensor::zeros(vec![d]));
    params.insert("d1.w", conv_weights(&mut rng, 2 * d, d, 4));
    params.insert("d2.w", conv_weights(&mut rng, 4 * d, 2 * d, 4));
    params.insert("d3.w", conv_weights(&mut rng, 1, 4 * d, 4));
    params.insert("d3.b", Tensor::zeros(vec![1]));
    params
}

/// Forward pass; input and output are (1, 3, H, W) with values in [-1, 1].
pub fn generator_forward(
    g: &mut Graph,
    vars: &Vars,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId, GammaError> {
    let shape = g.tape.shape(x).to_vec();
    if shape.len() != 4 || shape[1] != 3 || shape[2] % 4 != 0 || shape[3] % 4 != 0 {
        return Err(GammaError::Contract(format!(
            "generator input must be (1,3,H,W) with H,W divisible by 4, got {shape:?}"
        )));
    }
    let conv_in_relu =
        |g: &mut Graph, name: &str, x: NodeId, stride: usize, pad: usize| -> Result<NodeId, GammaError> {
            let w = bind(g, vars, &format!("{prefix}{name}.w"))?;
            let y = g.tape.conv2d(x, w, None, stride, pad)?;
            let n = g.tape.instance_norm(y, IN_EPS)?;
            Ok(g.tape.relu(n))
        };
    let mut h = conv_in_relu(g, "enc0", x, 1, 3)?;
    h = conv_in_relu(g, "enc1", h, 2, 1)?;
    h = conv_in_relu(g, "enc2", h, 2, 1)?;
    for r in 0..3 {
        let w_a = bind(g, vars, &format!("{prefix}res{r}a.w"))?;
        let a = g.tape.conv2d(h, w_a, None, 1, 1)?;
        let a = g.tape.instance_norm(a, IN_EPS)?;
        let a = g.tape.relu(a);
        let w_b = bind(g, vars, &format!("{prefix}res{r}b.w"))?;
        let b = g.tape.conv2d(a, w_b, None, 1, 1)?;
        let b = g.tape.instance_norm(b, IN_EPS)?;
        h = g.tape.add(h, b)?;
    }
    let up = g.tape.upsample2x(h)?;
    h = conv_in_relu(g, "dec0", up, 1, 1)?;
    let up = g.tape.upsample2x(h)?;
    h = conv_in_relu(g, "dec1", up, 1, 1)?;
    let w_out = bind(g, vars, &format!("{prefix}out.w"))?;
    let b_out = bind(g, vars, &format!("{prefix}out.b"))?;
    let y = g.tape.conv2d(h, w_out, Some(b_out), 1, 3)?;
    Ok(g.tape.tanh(y))
}

/// Patch scores strictly inside (0, 1): conv stack ending in a sigmoid.
pub fn discriminator_forward(
    g: &mut Graph,
    vars: &Vars,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId, GammaError> {
    let w0 = bind(g, vars, &format!("{prefix}d0.w"))?;
    let b0 = bind(g, vars, &format!("{prefix}d0.b"))?;
    let mut h = g.tape.conv2d(x, w0, Some(b0), 2, 1)?;
    h = g.tape.leaky_relu(h, 0.2);
    for (i, stride) in [(1usize, 2usize), (2, 2)] {
        let w = bind(g, vars, &format!("{prefix}d{i}.w"))?;
        h = g.tape.conv2d(h, w, None, stride, 1)?;
        h = g.tape.instance_norm(h, IN_EPS)?;
        h = g.tape.leaky_relu(h, 0.2);
    }
    let w3 = bind(g, vars, &format!("{prefix}d3.w"))?;
    let b3 = bind(g, vars, &format!("{prefix}d3.b"))?;
    let logits = g.tape.conv2d(h, w3, Some(b3), 1, 1)?;
    Ok(g.tape.sigmoid(logits))
}

/// Both mappings plus both discriminators, keyed by role prefixes
/// g / f / d_x / d_y inside two parameter groups (generators and
/// discriminators train on alternating steps).
#[derive(Debug, Clone)]
pub struct CycleGanModel {
    pub gen: ParamSet,
    pub disc: ParamSet,
    pub config: GanTrainConfig,
}

pub fn build_cyclegan(config: &GanTrainConfig, seed: Seed) -> CycleGanModel {
    let mut gen = ParamSet::new();
    gen.absorb("g", build_generator(config, seed.derive("gen_g")));
    gen.absorb("f", build_generator(config, seed.derive("gen_f")));
    let mut disc = ParamSet::new();
    disc.absorb("d_x", build_discriminator(config, seed.derive("disc_x")));
    disc.absorb("d_y", build_discriminator(config, seed.derive("disc_y")));
    CycleGanModel { gen, disc, config: config.clone() }
}
