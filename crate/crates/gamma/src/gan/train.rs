//! Alternating generator/discriminator optimization with Adam, per-epoch
//! learning-rate schedule, trace records and periodic checkpoints.

use std::path::{Path, PathBuf};

use gamma_core::checkpoint;
use gamma_core::optim::{AdamConfig, AdamState};
use gamma_core::{Graph, ParamSet, Seed, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{DomainDataset, EpochSampler};
use crate::data::image_io::{hwc_to_nchw, nchw_to_hwc};
use crate::metrics::{embed_images, fid, fit_gaussian, EmbedEncoder};
use crate::nn::Vars;
use crate::GammaError;

use super::loss::{adversarial_loss, cycle_loss, generator_fool_loss};
use super::nets::{build_cyclegan, discriminator_forward, generator_forward, CycleGanModel};
use super::{lr_schedule, GanTrainConfig};

/// One line of the machine-readable training trace.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(rename = "loss_G")]
    pub loss_g: f64,
    #[serde(rename = "loss_F")]
    pub loss_f: f64,
    #[serde(rename = "loss_D_X")]
    pub loss_d_x: f64,
    #[serde(rename = "loss_D_Y")]
    pub loss_d_y: f64,
    pub loss_cyc: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
}

/// Instrumented values of one optimization step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Generator-side fooling terms (descended by G and F).
    pub loss_g: f64,
    pub loss_f: f64,
    pub loss_cyc: f64,
    /// Raw adversarial objective values (the quantity the discriminators
    /// ascend) for each pair.
    pub adv_obj_x: f64,
    pub adv_obj_y: f64,
    /// Effective losses used for the discriminator updates; exactly half
    /// the negated objectives.
    pub d_x_loss_used: f64,
    pub d_y_loss_used: f64,
}

/// One alternating update: generators first, then both discriminators on
/// the detached fakes with the objective divided by two.
pub fn train_step(
    model: &mut CycleGanModel,
    xs: &[Tensor],
    ys: &[Tensor],
    opt_g: &mut AdamState,
    opt_d: &mut AdamState,
    lr: f64,
    saturation_counter: &mut u64,
) -> Result<StepOutcome, GammaError> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    let inv_n = 1.0 / n as f64;
    let non_sat = model.config.non_saturating;

    // generator step; discriminators participate frozen
    let mut fake_y_batch = Vec::with_capacity(n);
    let mut fake_x_batch = Vec::with_capacity(n);
    let (loss_g_val, loss_f_val, loss_cyc_val, gen_grads) = {
        let disc = model.disc.clone();
        let mut g = Graph::new(&model.gen);
        let mut fool_g_terms = Vec::with_capacity(n);
        let mut fool_f_terms = Vec::with_capacity(n);
        let mut cyc_terms = Vec::with_capacity(n);
        for (x_t, y_t) in xs.iter().zip(ys) {
            let x = g.input(x_t);
            let y = g.input(y_t);
            let fake_y = generator_forward(&mut g, &Vars::Trainable, "g.", x)?;
            let fake_x = generator_forward(&mut g, &Vars::Trainable, "f.", y)?;
            let d_fake_y = discriminator_forward(&mut g, &Vars::Frozen(&disc), "d_y.", fake_y)?;
            let d_fake_x = discriminator_forward(&mut g, &Vars::Frozen(&disc), "d_x.", fake_x)?;
            fool_g_terms.push(generator_fool_loss(&mut g.tape, d_fake_y, non_sat, saturation_counter)?);
            fool_f_terms.push(generator_fool_loss(&mut g.tape, d_fake_x, non_sat, saturation_counter)?);
            let rec_x = generator_forward(&mut g, &Vars::Trainable, "f.", fake_y)?;
            let rec_y = generator_forward(&mut g, &Vars::Trainable, "g.", fake_x)?;
            cyc_terms.push(cycle_loss(&mut g.tape, x, rec_x, y, rec_y)?);
            fake_y_batch.push(g.tape.tensor(fake_y));
            fake_x_batch.push(g.tape.tensor(fake_x));
        }
        let mean = |g: &mut Graph, terms: &[gamma_core::NodeId]| -> Result<gamma_core::NodeId, GammaError> {
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.tape.add(acc, t)?;
            }
            Ok(g.tape.scalar_mul(acc, inv_n))
        };
        let fool_g = mean(&mut g, &fool_g_terms)?;
        let fool_f = mean(&mut g, &fool_f_terms)?;
        let cyc = mean(&mut g, &cyc_terms)?;
        let weighted = g.tape.scalar_mul(cyc, model.config.lambda_cyc);
        let partial = g.tape.add(fool_g, fool_f)?;
        let total = g.tape.add(partial, weighted)?;
        g.tape.check_finite(total, "generator loss")?;
        let grads = g.backward(total)?;
        (g.tape.value(fool_g), g.tape.value(fool_f), g.tape.value(cyc), grads)
    };
    opt_g.step(&mut model.gen, &gen_grads, lr)?;

    // discriminator step on detached fakes, objective halved
    let (adv_x_val, adv_y_val, disc_grads) = {
        let mut g = Graph::new(&model.disc);
        let mut adv_x_terms = Vec::with_capacity(n);
        let mut adv_y_terms = Vec::with_capacity(n);
        for i in 0..n {
            let x = g.input(&xs[i]);
            let y = g.input(&ys[i]);
            let fake_y = g.input(&fake_y_batch[i]);
            let fake_x = g.input(&fake_x_batch[i]);
            let d_real_y = discriminator_forward(&mut g, &Vars::Trainable, "d_y.", y)?;
            let d_fake_y = discriminator_forward(&mut g, &Vars::Trainable, "d_y.", fake_y)?;
            adv_y_terms.push(adversarial_loss(&mut g.tape, d_real_y, d_fake_y, saturation_counter)?);
            let d_real_x = discriminator_forward(&mut g, &Vars::Trainable, "d_x.", x)?;
            let d_fake_x = discriminator_forward(&mut g, &Vars::Trainable, "d_x.", fake_x)?;
            adv_x_terms.push(adversarial_loss(&mut g.tape, d_real_x, d_fake_x, saturation_counter)?);
        }
        let mean = |g: &mut Graph, terms: &[gamma_core::NodeId]| -> Result<gamma_core::NodeId, GammaError> {
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.tape.add(acc, t)?;
            }
            Ok(g.tape.scalar_mul(acc, inv_n))
        };
        let adv_y = mean(&mut g, &adv_y_terms)?;
        let adv_x = mean(&mut g, &adv_x_terms)?;
        // descend the negated objective at half rate
        let d_y_loss = g.tape.scalar_mul(adv_y, -0.5);
        let d_x_loss = g.tape.scalar_mul(adv_x, -0.5);
        let total = g.tape.add(d_y_loss, d_x_loss)?;
        g.tape.check_finite(total, "discriminator loss")?;
        let grads = g.backward(total)?;
        (g.tape.value(adv_x), g.tape.value(adv_y), grads)
    };
    opt_d.step(&mut model.disc, &disc_grads, lr)?;

    Ok(StepOutcome {
        loss_g: loss_g_val,
        loss_f: loss_f_val,
        loss_cyc: loss_cyc_val,
        adv_obj_x: adv_x_val,
        adv_obj_y: adv_y_val,
        d_x_loss_used: -0.5 * adv_x_val,
        d_y_loss_used: -0.5 * adv_y_val,
    })
}

fn write_checkpoints(
    model: &CycleGanModel,
    out_dir: &Path,
    label: &str,
) -> Result<PathBuf, GammaError> {
    for (net, params) in [
        ("g", model.gen.subset("g.")),
        ("f", model.gen.subset("f.")),
        ("d_x", model.disc.subset("d_x.")),
        ("d_y", model.disc.subset("d_y.")),
    ] {
        checkpoint::save(&params, &out_dir.join(format!("{net}_{label}.ckpt")))?;
    }
    Ok(out_dir.join(format!("g_{label}.ckpt")))
}

fn probe_fid(
    model: &CycleGanModel,
    probe_x: &[Tensor],
    probe_y: &[Tensor],
    encoder: &EmbedEncoder,
) -> Result<f64, GammaError> {
    let translated = translate_batch(&model.gen, "g.", probe_x)?;
    let gen_embed = embed_images(&translated, encoder)?;
    let y_embed = embed_images(probe_y, encoder)?;
    let g_stats = fit_gaussian(&gen_embed)?;
    let y_stats = fit_gaussian(&y_embed)?;
    fid(&y_stats, &g_stats)
}

/// Full training run. Emits one trace record per step, a distribution probe
/// per `fid_interval` epochs, and a checkpoint quartet per
/// `checkpoint_interval` epochs plus a final one. A non-finite loss aborts
/// with the last good checkpoint named.
pub fn train_cyclegan(
    x_data: &DomainDataset,
    y_data: &DomainDataset,
    config: &GanTrainConfig,
    out_dir: Option<&Path>,
) -> Result<(CycleGanModel, Vec<TraceRecord>), GammaError> {
    config.validate()?;
    if x_data.is_empty() || y_data.is_empty() {
        return Err(GammaError::Contract("both domain datasets must be non-empty".into()));
    }
    let (h, w) = x_data.size();
    if (h, w) != y_data.size() || h != config.image_size || w != config.image_size {
        return Err(GammaError::Contract(format!(
            "dataset sizes {:?}/{:?} do not match configured {}",
            x_data.size(),
            y_data.size(),
            config.image_size
        )));
    }
    let seed = Seed(config.seed);
    let mut model = build_cyclegan(config, seed);
    let adam = AdamConfig { lr: config.base_lr, ..Default::default() };
    let mut opt_g = AdamState::new(adam.clone());
    let mut opt_d = AdamState::new(adam);

    let x_nchw: Vec<Tensor> =
        x_data.images.iter().map(hwc_to_nchw).collect::<Result<_, _>>()?;
    let y_nchw: Vec<Tensor> =
        y_data.images.iter().map(hwc_to_nchw).collect::<Result<_, _>>()?;
    let mut sampler_x = EpochSampler::new(seed.derive("sample_x"), x_nchw.len());
    let mut sampler_y = EpochSampler::new(seed.derive("sample_y"), y_nchw.len());

    let epochs = config.epochs.unwrap_or_else(|| config.total_epochs());
    if epochs > config.total_epochs() {
        return Err(GammaError::Contract(format!(
            "epochs {epochs} exceed schedule length {}",
            config.total_epochs()
        )));
    }
    let steps = config.steps_per_epoch.unwrap_or_else(|| x_nchw.len().max(y_nchw.len()));
    let encoder = EmbedEncoder::new(seed.derive("fid_encoder"));
    let probe_x: Vec<Tensor> =
        x_data.images.iter().take(config.fid_probe.max(2)).cloned().collect();
    let probe_y: Vec<Tensor> =
        y_data.images.iter().take(config.fid_probe.max(2)).cloned().collect();

    let mut trace = Vec::with_capacity(epochs * steps);
    let mut saturation = 0u64;
    let mut last_checkpoint: Option<PathBuf> = None;

    for epoch in 0..epochs {
        let lr = lr_schedule(epoch, config)?;
        for step in 0..steps {
            let xs: Vec<Tensor> =
                (0..config.batch_size).map(|_| x_nchw[sampler_x.next_index()].clone()).collect();
            let ys: Vec<Tensor> =
                (0..config.batch_size).map(|_| y_nchw[sampler_y.next_index()].clone()).collect();
            let outcome =
                train_step(&mut model, &xs, &ys, &mut opt_g, &mut opt_d, lr, &mut saturation)
                    .map_err(|e| GammaError::TrainAbort {
                        at: format!("epoch {epoch} step {step}"),
                        reason: e.to_string(),
                        last_checkpoint: last_checkpoint.clone(),
                    })?;
            trace.push(TraceRecord {
                epoch,
                step,
                loss_g: outcome.loss_g,
                loss_f: outcome.loss_f,
                loss_d_x: outcome.d_x_loss_used,
                loss_d_y: outcome.d_y_loss_used,
                loss_cyc: outcome.loss_cyc,
                lr,
                fid: None,
            });
        }
        if let Some(interval) = config.fid_interval {
            if interval > 0 && (epoch + 1) % interval == 0 {
                let value = probe_fid(&model, &probe_x, &probe_y, &encoder)?;
                if let Some(last) = trace.last_mut() {
                    last.fid = Some(value);
                }
            }
        }
        if let Some(dir) = out_dir {
            if (epoch + 1) % config.checkpoint_interval == 0 {
                last_checkpoint =
                    Some(write_checkpoints(&model, dir, &format!("epoch{:04}", epoch + 1))?);
            }
        }
    }
    if let Some(dir) = out_dir {
        write_checkpoints(&model, dir, "final")?;
    }
    Ok((model, trace))
}

/// Deterministic single-image translation through one generator
/// (prefix "g." maps terrestrial to underwater style, "f." the reverse).
pub fn translate(gen: &ParamSet, prefix: &str, image: &Tensor) -> Result<Tensor, GammaError> {
    let nchw = hwc_to_nchw(image)?;
    let empty = ParamSet::new();
    let mut g = Graph::new(&empty);
    let x = g.input(&nchw);
    let y = generator_forward(&mut g, &Vars::Frozen(gen), prefix, x)?;
    nchw_to_hwc(&g.tape.tensor(y))
}

/// Order-preserving batch translation.
pub fn translate_batch(
    gen: &ParamSet,
    prefix: &str,
    images: &[Tensor],
) -> Result<Vec<Tensor>, GammaError> {
    images.iter().map(|img| translate(gen, prefix, img)).collect()
}

impl CycleGanModel {
    /// Size-checked translation with the X -> Y generator.
    pub fn translate_to_target(&self, image: &Tensor) -> Result<Tensor, GammaError> {
        let s = image.shape();
        if s.len() != 3 || s[0] != self.config.image_size || s[1] != self.config.image_size {
            return Err(GammaError::Contract(format!(
                "image shape {s:?} does not match configured size {}",
                self.config.image_size
            )));
        }
        translate(&self.gen, "g.", image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_domain_pair;

    fn tiny_config(seed: u64) -> GanTrainConfig {
        GanTrainConfig {
            image_size: 32,
            seed,
            epochs: Some(1),
            steps_per_epoch: Some(2),
            checkpoint_interval: 1,
            fid_interval: None,
            fid_probe: 2,
            gen_channels: 4,
            disc_channels: 4,
            ..Default::default()
        }
    }

    #[test]
    fn smoke_one_epoch_has_finite_losses() {
        let (x, y) = synth_domain_pair(Seed(1), 2, 2, 32).unwrap();
        let cfg = tiny_config(1);
        let (_, trace) = train_cyclegan(&x, &y, &cfg, None).unwrap();
        assert_eq!(trace.len(), 2);
        for r in &trace {
            assert_eq!(r.epoch, 0);
            assert!(r.loss_g.is_finite() && r.loss_f.is_finite());
            assert!(r.loss_d_x.is_finite() && r.loss_d_y.is_finite());
            assert!(r.loss_cyc.is_finite() && r.loss_cyc >= 0.0);
            assert_eq!(r.lr, 2e-4);
        }
    }

    #[test]
    fn discriminator_update_uses_half_the_objective() {
        let (x, y) = synth_domain_pair(Seed(2), 2, 2, 32).unwrap();
        let cfg = tiny_config(2);
        let mut model = build_cyclegan(&cfg, Seed(2));
        let adam = AdamConfig { lr: cfg.base_lr, ..Default::default() };
        let mut opt_g = AdamState::new(adam.clone());
        let mut opt_d = AdamState::new(adam);
        let xs = [hwc_to_nchw(&x.images[0]).unwrap()];
        let ys = [hwc_to_nchw(&y.images[0]).unwrap()];
        let mut sat = 0;
        let out =
            train_step(&mut model, &xs, &ys, &mut opt_g, &mut opt_d, 2e-4, &mut sat).unwrap();
        assert_eq!(out.d_x_loss_used, -0.5 * out.adv_obj_x);
        assert_eq!(out.d_y_loss_used, -0.5 * out.adv_obj_y);
    }

    #[test]
    fn epoch_one_checkpoints_bitwise_identical_across_runs() {
        let (x, y) = synth_domain_pair(Seed(3), 2, 2, 32).unwrap();
        let cfg = tiny_config(7);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        train_cyclegan(&x, &y, &cfg, Some(d1.path())).unwrap();
        train_cyclegan(&x, &y, &cfg, Some(d2.path())).unwrap();
        for net in ["g", "f", "d_x", "d_y"] {
            let a = std::fs::read(d1.path().join(format!("{net}_epoch0001.ckpt"))).unwrap();
            let b = std::fs::read(d2.path().join(format!("{net}_epoch0001.ckpt"))).unwrap();
            assert_eq!(a, b, "{net} differs");
        }
    }

    #[test]
    fn translate_is_deterministic_and_order_preserving() {
        let cfg = tiny_config(4);
        let model = build_cyclegan(&cfg, Seed(4));
        let (x, _) = synth_domain_pair(Seed(5), 10, 2, 32).unwrap();
        let out1 = translate_batch(&model.gen, "g.", &x.images).unwrap();
        let out2 = translate_batch(&model.gen, "g.", &x.images).unwrap();
        assert_eq!(out1.len(), 10);
        for (a, b) in out1.iter().zip(&out2) {
            assert_eq!(a, b);
        }
        for (i, o) in out1.iter().enumerate() {
            assert_eq!(o.shape(), x.images[i].shape());
            let single = model.translate_to_target(&x.images[i]).unwrap();
            assert_eq!(&single, o);
        }
    }

    #[test]
    fn translate_size_mismatch_rejected() {
        let cfg = tiny_config(4);
        let model = build_cyclegan(&cfg, Seed(4));
        let wrong = Tensor::zeros(vec![16, 16, 3]);
        assert!(model.translate_to_target(&wrong).is_err());
    }
}
