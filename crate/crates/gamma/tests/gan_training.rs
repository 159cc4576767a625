//! Short end-to-end translation run: the learned mapping must pull the
//! translated set toward the target domain and keep cycles tight.

use gamma_core::{Seed, Tensor};

use gamma::data::synth_domain_pair;
use gamma::gan::{train_cyclegan, translate_batch, GanTrainConfig};
use gamma::metrics::{embed_images, fid, fit_gaussian, EmbedEncoder};

fn mean_l1(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64
}

#[test]
fn short_run_halves_fid_and_tightens_cycles() {
    let (x, y) = synth_domain_pair(Seed(200), 60, 40, 64).unwrap();
    let cfg = GanTrainConfig {
        seed: 200,
        epochs: Some(2),
        steps_per_epoch: Some(80),
        fid_interval: None,
        checkpoint_interval: 10,
        ..Default::default()
    };
    let encoder = EmbedEncoder::new(Seed(201));
    let ex = embed_images(&x.images, &encoder).unwrap();
    let ey = embed_images(&y.images, &encoder).unwrap();
    let y_stats = fit_gaussian(&ey).unwrap();
    let baseline = fid(&y_stats, &fit_gaussian(&ex).unwrap()).unwrap();

    // cycle reconstruction at initialization, for the improvement ratio
    let init_model = gamma::gan::build_cyclegan(&cfg, Seed(200));
    let probe: Vec<Tensor> = x.images.iter().take(16).cloned().collect();
    let init_cycle: f64 = {
        let fake = translate_batch(&init_model.gen, "g.", &probe).unwrap();
        let back = translate_batch(&init_model.gen, "f.", &fake).unwrap();
        probe.iter().zip(&back).map(|(a, b)| mean_l1(a, b)).sum::<f64>() / probe.len() as f64
    };

    let (model, trace) = train_cyclegan(&x, &y, &cfg, None).unwrap();
    assert_eq!(trace.len(), 160);

    let translated = translate_batch(&model.gen, "g.", &x.images).unwrap();
    let eg = embed_images(&translated, &encoder).unwrap();
    let trained = fid(&y_stats, &fit_gaussian(&eg).unwrap()).unwrap();
    assert!(
        trained <= 0.5 * baseline,
        "translated FID {trained:.4} should be at most half of {baseline:.4}"
    );

    let final_cycle: f64 = {
        let fake = translate_batch(&model.gen, "g.", &probe).unwrap();
        let back = translate_batch(&model.gen, "f.", &fake).unwrap();
        probe.iter().zip(&back).map(|(a, b)| mean_l1(a, b)).sum::<f64>() / probe.len() as f64
    };
    assert!(
        final_cycle < 0.5 * init_cycle,
        "cycle L1 {final_cycle:.4} should be below half of {init_cycle:.4}"
    );
}

#[test]
fn batched_step_runs_and_matches_contracts() {
    let (x, y) = synth_domain_pair(Seed(210), 4, 4, 32).unwrap();
    let cfg = GanTrainConfig {
        seed: 210,
        image_size: 32,
        batch_size: 2,
        epochs: Some(1),
        steps_per_epoch: Some(2),
        fid_interval: None,
        gen_channels: 4,
        disc_channels: 4,
        ..Default::default()
    };
    let (_, trace) = train_cyclegan(&x, &y, &cfg, None).unwrap();
    assert_eq!(trace.len(), 2);
    assert!(trace.iter().all(|r| r.loss_cyc.is_finite()));
}
