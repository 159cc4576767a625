//! Subcommand bodies. Each returns summary fields plus the dataset
//! fingerprints that go into the run metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Result};
use serde_json::{json, Map, Value};

use gamma::attention::{export_attention_heatmap, write_scores_binary};
use gamma::boxes::Annotation;
use gamma::data::{
    self, load_detection_manifest, load_domain_manifest, manifest_fingerprint, synth_detection_set,
    synth_domain_pair, write_detection_manifest, write_domain_manifest, Degradations, DomainTag,
    MixSpec, PoolTag, SceneStyle,
};
use gamma::detector::{
    attention_snapshot, build_detector, evaluate_model, train_detector, DetTrainConfig,
    DetectorConfig, DetectorModel,
};
use gamma::gan::{train_cyclegan, translate, GanTrainConfig};
use gamma::metrics::{embed_images, fid, fit_gaussian, write_report, EmbedEncoder};
use gamma_core::{checkpoint, ParamSet, Seed, Tensor};

use crate::config::Resolved;

pub struct CommandOutput {
    pub summary: Map<String, Value>,
    pub fingerprints: BTreeMap<String, String>,
}

fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

fn default_class_names(n: usize) -> Vec<String> {
    if n == 3 {
        vec!["plastic".into(), "rov".into(), "bio".into()]
    } else {
        (0..n).map(|i| format!("class{i}")).collect()
    }
}

/// Rebuild a detector around checkpointed parameters; the attention block,
/// channel width and class count are implied by the stored tensors.
fn detector_from_checkpoint(params: ParamSet, image_size: usize) -> Result<DetectorModel> {
    let use_attention = params.get("attn.gain").is_some();
    let feature_channels = params
        .get("backbone.c5.w")
        .ok_or_else(|| anyhow!("checkpoint has no backbone parameters"))?
        .shape()[0];
    let num_classes = params
        .get("head.cls.w")
        .ok_or_else(|| anyhow!("checkpoint has no head parameters"))?
        .shape()[1]
        - 1;
    let config = DetectorConfig {
        image_size,
        num_classes,
        class_names: default_class_names(num_classes),
        use_attention,
        feature_channels,
        ..Default::default()
    };
    config.validate()?;
    Ok(DetectorModel { config, params })
}

pub fn synth_data(cfg: &Resolved, out: &Path) -> Result<CommandOutput> {
    let seed = Seed(cfg.get_u64("run.seed")?);
    let size = cfg.get_usize("synth.size")?;
    let mut fingerprints = BTreeMap::new();
    let mut summary = Map::new();
    match cfg.raw("synth.kind") {
        "domains" => {
            let n_x = cfg.get_usize("synth.n_x")?;
            let n_y = cfg.get_usize("synth.n_y")?;
            let (x, y) = synth_domain_pair(seed, n_x, n_y, size)?;
            for (name, ds) in [("x", &x), ("y", &y)] {
                let dir = out.join(name);
                fs::create_dir_all(&dir)?;
                let mut names = Vec::new();
                for (i, img) in ds.images.iter().enumerate() {
                    let file = format!("img{i:05}.png");
                    data::save_image(img, &dir.join(&file))?;
                    names.push(file);
                }
                let manifest = write_domain_manifest(&dir, &names)?;
                fingerprints
                    .insert(format!("{name}_manifest"), manifest_fingerprint(&manifest)?);
            }
            summary.insert("n_x".into(), n_x.into());
            summary.insert("n_y".into(), n_y.into());
        }
        "detection" => {
            let n = cfg.get_usize("synth.n")?;
            let classes = cfg.get_usize("synth.classes")?;
            let style = match cfg.raw("synth.style") {
                "underwater" => SceneStyle::Underwater,
                "terrestrial" => SceneStyle::Terrestrial,
                other => bail!("unknown synth.style {other:?}"),
            };
            let degradations = if cfg.get_bool("synth.turbidity")? {
                Degradations::turbidity()
            } else {
                Degradations::none()
            };
            let samples = synth_detection_set(seed, n, size, classes, style, degradations)?;
            let img_dir = out.join("images");
            fs::create_dir_all(&img_dir)?;
            let mut entries = Vec::new();
            for (i, s) in samples.iter().enumerate() {
                let file = format!("images/img{i:05}.png");
                data::save_image(&s.image, &out.join(&file))?;
                entries.push((file, s.annotations.clone()));
            }
            let manifest = out.join("annotations.jsonl");
            write_detection_manifest(&manifest, &entries)?;
            fingerprints.insert("annotations".into(), manifest_fingerprint(&manifest)?);
            summary.insert("n".into(), n.into());
            summary.insert("classes".into(), classes.into());
        }
        other => bail!("unknown synth.kind {other:?}"),
    }
    summary.insert("size".into(), size.into());
    Ok(CommandOutput { summary, fingerprints })
}

pub fn train_cyclegan_cmd(cfg: &Resolved, out: &Path) -> Result<CommandOutput> {
    let x_path = cfg.get_path("gan.x_manifest")?;
    let y_path = cfg.get_path("gan.y_manifest")?;
    let x_manifest = load_domain_manifest(&x_path)?;
    let y_manifest = load_domain_manifest(&y_path)?;
    let x = data::load_domain_dataset(&x_manifest, DomainTag::Terrestrial)?;
    let y = data::load_domain_dataset(&y_manifest, DomainTag::Underwater)?;
    let gan_cfg = GanTrainConfig {
        lambda_cyc: cfg.get_f64("gan.lambda_cyc")?,
        base_lr: cfg.get_f64("gan.base_lr")?,
        constant_epochs: cfg.get_usize("gan.constant_epochs")?,
        decay_epochs: cfg.get_usize("gan.decay_epochs")?,
        batch_size: cfg.get_usize("gan.batch_size")?,
        image_size: cfg.get_usize("gan.image_size")?,
        seed: cfg.get_u64("run.seed")?,
        epochs: cfg.get_opt_usize("gan.epochs")?,
        steps_per_epoch: cfg.get_opt_usize("gan.steps_per_epoch")?,
        checkpoint_interval: cfg.get_usize("gan.checkpoint_interval")?,
        fid_interval: match cfg.get_usize("gan.fid_interval")? {
            0 => None,
            n => Some(n),
        },
        fid_probe: cfg.get_usize("gan.fid_probe")?,
        non_saturating: cfg.get_bool("gan.non_saturating")?,
        gen_channels: cfg.get_usize("gan.gen_channels")?,
        disc_channels: cfg.get_usize("gan.disc_channels")?,
    };
    let (_, trace) = train_cyclegan(&x, &y, &gan_cfg, Some(out))?;
    write_jsonl(&out.join("trace.jsonl"), &trace)?;
    let mut summary = Map::new();
    summary.insert("steps".into(), trace.len().into());
    if let Some(last) = trace.last() {
        summary.insert("last_loss_cyc".into(), json!(last.loss_cyc));
        summary.insert("last_lr".into(), json!(last.lr));
    }
    if let Some(fid_value) = trace.iter().rev().find_map(|r| r.fid) {
        summary.insert("last_fid".into(), json!(fid_value));
    }
    let mut fingerprints = BTreeMap::new();
    fingerprints.insert("x_manifest".into(), x_manifest.fingerprint);
    fingerprints.insert("y_manifest".into(), y_manifest.fingerprint);
    Ok(CommandOutput { summary, fingerprints })
}

pub fn translate_cmd(cfg: &Resolved, out: &Path) -> Result<CommandOutput> {
    let gen_path = cfg.get_path("translate.generator")?;
    let params = checkpoint::load(&gen_path)?;
    let prefix = match cfg.raw("translate.direction") {
        "x_to_y" => "g.",
        "y_to_x" => "f.",
        other => bail!("unknown translate.direction {other:?}"),
    };
    if !params.names().any(|n| n.starts_with(prefix)) {
        bail!(
            "checkpoint {} holds no parameters with prefix {prefix:?}",
            gen_path.display()
        );
    }
    let manifest_path = cfg.get_path("translate.manifest")?;
    let manifest = load_domain_manifest(&manifest_path)?;
    let img_dir = out.join("images");
    fs::create_dir_all(&img_dir)?;
    let mut names = Vec::new();
    for entry in &manifest.entries {
        let image = data::load_image(&manifest.root.join(&entry.path))?;
        let translated = translate(&params, prefix, &image)?;
        let base = Path::new(&entry.path)
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("bad manifest entry {:?}", entry.path))?;
        data::save_image(&translated, &img_dir.join(base))?;
        names.push(base.to_string());
    }
    let out_manifest = write_domain_manifest(&img_dir, &names)?;
    let mut fingerprints = BTreeMap::new();
    fingerprints.insert("input_manifest".into(), manifest.fingerprint);
    fingerprints.insert("output_manifest".into(), manifest_fingerprint(&out_manifest)?);
    let mut summary = Map::new();
    summary.insert("translated".into(), names.len().into());
    Ok(CommandOutput { summary, fingerprints })
}

pub fn mix_cmd(cfg: &Resolved, out: &Path) -> Result<CommandOutput> {
    let existing_path = cfg.get_path("mix.existing_manifest")?;
    let augmented_path = cfg.get_path("mix.augmented_manifest")?;
    let existing = load_detection_manifest(&existing_path)?;
    let augmented = load_detection_manifest(&augmented_path)?;
    if cfg.is_set("mix.eval_manifest") {
        let eval = load_detection_manifest(&cfg.get_path("mix.eval_manifest")?)?;
        data::assert_disjoint(&existing, &eval)?;
        data::assert_disjoint(&augmented, &eval)?;
    }
    let spec = MixSpec {
        existing_fraction: cfg.get_f64("mix.existing_fraction")?,
        augmented_fraction: cfg.get_f64("mix.augmented_fraction")?,
        seed: Seed(cfg.get_u64("run.seed")?),
    };
    let total = cfg
        .get_opt_usize("mix.total")?
        .ok_or_else(|| anyhow!("mix.total is required"))?;
    let picks = data::mix_indices(existing.entries.len(), augmented.entries.len(), &spec, total)?;
    let mut entries: Vec<(String, Vec<Annotation>)> = Vec::with_capacity(picks.len());
    let mut n_existing = 0usize;
    for (tag, i) in picks {
        let (manifest, counter) = match tag {
            PoolTag::Existing => (&existing, true),
            PoolTag::Augmented => (&augmented, false),
        };
        if counter {
            n_existing += 1;
        }
        let entry = &manifest.entries[i];
        let absolute = manifest.root.join(&entry.path);
        entries.push((
            absolute.to_string_lossy().into_owned(),
            entry.annotations.clone().unwrap_or_default(),
        ));
    }
    let out_manifest = out.join("annotations.jsonl");
    write_detection_manifest(&out_manifest, &entries)?;
    let mut fingerprints = BTreeMap::new();
    fingerprints.insert("existing_manifest".into(), existing.fingerprint);
    fingerprints.insert("augmented_manifest".into(), augmented.fingerprint);
    fingerprints.insert("mixed_manifest".into(), manifest_fingerprint(&out_manifest)?);
    let mut summary = Map::new();
    summary.insert("total".into(), entries.len().into());
    summary.insert("from_existing".into(), n_existing.into());
    summary.insert("from_augmented".into(), (entries.len() - n_existing).into());
    Ok(CommandOutput { summary, fingerprints })
}

pub fn train_detector_cmd(cfg: &Resolved, out: &Path) -> Result<CommandOutput> {
    let train_path = cfg.get_path("det.train_manifest")?;
    let train_manifest = load_detection_manifest(&train_path)?;
    let samples = data::load_detection_samples(&train_manifest)?;
    let classes = cfg.get_usize("det.classes")?;
    let det_cfg = DetectorConfig {
        image_size: cfg.get_usize("det.image_size")?,
        num_classes: classes,
        class_names: default_class_names(classes),
        use_attention: cfg.get_bool("det.use_sea")?,
        feature_channels: cfg.get_usize("det.feature_channels")?,
        ..Default::default()
    };
    let seed = cfg.get_u64("run.seed")?;
    let mut model = build_detector(det_cfg, Seed(seed))?;
    let train_cfg = DetTrainConfig {
        iters_hi: cfg.get_usize("det.iters_hi")?,
        iters_lo: cfg.get_usize("det.iters_lo")?,
        lr_hi: cfg.get_f64("det.lr_hi")?,
        lr_lo: cfg.get_f64("det.lr_lo")?,
        batch_size: cfg.get_usize("det.batch_size")?,
        momentum: cfg.get_f64("det.momentum")?,
        weight_decay: cfg.get_f64("det.weight_decay")?,
        seed,
        checkpoint_interval: cfg.get_opt_usize("det.checkpoint_interval")?,
    };
    let trace = train_detector(&samples, &mut model, &train_cfg, Some(out))?;
    write_jsonl(&out.join("trace.jsonl"), &trace)?;
    let mut summary = Map::new();
    summary.insert("iterations".into(), trace.len().into());
    summary.insert("use_sea".into(), cfg.get_bool("det.use_sea")?.into());
    if let Some(last) = trace.last() {
        summary.insert("last_loss_total".into(), json!(last.loss_total));
    }
    let mut fingerprints = BTreeMap::new();
    fingerprints.insert("train_manifest".into(), train_manifest.fingerprint.clone());
    if cfg.is_set("det.eval_manifest") {
        let eval_manifest = load_detection_manifest(&cfg.get_path("det.eval_manifest")?)?;
        data::assert_disjoint(&train_manifest, &eval_manifest)?;
        let eval_samples = data::load_detection_samples(&eval_manifest)?;
        let result = evaluate_model(
            &model,
            &eval_samples,
            cfg.get_f64("det.iou_threshold")?,
            cfg.get_f64("det.score_threshold")?,
            cfg.get_f64("det.nms_threshold")?,
        )?;
        write_report(&result, &eval_manifest.fingerprint, &out.join("eval_report.json"))?;
        summary.insert("final_map".into(), json!(result.map));
        fingerprints.insert("eval_manifest".into(), eval_manifest.fingerprint);
    }
    Ok(CommandOutput { summary, fingerprints })
}

pub fn eval_cmd(cfg: &Resolved, out: &Path) -> Result<CommandOutput> {
    match cfg.raw("eval.task") {
        "detect" => {
            let params = checkpoint::load(&cfg.get_path("eval.model")?)?;
            let model = detector_from_checkpoint(params, cfg.get_usize("eval.image_size")?)?;
            let manifest = load_detection_manifest(&cfg.get_path("eval.manifest")?)?;
            let samples = data::load_detection_samples(&manifest)?;
            let score_thr = cfg.get_f64("eval.score_threshold")?;
            let nms_thr = cfg.get_f64("eval.nms_threshold")?;
            let mut per_image = Vec::with_capacity(samples.len());
            for (entry, sample) in manifest.entries.iter().zip(&samples) {
                let dets = gamma::detector::infer(&model, &sample.image, score_thr, nms_thr)?;
                per_image.push((entry.path.clone(), dets));
            }
            data::write_detections_file(&out.join("detections.jsonl"), &per_image)?;
            let all_dets: Vec<_> = per_image.iter().map(|(_, d)| d.clone()).collect();
            let all_gts: Vec<_> = samples.iter().map(|s| s.annotations.clone()).collect();
            let result = gamma::metrics::evaluate_detections(
                &all_dets,
                &all_gts,
                model.config.num_classes,
                cfg.get_f64("eval.iou_threshold")?,
            )?;
            write_report(&result, &manifest.fingerprint, &out.join("report.json"))?;
            let mut summary = Map::new();
            summary.insert("task".into(), "detect".into());
            summary.insert("map".into(), json!(result.map));
            let mut fingerprints = BTreeMap::new();
            fingerprints.insert("eval_manifest".into(), manifest.fingerprint);
            Ok(CommandOutput { summary, fingerprints })
        }
        "fid" => {
            let real_manifest = load_domain_manifest(&cfg.get_path("eval.real_manifest")?)?;
            let gen_manifest =
                load_domain_manifest(&cfg.get_path("eval.generated_manifest")?)?;
            let real = data::load_domain_dataset(&real_manifest, DomainTag::Underwater)?;
            let generated = data::load_domain_dataset(&gen_manifest, DomainTag::Underwater)?;
            let encoder = EmbedEncoder::new(Seed(cfg.get_u64("eval.encoder_seed")?));
            let e_real = embed_images(&real.images, &encoder)?;
            let e_gen = embed_images(&generated.images, &encoder)?;
            let value = fid(&fit_gaussian(&e_real)?, &fit_gaussian(&e_gen)?)?;
            let report = json!({
                "schema": gamma::metrics::EVAL_SCHEMA,
                "task": "fid",
                "fid": value,
                "real_fingerprint": real_manifest.fingerprint,
                "generated_fingerprint": gen_manifest.fingerprint,
            });
            let mut body = serde_json::to_string(&report)?;
            body.push('\n');
            fs::write(out.join("report.json"), body)?;
            let mut summary = Map::new();
            summary.insert("task".into(), "fid".into());
            summary.insert("fid".into(), json!(value));
            let mut fingerprints = BTreeMap::new();
            fingerprints.insert("real_manifest".into(), real_manifest.fingerprint);
            fingerprints.insert("generated_manifest".into(), gen_manifest.fingerprint);
            Ok(CommandOutput { summary, fingerprints })
        }
        other => bail!("unknown eval.task {other:?}"),
    }
}

pub fn attn_maps_cmd(cfg: &Resolved, out: &Path) -> Result<CommandOutput> {
    let params = checkpoint::load(&cfg.get_path("attn.model")?)?;
    let manifest = load_domain_manifest(&cfg.get_path("attn.manifest")?)?;
    let count = cfg.get_usize("attn.count")?.min(manifest.entries.len());
    if count == 0 {
        bail!("attention visualization needs at least one image");
    }
    let first: Tensor = data::load_image(&manifest.root.join(&manifest.entries[0].path))?;
    let image_size = first.shape()[0];
    let model = detector_from_checkpoint(params, image_size)?;
    let dump_scores = cfg.get_bool("attn.dump_scores")?;
    for (i, entry) in manifest.entries.iter().take(count).enumerate() {
        let image = data::load_image(&manifest.root.join(&entry.path))?;
        let output = attention_snapshot(&model, &image)?;
        export_attention_heatmap(&output, &image, &out.join(format!("heatmap_{i:03}.png")))?;
        if dump_scores {
            write_scores_binary(&output.scores, &out.join(format!("scores_{i:03}.bin")))?;
        }
    }
    let mut summary = Map::new();
    summary.insert("maps".into(), count.into());
    let mut fingerprints = BTreeMap::new();
    fingerprints.insert("input_manifest".into(), manifest.fingerprint);
    Ok(CommandOutput { summary, fingerprints })
}
