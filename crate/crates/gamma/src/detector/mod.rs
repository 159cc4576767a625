//! Two-stage attentive detector: conv backbone (stride 8), optional
//! self-attention fusion, region proposal network, RoI-Align pooling and
//! classification/regression heads.

pub mod anchors;
pub mod codec;
mod infer;
mod net;
pub mod nms;
mod train;

pub use infer::{attention_snapshot, evaluate_model, infer};
pub use net::{backbone_forward, detection_head, features_forward, rpn_raw};
pub use train::{
    detector_lr, train_detector, DetTraceRecord, DetTrainConfig, ImageLossNodes,
};

use gamma_core::{ParamSet, Rng, Seed, Tensor};

use crate::attention::build_attention_params;
use crate::GammaError;

/// Backbone stride is fixed by the six-layer topology.
pub const STRIDE: usize = 8;

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub image_size: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Attention fusion between backbone and RPN; off for ablation runs.
    pub use_attention: bool,
    /// Backbone output channels (divisible by 8).
    pub feature_channels: usize,
    pub anchor_scales: Vec<f64>,
    pub anchor_aspects: Vec<f64>,
    pub rpn_channels: usize,
    pub roi_size: usize,
    pub head_hidden: usize,
    pub proposals_train: usize,
    pub proposals_infer: usize,
    pub rpn_nms_threshold: f64,
    pub rpn_pos_iou: f64,
    pub rpn_neg_iou: f64,
    pub head_pos_iou: f64,
    /// Anchors sampled per image for the objectness loss.
    pub rpn_sample: usize,
    /// RoIs sampled per image for the head losses.
    pub head_sample: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            image_size: 64,
            num_classes: 3,
            class_names: vec!["plastic".into(), "rov".into(), "bio".into()],
            use_attention: true,
            feature_channels: 32,
            anchor_scales: vec![12.0, 24.0, 40.0],
            anchor_aspects: vec![0.5, 1.0, 2.0],
            rpn_channels: 32,
            roi_size: 4,
            head_hidden: 128,
            proposals_train: 128,
            proposals_infer: 64,
            rpn_nms_threshold: 0.7,
            rpn_pos_iou: 0.7,
            rpn_neg_iou: 0.3,
            head_pos_iou: 0.5,
            rpn_sample: 64,
            head_sample: 32,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), GammaError> {
        if self.image_size % STRIDE != 0 {
            return Err(GammaError::Contract(format!(
                "image size {} must be divisible by stride {STRIDE}",
                self.image_size
            )));
        }
        if self.feature_channels % 8 != 0 {
            return Err(GammaError::Contract(format!(
                "feature channels {} must be divisible by 8",
                self.feature_channels
            )));
        }
        if self.class_names.len() != self.num_classes {
            return Err(GammaError::Contract(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        if self.num_classes == 0 {
            return Err(GammaError::Contract("need at least one class".into()));
        }
        if self.anchor_scales.is_empty() || self.anchor_aspects.is_empty() {
            return Err(GammaError::Contract("anchor scales/aspects must be non-empty".into()));
        }
        Ok(())
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.anchor_aspects.len()
    }

    pub fn feature_size(&self) -> usize {
        self.image_size / STRIDE
    }

    /// Backbone channel progression; six 3x3 convs, strides 1,2,1,2,1,2.
    pub fn backbone_channels(&self) -> [usize; 6] {
        let c = self.feature_channels;
        [c / 2, c / 2, 3 * c / 4, 3 * c / 4, c, c]
    }
}

/// All learnable state plus the class-name table.
#[derive(Debug, Clone)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub params: ParamSet,
}

fn he_conv(rng: &mut Rng, o: usize, i: usize, k: usize) -> Tensor {
    let std = (2.0 / (i * k * k) as f64).sqrt();
    let data: Vec<f64> = (0..o * i * k * k).map(|_| rng.normal(0.0, std)).collect();
    Tensor::new(vec![o, i, k, k], data).expect("conv shape")
}

fn small_dense(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal(0.0, std)).collect();
    Tensor::new(vec![rows, cols], data).expect("dense shape")
}

/// Deterministic per seed. Component sub-seeds keep the shared trunk
/// identical whether or not the attention block is enabled.
pub fn build_detector(config: DetectorConfig, seed: Seed) -> Result<DetectorModel, GammaError> {
    config.validate()?;
    let mut params = ParamSet::new();
    let chans = config.backbone_channels();
    let mut rng = seed.derive("backbone").rng();
    let mut c_in = 3;
    for (i, &c_out) in chans.iter().enumerate() {
        params.insert(format!("backbone.c{i}.w"), he_conv(&mut rng, c_out, c_in, 3));
        params.insert(format!("backbone.c{i}.b"), Tensor::zeros(vec![c_out]));
        c_in = c_out;
    }
    if config.use_attention {
        params.absorb(
            "attn",
            build_attention_params(config.feature_channels, seed.derive("attention"))?,
        );
    }
    let mut rng = seed.derive("rpn").rng();
    let a = config.anchors_per_cell();
    params.insert(
        "rpn.conv.w",
        he_conv(&mut rng, config.rpn_channels, config.feature_channels, 3),
    );
    params.insert("rpn.conv.b", Tensor::zeros(vec![config.rpn_channels]));
    params.insert("rpn.obj.w", {
        let std = 0.01;
        let data: Vec<f64> =
            (0..a * config.rpn_channels).map(|_| rng.normal(0.0, std)).collect();
        Tensor::new(vec![a, config.rpn_channels, 1, 1], data).expect("obj kernel")
    });
    params.insert("rpn.obj.b", Tensor::zeros(vec![a]));
    params.insert("rpn.reg.w", {
        let std = 0.01;
        let data: Vec<f64> =
            (0..4 * a * config.rpn_channels).map(|_| rng.normal(0.0, std)).collect();
        Tensor::new(vec![4 * a, config.rpn_channels, 1, 1], data).expect("reg kernel")
    });
    params.insert("rpn.reg.b", Tensor::zeros(vec![4 * a]));

    let mut rng = seed.derive("head").rng();
    let pooled_dim = config.feature_channels * config.roi_size * config.roi_size;
    let hidden = config.head_hidden;
    let k = config.num_classes;
    params.insert(
        "head.fc.w",
        small_dense(&mut rng, pooled_dim, hidden, (2.0 / pooled_dim as f64).sqrt()),
    );
    params.insert("head.fc.b", Tensor::zeros(vec![hidden]));
    params.insert("head.cls.w", small_dense(&mut rng, hidden, k + 1, 0.01));
    params.insert("head.cls.b", Tensor::zeros(vec![k + 1]));
    params.insert("head.reg.w", small_dense(&mut rng, hidden, 4 * k, 0.01));
    params.insert("head.reg.b", Tensor::zeros(vec![4 * k]));

    Ok(DetectorModel { config, params })
}
