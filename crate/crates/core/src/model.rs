//! Shared-encoder multi-task network: segmentation decoder plus melanoma and
//! seborrheic-keratosis heads, and the joint training objective.
//!
//! Layout for `stages = S`, `base_channels = B`:
//!
//! ```text
//! encoder.stage{i}   block(B * 2^i) -> maxpool2d          i = 0..S
//! bottleneck         block(B * 2^S)
//! decoder.stage{i}   upsample2x -> concat(skip i) -> conv3x3(B * 2^i) + relu   i = S-1..0
//! seg_head           conv1x1(1) + sigmoid
//! melanoma_head      global_avg_pool(bottleneck) -> linear(1) + sigmoid
//! sk_head            global_avg_pool(bottleneck) -> linear(1) + sigmoid
//! ```
//!
//! A block is either inception-lite (parallel 1x1 and 3x3 convolutions, each
//! with relu, concatenated 1x1 first) or two stacked 3x3 convolutions.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeRef};
use crate::nn::{self, Conv2dParams};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Segmentation probability at or above this is lesion.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Task weights of the joint loss: `seg * (bce + dice) + melanoma * bce + sk * bce`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub seg: f64,
    pub melanoma: f64,
    pub sk: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { seg: 1.0, melanoma: 1.0, sk: 1.0 }
    }
}

impl LossWeights {
    pub const MULTI_TASK: LossWeights = LossWeights { seg: 1.0, melanoma: 1.0, sk: 1.0 };
    pub const SEG_ONLY: LossWeights = LossWeights { seg: 1.0, melanoma: 0.0, sk: 0.0 };
    pub const CLS_ONLY: LossWeights = LossWeights { seg: 0.0, melanoma: 1.0, sk: 1.0 };

    pub fn validate(&self) -> Result<()> {
        let all = [self.seg, self.melanoma, self.sk];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got {all:?}")));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Positive-class weights for the two classification losses (class imbalance knob).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosWeights {
    pub melanoma: f64,
    pub sk: f64,
}

impl Default for PosWeights {
    fn default() -> Self {
        PosWeights { melanoma: 1.0, sk: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `[height, width]` in pixels.
    pub input_size: [usize; 2],
    pub base_channels: usize,
    pub stages: usize,
    pub inception_enabled: bool,
    pub seg_feeds_heads: bool,
    pub loss_weights: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: [64, 64],
            base_channels: 16,
            stages: 4,
            inception_enabled: true,
            seg_feeds_heads: false,
            loss_weights: LossWeights::default(),
        }
    }
}

/// Shape and initialization fan-in of one named parameter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// `None` for biases (initialized to zero).
    pub fan_in: Option<usize>,
}

/// Which outputs a forward pass must produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub seg: bool,
    pub classification: bool,
}

impl Heads {
    pub const ALL: Heads = Heads { seg: true, classification: true };

    /// Outputs that carry non-zero loss weight.
    pub fn for_weights(w: &LossWeights) -> Heads {
        Heads { seg: w.seg > 0.0, classification: w.melanoma > 0.0 || w.sk > 0.0 }
    }
}

impl ModelConfig {
    /// Desk-scale configuration used by the reproduction mode on real ISIC images.
    pub fn isic() -> Self {
        ModelConfig { input_size: [192, 192], base_channels: 32, stages: 4, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.input_size;
        if self.stages == 0 || self.stages > 8 {
            return Err(Error::Config(format!("stages must be in 1..=8, got {}", self.stages)));
        }
        let div = 1usize << self.stages;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be divisible by 2^stages = {div}"
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.inception_enabled && self.base_channels < 2 {
            return Err(Error::Config("inception blocks need base_channels >= 2".into()));
        }
        self.loss_weights.validate()
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    fn bottleneck_channels(&self) -> usize {
        self.stage_channels(self.stages)
    }

    /// `(branch1x1, branch3x3)` widths of an inception block producing `c` channels.
    fn inception_split(c: usize) -> (usize, usize) {
        let b3 = c / 2;
        (c - b3, b3)
    }

    fn block_specs(&self, prefix: &str, in_ch: usize, out_ch: usize, out: &mut Vec<ParamSpec>) {
        if self.inception_enabled {
            let (b1, b3) = Self::inception_split(out_ch);
            conv_spec(out, &format!("{prefix}.branch1x1"), b1, in_ch, 1);
            conv_spec(out, &format!("{prefix}.branch3x3"), b3, in_ch, 3);
        } else {
            conv_spec(out, &format!("{prefix}.conv1"), out_ch, in_ch, 3);
            conv_spec(out, &format!("{prefix}.conv2"), out_ch, out_ch, 3);
        }
    }

    /// Every parameter of the architecture, in canonical order.
    pub fn parameter_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut in_ch = 3;
        for i in 0..self.stages {
            let c = self.stage_channels(i);
            self.block_specs(&format!("encoder.stage{i}"), in_ch, c, &mut specs);
            in_ch = c;
        }
        self.block_specs("bottleneck", in_ch, self.bottleneck_channels(), &mut specs);
        let mut up_ch = self.bottleneck_channels();
        for i in (0..self.stages).rev() {
            let c = self.stage_channels(i);
            conv_spec(&mut specs, &format!("decoder.stage{i}.conv"), c, up_ch + c, 3);
            up_ch = c;
        }
        conv_spec(&mut specs, "seg_head", 1, self.base_channels, 1);
        let feat = self.bottleneck_channels() + usize::from(self.seg_feeds_heads);
        for head in ["melanoma_head", "sk_head"] {
            specs.push(ParamSpec { name: format!("{head}.weight"), shape: vec![feat, 1], fan_in: Some(feat) });
            specs.push(ParamSpec { name: format!("{head}.bias"), shape: vec![1], fan_in: None });
        }
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_specs().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }
}

fn conv_spec(out: &mut Vec<ParamSpec>, prefix: &str, out_ch: usize, in_ch: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![out_ch, in_ch, k, k],
        fan_in: Some(in_ch * k * k),
    });
    out.push(ParamSpec { name: format!("{prefix}.bias"), shape: vec![out_ch], fan_in: None });
}

/// Graph nodes of the three outputs; absent outputs were not requested.
#[derive(Clone, Copy, Debug)]
pub struct OutputNodes {
    /// `[n, 1, h, w]`
    pub seg: Option<NodeRef>,
    /// `[n]`
    pub melanoma: Option<NodeRef>,
    /// `[n]`
    pub sk: Option<NodeRef>,
}

/// All three outputs of a full forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutputNodes {
    pub seg: NodeRef,
    pub melanoma: NodeRef,
    pub sk: NodeRef,
}

impl OutputNodes {
    pub fn all(&self) -> Result<ModelOutputNodes> {
        match (self.seg, self.melanoma, self.sk) {
            (Some(seg), Some(melanoma), Some(sk)) => Ok(ModelOutputNodes { seg, melanoma, sk }),
            _ => Err(Error::Invariant("forward pass did not produce all three outputs".into())),
        }
    }
}

/// Output values of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub seg_prob: Tensor,
    pub p_melanoma: Tensor,
    pub p_sk: Tensor,
}

/// Thresholded masks plus the two probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `[n, 1, h, w]` with values in {0, 1}.
    pub masks: Tensor,
    pub p_melanoma: Vec<f64>,
    pub p_sk: Vec<f64>,
}

/// Ground truth for one batch.
#[derive(Clone, Debug)]
pub struct Targets {
    /// `[n, 1, h, w]` binary
    pub mask: Tensor,
    /// `[n]` binary
    pub melanoma: Tensor,
    /// `[n]` binary
    pub sk: Tensor,
}

struct Builder<'a> {
    cfg: &'a ModelConfig,
    params: HashMap<&'a str, NodeRef>,
}

impl Builder<'_> {
    fn param(&self, name: &str) -> Result<NodeRef> {
        self.params.get(name).copied().ok_or_else(|| Error::Invariant(format!("missing parameter {name}")))
    }

    fn conv(&self, g: &mut Graph, prefix: &str, x: NodeRef, padding: usize) -> Result<NodeRef> {
        let p = Conv2dParams {
            weight: self.param(&format!("{prefix}.weight"))?,
            bias: self.param(&format!("{prefix}.bias"))?,
            stride: 1,
            padding,
        };
        nn::conv2d(g, x, &p)
    }

    fn conv_relu(&self, g: &mut Graph, prefix: &str, x: NodeRef, padding: usize) -> Result<NodeRef> {
        let y = self.conv(g, prefix, x, padding)?;
        nn::relu(g, y)
    }

    fn block(&self, g: &mut Graph, prefix: &str, x: NodeRef) -> Result<NodeRef> {
        if self.cfg.inception_enabled {
            let b1 = self.conv_relu(g, &format!("{prefix}.branch1x1"), x, 0)?;
            let b3 = self.conv_relu(g, &format!("{prefix}.branch3x3"), x, 1)?;
            nn::concat_channels(g, b1, b3)
        } else {
            let y = self.conv_relu(g, &format!("{prefix}.conv1"), x, 1)?;
            self.conv_relu(g, &format!("{prefix}.conv2"), y, 1)
        }
    }

    fn head(&self, g: &mut Graph, name: &str, pooled: NodeRef) -> Result<NodeRef> {
        let n = g.shape(pooled)[0];
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        let logit = nn::linear(g, pooled, w, b)?;
        let logit = g.reshape(logit, &[n])?;
        nn::sigmoid_node(g, logit)
    }
}

/// Records a forward pass of the architecture described by `cfg`.
///
/// `params` are graph nodes in [`ModelConfig::parameter_specs`] order. The
/// encoder runs once; the decoder is skipped when neither the segmentation
/// output nor the seg-to-heads coupling is needed.
pub fn forward_graph(cfg: &ModelConfig, g: &mut Graph, params: &[NodeRef], images: NodeRef, heads: Heads) -> Result<OutputNodes> {
    let specs = cfg.parameter_specs();
    if specs.len() != params.len() {
        return Err(Error::Invariant(format!("expected {} parameter nodes, got {}", specs.len(), params.len())));
    }
    let (n, c, h, w) = g.value(images).dims4()?;
    if c != 3 || [h, w] != cfg.input_size {
        return Err(Error::mismatch(
            "forward",
            format!("expected [n, 3, {}, {}], got [{n}, {c}, {h}, {w}]", cfg.input_size[0], cfg.input_size[1]),
        ));
    }
    let b = Builder { cfg, params: specs.iter().map(|s| s.name.as_str()).zip(params.iter().copied()).collect() };

    let mut x = images;
    let mut skips = Vec::with_capacity(cfg.stages);
    for i in 0..cfg.stages {
        x = b.block(g, &format!("encoder.stage{i}"), x)?;
        skips.push(x);
        x = nn::maxpool2d(g, x)?;
    }
    let bottleneck = b.block(g, "bottleneck", x)?;

    let mut seg = None;
    if heads.seg || (heads.classification && cfg.seg_feeds_heads) {
        let mut d = bottleneck;
        for i in (0..cfg.stages).rev() {
            let up = nn::upsample2x_nearest(g, d)?;
            let cat = nn::concat_channels(g, up, skips[i])?;
            d = b.conv_relu(g, &format!("decoder.stage{i}.conv"), cat, 1)?;
        }
        let logit = b.conv(g, "seg_head", d, 0)?;
        seg = Some(nn::sigmoid_node(g, logit)?);
    }

    let (mut melanoma, mut sk) = (None, None);
    if heads.classification {
        let mut features = bottleneck;
        if cfg.seg_feeds_heads {
            let seg = seg.expect("decoder ran");
            let pooled = nn::avg_pool(g, seg, 1 << cfg.stages)?;
            features = nn::concat_channels(g, features, pooled)?;
        }
        let pooled = nn::global_avg_pool(g, features)?;
        melanoma = Some(b.head(g, "melanoma_head", pooled)?);
        sk = Some(b.head(g, "sk_head", pooled)?);
    }
    debug_assert!(n > 0);
    Ok(OutputNodes { seg: if heads.seg { seg } else { None }, melanoma, sk })
}

/// Joint objective over whichever task terms carry positive weight.
///
/// Terms with zero weight are left out of the graph entirely, so parameters
/// used only by those tasks receive exactly zero gradient.
pub fn joint_loss(
    g: &mut Graph,
    out: &ModelOutputNodes,
    targets: &Targets,
    weights: &LossWeights,
    pos: &PosWeights,
) -> Result<NodeRef> {
    joint_loss_partial(
        g,
        &OutputNodes { seg: Some(out.seg), melanoma: Some(out.melanoma), sk: Some(out.sk) },
        targets,
        weights,
        pos,
    )
}

/// As [`joint_loss`], for a forward pass that may have skipped unweighted outputs.
pub fn joint_loss_partial(
    g: &mut Graph,
    out: &OutputNodes,
    targets: &Targets,
    weights: &LossWeights,
    pos: &PosWeights,
) -> Result<NodeRef> {
    weights.validate()?;
    let missing = |what: &str| Error::Invariant(format!("{what} output required by a positive loss weight"));
    let mut terms = Vec::new();
    if weights.seg > 0.0 {
        let seg = out.seg.ok_or_else(|| missing("segmentation"))?;
        let bce = nn::bce_loss(g, seg, &targets.mask, 1.0)?;
        let dice = nn::soft_dice_loss(g, seg, &targets.mask)?;
        let sum = g.add(bce, dice)?;
        terms.push(g.scale(sum, weights.seg)?);
    }
    if weights.melanoma > 0.0 {
        let p = out.melanoma.ok_or_else(|| missing("melanoma"))?;
        let l = nn::bce_loss(g, p, &targets.melanoma, pos.melanoma)?;
        terms.push(g.scale(l, weights.melanoma)?);
    }
    if weights.sk > 0.0 {
        let p = out.sk.ok_or_else(|| missing("seborrheic keratosis"))?;
        let l = nn::bce_loss(g, p, &targets.sk, pos.sk)?;
        terms.push(g.scale(l, weights.sk)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(total)
}

/// Thresholds a probability map at [`MASK_THRESHOLD`] (inclusive).
pub fn binarize(prob: &Tensor) -> Tensor {
    prob.map(|p| if p >= MASK_THRESHOLD { 1.0 } else { 0.0 })
}

/// Instantiated parameters of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskModel {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Parameters of a model bound into one graph as trainable leaves.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub nodes: Vec<NodeRef>,
}

impl MultiTaskModel {
    /// Kaiming-normal weights (std `sqrt(2 / fan_in)`), zero biases, drawn in
    /// canonical parameter order from one stream seeded by `seed`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = RngState::new(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for spec in cfg.parameter_specs() {
            let t = match spec.fan_in {
                Some(fan_in) => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    rng.normal_tensor(&spec.shape)?.map(|v| v * std)
                }
                None => Tensor::zeros(&spec.shape)?,
            };
            names.push(spec.name);
            tensors.push(t);
        }
        Ok(MultiTaskModel { config: cfg.clone(), names, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> Vec<(&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors).collect()
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Adds every parameter to `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams { nodes: self.tensors.iter().map(|t| g.leaf(t.clone())).collect() }
    }

    /// Adds every parameter to `g` as a constant (inference only).
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundParams {
        BoundParams { nodes: self.tensors.iter().map(|t| g.constant(t.clone())).collect() }
    }

    /// Full forward pass producing all three outputs from one encoder pass.
    pub fn forward(&self, g: &mut Graph, params: &BoundParams, images: NodeRef) -> Result<ModelOutputNodes> {
        forward_graph(&self.config, g, &params.nodes, images, Heads::ALL)?.all()
    }

    pub fn forward_heads(&self, g: &mut Graph, params: &BoundParams, images: NodeRef, heads: Heads) -> Result<OutputNodes> {
        forward_graph(&self.config, g, &params.nodes, images, heads)
    }

    /// Forward pass on `images[n, 3, h, w]` without recording gradients.
    pub fn infer(&self, images: &Tensor) -> Result<ModelOutput> {
        let mut g = Graph::new();
        let params = self.bind_frozen(&mut g);
        let x = g.constant(images.clone());
        let out = self.forward(&mut g, &params, x)?;
        Ok(ModelOutput {
            seg_prob: g.value(out.seg).clone(),
            p_melanoma: g.value(out.melanoma).clone(),
            p_sk: g.value(out.sk).clone(),
        })
    }

    /// Binary masks (probability >= 0.5 is lesion) and the two probabilities.
    pub fn predict(&self, images: &Tensor) -> Result<Prediction> {
        let out = self.infer(images)?;
        Ok(Prediction {
            masks: binarize(&out.seg_prob),
            p_melanoma: out.p_melanoma.into_data(),
            p_sk: out.p_sk.into_data(),
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            config_json: Some(serde_json::to_string(&self.config)?),
            tensors: self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect(),
        })
    }

    /// Rebuilds a model from a checkpoint whose embedded config must describe
    /// exactly the stored parameter names and shapes.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let json = ckpt.config_json.ok_or_else(|| Error::Checkpoint("no embedded model config".into()))?;
        let config: ModelConfig = serde_json::from_str(&json)?;
        config.validate()?;
        let specs = config.parameter_specs();
        if specs.len() != ckpt.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "config implies {} parameters, checkpoint holds {}",
                specs.len(),
                ckpt.tensors.len()
            )));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (spec, (name, t)) in specs.into_iter().zip(ckpt.tensors) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "expected {} {:?}, found {} {:?}",
                    spec.name,
                    spec.shape,
                    name,
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(MultiTaskModel { config, names, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, &self.to_checkpoint()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig { input_size: [16, 16], base_channels: 4, stages: 2, ..Default::default() }
    }

    #[test]
    fn default_config_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::isic().validate().unwrap();
    }

    #[test]
    fn indivisible_input_rejected() {
        let cfg = ModelConfig { input_size: [60, 60], ..Default::default() };
        assert!(matches!(MultiTaskModel::build(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn all_zero_weights_rejected() {
        let cfg = ModelConfig { loss_weights: LossWeights { seg: 0.0, melanoma: 0.0, sk: 0.0 }, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn inception_split_gives_remainder_to_1x1() {
        assert_eq!(ModelConfig::inception_split(16), (8, 8));
        assert_eq!(ModelConfig::inception_split(5), (3, 2));
    }

    #[test]
    fn forward_shapes_and_ranges() {
        let m = MultiTaskModel::build(&small(), 3).unwrap();
        let out = m.infer(&Tensor::zeros(&[2, 3, 16, 16]).unwrap()).unwrap();
        assert_eq!(out.seg_prob.shape(), &[2, 1, 16, 16]);
        assert_eq!(out.p_melanoma.shape(), &[2]);
        assert_eq!(out.p_sk.shape(), &[2]);
        for v in out.seg_prob.data().iter().chain(out.p_melanoma.data()).chain(out.p_sk.data()) {
            assert!(v.is_finite() && *v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn wrong_input_shape() {
        let m = MultiTaskModel::build(&small(), 3).unwrap();
        assert!(matches!(m.infer(&Tensor::zeros(&[1, 3, 8, 8]).unwrap()), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(m.infer(&Tensor::zeros(&[1, 1, 16, 16]).unwrap()), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn threshold_is_inclusive_and_idempotent() {
        let p = Tensor::from_vec(&[4], vec![0.5, 0.4999, 0.9, 0.0]).unwrap();
        let b = binarize(&p);
        assert_eq!(b.data(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(binarize(&b), b);
    }

    #[test]
    fn plain_blocks_build() {
        let cfg = ModelConfig { inception_enabled: false, ..small() };
        let m = MultiTaskModel::build(&cfg, 1).unwrap();
        assert!(m.parameter("encoder.stage0.conv1.weight").is_some());
        assert!(m.parameter("encoder.stage0.branch3x3.weight").is_none());
        let out = m.infer(&Tensor::zeros(&[1, 3, 16, 16]).unwrap()).unwrap();
        assert_eq!(out.seg_prob.shape(), &[1, 1, 16, 16]);
    }
}
