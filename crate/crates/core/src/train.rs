//! Optimizers, the training loop, k-fold cross-validation and the loss-weight ablation.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Sample};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{self, EvalReport, SamplePrediction};
use crate::model::{binarize, joint_loss_partial, Heads, LossWeights, ModelConfig, MultiTaskModel, PosWeights, Targets};
use crate::rng::{mix, RngState};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

const TAG_INIT: u64 = 0x696e_6974;
const TAG_SHUFFLE: u64 = 0x7368_7566;
const TAG_AUGMENT: u64 = 0x6175_676d;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate at the first epoch towards zero after the last.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Replaces the model config's loss weights when set.
    pub loss_weights: Option<LossWeights>,
    pub augment_enabled: bool,
    pub checkpoint_dir: Option<PathBuf>,
    pub pos_weight: PosWeights,
    pub lr_schedule: LrSchedule,
    /// Stop after this many epochs without a lower validation loss.
    pub early_stopping_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            loss_weights: None,
            augment_enabled: true,
            checkpoint_dir: None,
            pos_weight: PosWeights::default(),
            lr_schedule: LrSchedule::Constant,
            early_stopping_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if [self.pos_weight.melanoma, self.pos_weight.sk].iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Config("positive-class weights must be positive".into()));
        }
        if let Some(w) = &self.loss_weights {
            w.validate()?;
        }
        Ok(())
    }

    /// Model config with this config's loss-weight override applied.
    pub fn effective_model(&self, model: &ModelConfig) -> ModelConfig {
        let mut m = model.clone();
        if let Some(w) = self.loss_weights {
            m.loss_weights = w;
        }
        m
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = epoch as f64 / self.epochs as f64;
                0.5 * self.learning_rate * (1.0 + libm::cos(std::f64::consts::PI * t))
            }
        }
    }
}

/// Per-parameter optimizer memory.
#[derive(Clone, Debug, PartialEq)]
pub enum OptState {
    Sgd,
    Adam { t: u64, m: Vec<Tensor>, v: Vec<Tensor> },
}

impl OptState {
    pub fn new(kind: OptimizerKind, params: &[Tensor]) -> OptState {
        match kind {
            OptimizerKind::Sgd => OptState::Sgd,
            OptimizerKind::Adam => {
                let zeros: Vec<Tensor> = params.iter().map(Tensor::zeros_like).collect();
                OptState::Adam { t: 0, m: zeros.clone(), v: zeros }
            }
        }
    }

    /// One update of `params` in place from `grads`.
    ///
    /// SGD: `p -= lr * g`. Adam: bias-corrected moments,
    /// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        match self {
            OptState::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptState::Adam { t, m, v } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(*t as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    for (((pv, &gv), mv), vv) in
                        p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
                    {
                        *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                    }
                }
            }
        }
    }
}

/// Network-ready tensors for a set of samples.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[n, 3, h, w]`, normalized.
    pub images: Tensor,
    pub targets: Targets,
}

impl Batch {
    /// Stacks samples whose images are already normalized.
    pub fn from_prepared(samples: &[&Sample]) -> Result<Batch> {
        let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
        let masks = samples
            .iter()
            .map(|s| s.mask.as_ref().ok_or_else(|| Error::Evaluation { id: s.id.clone(), reason: "no mask".into() }))
            .collect::<Result<Vec<_>>>()?;
        let n = samples.len();
        Ok(Batch {
            images: Tensor::stack(&images)?,
            targets: Targets {
                mask: Tensor::stack(&masks)?,
                melanoma: Tensor::from_vec(&[n], samples.iter().map(|s| f64::from(s.label_melanoma)).collect())?,
                sk: Tensor::from_vec(&[n], samples.iter().map(|s| f64::from(s.label_sk)).collect())?,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Position and hyper-parameters of one optimization step.
#[derive(Clone, Copy, Debug)]
pub struct StepContext {
    pub epoch: usize,
    pub step: usize,
    pub learning_rate: f64,
    pub pos_weight: PosWeights,
}

/// Indices of parameters that only feed task terms whose weight is zero.
pub fn dead_parameters(cfg: &ModelConfig) -> Vec<usize> {
    let w = &cfg.loss_weights;
    let mut prefixes: Vec<&str> = Vec::new();
    if w.seg == 0.0 && !cfg.seg_feeds_heads {
        prefixes.extend(["decoder.", "seg_head."]);
    }
    if w.melanoma == 0.0 {
        prefixes.push("melanoma_head.");
    }
    if w.sk == 0.0 {
        prefixes.push("sk_head.");
    }
    cfg.parameter_specs()
        .iter()
        .enumerate()
        .filter(|(_, s)| prefixes.iter().any(|p| s.name.starts_with(p)))
        .map(|(i, _)| i)
        .collect()
}

/// Forward, joint loss, backward and one optimizer update. Returns the batch loss.
///
/// Each step records a fresh graph, so gradients start from zero. When a
/// loss weight is zero, parameters serving only that task are checked to have
/// received exactly zero gradient.
pub fn train_step(model: &mut MultiTaskModel, batch: &Batch, opt: &mut OptState, ctx: &StepContext) -> Result<f64> {
    let cfg = model.config().clone();
    let mut g = Graph::new();
    let params = model.bind(&mut g);
    let x = g.constant(batch.images.clone());
    let out = model.forward_heads(&mut g, &params, x, Heads::for_weights(&cfg.loss_weights))?;
    let loss = joint_loss_partial(&mut g, &out, &batch.targets, &cfg.loss_weights, &ctx.pos_weight)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Divergence { epoch: ctx.epoch, step: ctx.step, loss: value });
    }
    g.backward(loss)?;
    let grads: Vec<Tensor> = params.nodes.iter().map(|&n| g.grad_or_zeros(n)).collect();
    for i in dead_parameters(&cfg) {
        if grads[i].data().iter().any(|&v| v != 0.0) {
            return Err(Error::Invariant(format!(
                "parameter {} received gradient from a zero-weight task",
                model.parameter_names()[i]
            )));
        }
    }
    opt.update(model.tensors_mut(), &grads, ctx.learning_rate);
    Ok(value)
}

/// Normalizes every image once; augmentation then permutes normalized pixels,
/// which commutes with per-channel normalization.
fn prepare(samples: &[Sample]) -> Result<Vec<Sample>> {
    samples
        .par_iter()
        .map(|s| Ok(Sample { image: data::normalize(&s.image)?, ..s.clone() }))
        .collect()
}

/// Predictions for every sample of `ds`, in order.
pub fn predict_dataset(model: &MultiTaskModel, ds: &Dataset, batch_size: usize) -> Result<Vec<SamplePrediction>> {
    let prepared = prepare(ds.samples())?;
    let chunks: Vec<&[Sample]> = prepared.chunks(batch_size.max(1)).collect();
    let per_chunk = chunks
        .par_iter()
        .map(|chunk| {
            let images: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
            let out = model.infer(&Tensor::stack(&images)?)?;
            let masks = binarize(&out.seg_prob);
            chunk
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    Ok(SamplePrediction {
                        id: s.id.clone(),
                        mask: masks.index_first(i)?,
                        p_melanoma: out.p_melanoma.data()[i],
                        p_sk: out.p_sk.data()[i],
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_chunk.into_iter().flatten().collect())
}

pub fn evaluate_model(model: &MultiTaskModel, ds: &Dataset, batch_size: usize) -> Result<EvalReport> {
    metrics::evaluate(&predict_dataset(model, ds, batch_size)?, ds)
}

fn mean_loss(model: &MultiTaskModel, samples: &[Sample], batch_size: usize, pos: &PosWeights) -> Result<f64> {
    let cfg = model.config();
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = Batch::from_prepared(&refs)?;
        let mut g = Graph::new();
        let params = model.bind_frozen(&mut g);
        let x = g.constant(batch.images.clone());
        let out = model.forward_heads(&mut g, &params, x, Heads::for_weights(&cfg.loss_weights))?;
        let loss = joint_loss_partial(&mut g, &out, &batch.targets, &cfg.loss_weights, pos)?;
        total += g.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trained parameters plus the per-epoch mean training loss.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: MultiTaskModel,
    pub loss_curve: Vec<f64>,
}

/// Trains a freshly initialized model on `train`.
///
/// `stream` separates the random streams of independent runs (the fold
/// index in cross-validation). Samples are reshuffled every epoch; with
/// augmentation each sample draws its transform from a stream keyed by
/// (seed, stream, epoch, sample position in `train`). `val` is only used
/// for early stopping.
pub fn fit(model_cfg: &ModelConfig, cfg: &TrainConfig, train: &Dataset, val: Option<&Dataset>, stream: u64) -> Result<FitOutcome> {
    cfg.validate()?;
    let model_cfg = cfg.effective_model(model_cfg);
    model_cfg.validate()?;
    if train.is_empty() || cfg.batch_size > train.len() {
        return Err(Error::Config(format!("batch size {} exceeds training set size {}", cfg.batch_size, train.len())));
    }
    let run_seed = mix(cfg.seed, stream);
    let mut model = MultiTaskModel::build(&model_cfg, mix(run_seed, TAG_INIT))?;
    let mut opt = OptState::new(cfg.optimizer, model.tensors());
    let prepared = prepare(train.samples())?;
    let val_prepared = match (val, cfg.early_stopping_patience) {
        (Some(v), Some(_)) => Some(prepare(v.samples())?),
        _ => None,
    };
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    for epoch in 0..cfg.epochs {
        RngState::for_stream(mix(run_seed, TAG_SHUFFLE), epoch as u64).shuffle(&mut order);
        let lr = cfg.lr_at(epoch);
        let aug_seed = mix(mix(run_seed, TAG_AUGMENT), epoch as u64);
        let mut total = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<Sample> = if cfg.augment_enabled {
                idx.iter()
                    .map(|&i| data::augment(&prepared[i], &mut RngState::for_stream(aug_seed, i as u64)))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let refs: Vec<&Sample> =
                if cfg.augment_enabled { augmented.iter().collect() } else { idx.iter().map(|&i| &prepared[i]).collect() };
            let batch = Batch::from_prepared(&refs)?;
            let ctx = StepContext { epoch, step, learning_rate: lr, pos_weight: cfg.pos_weight };
            total += train_step(&mut model, &batch, &mut opt, &ctx)? * idx.len() as f64;
        }
        curve.push(total / prepared.len() as f64);
        if let (Some(vs), Some(patience)) = (&val_prepared, cfg.early_stopping_patience) {
            let vl = mean_loss(&model, vs, cfg.batch_size, &cfg.pos_weight)?;
            if vl < best.0 {
                best = (vl, model.clone(), epoch);
            } else if epoch - best.2 >= patience {
                model = best.1;
                break;
            }
        }
    }
    Ok(FitOutcome { model, loss_curve: curve })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub val_report: EvalReport,
    pub train_loss_curve: Vec<f64>,
    pub checkpoint_path: Option<PathBuf>,
    /// Ids of the training and validation samples.
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    #[serde(skip)]
    pub model: Option<MultiTaskModel>,
}

fn audit_disjoint(fold: usize, train: &Dataset, val: &Dataset) -> Result<()> {
    let train_ids: HashSet<&str> = train.samples().iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = val.samples().iter().find(|s| train_ids.contains(s.id.as_str())) {
        return Err(Error::Invariant(format!("fold {fold}: validation sample {} is also in training", s.id)));
    }
    Ok(())
}

/// Trains on every fold but `fold` and evaluates on `fold`, both in id order.
pub fn train_fold(ds: &Dataset, fold: usize, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<FoldResult> {
    let ctx = |e: Error| Error::Fold { fold, source: Box::new(e) };
    let (mut train_idx, mut val_idx) = ds.split(fold).map_err(ctx)?;
    // Id order makes the run independent of the dataset's list order.
    let by_id = |a: &usize, b: &usize| ds.samples()[*a].id.cmp(&ds.samples()[*b].id);
    train_idx.sort_by(by_id);
    val_idx.sort_by(by_id);
    let (train, val) = (ds.subset(&train_idx), ds.subset(&val_idx));
    audit_disjoint(fold, &train, &val).map_err(ctx)?;
    let outcome = fit(model_cfg, cfg, &train, Some(&val), fold as u64).map_err(ctx)?;
    let val_report = evaluate_model(&outcome.model, &val, cfg.batch_size).map_err(ctx)?;
    let mut result = FoldResult {
        fold_index: fold,
        val_report,
        train_loss_curve: outcome.loss_curve,
        checkpoint_path: None,
        train_ids: train.samples().iter().map(|s| s.id.clone()).collect(),
        val_ids: val.samples().iter().map(|s| s.id.clone()).collect(),
        model: None,
    };
    if let Some(dir) = &cfg.checkpoint_dir {
        let path = dir.join(format!("fold{fold}.lmtk"));
        outcome.model.save(&path).map_err(ctx)?;
        result.checkpoint_path = Some(path);
        let json = dir.join(format!("fold{fold}.json"));
        let text = serde_json::to_string_pretty(&result).map_err(|e| ctx(e.into()))?;
        fs::write(&json, text).map_err(|e| ctx(Error::io(&json, e)))?;
    }
    result.model = Some(outcome.model);
    Ok(result)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub aggregate: EvalReport,
}

/// Runs the given held-out folds in parallel; the result is independent of scheduling.
pub fn cross_validate_folds(ds: &Dataset, folds: &[usize], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<CvResult> {
    if folds.is_empty() {
        return Err(Error::Config("no folds selected".into()));
    }
    let outcomes: Vec<Result<FoldResult>> = folds.par_iter().map(|&f| train_fold(ds, f, model_cfg, cfg)).collect();
    let mut results = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(Error::FoldsFailed(failures));
    }
    let reports: Vec<EvalReport> = results.iter().map(|r| r.val_report.clone()).collect();
    let aggregate = metrics::aggregate(&reports)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        let path = dir.join("aggregate.json");
        fs::write(&path, serde_json::to_string_pretty(&aggregate)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(CvResult { folds: results, aggregate })
}

/// Every fold present in the dataset's assignment.
pub fn cross_validate(ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<CvResult> {
    cross_validate_folds(ds, &all_folds(ds)?, model_cfg, cfg)
}

fn all_folds(ds: &Dataset) -> Result<Vec<usize>> {
    let assignment = ds.folds().ok_or_else(|| Error::Stratification("no fold assignment".into()))?;
    let mut folds: Vec<usize> = assignment.to_vec();
    folds.sort_unstable();
    folds.dedup();
    Ok(folds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MultiTask,
    SegOnly,
    ClsOnly,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MultiTask, Method::SegOnly, Method::ClsOnly];

    pub fn weights(self) -> LossWeights {
        match self {
            Method::MultiTask => LossWeights::MULTI_TASK,
            Method::SegOnly => LossWeights::SEG_ONLY,
            Method::ClsOnly => LossWeights::CLS_ONLY,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::MultiTask => "multi-task",
            Method::SegOnly => "seg-only",
            Method::ClsOnly => "cls-only",
        }
    }
}

/// One method's aggregate; metrics of tasks the method does not train are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: Method,
    pub loss_weights: LossWeights,
    pub mean_jaccard: Option<f64>,
    pub auc_melanoma: Option<f64>,
    pub auc_sk: Option<f64>,
    pub mean_auc: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub folds: Vec<usize>,
    pub fold_assignment: Vec<usize>,
    pub rows: Vec<AblationRow>,
    #[serde(skip)]
    pub runs: Vec<CvResult>,
}

impl AblationTable {
    pub fn row(&self, m: Method) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == m)
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "| {:<10} | {:>7} | {:>7} | {:>7} | {:>8} |", "method", "Jaccard", "AUC mel", "AUC sk", "mean AUC")?;
        writeln!(f, "|{:-<12}|{:->9}|{:->9}|{:->9}|{:->10}|", "", "", "", "", "")?;
        for r in &self.rows {
            writeln!(
                f,
                "| {:<10} | {:>7} | {:>7} | {:>7} | {:>8} |",
                r.method.label(),
                cell(r.mean_jaccard),
                cell(r.auc_melanoma),
                cell(r.auc_sk),
                cell(r.mean_auc)
            )?;
        }
        Ok(())
    }
}

/// Multi-task, segmentation-only and classification-only runs over the same
/// folds with the same seeds. Checkpoints of each method go to a
/// subdirectory named after it.
pub fn run_ablation(ds: &Dataset, folds: &[usize], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<AblationTable> {
    let assignment = ds.folds().ok_or_else(|| Error::Stratification("no fold assignment".into()))?.to_vec();
    let folds = if folds.is_empty() { all_folds(ds)? } else { folds.to_vec() };
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for m in Method::ALL {
        let mut run_cfg = cfg.clone();
        run_cfg.loss_weights = Some(m.weights());
        run_cfg.checkpoint_dir = cfg.checkpoint_dir.as_ref().map(|d| d.join(m.label()));
        if let Some(d) = &run_cfg.checkpoint_dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let cv = cross_validate_folds(ds, &folds, model_cfg, &run_cfg)?;
        let a = &cv.aggregate;
        let (seg, cls) = (m != Method::ClsOnly, m != Method::SegOnly);
        rows.push(AblationRow {
            method: m,
            loss_weights: m.weights(),
            mean_jaccard: seg.then_some(a.mean_jaccard),
            auc_melanoma: if cls { a.auc_melanoma } else { None },
            auc_sk: if cls { a.auc_sk } else { None },
            mean_auc: if cls { a.mean_auc } else { None },
        });
        runs.push(cv);
    }
    let table = AblationTable { folds, fold_assignment: assignment, rows, runs };
    if let Some(dir) = &cfg.checkpoint_dir {
        let path = dir.join("ablation.json");
        fs::write(&path, serde_json::to_string_pretty(&table)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_closed_form() {
        let mut p = vec![Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap()];
        let g = vec![Tensor::from_vec(&[2], vec![0.5, 4.0]).unwrap()];
        OptState::Sgd.update(&mut p, &g, 0.1);
        assert_eq!(p[0].data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 4.0]);
    }

    #[test]
    fn zero_learning_rate_is_null_update() {
        let orig = vec![Tensor::from_vec(&[3], vec![0.3, -0.0, 7.0]).unwrap()];
        let g = vec![Tensor::from_vec(&[3], vec![1.0, 2.0, -3.0]).unwrap()];
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut p = orig.clone();
            let mut opt = OptState::new(kind, &p);
            opt.update(&mut p, &g, 0.0);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p[0]), bits(&orig[0]));
        }
    }

    #[test]
    fn adam_step_approaches_lr_under_constant_gradient() {
        let mut p = vec![Tensor::from_vec(&[1], vec![0.0]).unwrap()];
        let g = vec![Tensor::from_vec(&[1], vec![0.37]).unwrap()];
        let mut opt = OptState::new(OptimizerKind::Adam, &p);
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..5000 {
            opt.update(&mut p, &g, 1e-2);
            last_step = prev - p[0].data()[0];
            prev = p[0].data()[0];
        }
        assert!((last_step - 1e-2).abs() < 1e-6, "{last_step}");
    }

    #[test]
    fn dead_parameters_by_weights() {
        let base = ModelConfig { input_size: [16, 16], base_channels: 2, stages: 2, ..Default::default() };
        let seg_only = ModelConfig { loss_weights: LossWeights::SEG_ONLY, ..base.clone() };
        let names: Vec<String> = dead_parameters(&seg_only).iter().map(|&i| base.parameter_specs()[i].name.clone()).collect();
        assert_eq!(names, ["melanoma_head.weight", "melanoma_head.bias", "sk_head.weight", "sk_head.bias"]);
        let cls_only = ModelConfig { loss_weights: LossWeights::CLS_ONLY, ..base.clone() };
        assert!(dead_parameters(&cls_only).iter().all(|&i| {
            let n = &base.parameter_specs()[i].name;
            n.starts_with("decoder.") || n.starts_with("seg_head.")
        }));
        assert!(dead_parameters(&base).is_empty());
        let coupled = ModelConfig { seg_feeds_heads: true, ..cls_only };
        assert!(dead_parameters(&coupled).is_empty());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig { epochs: 4, lr_schedule: LrSchedule::Cosine, ..Default::default() };
        assert_eq!(cfg.lr_at(0), cfg.learning_rate);
        assert!((cfg.lr_at(2) - 0.5 * cfg.learning_rate).abs() < 1e-18);
    }
}
