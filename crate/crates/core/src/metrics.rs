//! Jaccard index, ROC AUC and evaluation reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{write_mask, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_binary(t: &Tensor, what: &str) -> Result<()> {
    match t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(v) => Err(Error::MetricInput(format!("{what} mask contains non-binary value {v}"))),
        None => Ok(()),
    }
}

/// `|pred ∩ gt| / |pred ∪ gt|`; 1.0 when both masks are empty.
pub fn jaccard(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::MetricInput(format!("mask shapes differ: {:?} vs {:?}", pred.shape(), gt.shape())));
    }
    check_binary(pred, "predicted")?;
    check_binary(gt, "ground-truth")?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p == 1.0, g == 1.0);
        inter += u64::from(p && g);
        union += u64::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mann-Whitney statistic as exact integers: `twice_wins` counts each
/// (positive, negative) pair 2 for a positive win and 1 for a tie.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AucCounts {
    pub twice_wins: u64,
    pub positives: u64,
    pub negatives: u64,
}

impl AucCounts {
    pub fn pairs(&self) -> u64 {
        self.positives * self.negatives
    }

    pub fn value(&self) -> f64 {
        self.twice_wins as f64 / (2 * self.pairs()) as f64
    }
}

pub fn auc_counts(scores: &[f64], labels: &[u8]) -> Result<AucCounts> {
    if scores.len() != labels.len() {
        return Err(Error::MetricInput(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::MetricInput(format!("label {l} is not 0 or 1")));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::MetricInput(format!("non-finite score {s}")));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc(format!("{positives} positive and {negatives} negative labels")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice_wins = 0u64;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        // total_cmp separates -0.0 and 0.0; the metric treats them as tied.
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_wins += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(AucCounts { twice_wins, positives, negatives })
}

/// Probability that a random positive outscores a random negative, ties counting half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    auc_counts(scores, labels).map(|c| c.value())
}

/// `(a + b) / 2` for two AUCs given as exact counts, rounded once.
pub fn mean_auc_exact(a: &AucCounts, b: &AucCounts) -> f64 {
    let (pa, pb) = (2 * u128::from(a.pairs()), 2 * u128::from(b.pairs()));
    let num = u128::from(a.twice_wins) * pb + u128::from(b.twice_wins) * pa;
    let den = 2 * pa * pb;
    let g = gcd(num, den);
    (num / g) as f64 / (den / g) as f64
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePrediction {
    pub id: String,
    /// Binary `[1, h, w]`.
    pub mask: Tensor,
    pub p_melanoma: f64,
    pub p_sk: f64,
}

/// Jaccard and AUC summary. AUC fields are `None` when a task has only one
/// class among the evaluated samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub mean_jaccard: f64,
    pub auc_melanoma: Option<f64>,
    pub auc_sk: Option<f64>,
    pub mean_auc: Option<f64>,
    pub per_sample_jaccard: Vec<f64>,
    pub n_samples: usize,
}

fn optional_auc(scores: &[f64], labels: &[u8]) -> Result<Option<AucCounts>> {
    match auc_counts(scores, labels) {
        Ok(c) => Ok(Some(c)),
        Err(Error::UndefinedAuc(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores predictions against every sample of `ds`, in dataset order.
///
/// `mean_auc` is computed from the exact pair counts of both tasks, so it is
/// the correctly rounded mean of the two exact AUCs.
pub fn evaluate(preds: &[SamplePrediction], ds: &Dataset) -> Result<EvalReport> {
    let by_id: HashMap<&str, &SamplePrediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let n = ds.len();
    if n == 0 {
        return Err(Error::MetricInput("empty dataset".into()));
    }
    let mut per_sample = Vec::with_capacity(n);
    let (mut p_mel, mut p_sk, mut y_mel, mut y_sk) = (vec![], vec![], vec![], vec![]);
    for s in ds.samples() {
        let p = by_id.get(s.id.as_str()).ok_or_else(|| Error::Evaluation { id: s.id.clone(), reason: "no prediction".into() })?;
        let gt = s.mask.as_ref().ok_or_else(|| Error::Evaluation { id: s.id.clone(), reason: "no ground-truth mask".into() })?;
        let j = jaccard(&p.mask, gt).map_err(|e| Error::Evaluation { id: s.id.clone(), reason: e.to_string() })?;
        per_sample.push(j);
        p_mel.push(p.p_melanoma);
        p_sk.push(p.p_sk);
        y_mel.push(s.label_melanoma);
        y_sk.push(s.label_sk);
    }
    let mel = optional_auc(&p_mel, &y_mel)?;
    let sk = optional_auc(&p_sk, &y_sk)?;
    let mean_auc = match (&mel, &sk) {
        (Some(a), Some(b)) => Some(mean_auc_exact(a, b)),
        _ => None,
    };
    Ok(EvalReport {
        mean_jaccard: per_sample.iter().sum::<f64>() / n as f64,
        auc_melanoma: mel.map(|c| c.value()),
        auc_sk: sk.map(|c| c.value()),
        mean_auc,
        per_sample_jaccard: per_sample,
        n_samples: n,
    })
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let all: Option<Vec<f64>> = values.iter().copied().collect();
    all.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Unweighted mean of per-report metrics; per-sample values are concatenated.
/// An AUC is `None` if it is `None` in any report.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(Error::MetricInput("no reports to aggregate".into()));
    }
    let k = reports.len() as f64;
    let pick = |f: fn(&EvalReport) -> Option<f64>| mean_of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        mean_jaccard: reports.iter().map(|r| r.mean_jaccard).sum::<f64>() / k,
        auc_melanoma: pick(|r| r.auc_melanoma),
        auc_sk: pick(|r| r.auc_sk),
        mean_auc: pick(|r| r.mean_auc),
        per_sample_jaccard: reports.iter().flat_map(|r| r.per_sample_jaccard.iter().copied()).collect(),
        n_samples: reports.iter().map(|r| r.n_samples).sum(),
    })
}

/// Submission CSV text: `image_id,melanoma,seborrheic_keratosis`, six decimals, input order.
pub fn format_submission(preds: &[SamplePrediction]) -> String {
    let mut out = String::from("image_id,melanoma,seborrheic_keratosis\n");
    for p in preds {
        writeln!(out, "{},{:.6},{:.6}", p.id, p.p_melanoma, p.p_sk).expect("write to String");
    }
    out
}

/// Writes the submission CSV and, when `mask_dir` is given, one `<id>.pgm` mask per prediction.
pub fn write_submission(preds: &[SamplePrediction], csv_path: impl AsRef<Path>, mask_dir: Option<&Path>) -> Result<()> {
    let csv_path = csv_path.as_ref();
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(csv_path, format_submission(preds)).map_err(|e| Error::io(csv_path, e))?;
    if let Some(dir) = mask_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for p in preds {
            write_mask(dir.join(format!("{}.pgm", p.id)), &p.mask)?;
        }
    }
    Ok(())
}
