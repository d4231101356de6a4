//! End-to-end acceptance criteria, one PASS/FAIL line each.
//!
//! The training criteria run the real default model and take tens of minutes
//! on one CPU core.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use skinmtl::data::netpbm::{decode_netpbm, encode_netpbm, encode_png};
use skinmtl::data::transform::{flip_horizontal, rot90_ccw};
use skinmtl::data::{load_dataset, make_folds, normalize, Dataset, Diagnosis, Dihedral, Sample};
use skinmtl::gradcheck::{GradCheck, DEFAULT_STEP, DEFAULT_TOLERANCE};
use skinmtl::inference::Predictor;
use skinmtl::metrics::{auc, auc_counts, evaluate, jaccard, write_submission, SamplePrediction};
use skinmtl::model::{ModelConfig, MultiTaskModel};
use skinmtl::synth::{generate, SynthConfig};
use skinmtl::train::{evaluate_model, fit, run_ablation, train_fold, AblationTable, FoldResult, Method, TrainConfig};
use skinmtl::{RngState, Tensor};

type Outcome = Result<String, String>;

const GENERALIZATION_EPOCHS: usize = 20;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let gc = GradCheck::standard(0);
    check(gc.step == 1e-5 && gc.tolerance == 1e-4 && gc.instances >= 10, || "suite settings differ from 1e-5 / 1e-4 / 10".into())?;
    check(DEFAULT_STEP == gc.step && DEFAULT_TOLERANCE == gc.tolerance, || "defaults disagree".into())?;
    let report = gc.run().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let failed: Vec<String> = report.failures().map(|o| format!("{} ({:.2e})", o.op, o.max_rel_error)).collect();
    check(failed.is_empty(), || format!("failing ops: {}", failed.join(", ")))?;
    check(report.ops.iter().all(|o| o.instances >= 10), || "an op ran fewer than 10 instances".into())?;
    check(elapsed < Duration::from_secs(60), || format!("took {}", secs(elapsed)))?;
    let worst = report.ops.iter().map(|o| o.max_rel_error).fold(0.0, f64::max);
    Ok(format!("{} ops, worst relative error {worst:.2e}, {}", report.ops.len(), secs(elapsed)))
}

fn metric_oracles() -> Outcome {
    let mut rng = RngState::new(17);
    for case in 0..100 {
        let n = 2 + rng.below(49);
        let levels = 1 + rng.below(6);
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let (mut twice, mut pairs) = (0u64, 0u64);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1;
                    twice += if scores[i] > scores[j] { 2 } else if scores[i] == scores[j] { 1 } else { 0 };
                }
            }
        }
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = twice as f64 / (2 * pairs) as f64;
        check(got == want, || format!("auc case {case}: {got} vs {want}"))?;
        check(auc_counts(&scores, &labels).unwrap().twice_wins == twice, || format!("auc case {case}: pair count"))?;
    }
    for case in 0..100 {
        let a: Vec<f64> = (0..256).map(|_| f64::from(u8::from(rng.uniform() < 0.4))).collect();
        let b: Vec<f64> = (0..256).map(|_| f64::from(u8::from(rng.uniform() < 0.4))).collect();
        let inter = a.iter().zip(&b).filter(|(x, y)| **x == 1.0 && **y == 1.0).count();
        let union = a.iter().zip(&b).filter(|(x, y)| **x == 1.0 || **y == 1.0).count();
        let want = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        let ta = Tensor::from_vec(&[1, 16, 16], a).unwrap();
        let tb = Tensor::from_vec(&[1, 16, 16], b).unwrap();
        let got = jaccard(&ta, &tb).map_err(|e| e.to_string())?;
        check(got == want, || format!("jaccard case {case}: {got} vs {want}"))?;
    }
    let worked = auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).map_err(|e| e.to_string())?;
    check(worked == 0.75, || format!("worked example gave {worked}"))?;
    Ok("100 AUC and 100 Jaccard instances exact, worked example 0.75".into())
}

/// Scores where positive `k` is outranked by exactly `losses[k]` negatives.
fn scores_with_losses(labels: &[u8], losses: &[usize]) -> Vec<f64> {
    let negatives = labels.iter().filter(|&&l| l == 0).count();
    let mut scores = vec![0.0; labels.len()];
    let (mut neg_rank, mut pos_idx) = (0, 0);
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            scores[i] = neg_rank as f64;
            neg_rank += 1;
        } else {
            scores[i] = (negatives - losses[pos_idx]) as f64 - 0.5;
            pos_idx += 1;
        }
    }
    scores
}

fn mean_auc_arithmetic() -> Outcome {
    // 5 melanoma, 10 seborrheic keratosis, 20 nevus.
    let classes: Vec<Diagnosis> = [(Diagnosis::Melanoma, 5), (Diagnosis::SeborrheicKeratosis, 10), (Diagnosis::Nevus, 20)]
        .iter()
        .flat_map(|&(d, n)| std::iter::repeat(d).take(n))
        .collect();
    let mel: Vec<u8> = classes.iter().map(|d| d.labels().0).collect();
    let sk: Vec<u8> = classes.iter().map(|d| d.labels().1).collect();
    // 18 of 150 melanoma pairs lost gives 0.880; 7 of 250 keratosis pairs lost gives 0.972.
    let p_mel = scores_with_losses(&mel, &[0, 0, 0, 0, 18]);
    let p_sk = scores_with_losses(&sk, &[0, 0, 0, 0, 0, 0, 0, 0, 0, 7]);
    let mask = Tensor::new(&[1, 2, 2], 1.0).unwrap();
    let mut samples = Vec::new();
    let mut preds = Vec::new();
    for (i, d) in classes.iter().enumerate() {
        let (m, s) = d.labels();
        let id = format!("x{i:02}");
        samples.push(Sample { id: id.clone(), image: Tensor::zeros(&[3, 2, 2]).unwrap(), mask: Some(mask.clone()), label_melanoma: m, label_sk: s });
        preds.push(SamplePrediction { id, mask: mask.clone(), p_melanoma: p_mel[i], p_sk: p_sk[i] });
    }
    let ds = Dataset::new(samples).map_err(|e| e.to_string())?;
    let r = evaluate(&preds, &ds).map_err(|e| e.to_string())?;
    check(r.auc_melanoma == Some(0.880), || format!("melanoma AUC {:?}", r.auc_melanoma))?;
    check(r.auc_sk == Some(0.972), || format!("keratosis AUC {:?}", r.auc_sk))?;
    check(r.mean_auc == Some(0.926), || format!("mean AUC {:?}", r.mean_auc))?;
    Ok(format!("AUCs {:?} / {:?}, mean {:?}", r.auc_melanoma.unwrap(), r.auc_sk.unwrap(), r.mean_auc.unwrap()))
}

struct OverfitRun {
    curve: Vec<f64>,
    jaccard: f64,
    auc_melanoma: Option<f64>,
    auc_sk: Option<f64>,
    model: MultiTaskModel,
}

fn overfit_run() -> Result<(OverfitRun, Duration), String> {
    let start = Instant::now();
    let ds = generate(&SynthConfig { count: 8, seed: 1, ..Default::default() }).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs: 200, augment_enabled: false, ..Default::default() };
    let out = fit(&ModelConfig::default(), &cfg, &ds, None, 0).map_err(|e| e.to_string())?;
    let report = evaluate_model(&out.model, &ds, cfg.batch_size).map_err(|e| e.to_string())?;
    let run = OverfitRun {
        curve: out.loss_curve,
        jaccard: report.mean_jaccard,
        auc_melanoma: report.auc_melanoma,
        auc_sk: report.auc_sk,
        model: out.model,
    };
    Ok((run, start.elapsed()))
}

fn overfit(run: &OverfitRun, elapsed: Duration) -> Outcome {
    check(run.jaccard >= 0.95, || format!("training Jaccard {}", run.jaccard))?;
    check(run.auc_melanoma == Some(1.0) && run.auc_sk == Some(1.0), || format!("training AUCs {:?} / {:?}", run.auc_melanoma, run.auc_sk))?;
    check(elapsed <= Duration::from_secs(300), || format!("took {}", secs(elapsed)))?;
    Ok(format!("Jaccard {:.5}, AUCs 1.0 / 1.0, final loss {:.4}, {}", run.jaccard, run.curve.last().unwrap(), secs(elapsed)))
}

fn generalization_data() -> Result<Dataset, String> {
    generate(&SynthConfig { count: 250, seed: 2, ..Default::default() })
        .and_then(|d| d.stratified(5, 2))
        .map_err(|e| e.to_string())
}

fn generalization_config() -> TrainConfig {
    TrainConfig { epochs: GENERALIZATION_EPOCHS, ..Default::default() }
}

fn generalization(ds: &Dataset) -> Result<(FoldResult, Duration), String> {
    let start = Instant::now();
    let r = train_fold(ds, 0, &ModelConfig::default(), &generalization_config()).map_err(|e| e.to_string())?;
    Ok((r, start.elapsed()))
}

fn generalization_verdict(r: &FoldResult, elapsed: Duration) -> Outcome {
    check(r.train_ids.len() == 200 && r.val_ids.len() == 50, || format!("split {} / {}", r.train_ids.len(), r.val_ids.len()))?;
    let v = &r.val_report;
    check(v.mean_jaccard >= 0.80, || format!("validation Jaccard {}", v.mean_jaccard))?;
    let m = v.mean_auc.ok_or("validation mean AUC undefined")?;
    check(m >= 0.90, || format!("validation mean AUC {m}"))?;
    check(elapsed <= Duration::from_secs(1200), || format!("took {}", secs(elapsed)))?;
    Ok(format!(
        "{} epochs, validation Jaccard {:.4}, AUCs {:.4} / {:.4}, mean {:.4}, {}",
        GENERALIZATION_EPOCHS,
        v.mean_jaccard,
        v.auc_melanoma.unwrap_or(f64::NAN),
        v.auc_sk.unwrap_or(f64::NAN),
        m,
        secs(elapsed)
    ))
}

fn ablation(ds: &Dataset) -> Result<AblationTable, String> {
    run_ablation(ds, &[0], &ModelConfig::default(), &generalization_config()).map_err(|e| e.to_string())
}

fn ablation_verdict(t: &AblationTable) -> Outcome {
    let methods: Vec<Method> = t.rows.iter().map(|r| r.method).collect();
    check(methods == Method::ALL, || format!("rows {methods:?}"))?;
    let row = |m| t.row(m).ok_or(format!("missing {m:?}"));
    let (multi, seg, cls) = (row(Method::MultiTask)?, row(Method::SegOnly)?, row(Method::ClsOnly)?);
    let mj = multi.mean_jaccard.ok_or("multi-task Jaccard absent")?;
    let sj = seg.mean_jaccard.ok_or("seg-only Jaccard absent")?;
    let ma = multi.mean_auc.ok_or("multi-task AUC absent")?;
    let ca = cls.mean_auc.ok_or("cls-only AUC absent")?;
    check(seg.mean_auc.is_none() && cls.mean_jaccard.is_none(), || "untrained metrics should be absent".into())?;
    check((mj - sj).abs() <= 0.05, || format!("Jaccard multi {mj:.4} vs seg-only {sj:.4}"))?;
    check((ma - ca).abs() <= 0.05, || format!("mean AUC multi {ma:.4} vs cls-only {ca:.4}"))?;
    Ok(format!("Jaccard {mj:.4} vs {sj:.4}, mean AUC {ma:.4} vs {ca:.4}\n{t}"))
}

fn same_fold(a: &FoldResult, b: &FoldResult) -> bool {
    a.val_report == b.val_report
        && a.train_loss_curve.iter().map(|v| v.to_bits()).eq(b.train_loss_curve.iter().map(|v| v.to_bits()))
        && a.model == b.model
}

fn determinism(first: &OverfitRun, c5: &FoldResult, table: &AblationTable, ds: &Dataset) -> Outcome {
    let (again, _) = overfit_run()?;
    check(
        again.curve.iter().map(|v| v.to_bits()).eq(first.curve.iter().map(|v| v.to_bits())) && again.model == first.model,
        || "overfit rerun differs".into(),
    )?;
    check(
        again.jaccard.to_bits() == first.jaccard.to_bits() && again.auc_melanoma == first.auc_melanoma && again.auc_sk == first.auc_sk,
        || "overfit metrics differ".into(),
    )?;
    let multi_fold = &table.runs[0].folds[0];
    check(same_fold(c5, multi_fold), || "generalization rerun (ablation multi-task) differs".into())?;
    let rerun = ablation(ds)?;
    check(rerun.rows == table.rows, || "ablation rows differ".into())?;
    for (a, b) in rerun.runs.iter().zip(&table.runs) {
        check(a.folds.iter().zip(&b.folds).all(|(x, y)| same_fold(x, y)), || "ablation fold results differ".into())?;
    }
    Ok("overfit, generalization and ablation reruns bit-identical".into())
}

fn isic_mode() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    fs::create_dir_all(root.join("images")).map_err(|e| e.to_string())?;
    fs::create_dir_all(root.join("masks")).map_err(|e| e.to_string())?;
    let synth = generate(&SynthConfig { count: 3, size: [120, 150], seed: 11, class_mix: [0.34, 0.33, 0.33], ..Default::default() })
        .map_err(|e| e.to_string())?;
    let mut csv = String::from("image_id,melanoma,seborrheic_keratosis\n");
    for (i, s) in synth.samples().iter().enumerate() {
        let id = format!("ISIC_{:07}", 1 + i);
        fs::write(root.join("images").join(format!("{id}.png")), encode_png(&s.image).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let mask = s.mask.as_ref().unwrap().map(|v| v * 255.0);
        fs::write(root.join("masks").join(format!("{id}_segmentation.png")), encode_png(&mask).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        csv.push_str(&format!("{id},{:.1},{:.1}\n", f64::from(s.label_melanoma), f64::from(s.label_sk)));
    }
    fs::write(root.join("labels.csv"), csv).map_err(|e| e.to_string())?;

    let ds = load_dataset(root).map_err(|e| e.to_string())?;
    let cfg = ModelConfig::isic();
    check(cfg.input_size == [192, 192], || "ISIC preset input size".into())?;
    let model = MultiTaskModel::build(&cfg, 0).map_err(|e| e.to_string())?;
    let predictor = Predictor::new(vec![model]).map_err(|e| e.to_string())?;
    let preds = predictor.predict_dataset(&ds).map_err(|e| e.to_string())?;
    let out = root.join("out");
    write_submission(&preds, out.join("submission.csv"), Some(&out.join("masks"))).map_err(|e| e.to_string())?;
    let rows = fs::read_to_string(out.join("submission.csv")).map_err(|e| e.to_string())?.lines().count();
    check(rows == 4, || format!("{rows} submission lines"))?;
    check(preds.iter().all(|p| p.mask.shape() == [1, 120, 150]), || "masks not at original size".into())?;
    let report = evaluate(&preds, &ds).map_err(|e| e.to_string())?;
    let json = serde_json::to_string(&report).map_err(|e| e.to_string())?;
    for field in ["mean_jaccard", "auc_melanoma", "auc_sk", "mean_auc"] {
        check(json.contains(field), || format!("report lacks {field}"))?;
    }
    Ok("ISIC-layout ingestion, 192x192 model, submission and report produced; no numeric target at desk scale".into())
}

fn random_image(rng: &mut RngState, c: usize) -> Tensor {
    let (h, w) = (1 + rng.below(12), 1 + rng.below(12));
    Tensor::from_vec(&[c, h, w], (0..c * h * w).map(|_| rng.below(256) as f64).collect()).unwrap()
}

fn data_invariants() -> Outcome {
    let mut rng = RngState::new(8);
    for _ in 0..200 {
        let c = if rng.below(2) == 0 { 1 } else { 3 };
        let img = random_image(&mut rng, c);
        let back = decode_netpbm(&encode_netpbm(&img).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        check(back == img, || "NetPBM round trip differs".into())?;
        let mut r = img.clone();
        for _ in 0..4 {
            r = rot90_ccw(&r).unwrap();
        }
        check(r == img, || "rot90^4 != id".into())?;
        check(flip_horizontal(&flip_horizontal(&img).unwrap()).unwrap() == img, || "flip^2 != id".into())?;
        let mask = img.map(|v| f64::from(u8::from(v >= 128.0)));
        for t in Dihedral::all() {
            check(t.apply(&mask).unwrap().sum() == mask.sum(), || "mask area changed".into())?;
        }
        if c == 3 {
            let n = normalize(&img).map_err(|e| e.to_string())?;
            let hw = img.len() / 3;
            for ch in 0..3 {
                let src = &img.data()[ch * hw..(ch + 1) * hw];
                let v = &n.data()[ch * hw..(ch + 1) * hw];
                let mean = v.iter().sum::<f64>() / hw as f64;
                let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / hw as f64).sqrt();
                check(mean.abs() <= 1e-9, || format!("channel mean {mean}"))?;
                if src.iter().any(|&x| x != src[0]) {
                    check((std - 1.0).abs() <= 1e-9, || format!("channel std {std}"))?;
                }
            }
        }
    }

    let mut audited = 0;
    while audited < 1000 {
        let k = 2 + rng.below(5);
        let mut samples = Vec::new();
        for d in Diagnosis::ALL {
            let n = if rng.below(5) == 0 { 0 } else { k + rng.below(20) };
            for _ in 0..n {
                let (m, s) = d.labels();
                let id = format!("{:?}-{}", d, samples.len());
                samples.push(Sample { id, image: Tensor::zeros(&[3, 1, 1]).unwrap(), mask: None, label_melanoma: m, label_sk: s });
            }
        }
        if samples.is_empty() {
            continue;
        }
        rng.shuffle(&mut samples);
        let ds = Dataset::new(samples).map_err(|e| e.to_string())?;
        let folds = make_folds(&ds, k, rng.next_u64()).map_err(|e| e.to_string())?;
        let counts = ds.class_counts().unwrap();
        let mut covered = HashSet::new();
        for f in 0..k {
            for (c, &total) in counts.iter().enumerate() {
                let got = (0..ds.len())
                    .filter(|&i| folds[i] == f && ds.samples()[i].diagnosis().unwrap() as usize == c)
                    .inspect(|&i| {
                        covered.insert(i);
                    })
                    .count();
                check(got == total / k || got == total.div_ceil(k), || format!("class {c} has {got} of {total} in fold {f}"))?;
            }
        }
        check(covered.len() == ds.len() && folds.iter().all(|&f| f < k), || "folds do not partition the dataset".into())?;
        audited += 1;
    }
    Ok("NetPBM, dihedral and normalization checks on 200 images; 1000 fold audits".into())
}

fn run(n: usize, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let (passed, line) = match outcome {
        Ok(detail) => (true, format!("criterion {n}: PASS  {detail}")),
        Err(why) => (false, format!("criterion {n}: FAIL  {why}")),
    };
    // Written past libtest's capture so the verdicts show without --nocapture.
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").and_then(|_| out.flush()).expect("stdout");
    passed
}

#[test]
fn acceptance_criteria() {
    let mut passed = vec![
        run(1, gradient_suite),
        run(2, metric_oracles),
        run(3, mean_auc_arithmetic),
    ];

    let c4 = overfit_run();
    passed.push(run(4, || c4.as_ref().map_err(Clone::clone).and_then(|(r, t)| overfit(r, *t))));

    let ds = generalization_data();
    let c5 = ds.as_ref().map_err(Clone::clone).and_then(generalization);
    passed.push(run(5, || c5.as_ref().map_err(Clone::clone).and_then(|(r, t)| generalization_verdict(r, *t))));

    let c6 = ds.as_ref().map_err(Clone::clone).and_then(ablation);
    passed.push(run(6, || c6.as_ref().map_err(Clone::clone).and_then(ablation_verdict)));

    passed.push(run(7, || match (&c4, &c5, &c6, &ds) {
        (Ok((r4, _)), Ok((r5, _)), Ok(t6), Ok(d)) => determinism(r4, r5, t6, d),
        _ => Err("an earlier training criterion did not run".into()),
    }));
    passed.push(run(8, isic_mode));
    passed.push(run(9, data_invariants));

    let failed: Vec<usize> = passed.iter().enumerate().filter(|(_, &p)| !p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
