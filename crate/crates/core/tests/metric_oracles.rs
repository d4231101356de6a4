use proptest::prelude::*;
use skinmtl::data::{Dataset, Sample};
use skinmtl::metrics::{aggregate, auc, auc_counts, evaluate, jaccard, SamplePrediction};
use skinmtl::{RngState, Tensor};

/// Twice the Mann-Whitney statistic by enumerating every positive/negative pair.
fn brute_twice_wins(scores: &[f64], labels: &[u8]) -> (u64, u64, u64) {
    let (mut twice, mut pos, mut neg) = (0, 0, 0);
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
        if l != 1 {
            continue;
        }
        for (j, &m) in labels.iter().enumerate() {
            if m == 0 {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    (twice, pos, neg)
}

fn mask_tensor(bits: &[bool], h: usize, w: usize) -> Tensor {
    Tensor::from_vec(&[1, h, w], bits.iter().map(|&b| f64::from(u8::from(b))).collect()).unwrap()
}

#[test]
fn auc_equals_pair_count_on_100_instances_with_ties() {
    let mut rng = RngState::new(2024);
    for _ in 0..100 {
        let n = 2 + rng.below(49);
        // Scores on a coarse grid so ties are frequent.
        let levels = 1 + rng.below(8);
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let (twice, pos, neg) = brute_twice_wins(&scores, &labels);
        let c = auc_counts(&scores, &labels).unwrap();
        assert_eq!((c.twice_wins, c.positives, c.negatives), (twice, pos, neg));
        assert_eq!(auc(&scores, &labels).unwrap(), twice as f64 / (2 * pos * neg) as f64);
    }
}

#[test]
fn jaccard_equals_pixel_count_on_100_mask_pairs() {
    let mut rng = RngState::new(99);
    for _ in 0..100 {
        let density_a = rng.uniform();
        let density_b = rng.uniform();
        let a: Vec<bool> = (0..256).map(|_| rng.uniform() < density_a).collect();
        let b: Vec<bool> = (0..256).map(|_| rng.uniform() < density_b).collect();
        let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
        let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count();
        let expected = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        assert_eq!(jaccard(&mask_tensor(&a, 16, 16), &mask_tensor(&b, 16, 16)).unwrap(), expected);
    }
}

#[test]
fn worked_examples() {
    assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    let mut a = vec![false; 16];
    let mut b = vec![false; 16];
    for i in [0, 1, 2, 3] {
        a[i] = true;
    }
    for i in [2, 3, 4, 5] {
        b[i] = true;
    }
    let j = jaccard(&mask_tensor(&a, 4, 4), &mask_tensor(&b, 4, 4)).unwrap();
    assert_eq!(j, 2.0 / 6.0);
}

fn oracle_dataset(n: usize) -> (Dataset, Vec<SamplePrediction>) {
    let mut samples = Vec::new();
    let mut preds = Vec::new();
    for i in 0..n {
        let (mel, sk) = [(0, 0), (1, 0), (0, 1)][i % 3];
        let mask = Tensor::from_vec(&[1, 4, 4], (0..16).map(|p| f64::from(u8::from((p + i) % 3 == 0))).collect()).unwrap();
        samples.push(Sample {
            id: format!("s{i:03}"),
            image: Tensor::zeros(&[3, 4, 4]).unwrap(),
            mask: Some(mask.clone()),
            label_melanoma: mel,
            label_sk: sk,
        });
        preds.push(SamplePrediction { id: format!("s{i:03}"), mask, p_melanoma: f64::from(mel), p_sk: f64::from(sk) });
    }
    (Dataset::new(samples).unwrap(), preds)
}

#[test]
fn ground_truth_predictions_score_perfectly() {
    let (ds, preds) = oracle_dataset(9);
    let r = evaluate(&preds, &ds).unwrap();
    assert_eq!(r.mean_jaccard, 1.0);
    assert_eq!((r.auc_melanoma, r.auc_sk, r.mean_auc), (Some(1.0), Some(1.0), Some(1.0)));
    assert_eq!(r.per_sample_jaccard.len(), r.n_samples);
}

#[test]
fn single_class_task_reports_absent_auc() {
    let (ds, preds) = oracle_dataset(9);
    let nevi: Vec<usize> = (0..9).filter(|i| i % 3 != 2).collect();
    let r = evaluate(&preds, &ds.subset(&nevi)).unwrap();
    assert_eq!(r.auc_sk, None);
    assert_eq!(r.mean_auc, None);
    assert_eq!(r.auc_melanoma, Some(1.0));
}

#[test]
fn aggregate_is_fold_mean_and_concatenates_samples() {
    let (ds, preds) = oracle_dataset(12);
    let a = evaluate(&preds, &ds.subset(&[0, 1, 2, 3, 4, 5])).unwrap();
    let mut worse = preds.clone();
    worse[7].mask = Tensor::zeros(&[1, 4, 4]).unwrap();
    worse[8].p_sk = 0.0;
    let b = evaluate(&worse, &ds.subset(&[6, 7, 8, 9, 10, 11])).unwrap();
    let agg = aggregate(&[a.clone(), b.clone()]).unwrap();
    assert!((agg.mean_jaccard - (a.mean_jaccard + b.mean_jaccard) / 2.0).abs() <= 1e-12);
    assert_eq!(agg.n_samples, 12);
    assert_eq!(agg.per_sample_jaccard.len(), 12);
    let m = agg.mean_auc.unwrap();
    assert!((m - (agg.auc_melanoma.unwrap() + agg.auc_sk.unwrap()) / 2.0).abs() <= 1e-15);
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.25, 0.5, 0.75, 2.0, 9.0]), n),
            prop::collection::vec(0u8..=1, n),
        )
    })
    .prop_filter("both classes present", |(_, l)| l.contains(&0) && l.contains(&1))
}

proptest! {
    #[test]
    fn auc_invariant_under_strictly_monotone_maps((scores, labels) in scored_labels()) {
        let base = auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&mapped, &labels).unwrap(), base);
    }

    #[test]
    fn auc_complements_under_label_flip((scores, labels) in scored_labels()) {
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let a = auc_counts(&scores, &labels).unwrap();
        let b = auc_counts(&scores, &flipped).unwrap();
        prop_assert_eq!(a.twice_wins + b.twice_wins, 2 * a.pairs());
    }

    #[test]
    fn jaccard_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 64), b in prop::collection::vec(any::<bool>(), 64)) {
        let (ta, tb) = (mask_tensor(&a, 8, 8), mask_tensor(&b, 8, 8));
        let j = jaccard(&ta, &tb).unwrap();
        prop_assert_eq!(j, jaccard(&tb, &ta).unwrap());
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(jaccard(&ta, &ta).unwrap(), 1.0);
    }
}
