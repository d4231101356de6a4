use std::collections::HashSet;

use proptest::prelude::*;
use skinmtl::data::netpbm::{decode_netpbm, encode_netpbm};
use skinmtl::data::{
    load_dataset, make_folds, normalize, save_dataset, Dataset, Diagnosis, Dihedral, Sample,
};
use skinmtl::data::transform::{flip_horizontal, rot90_ccw};
use skinmtl::synth::{generate, SynthConfig};
use skinmtl::{RngState, Tensor};

fn pixels(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0u8..=255, c * h * w)
        .prop_map(move |v| Tensor::from_vec(&[c, h, w], v.into_iter().map(f64::from).collect()).unwrap())
}

fn any_image() -> impl Strategy<Value = Tensor> {
    (prop::sample::select(vec![1usize, 3]), 1usize..9, 1usize..9).prop_flat_map(|(c, h, w)| pixels(c, h, w))
}

proptest! {
    #[test]
    fn netpbm_round_trip_is_bit_exact(img in any_image()) {
        let bytes = encode_netpbm(&img).unwrap();
        prop_assert_eq!(decode_netpbm(&bytes).unwrap(), img);
    }

    #[test]
    fn rotation_has_order_four_and_flip_is_involution(img in any_image()) {
        let mut r = img.clone();
        for _ in 0..4 {
            r = rot90_ccw(&r).unwrap();
        }
        prop_assert_eq!(&r, &img);
        prop_assert_eq!(flip_horizontal(&flip_horizontal(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn dihedral_preserves_mask_area(bits in prop::collection::vec(0u8..=1, 30), idx in 0u8..8) {
        let m = Tensor::from_vec(&[1, 5, 6], bits.into_iter().map(f64::from).collect()).unwrap();
        let t = Dihedral::from_index(idx).apply(&m).unwrap();
        prop_assert_eq!(t.sum(), m.sum());
        prop_assert_eq!(t.len(), m.len());
    }

    #[test]
    fn normalized_channels_have_zero_mean_unit_std(img in (2usize..10, 2usize..10).prop_flat_map(|(h, w)| pixels(3, h, w))) {
        let out = normalize(&img).unwrap();
        let (_, h, w) = img.dims3().unwrap();
        let hw = h * w;
        for c in 0..3 {
            let src = &img.data()[c * hw..(c + 1) * hw];
            let ch = &out.data()[c * hw..(c + 1) * hw];
            let mean = ch.iter().sum::<f64>() / hw as f64;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / hw as f64;
            prop_assert!(mean.abs() <= 1e-9);
            if src.iter().any(|&v| v != src[0]) {
                prop_assert!((var.sqrt() - 1.0).abs() <= 1e-9);
            } else {
                prop_assert!(ch.iter().all(|&v| v == 0.0));
            }
        }
    }
}

/// Rotating the mask of a generated sample keeps its lesion area and labels.
#[test]
fn sample_transform_group_laws() {
    let ds = generate(&SynthConfig { count: 3, size: [12, 20], seed: 5, ..Default::default() }).unwrap();
    for s in ds.samples() {
        let r4 = (0..4).try_fold(s.clone(), |acc, _| acc.transformed(Dihedral::from_index(1))).unwrap();
        assert_eq!(&r4, s);
        let f2 = s.transformed(Dihedral::from_index(4)).unwrap().transformed(Dihedral::from_index(4)).unwrap();
        assert_eq!(&f2, s);
        for t in Dihedral::all() {
            let out = s.transformed(t).unwrap();
            assert_eq!(out.mask.as_ref().unwrap().sum(), s.mask.as_ref().unwrap().sum());
            assert_eq!((out.label_melanoma, out.label_sk), (s.label_melanoma, s.label_sk));
        }
    }
}

fn random_dataset(rng: &mut RngState, k: usize) -> Dataset {
    let mut samples = Vec::new();
    let mut next_id = 0;
    for d in Diagnosis::ALL {
        // Each class is absent or has at least k members.
        let n = match rng.below(4) {
            0 => 0,
            _ => k + rng.below(25),
        };
        for _ in 0..n {
            let (mel, sk) = d.labels();
            samples.push(Sample {
                id: format!("id{:05}", rng.below(100_000) * 10 + next_id % 10),
                image: Tensor::zeros(&[3, 1, 1]).unwrap(),
                mask: None,
                label_melanoma: mel,
                label_sk: sk,
            });
            next_id += 1;
        }
    }
    let mut seen = HashSet::new();
    samples.retain(|s| seen.insert(s.id.clone()));
    rng.shuffle(&mut samples);
    Dataset::new(samples).unwrap()
}

#[test]
fn fold_partition_and_stratification_audit_on_1000_datasets() {
    let mut rng = RngState::new(31);
    let mut audited = 0;
    while audited < 1000 {
        let k = 2 + rng.below(6);
        let ds = random_dataset(&mut rng, k);
        let counts = ds.class_counts().unwrap();
        if ds.is_empty() || counts.iter().any(|&c| c > 0 && c < k) {
            continue;
        }
        let seed = rng.next_u64();
        let folds = make_folds(&ds, k, seed).unwrap();
        assert_eq!(folds.len(), ds.len());
        assert!(folds.iter().all(|&f| f < k));

        let mut seen = HashSet::new();
        for f in 0..k {
            let members: Vec<usize> = (0..ds.len()).filter(|&i| folds[i] == f).collect();
            for &i in &members {
                assert!(seen.insert(i), "sample in two folds");
            }
            for (c, &total) in counts.iter().enumerate() {
                let in_fold = members.iter().filter(|&&i| ds.samples()[i].diagnosis().unwrap() as usize == c).count();
                assert!(in_fold == total / k || in_fold == total.div_ceil(k), "class {c}: {in_fold} of {total} in fold {f}");
            }
        }
        assert_eq!(seen.len(), ds.len());
        let sizes: Vec<usize> = (0..k).map(|f| folds.iter().filter(|&&x| x == f).count()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

        // Assignment depends on ids and seed only, never on list order.
        let mut order: Vec<usize> = (0..ds.len()).collect();
        rng.shuffle(&mut order);
        let permuted = ds.subset(&order);
        let refolds = make_folds(&permuted, k, seed).unwrap();
        for (pos, &i) in order.iter().enumerate() {
            assert_eq!(refolds[pos], folds[i]);
        }
        assert_eq!(make_folds(&ds, k, seed).unwrap(), folds);
        audited += 1;
    }
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&SynthConfig { count: 6, size: [16, 16], seed: 3, ..Default::default() }).unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.samples(), ds.samples());
}
