//! Samples, datasets, ingestion and preprocessing.

pub mod labels;
pub mod netpbm;
pub mod transform;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix, RngState};
use crate::tensor::Tensor;

pub use labels::{load_isic_labels, LabelRow};
pub use netpbm::{mask_binarize, read_image, write_image, write_mask};
pub use transform::{normalize, resize_bilinear, resize_nearest, Dihedral};

/// Number of folds used by cross-validation.
pub const DEFAULT_FOLDS: usize = 5;

/// Three-way diagnosis; both binary tasks derive from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    Nevus,
    Melanoma,
    SeborrheicKeratosis,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 3] = [Diagnosis::Nevus, Diagnosis::Melanoma, Diagnosis::SeborrheicKeratosis];

    pub fn from_labels(melanoma: u8, sk: u8) -> Result<Diagnosis> {
        match (melanoma, sk) {
            (0, 0) => Ok(Diagnosis::Nevus),
            (1, 0) => Ok(Diagnosis::Melanoma),
            (0, 1) => Ok(Diagnosis::SeborrheicKeratosis),
            _ => Err(Error::Invariant(format!("labels (melanoma {melanoma}, sk {sk}) are not a valid diagnosis"))),
        }
    }

    pub fn labels(self) -> (u8, u8) {
        match self {
            Diagnosis::Nevus => (0, 0),
            Diagnosis::Melanoma => (1, 0),
            Diagnosis::SeborrheicKeratosis => (0, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3, h, w]`, raw 0..=255 values.
    pub image: Tensor,
    /// `[1, h, w]`, values in {0, 1}.
    pub mask: Option<Tensor>,
    pub label_melanoma: u8,
    pub label_sk: u8,
}

impl Sample {
    pub fn diagnosis(&self) -> Result<Diagnosis> {
        Diagnosis::from_labels(self.label_melanoma, self.label_sk)
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s[1], s[2])
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::Evaluation { id: self.id.clone(), reason };
        self.diagnosis().map_err(|e| bad(e.to_string()))?;
        let (c, h, w) = self.image.dims3()?;
        if c != 3 {
            return Err(bad(format!("image must have 3 channels, got {c}")));
        }
        if let Some(m) = &self.mask {
            if m.shape() != [1, h, w] {
                return Err(bad(format!("mask shape {:?} does not match image {h}x{w}", m.shape())));
            }
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(bad("mask values must be 0 or 1".into()));
            }
        }
        Ok(())
    }

    /// Applies one dihedral transform to image and mask alike.
    pub fn transformed(&self, t: Dihedral) -> Result<Sample> {
        Ok(Sample {
            id: self.id.clone(),
            image: t.apply(&self.image)?,
            mask: self.mask.as_ref().map(|m| t.apply(m)).transpose()?,
            label_melanoma: self.label_melanoma,
            label_sk: self.label_sk,
        })
    }

    /// Image bilinear, mask nearest-neighbour.
    pub fn resized(&self, h: usize, w: usize) -> Result<Sample> {
        Ok(Sample {
            id: self.id.clone(),
            image: resize_bilinear(&self.image, h, w)?,
            mask: self.mask.as_ref().map(|m| resize_nearest(m, h, w)).transpose()?,
            label_melanoma: self.label_melanoma,
            label_sk: self.label_sk,
        })
    }
}

/// Applies a uniformly drawn dihedral transform (rotation by a multiple of 90
/// degrees, optionally preceded by a horizontal flip).
pub fn augment(s: &Sample, rng: &mut RngState) -> Result<Sample> {
    if s.mask.is_none() {
        return Err(Error::Evaluation { id: s.id.clone(), reason: "augmentation needs a mask".into() });
    }
    s.transformed(Dihedral::from_index(rng.below(8) as u8))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    folds: Option<Vec<usize>>,
}

impl Dataset {
    /// Checks unique ids, valid label pairs, 3-channel images and binary masks.
    pub fn new(samples: Vec<Sample>) -> Result<Dataset> {
        let mut seen = HashSet::new();
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Evaluation { id: s.id.clone(), reason: "duplicate sample id".into() });
            }
        }
        Ok(Dataset { samples, folds: None })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn folds(&self) -> Option<&[usize]> {
        self.folds.as_deref()
    }

    pub fn with_folds(mut self, folds: Vec<usize>) -> Result<Dataset> {
        if folds.len() != self.samples.len() {
            return Err(Error::Stratification(format!(
                "{} fold indices for {} samples",
                folds.len(),
                self.samples.len()
            )));
        }
        self.folds = Some(folds);
        Ok(self)
    }

    /// Assigns stratified folds with [`make_folds`].
    pub fn stratified(self, k: usize, seed: u64) -> Result<Dataset> {
        let folds = make_folds(&self, k, seed)?;
        self.with_folds(folds)
    }

    /// `(training, validation)` sample indices for one held-out fold.
    pub fn split(&self, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let folds = self.folds.as_ref().ok_or_else(|| Error::Stratification("no fold assignment".into()))?;
        if !folds.contains(&fold) {
            return Err(Error::Stratification(format!("fold {fold} has no samples")));
        }
        let (val, train): (Vec<usize>, Vec<usize>) = (0..self.samples.len()).partition(|&i| folds[i] == fold);
        Ok((train, val))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { samples: indices.iter().map(|&i| self.samples[i].clone()).collect(), folds: None }
    }

    pub fn class_counts(&self) -> Result<[usize; 3]> {
        let mut counts = [0; 3];
        for s in &self.samples {
            counts[s.diagnosis()? as usize] += 1;
        }
        Ok(counts)
    }

    /// Resizes every sample to `h x w`; fold assignment is kept.
    pub fn resized(&self, h: usize, w: usize) -> Result<Dataset> {
        let samples = self.samples.iter().map(|s| s.resized(h, w)).collect::<Result<_>>()?;
        Ok(Dataset { samples, folds: self.folds.clone() })
    }

    pub fn label_rows(&self) -> Vec<LabelRow> {
        self.samples
            .iter()
            .map(|s| LabelRow { image_id: s.id.clone(), melanoma: s.label_melanoma, sk: s.label_sk })
            .collect()
    }
}

/// Stratified `k`-fold assignment, one fold index per sample in dataset order.
///
/// Classes are taken in [`Diagnosis::ALL`] order. Within a class, ids are
/// sorted, shuffled by a stream derived from `seed` and the class, then dealt
/// round-robin; the dealing position carries over between classes so total
/// fold sizes also differ by at most one. The result depends only on `seed`
/// and which ids belong to which class, never on dataset order. A class with
/// no samples is skipped.
pub fn make_folds(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Stratification(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: [Vec<usize>; 3] = Default::default();
    for (i, s) in ds.samples.iter().enumerate() {
        by_class[s.diagnosis()? as usize].push(i);
    }
    let mut folds = vec![usize::MAX; ds.len()];
    let mut next = 0;
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::Stratification(format!(
                "class {:?} has {} samples, fewer than {k} folds",
                Diagnosis::ALL[class],
                members.len()
            )));
        }
        members.sort_by(|&a, &b| ds.samples[a].id.cmp(&ds.samples[b].id));
        let mut rng = RngState::new(mix(seed, class as u64));
        rng.shuffle(members);
        for &i in members.iter() {
            folds[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(folds)
}

fn first_existing(candidates: impl IntoIterator<Item = PathBuf>) -> Option<PathBuf> {
    candidates.into_iter().find(|p| p.is_file())
}

/// Writes `images/<id>.ppm`, `masks/<id>.pgm` and `labels.csv` under `dir`.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for s in &ds.samples {
        write_image(images.join(format!("{}.ppm", s.id)), &s.image)?;
        if let Some(m) = &s.mask {
            write_mask(masks.join(format!("{}.pgm", s.id)), m)?;
        }
    }
    let labels = dir.join("labels.csv");
    fs::write(&labels, labels::format_labels(&ds.label_rows())).map_err(|e| Error::io(&labels, e))
}

/// Reads a directory laid out as by [`save_dataset`], in `labels.csv` row order.
///
/// Images may be `images/<id>.ppm` or `.png`; masks `masks/<id>.pgm`,
/// `masks/<id>.png` or `masks/<id>_segmentation.png`. A missing mask leaves
/// the sample unlabeled for segmentation.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let rows = load_isic_labels(dir.join("labels.csv"))?;
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        let id = &row.image_id;
        let image_path = first_existing(["ppm", "png"].map(|ext| dir.join("images").join(format!("{id}.{ext}"))))
            .ok_or_else(|| Error::Evaluation { id: id.clone(), reason: "no image file".into() })?;
        let image = read_image(&image_path)?;
        if image.shape()[0] != 3 {
            return Err(Error::Evaluation { id: id.clone(), reason: "image is not RGB".into() });
        }
        let mask_path = first_existing(
            [format!("{id}.pgm"), format!("{id}.png"), format!("{id}_segmentation.png")].map(|n| dir.join("masks").join(n)),
        );
        let mask = match mask_path {
            Some(p) => {
                let m = read_image(&p)?;
                if m.shape()[0] != 1 {
                    return Err(Error::Evaluation { id: id.clone(), reason: "mask is not single-channel".into() });
                }
                Some(mask_binarize(&m))
            }
            None => None,
        };
        samples.push(Sample { id: row.image_id, image, mask, label_melanoma: row.melanoma, label_sk: row.sk });
    }
    Dataset::new(samples)
}

/// Image files (`.ppm`, `.png`) directly inside `dir`, sorted by file name, with their stems as ids.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<(String, PathBuf)>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("ppm" | "png")) && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}
