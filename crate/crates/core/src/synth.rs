//! Procedural dermoscopy-like images with exact lesion masks.
//!
//! Each image holds one star-convex lesion with boundary
//! `r(θ) = r0 · (1 + Σ_{k=1..4} a_k cos(kθ + φ_k))`, where the amplitude bound
//! on `a_k` depends on the diagnosis. A pixel is lesion when its centre lies
//! within `r(θ)` of the lesion centre. The rasterizer evaluates `cos(kθ + φ)`
//! from the pixel offset with complex multiplication, so only correctly
//! rounded arithmetic touches the mask.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Diagnosis, Sample};
use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::rng::RngState;
use crate::tensor::Tensor;

const HARMONICS: usize = 4;
const MAX_TRIES: usize = 100;
/// Minimum AUC of the lesion-intensity classifier for a dataset to count as learnable.
pub const LEARNABLE_AUC: f64 = 0.95;

const SKIN: [f64; 3] = [225.0, 190.0, 170.0];
const NEVUS: [f64; 3] = [120.0, 75.0, 50.0];
const MELANOMA: [f64; 3] = [55.0, 35.0, 30.0];
const MELANOMA_BLOTCH: [f64; 3] = [25.0, 15.0, 15.0];
const SK: [f64; 3] = [185.0, 145.0, 105.0];
const SK_RIM: [f64; 3] = [130.0, 95.0, 65.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    /// `[height, width]`
    pub size: [usize; 2],
    /// Probabilities of (nevus, melanoma, seborrheic keratosis).
    pub class_mix: [f64; 3],
    pub seed: u64,
    /// Bounds on lesion area as a fraction of image area.
    pub lesion_area_range: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { count: 200, size: [64, 64], class_mix: [0.5, 0.25, 0.25], seed: 0, lesion_area_range: [0.05, 0.40] }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("synth count must be positive".into()));
        }
        if self.size[0] < 8 || self.size[1] < 8 {
            return Err(Error::Config(format!("synth size {:?} must be at least 8x8", self.size)));
        }
        if self.class_mix.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("class mix {:?} has a negative entry", self.class_mix)));
        }
        let total: f64 = self.class_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("class mix {:?} sums to {total}, not 1", self.class_mix)));
        }
        let [lo, hi] = self.lesion_area_range;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!("lesion area range [{lo}, {hi}] must satisfy 0 < min < max < 1")));
        }
        Ok(())
    }
}

fn amplitude_bound(d: Diagnosis) -> f64 {
    match d {
        Diagnosis::Nevus => 0.05,
        Diagnosis::Melanoma => 0.30,
        Diagnosis::SeborrheicKeratosis => 0.08,
    }
}

/// Lesion geometry; `contains` is the definition of the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Lesion {
    pub cx: f64,
    pub cy: f64,
    pub r0: f64,
    pub amplitudes: [f64; HARMONICS],
    /// `(cos φ_k, sin φ_k)`
    pub phases: [(f64, f64); HARMONICS],
}

impl Lesion {
    /// Boundary radius in the direction `(ux, uy)` (a unit vector).
    fn radius_towards(&self, ux: f64, uy: f64) -> f64 {
        let mut sum = 0.0;
        let (mut ck, mut sk) = (1.0, 0.0);
        for k in 0..HARMONICS {
            // (ck, sk) = (cos kθ, sin kθ) by repeated complex multiplication
            (ck, sk) = (ck * ux - sk * uy, ck * uy + sk * ux);
            let (cp, sp) = self.phases[k];
            sum += self.amplitudes[k] * (ck * cp - sk * sp);
        }
        self.r0 * (1.0 + sum)
    }

    /// `(dist, boundary radius)` for the pixel centre at row `y`, column `x`.
    fn polar(&self, y: usize, x: usize) -> (f64, f64) {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        let dist = (dx * dx + dy * dy).sqrt();
        if dist == 0.0 {
            return (0.0, self.radius_towards(1.0, 0.0));
        }
        (dist, self.radius_towards(dx / dist, dy / dist))
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (dist, r) = self.polar(y, x);
        dist <= r
    }

    pub fn rasterize(&self, h: usize, w: usize) -> Tensor {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(if self.contains(y, x) { 1.0 } else { 0.0 });
            }
        }
        Tensor::from_parts_unchecked(vec![1, h, w], data)
    }
}

fn draw_class(rng: &mut RngState, mix: &[f64; 3]) -> Diagnosis {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (d, p) in Diagnosis::ALL.iter().zip(mix) {
        acc += p;
        if u < acc {
            return *d;
        }
    }
    // u is within rounding of 1 and the mix sums to 1 within 1e-9
    *Diagnosis::ALL.iter().zip(mix).rev().find(|(_, p)| **p > 0.0).expect("validated mix").0
}

fn draw_lesion(rng: &mut RngState, d: Diagnosis, h: usize, w: usize, area: [f64; 2]) -> Result<(Lesion, Tensor)> {
    let bound = amplitude_bound(d);
    let pixels = (h * w) as f64;
    for _ in 0..MAX_TRIES {
        let frac = rng.uniform_range(area[0], area[1]);
        let r0 = (frac * pixels / std::f64::consts::PI).sqrt();
        let jitter = 0.08 * h.min(w) as f64;
        let lesion = Lesion {
            cx: w as f64 / 2.0 + rng.uniform_range(-jitter, jitter),
            cy: h as f64 / 2.0 + rng.uniform_range(-jitter, jitter),
            r0,
            amplitudes: std::array::from_fn(|_| rng.uniform_range(-bound, bound)),
            phases: std::array::from_fn(|_| {
                let phi = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
                (libm::cos(phi), libm::sin(phi))
            }),
        };
        let mask = lesion.rasterize(h, w);
        let got = mask.sum() / pixels;
        if area[0] <= got && got <= area[1] {
            return Ok((lesion, mask));
        }
    }
    Err(Error::Synth(format!("no lesion within area range {area:?} after {MAX_TRIES} draws")))
}

fn pixel(v: f64) -> f64 {
    v.round().clamp(0.0, 255.0)
}

fn render(rng: &mut RngState, d: Diagnosis, lesion: &Lesion, mask: &Tensor) -> Tensor {
    let (_, h, w) = mask.dims3().expect("mask is rank 3");
    let plane = h * w;
    let mut img = vec![0.0; 3 * plane];
    let tone = rng.uniform_range(-12.0, 12.0);
    let skin_tone = rng.uniform_range(-10.0, 10.0);
    let blotch = {
        let angle = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
        let off = 0.4 * lesion.r0;
        (lesion.cx + off * libm::cos(angle), lesion.cy + off * libm::sin(angle), 0.4 * lesion.r0)
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let inside = mask.data()[p] == 1.0;
            let mut base = if !inside {
                SKIN.map(|c| c + skin_tone)
            } else {
                match d {
                    Diagnosis::Nevus => NEVUS.map(|c| c + tone),
                    Diagnosis::Melanoma => {
                        let (bx, by, br) = blotch;
                        let (dx, dy) = (x as f64 + 0.5 - bx, y as f64 + 0.5 - by);
                        let fill = if dx * dx + dy * dy <= br * br { MELANOMA_BLOTCH } else { MELANOMA };
                        fill.map(|c| c + tone)
                    }
                    Diagnosis::SeborrheicKeratosis => {
                        let (dist, r) = lesion.polar(y, x);
                        let fill = if r - dist < 1.5 { SK_RIM } else { SK };
                        let speckle = rng.uniform_range(-25.0, 25.0);
                        fill.map(|c| c + tone + speckle)
                    }
                }
            };
            let noise = if inside { 3.0 } else { 4.0 };
            for c in base.iter_mut() {
                *c += noise * rng.normal();
            }
            for c in 0..3 {
                img[c * plane + p] = pixel(base[c]);
            }
        }
    }
    Tensor::from_parts_unchecked(vec![3, h, w], img)
}

/// Renders sample `index` of the dataset described by `cfg`.
pub fn generate_sample(cfg: &SynthConfig, index: usize) -> Result<Sample> {
    let [h, w] = cfg.size;
    let mut rng = RngState::for_stream(cfg.seed, index as u64);
    let d = draw_class(&mut rng, &cfg.class_mix);
    let (lesion, mask) = draw_lesion(&mut rng, d, h, w, cfg.lesion_area_range)?;
    let image = render(&mut rng, d, &lesion, &mask);
    let (m, s) = d.labels();
    Ok(Sample { id: format!("synth_{:06}", index), image, mask: Some(mask), label_melanoma: m, label_sk: s })
}

/// Generates `cfg.count` samples; sample `i` uses its own stream, so the
/// result does not depend on how the work is scheduled.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let samples = (0..cfg.count).into_par_iter().map(|i| generate_sample(cfg, i)).collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub n_samples: usize,
    pub class_counts: [usize; 3],
    /// AUC of "darker lesion means melanoma"; `None` when undefined.
    pub auc_melanoma: Option<f64>,
    /// AUC of "brighter lesion means seborrheic keratosis"; `None` when undefined.
    pub auc_sk: Option<f64>,
    /// Some task has only one class present.
    pub degenerate: bool,
    pub learnable: bool,
}

/// Mean RGB intensity over the ground-truth lesion region.
pub fn lesion_intensity(s: &Sample) -> Result<f64> {
    let mask = s.mask.as_ref().ok_or_else(|| Error::Evaluation { id: s.id.clone(), reason: "no mask".into() })?;
    let plane = mask.len();
    let area = mask.sum();
    if area == 0.0 {
        return Err(Error::Evaluation { id: s.id.clone(), reason: "empty lesion".into() });
    }
    let total: f64 = (0..3)
        .map(|c| {
            let ch = &s.image.data()[c * plane..(c + 1) * plane];
            ch.iter().zip(mask.data()).map(|(v, m)| v * m).sum::<f64>()
        })
        .sum();
    Ok(total / (3.0 * area))
}

/// Scores both tasks with a one-feature classifier (mean lesion intensity).
pub fn class_separability_check(ds: &Dataset) -> Result<SeparabilityReport> {
    let intensity = ds.samples().iter().map(lesion_intensity).collect::<Result<Vec<_>>>()?;
    let y_mel: Vec<u8> = ds.samples().iter().map(|s| s.label_melanoma).collect();
    let y_sk: Vec<u8> = ds.samples().iter().map(|s| s.label_sk).collect();
    let darkness: Vec<f64> = intensity.iter().map(|v| -v).collect();
    let defined = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedAuc(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let auc_melanoma = defined(auc(&darkness, &y_mel))?;
    let auc_sk = defined(auc(&intensity, &y_sk))?;
    let degenerate = auc_melanoma.is_none() || auc_sk.is_none();
    let learnable = matches!((auc_melanoma, auc_sk), (Some(a), Some(b)) if a >= LEARNABLE_AUC && b >= LEARNABLE_AUC);
    Ok(SeparabilityReport { n_samples: ds.len(), class_counts: ds.class_counts()?, auc_melanoma, auc_sk, degenerate, learnable })
}
