//! Resizing, per-channel normalization and dihedral augmentation of `[c, h, w]` images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channels with population std below this are centred but not scaled.
pub const STD_GUARD: f64 = 1e-8;

fn check_out(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidShape { shape: vec![out_h, out_w], reason: "output extents must be positive".into() });
    }
    Ok(())
}

/// Half-pixel-centre source coordinate, clamped to the valid range, as (index, next index, weight).
fn bilinear_taps(out: usize, src: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / out as f64;
    (0..out)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(src - 1);
            (x0, x1, x - x0 as f64)
        })
        .collect()
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    check_out(out_h, out_w)?;
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let ys = bilinear_taps(out_h, h);
    let xs = bilinear_taps(out_w, w);
    let src = img.data();
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bottom = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                data.push(top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], data)
}

/// Nearest-neighbour resampling (half-pixel centres); preserves the value set, used for masks.
pub fn resize_nearest(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    check_out(out_h, out_w)?;
    let ys: Vec<usize> = (0..out_h).map(|i| ((2 * i + 1) * h / (2 * out_h)).min(h - 1)).collect();
    let xs: Vec<usize> = (0..out_w).map(|j| ((2 * j + 1) * w / (2 * out_w)).min(w - 1)).collect();
    let src = img.data();
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for &y in &ys {
            for &x in &xs {
                data.push(src[(ch * h + y) * w + x]);
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], data)
}

/// Per-channel zero mean and unit population standard deviation.
pub fn normalize(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    let plane = h * w;
    let mut data = img.data().to_vec();
    for chunk in data.chunks_exact_mut(plane).take(c) {
        let mean = chunk.iter().sum::<f64>() / plane as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let std = var.sqrt();
        let div = if std < STD_GUARD { 1.0 } else { std };
        for v in chunk.iter_mut() {
            *v = (*v - mean) / div;
        }
    }
    Tensor::from_vec(&[c, h, w], data)
}

/// One of the 8 symmetries of a rectangle: a horizontal flip (optional)
/// followed by `rotations` quarter turns counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dihedral {
    pub flip: bool,
    pub rotations: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { flip: false, rotations: 0 };

    pub fn all() -> [Dihedral; 8] {
        std::array::from_fn(|i| Dihedral::from_index(i as u8))
    }

    /// `index` in 0..8: bit 2 is the flip, bits 0..2 the rotation count.
    pub fn from_index(index: u8) -> Dihedral {
        Dihedral { flip: index & 4 != 0, rotations: index & 3 }
    }

    pub fn apply(self, img: &Tensor) -> Result<Tensor> {
        let mut out = if self.flip { flip_horizontal(img)? } else { img.clone() };
        for _ in 0..self.rotations % 4 {
            out = rot90_ccw(&out)?;
        }
        Ok(out)
    }
}

/// Mirrors columns: `out[r][c] = in[r][w - 1 - c]`.
pub fn flip_horizontal(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    let src = img.data();
    let mut data = Vec::with_capacity(src.len());
    for row in src.chunks_exact(w).take(c * h) {
        data.extend(row.iter().rev());
    }
    Tensor::from_vec(&[c, h, w], data)
}

/// Quarter turn counter-clockwise: `out[r][c] = in[c][w - 1 - r]`, output extents `[w, h]`.
pub fn rot90_ccw(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    let src = img.data();
    let mut data = Vec::with_capacity(src.len());
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for r in 0..w {
            for col in 0..h {
                data.push(plane[col * w + (w - 1 - r)]);
            }
        }
    }
    Tensor::from_vec(&[c, w, h], data)
}
