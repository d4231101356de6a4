//! Network layers and losses as differentiable graph operations.
//!
//! All spatial tensors are `[n, c, h, w]`, row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeRef, Operation};
use crate::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPSILON: f64 = 1e-7;

/// Additive smoothing used by [`soft_dice_loss`].
pub const DICE_SMOOTHING: f64 = 1.0;

/// Weight, bias and geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub struct Conv2dParams {
    /// `[out_ch, in_ch, kh, kw]`, odd kernel extents.
    pub weight: NodeRef,
    /// `[out_ch]`
    pub bias: NodeRef,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    Identity,
}

#[derive(Clone, Copy)]
struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Gathers the receptive fields of one sample into `cols[patch_len, ho*wo]`.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (ho, wo) = (self.ho, self.wo);
        let pad = self.padding as isize;
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * self.stride) as isize - pad + i as isize;
                        let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride) as isize - pad + j as isize;
                            *d = if ix < 0 || ix >= self.w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back onto the input layout (adjoint of `im2col`).
    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (ho, wo) = (self.ho, self.wo);
        let pad = self.padding as isize;
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * self.stride) as isize - pad + i as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * self.stride) as isize - pad + j as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    geom: ConvGeometry,
}

impl Operation for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, weight) = (inputs[0], inputs[1]);
        let geom = self.geom;
        let n = x.shape()[0];
        let out_ch = weight.shape()[0];
        let patch = geom.patch_len();
        let spatial = geom.ho * geom.wo;
        let in_len = geom.c * geom.h * geom.w;
        let wmat = MatRef::row_major(weight.data(), out_ch, patch);

        let mut gx = needs[0].then(|| x.zeros_like());
        let mut gw = needs[1].then(|| weight.zeros_like());
        let mut gb = needs[2].then(|| Tensor::from_parts_unchecked(vec![out_ch], vec![0.0; out_ch]));
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![0.0; patch * spatial] };
        let mut dcols = if geom.is_pointwise() || gx.is_none() { Vec::new() } else { vec![0.0; patch * spatial] };

        for s in 0..n {
            let xs = &x.data()[s * in_len..(s + 1) * in_len];
            let gys = &grad_out.data()[s * out_ch * spatial..(s + 1) * out_ch * spatial];
            let gy = MatRef::row_major(gys, out_ch, spatial);
            if let Some(gb) = gb.as_mut() {
                for (o, row) in gys.chunks(spatial).enumerate() {
                    gb.data_mut()[o] += row.iter().sum::<f64>();
                }
            }
            if let Some(gw) = gw.as_mut() {
                let cmat = if geom.is_pointwise() {
                    MatRef::row_major(xs, patch, spatial)
                } else {
                    geom.im2col(xs, &mut cols);
                    MatRef::row_major(&cols, patch, spatial)
                };
                gemm(gy, cmat.t(), 1.0, gw.data_mut());
            }
            if let Some(gx) = gx.as_mut() {
                let gxs = &mut gx.data_mut()[s * in_len..(s + 1) * in_len];
                if geom.is_pointwise() {
                    gemm(wmat.t(), gy, 0.0, gxs);
                } else {
                    gemm(wmat.t(), gy, 0.0, &mut dcols);
                    geom.col2im(&dcols, gxs);
                }
            }
        }
        vec![gx, gw, gb]
    }
}

struct MaxPool2 {
    /// Flat input index of the selected element, per output element.
    argmax: Vec<usize>,
}

impl Operation for MaxPool2 {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let mut gx = inputs[0].zeros_like();
        for (&src, &g) in self.argmax.iter().zip(grad_out.data()) {
            gx.data_mut()[src] += g;
        }
        vec![Some(gx)]
    }
}

struct Upsample2;

impl Operation for Upsample2 {
    fn name(&self) -> &'static str {
        "upsample2x_nearest"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (n, c, h, w) = x.dims4().expect("rank 4");
        let w2 = 2 * w;
        let mut gx = x.zeros_like();
        let g = grad_out.data();
        for plane in 0..n * c {
            let src = &g[plane * 4 * h * w..(plane + 1) * 4 * h * w];
            let dst = &mut gx.data_mut()[plane * h * w..(plane + 1) * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let r0 = 2 * y * w2 + 2 * xx;
                    let r1 = r0 + w2;
                    dst[y * w + xx] = src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1];
                }
            }
        }
        vec![Some(gx)]
    }
}

struct ConcatChannels;

impl Operation for ConcatChannels {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let n = a.shape()[0];
        let la = a.len() / n;
        let lb = b.len() / n;
        let mut ga = needs[0].then(|| Vec::with_capacity(a.len()));
        let mut gb = needs[1].then(|| Vec::with_capacity(b.len()));
        for chunk in grad_out.data().chunks(la + lb) {
            if let Some(ga) = ga.as_mut() {
                ga.extend_from_slice(&chunk[..la]);
            }
            if let Some(gb) = gb.as_mut() {
                gb.extend_from_slice(&chunk[la..]);
            }
        }
        vec![
            ga.map(|d| Tensor::from_parts_unchecked(a.shape().to_vec(), d)),
            gb.map(|d| Tensor::from_parts_unchecked(b.shape().to_vec(), d)),
        ]
    }
}

struct Activation(ActivationKind);

impl Operation for Activation {
    fn name(&self) -> &'static str {
        match self.0 {
            ActivationKind::Relu => "relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Identity => "identity",
        }
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let g = grad_out.data();
        let data: Vec<f64> = match self.0 {
            ActivationKind::Relu => {
                inputs[0].data().iter().zip(g).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect()
            }
            ActivationKind::Sigmoid => output.data().iter().zip(g).map(|(&s, &g)| g * s * (1.0 - s)).collect(),
            ActivationKind::Identity => g.to_vec(),
        };
        vec![Some(Tensor::from_parts_unchecked(output.shape().to_vec(), data))]
    }
}

/// Logistic function, evaluated on the branch that cannot overflow and kept
/// inside the open interval (0, 1) even where the exact value rounds to 0 or 1.
pub fn sigmoid(x: f64) -> f64 {
    const UPPER: f64 = 1.0 - f64::EPSILON / 2.0;
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, UPPER)
}

/// Average pooling over non-overlapping `factor x factor` windows.
struct AvgPool {
    factor: usize,
}

impl Operation for AvgPool {
    fn name(&self) -> &'static str {
        "avg_pool"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (n, c, h, w) = x.dims4().expect("rank 4");
        let f = self.factor;
        let (ho, wo) = (h / f, w / f);
        let scale = 1.0 / (f * f) as f64;
        let mut gx = x.zeros_like();
        for plane in 0..n * c {
            let g = &grad_out.data()[plane * ho * wo..(plane + 1) * ho * wo];
            let dst = &mut gx.data_mut()[plane * h * w..(plane + 1) * h * w];
            for y in 0..h {
                for xx in 0..w {
                    dst[y * w + xx] = g[(y / f) * wo + xx / f] * scale;
                }
            }
        }
        vec![Some(gx)]
    }
}

struct GlobalAvgPool;

impl Operation for GlobalAvgPool {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (_, _, h, w) = x.dims4().expect("rank 4");
        let hw = h * w;
        let mut gx = x.zeros_like();
        for (plane, &g) in grad_out.data().iter().enumerate() {
            gx.data_mut()[plane * hw..(plane + 1) * hw].fill(g / hw as f64);
        }
        vec![Some(gx)]
    }
}

struct BceLoss {
    target: Tensor,
    pos_weight: f64,
}

impl Operation for BceLoss {
    fn name(&self) -> &'static str {
        "bce_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let p = inputs[0];
        let scale = grad_out.data()[0] / p.len() as f64;
        let data = p
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(&p, &t)| {
                if !(BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&p) {
                    return 0.0;
                }
                -scale * (self.pos_weight * t / p - (1.0 - t) / (1.0 - p))
            })
            .collect();
        vec![Some(Tensor::from_parts_unchecked(p.shape().to_vec(), data))]
    }
}

struct SoftDice {
    target: Tensor,
}

impl Operation for SoftDice {
    fn name(&self) -> &'static str {
        "soft_dice_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let p = inputs[0];
        let n = p.shape()[0];
        let per = p.len() / n;
        let scale = grad_out.data()[0] / n as f64;
        let mut gp = p.zeros_like();
        for s in 0..n {
            let ps = &p.data()[s * per..(s + 1) * per];
            let ts = &self.target.data()[s * per..(s + 1) * per];
            let (num, den) = dice_terms(ps, ts);
            let dst = &mut gp.data_mut()[s * per..(s + 1) * per];
            // d/dp_j of -(num/den) = -(2 t_j den - num) / den^2
            for ((d, &t), _) in dst.iter_mut().zip(ts).zip(ps) {
                *d = -scale * (2.0 * t * den - num) / (den * den);
            }
        }
        vec![Some(gp)]
    }
}

/// `(2 sum(p t) + s, sum(p) + sum(t) + s)` for one sample.
fn dice_terms(p: &[f64], t: &[f64]) -> (f64, f64) {
    let (mut inter, mut sp, mut st) = (0.0, 0.0, 0.0);
    for (&p, &t) in p.iter().zip(t) {
        inter += p * t;
        sp += p;
        st += t;
    }
    (2.0 * inter + DICE_SMOOTHING, sp + st + DICE_SMOOTHING)
}

/// Cross-correlation of `x[n, c, h, w]` with `p.weight[o, c, kh, kw]`, plus bias.
///
/// Output extents are `(h + 2*padding - kh) / stride + 1` (floor), likewise for width.
pub fn conv2d(g: &mut Graph, x: NodeRef, p: &Conv2dParams) -> Result<NodeRef> {
    let (n, c, h, w) = g.value(x).dims4()?;
    let wshape = g.value(p.weight).shape();
    let &[out_ch, in_ch, kh, kw] = wshape else {
        return Err(Error::mismatch("conv2d", format!("weight must be rank 4, got {wshape:?}")));
    };
    if in_ch != c {
        return Err(Error::mismatch("conv2d", format!("input has {c} channels, weight expects {in_ch}")));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::mismatch("conv2d", format!("kernel extents must be odd, got {kh}x{kw}")));
    }
    if g.value(p.bias).shape() != [out_ch] {
        return Err(Error::mismatch("conv2d", format!("bias shape {:?}, expected [{out_ch}]", g.value(p.bias).shape())));
    }
    if p.stride == 0 {
        return Err(Error::mismatch("conv2d", "stride must be >= 1"));
    }
    let (hp, wp) = (h + 2 * p.padding, w + 2 * p.padding);
    if hp < kh || wp < kw {
        return Err(Error::mismatch("conv2d", format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}")));
    }
    let geom = ConvGeometry {
        c,
        h,
        w,
        kh,
        kw,
        stride: p.stride,
        padding: p.padding,
        ho: (hp - kh) / p.stride + 1,
        wo: (wp - kw) / p.stride + 1,
    };
    let spatial = geom.ho * geom.wo;
    let patch = geom.patch_len();
    let xv = g.value(x);
    let wmat = MatRef::row_major(g.value(p.weight).data(), out_ch, patch);
    let bias = g.value(p.bias).data();
    let mut out = vec![0.0; n * out_ch * spatial];
    let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![0.0; patch * spatial] };
    let in_len = c * h * w;
    for s in 0..n {
        let dst = &mut out[s * out_ch * spatial..(s + 1) * out_ch * spatial];
        for (o, row) in dst.chunks_mut(spatial).enumerate() {
            row.fill(bias[o]);
        }
        let xs = &xv.data()[s * in_len..(s + 1) * in_len];
        let cmat = if geom.is_pointwise() {
            MatRef::row_major(xs, patch, spatial)
        } else {
            geom.im2col(xs, &mut cols);
            MatRef::row_major(&cols, patch, spatial)
        };
        gemm(wmat, cmat, 1.0, dst);
    }
    let value = Tensor::from_parts_unchecked(vec![n, out_ch, geom.ho, geom.wo], out);
    g.record(value, Box::new(Conv2dOp { geom }), &[x, p.weight, p.bias])
}

/// 2x2 max pooling with stride 2. Ties select the first element in row-major window order.
pub fn maxpool2d(g: &mut Graph, x: NodeRef) -> Result<NodeRef> {
    let (n, c, h, w) = g.value(x).dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::mismatch("maxpool2d", format!("spatial extents must be even, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xv = g.value(x).data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..ho {
            for xx in 0..wo {
                let mut best = base + 2 * y * w + 2 * xx;
                for idx in [best + 1, best + w, best + w + 1] {
                    if xv[idx] > xv[best] {
                        best = idx;
                    }
                }
                out.push(xv[best]);
                argmax.push(best);
            }
        }
    }
    let value = Tensor::from_parts_unchecked(vec![n, c, ho, wo], out);
    g.record(value, Box::new(MaxPool2 { argmax }), &[x])
}

/// Nearest-neighbour 2x upsampling: each pixel becomes a 2x2 block.
pub fn upsample2x_nearest(g: &mut Graph, x: NodeRef) -> Result<NodeRef> {
    let (n, c, h, w) = g.value(x).dims4()?;
    let xv = g.value(x).data();
    let w2 = 2 * w;
    let mut out = vec![0.0; n * c * 4 * h * w];
    for plane in 0..n * c {
        let src = &xv[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..h {
            for xx in 0..w {
                let v = src[y * w + xx];
                let r0 = 2 * y * w2 + 2 * xx;
                dst[r0] = v;
                dst[r0 + 1] = v;
                dst[r0 + w2] = v;
                dst[r0 + w2 + 1] = v;
            }
        }
    }
    let value = Tensor::from_parts_unchecked(vec![n, c, 2 * h, 2 * w], out);
    g.record(value, Box::new(Upsample2), &[x])
}

/// Channel-wise concatenation, `a` first.
pub fn concat_channels(g: &mut Graph, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
    let (na, ca, ha, wa) = g.value(a).dims4()?;
    let (nb, cb, hb, wb) = g.value(b).dims4()?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::mismatch("concat_channels", format!("{:?} vs {:?}", g.value(a).shape(), g.value(b).shape())));
    }
    let la = ca * ha * wa;
    let lb = cb * hb * wb;
    let (va, vb) = (g.value(a).data(), g.value(b).data());
    let mut out = Vec::with_capacity(va.len() + vb.len());
    for s in 0..na {
        out.extend_from_slice(&va[s * la..(s + 1) * la]);
        out.extend_from_slice(&vb[s * lb..(s + 1) * lb]);
    }
    let value = Tensor::from_parts_unchecked(vec![na, ca + cb, ha, wa], out);
    g.record(value, Box::new(ConcatChannels), &[a, b])
}

pub fn activation(g: &mut Graph, kind: ActivationKind, x: NodeRef) -> Result<NodeRef> {
    let value = match kind {
        ActivationKind::Relu => g.value(x).map(|v| v.max(0.0)),
        ActivationKind::Sigmoid => g.value(x).map(sigmoid),
        ActivationKind::Identity => g.value(x).clone(),
    };
    g.record(value, Box::new(Activation(kind)), &[x])
}

pub fn relu(g: &mut Graph, x: NodeRef) -> Result<NodeRef> {
    activation(g, ActivationKind::Relu, x)
}

pub fn sigmoid_node(g: &mut Graph, x: NodeRef) -> Result<NodeRef> {
    activation(g, ActivationKind::Sigmoid, x)
}

/// Per-channel spatial mean: `[n, c, h, w] -> [n, c]`.
pub fn global_avg_pool(g: &mut Graph, x: NodeRef) -> Result<NodeRef> {
    let (n, c, h, w) = g.value(x).dims4()?;
    let hw = (h * w) as f64;
    let data = g.value(x).data().chunks(h * w).map(|p| p.iter().sum::<f64>() / hw).collect();
    g.record(Tensor::from_parts_unchecked(vec![n, c], data), Box::new(GlobalAvgPool), &[x])
}

/// Mean over non-overlapping `factor x factor` windows; extents must divide.
pub fn avg_pool(g: &mut Graph, x: NodeRef, factor: usize) -> Result<NodeRef> {
    let (n, c, h, w) = g.value(x).dims4()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::mismatch("avg_pool", format!("{h}x{w} not divisible by {factor}")));
    }
    let (ho, wo) = (h / factor, w / factor);
    let scale = 1.0 / (factor * factor) as f64;
    let xv = g.value(x).data();
    let mut out = vec![0.0; n * c * ho * wo];
    for plane in 0..n * c {
        let src = &xv[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for y in 0..h {
            for xx in 0..w {
                dst[(y / factor) * wo + xx / factor] += src[y * w + xx] * scale;
            }
        }
    }
    let value = Tensor::from_parts_unchecked(vec![n, c, ho, wo], out);
    g.record(value, Box::new(AvgPool { factor }), &[x])
}

/// `x[n, c_in] * w[c_in, c_out] + b[c_out]`.
pub fn linear(g: &mut Graph, x: NodeRef, weight: NodeRef, bias: NodeRef) -> Result<NodeRef> {
    let y = g.matmul(x, weight)?;
    g.add_channel_bias(y, bias)
}

/// Mean binary cross-entropy with `pred` clamped to `[1e-7, 1 - 1e-7]`.
///
/// `pos_weight` multiplies the positive-target term; 1 gives the plain loss.
pub fn bce_loss(g: &mut Graph, pred: NodeRef, target: &Tensor, pos_weight: f64) -> Result<NodeRef> {
    let p = g.value(pred);
    if p.shape() != target.shape() {
        return Err(Error::mismatch("bce_loss", format!("pred {:?} vs target {:?}", p.shape(), target.shape())));
    }
    let total: f64 = p
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            -(pos_weight * t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    let value = Tensor::scalar(total / p.len() as f64);
    g.record(value, Box::new(BceLoss { target: target.clone(), pos_weight }), &[pred])
}

/// Batch mean of `1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1)` over `[n, 1, h, w]` masks.
pub fn soft_dice_loss(g: &mut Graph, pred: NodeRef, target: &Tensor) -> Result<NodeRef> {
    let p = g.value(pred);
    if p.shape() != target.shape() {
        return Err(Error::mismatch("soft_dice_loss", format!("pred {:?} vs target {:?}", p.shape(), target.shape())));
    }
    let n = p.shape()[0];
    let per = p.len() / n;
    let total: f64 = (0..n)
        .map(|s| {
            let (num, den) = dice_terms(&p.data()[s * per..(s + 1) * per], &target.data()[s * per..(s + 1) * per]);
            1.0 - num / den
        })
        .sum();
    let value = Tensor::scalar(total / n as f64);
    g.record(value, Box::new(SoftDice { target: target.clone() }), &[pred])
}
