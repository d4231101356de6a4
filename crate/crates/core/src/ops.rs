//! Core differentiable tensor operations recorded on a [`Graph`].

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeRef, Operation};
use crate::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Max,
}

struct Elementwise {
    kind: ElementwiseKind,
    /// `b` is a shape-[1] scalar broadcast over `a`.
    broadcast: bool,
}

impl Elementwise {
    fn apply(kind: ElementwiseKind, x: f64, y: f64) -> f64 {
        match kind {
            ElementwiseKind::Add => x + y,
            ElementwiseKind::Sub => x - y,
            ElementwiseKind::Mul => x * y,
            ElementwiseKind::Max => x.max(y),
        }
    }
}

impl Operation for Elementwise {
    fn name(&self) -> &'static str {
        match self.kind {
            ElementwiseKind::Add => "add",
            ElementwiseKind::Sub => "sub",
            ElementwiseKind::Mul => "mul",
            ElementwiseKind::Max => "max",
        }
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let bv = |i: usize| if self.broadcast { b.data()[0] } else { b.data()[i] };
        let g = grad_out.data();
        // (d out / d a, d out / d b) per element
        let local = |i: usize| -> (f64, f64) {
            let (x, y) = (a.data()[i], bv(i));
            match self.kind {
                ElementwiseKind::Add => (1.0, 1.0),
                ElementwiseKind::Sub => (1.0, -1.0),
                ElementwiseKind::Mul => (y, x),
                // ties route to the first input
                ElementwiseKind::Max => {
                    if x >= y {
                        (1.0, 0.0)
                    } else {
                        (0.0, 1.0)
                    }
                }
            }
        };
        let mut ga = needs[0].then(|| a.zeros_like());
        let mut gb = needs[1].then(|| b.zeros_like());
        for i in 0..g.len() {
            let (da, db) = local(i);
            if let Some(ga) = ga.as_mut() {
                ga.data_mut()[i] = g[i] * da;
            }
            if let Some(gb) = gb.as_mut() {
                let slot = if self.broadcast { 0 } else { i };
                gb.data_mut()[slot] += g[i] * db;
            }
        }
        vec![ga, gb]
    }
}

struct MatMul;

impl Operation for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let g = MatRef::row_major(grad_out.data(), m, n);
        let ga = needs[0].then(|| {
            let mut out = vec![0.0; m * k];
            gemm(g, MatRef::row_major(b.data(), k, n).t(), 0.0, &mut out);
            Tensor::from_parts_unchecked(vec![m, k], out)
        });
        let gb = needs[1].then(|| {
            let mut out = vec![0.0; k * n];
            gemm(MatRef::row_major(a.data(), m, k).t(), g, 0.0, &mut out);
            Tensor::from_parts_unchecked(vec![k, n], out)
        });
        vec![ga, gb]
    }
}

struct Sum {
    mean: bool,
}

impl Operation for Sum {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let mut g = grad_out.data()[0];
        if self.mean {
            g /= x.len() as f64;
        }
        vec![Some(x.map(|_| g))]
    }
}

struct Scale(f64);

impl Operation for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad_out.map(|g| g * self.0))]
    }
}

struct Reshape;

impl Operation for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::from_parts_unchecked(inputs[0].shape().to_vec(), grad_out.data().to_vec()))]
    }
}

/// Adds `bias[c]` to every element of channel `c` of an `[n, c, ...]` tensor.
struct ChannelBias;

impl Operation for ChannelBias {
    fn name(&self) -> &'static str {
        "add_channel_bias"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let c = x.shape()[1];
        let inner: usize = x.shape()[2..].iter().product();
        let gb = needs[1].then(|| {
            let mut gb = vec![0.0; c];
            for (i, chunk) in grad_out.data().chunks(inner).enumerate() {
                gb[i % c] += chunk.iter().sum::<f64>();
            }
            Tensor::from_parts_unchecked(vec![c], gb)
        });
        vec![needs[0].then(|| grad_out.clone()), gb]
    }
}

impl Graph {
    /// Elementwise `a (op) b`; `b` must match `a`'s shape or be shape `[1]`.
    pub fn elementwise(&mut self, kind: ElementwiseKind, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let (va, vb) = (self.value(a), self.value(b));
        let broadcast = if va.shape() == vb.shape() {
            false
        } else if vb.is_scalar() {
            true
        } else {
            return Err(Error::mismatch("elementwise", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        };
        let data: Vec<f64> = if broadcast {
            let y = vb.data()[0];
            va.data().iter().map(|&x| Elementwise::apply(kind, x, y)).collect()
        } else {
            va.data().iter().zip(vb.data()).map(|(&x, &y)| Elementwise::apply(kind, x, y)).collect()
        };
        let value = Tensor::from_parts_unchecked(va.shape().to_vec(), data);
        self.record(value, Box::new(Elementwise { kind, broadcast }), &[a, b])
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.elementwise(ElementwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.elementwise(ElementwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.elementwise(ElementwiseKind::Mul, a, b)
    }

    pub fn max(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.elementwise(ElementwiseKind::Max, a, b)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let (va, vb) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = (va.shape(), vb.shape()) else {
            return Err(Error::mismatch("matmul", format!("rank-2 operands required, got {:?} and {:?}", va.shape(), vb.shape())));
        };
        if k != k2 {
            return Err(Error::mismatch("matmul", format!("inner extents {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(MatRef::row_major(va.data(), m, k), MatRef::row_major(vb.data(), k, n), 0.0, &mut out);
        self.record(Tensor::from_parts_unchecked(vec![m, n], out), Box::new(MatMul), &[a, b])
    }

    pub fn sum(&mut self, a: NodeRef) -> Result<NodeRef> {
        let v = Tensor::scalar(self.value(a).sum());
        self.record(v, Box::new(Sum { mean: false }), &[a])
    }

    pub fn mean(&mut self, a: NodeRef) -> Result<NodeRef> {
        let x = self.value(a);
        let v = Tensor::scalar(x.sum() / x.len() as f64);
        self.record(v, Box::new(Sum { mean: true }), &[a])
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: NodeRef, factor: f64) -> Result<NodeRef> {
        let v = self.value(a).map(|x| x * factor);
        self.record(v, Box::new(Scale(factor)), &[a])
    }

    pub fn reshape(&mut self, a: NodeRef, shape: &[usize]) -> Result<NodeRef> {
        let v = self.value(a).reshape(shape)?;
        self.record(v, Box::new(Reshape), &[a])
    }

    /// Per-channel bias add: `x[n, c, ...] + bias[c]`.
    pub fn add_channel_bias(&mut self, x: NodeRef, bias: NodeRef) -> Result<NodeRef> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vx.rank() < 2 || vb.shape() != [vx.shape()[1]] {
            return Err(Error::mismatch("add_channel_bias", format!("x {:?}, bias {:?}", vx.shape(), vb.shape())));
        }
        let c = vx.shape()[1];
        let inner: usize = vx.shape()[2..].iter().product();
        let mut out = vx.data().to_vec();
        for (i, chunk) in out.chunks_mut(inner).enumerate() {
            let b = vb.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let value = Tensor::from_parts_unchecked(vx.shape().to_vec(), out);
        self.record(value, Box::new(ChannelBias), &[x, bias])
    }
}
