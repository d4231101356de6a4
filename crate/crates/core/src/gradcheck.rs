//! Central finite-difference verification of every differentiable operation.
//!
//! Each case builds a small graph from random inputs. The output is contracted
//! with a fixed random tensor to a scalar, so the upstream gradient reaching the
//! op under test is dense and non-uniform. Analytic gradients from the reverse
//! pass are compared element by element against `(f(x+h) - f(x-h)) / 2h`,
//! which only ever evaluates the forward pass.

use serde::Serialize;

use crate::error::Result;
use crate::graph::{Graph, NodeRef, Operation};
use crate::model::{forward_graph, joint_loss, Heads, LossWeights, ModelConfig, PosWeights, Targets};
use crate::nn::{self, Conv2dParams};
use crate::rng::{mix, RngState};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so near-zero gradients compare absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-4;
/// Redraw budget per requested instance before a case is reported as failed.
const MAX_REDRAWS_PER_INSTANCE: usize = 3;

type InputFn = Box<dyn Fn(&mut RngState) -> Vec<Tensor> + Send + Sync>;
type BuildFn = Box<dyn Fn(&mut Graph, &[NodeRef]) -> Result<NodeRef> + Send + Sync>;

pub struct GradCase {
    pub name: String,
    inputs: InputFn,
    build: BuildFn,
    /// Check at most this many elements per input tensor (evenly strided); `None` checks all.
    max_elements: Option<usize>,
    /// Number of trailing inputs bound as constants (targets); they are not perturbed.
    fixed: usize,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        inputs: impl Fn(&mut RngState) -> Vec<Tensor> + Send + Sync + 'static,
        build: impl Fn(&mut Graph, &[NodeRef]) -> Result<NodeRef> + Send + Sync + 'static,
    ) -> Self {
        GradCase { name: name.into(), inputs: Box::new(inputs), build: Box::new(build), max_elements: None, fixed: 0 }
    }

    pub fn max_elements(mut self, n: usize) -> Self {
        self.max_elements = Some(n);
        self
    }

    pub fn fixed_trailing(mut self, n: usize) -> Self {
        self.fixed = n;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OpReport {
    pub op: String,
    /// Instances checked in full.
    pub instances: usize,
    /// Instances discarded because a perturbation crossed a kink (relu or max-pool switch).
    pub redrawn: usize,
    pub elements_checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub ops: Vec<OpReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &OpReport> {
        self.ops.iter().filter(|o| !o.passed)
    }
}

pub struct GradCheck {
    pub seed: u64,
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    cases: Vec<GradCase>,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

impl GradCheck {
    /// The full suite over every op of the engine and the layer library.
    pub fn standard(seed: u64) -> Self {
        GradCheck {
            seed,
            instances: 10,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            cases: standard_cases(),
        }
    }

    pub fn empty(seed: u64) -> Self {
        GradCheck { cases: Vec::new(), ..Self::standard(seed) }
    }

    pub fn add_case(&mut self, case: GradCase) {
        self.cases.push(case);
    }

    pub fn case_names(&self) -> Vec<&str> {
        self.cases.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn retain(&mut self, keep: impl Fn(&str) -> bool) {
        self.cases.retain(|c| keep(&c.name));
    }

    pub fn run(&self) -> Result<GradCheckReport> {
        let ops = self
            .cases
            .iter()
            .enumerate()
            .map(|(i, case)| self.run_case(i as u64, case))
            .collect::<Result<Vec<_>>>()?;
        Ok(GradCheckReport { step: self.step, tolerance: self.tolerance, seed: self.seed, ops })
    }

    fn run_case(&self, case_index: u64, case: &GradCase) -> Result<OpReport> {
        let mut max_err: f64 = 0.0;
        let mut checked = 0;
        let mut finite = true;
        let (mut clean, mut redrawn) = (0, 0);
        let mut draw = 0u64;
        while clean < self.instances && redrawn <= MAX_REDRAWS_PER_INSTANCE * self.instances {
            let stream = draw;
            draw += 1;
            match self.run_instance(case_index, stream, case)? {
                Some(r) => {
                    clean += 1;
                    max_err = max_err.max(r.max_err);
                    checked += r.checked;
                    finite &= r.finite;
                }
                None => redrawn += 1,
            }
        }
        Ok(OpReport {
            op: case.name.clone(),
            instances: clean,
            redrawn,
            elements_checked: checked,
            max_rel_error: max_err,
            passed: finite && clean == self.instances && max_err <= self.tolerance,
        })
    }

    /// `None` when a failing element straddles a kink: the one-sided
    /// differences then disagree by at least the central-difference error.
    fn run_instance(&self, case_index: u64, stream: u64, case: &GradCase) -> Result<Option<InstanceResult>> {
        let mut rng = RngState::for_stream(mix(self.seed, case_index), stream);
        let inputs = (case.inputs)(&mut rng);
        let projection_seed = rng.next_u64();

        let eval = |inputs: &[Tensor]| -> Result<(Graph, Vec<NodeRef>, NodeRef)> {
            let mut g = Graph::new();
            let free = inputs.len() - case.fixed;
            let nodes: Vec<NodeRef> = inputs
                .iter()
                .enumerate()
                .map(|(k, t)| if k < free { g.leaf(t.clone()) } else { g.constant(t.clone()) })
                .collect();
            let out = (case.build)(&mut g, &nodes)?;
            let shape = g.shape(out).to_vec();
            let proj = RngState::new(projection_seed).normal_tensor(&shape)?;
            let proj = g.constant(proj);
            let prod = g.mul(out, proj)?;
            let loss = g.sum(prod)?;
            Ok((g, nodes, loss))
        };

        let (mut g, nodes, loss) = eval(&inputs)?;
        let base = g.value(loss).data()[0];
        g.backward(loss)?;
        let analytic: Vec<Tensor> = nodes.iter().map(|&n| g.grad_or_zeros(n)).collect();

        let mut result = InstanceResult { max_err: 0.0, checked: 0, finite: true };
        let mut perturbed = inputs.clone();
        for (k, input) in inputs.iter().enumerate().take(inputs.len() - case.fixed) {
            let stride = match case.max_elements {
                Some(m) if input.len() > m => input.len().div_ceil(m),
                _ => 1,
            };
            for e in (0..input.len()).step_by(stride) {
                let orig = input.data()[e];
                perturbed[k].data_mut()[e] = orig + self.step;
                let (g, _, l) = eval(&perturbed)?;
                let plus = g.value(l).data()[0];
                perturbed[k].data_mut()[e] = orig - self.step;
                let (g, _, l) = eval(&perturbed)?;
                let minus = g.value(l).data()[0];
                perturbed[k].data_mut()[e] = orig;

                let numeric = (plus - minus) / (2.0 * self.step);
                let a = analytic[k].data()[e];
                let err = relative_error(a, numeric);
                if err > self.tolerance {
                    let forward = (plus - base) / self.step;
                    let backward = (base - minus) / self.step;
                    if (forward - backward).abs() >= (a - numeric).abs() {
                        return Ok(None);
                    }
                }
                result.finite &= err.is_finite();
                result.max_err = result.max_err.max(err);
                result.checked += 1;
            }
        }
        Ok(Some(result))
    }
}

struct InstanceResult {
    max_err: f64,
    checked: usize,
    finite: bool,
}

fn normal(rng: &mut RngState, shape: &[usize]) -> Tensor {
    rng.normal_tensor(shape).expect("static shape")
}

/// Normal draws pushed at least `margin` away from zero (keeps relu off its kink).
fn away_from_zero(rng: &mut RngState, shape: &[usize], margin: f64) -> Tensor {
    normal(rng, shape).map(|v| if v.abs() < margin { v.signum() * margin + v } else { v })
}

/// A random permutation of well-separated values plus jitter, so every max
/// is unique by a margin larger than the finite-difference step.
fn distinct(rng: &mut RngState, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - n as f64 * 0.05).collect();
    rng.shuffle(&mut vals);
    let jitter: Vec<f64> = vals.iter().map(|v| v + rng.uniform_range(-0.02, 0.02)).collect();
    Tensor::from_vec(shape, jitter).expect("static shape")
}

fn probabilities(rng: &mut RngState, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_range(0.05, 0.95)).collect()).expect("static shape")
}

fn binary(rng: &mut RngState, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| if rng.uniform() < 0.5 { 0.0 } else { 1.0 }).collect()).expect("static shape")
}

fn conv_case(name: &str, x: [usize; 4], w: [usize; 4], stride: usize, padding: usize) -> GradCase {
    GradCase::new(
        name,
        move |r| vec![normal(r, &x), normal(r, &w).map(|v| v * 0.3), normal(r, &[w[0]])],
        move |g, n| nn::conv2d(g, n[0], &Conv2dParams { weight: n[1], bias: n[2], stride, padding }),
    )
}

fn standard_cases() -> Vec<GradCase> {
    let mut cases = vec![
        GradCase::new("add", |r| vec![normal(r, &[3, 4]), normal(r, &[3, 4])], |g, n| g.add(n[0], n[1])),
        GradCase::new("sub", |r| vec![normal(r, &[3, 4]), normal(r, &[3, 4])], |g, n| g.sub(n[0], n[1])),
        GradCase::new("mul", |r| vec![normal(r, &[3, 4]), normal(r, &[3, 4])], |g, n| g.mul(n[0], n[1])),
        GradCase::new(
            "max",
            |r| {
                let a = normal(r, &[12]);
                let offsets: Vec<f64> = (0..12)
                    .map(|_| {
                        let m = r.uniform_range(0.05, 1.0);
                        if r.uniform() < 0.5 { -m } else { m }
                    })
                    .collect();
                let b = Tensor::from_vec(&[12], a.data().iter().zip(&offsets).map(|(x, o)| x + o).collect())
                    .expect("static shape");
                vec![a, b]
            },
            |g, n| g.max(n[0], n[1]),
        ),
        GradCase::new("mul_scalar_broadcast", |r| vec![normal(r, &[5]), normal(r, &[1])], |g, n| g.mul(n[0], n[1])),
        GradCase::new("matmul", |r| vec![normal(r, &[4, 3]), normal(r, &[3, 5])], |g, n| g.matmul(n[0], n[1])),
        GradCase::new("sum", |r| vec![normal(r, &[2, 3])], |g, n| g.sum(n[0])),
        GradCase::new("mean", |r| vec![normal(r, &[2, 3])], |g, n| g.mean(n[0])),
        GradCase::new("scale", |r| vec![normal(r, &[4])], |g, n| g.scale(n[0], -1.7)),
        GradCase::new("reshape", |r| vec![normal(r, &[2, 6])], |g, n| g.reshape(n[0], &[3, 4])),
        GradCase::new(
            "add_channel_bias",
            |r| vec![normal(r, &[2, 3, 2, 2]), normal(r, &[3])],
            |g, n| g.add_channel_bias(n[0], n[1]),
        ),
        conv_case("conv2d", [1, 3, 8, 8], [4, 3, 3, 3], 1, 1),
        conv_case("conv2d_stride2", [2, 2, 7, 7], [3, 2, 3, 3], 2, 0),
        conv_case("conv2d_1x1", [2, 4, 3, 3], [2, 4, 1, 1], 1, 0),
        conv_case("conv2d_5x5_same", [1, 2, 6, 5], [2, 2, 5, 5], 1, 2),
        GradCase::new("maxpool2d", |r| vec![distinct(r, &[2, 2, 4, 4])], |g, n| nn::maxpool2d(g, n[0])),
        GradCase::new("upsample2x_nearest", |r| vec![normal(r, &[1, 2, 3, 2])], |g, n| nn::upsample2x_nearest(g, n[0])),
        GradCase::new(
            "concat_channels",
            |r| vec![normal(r, &[2, 2, 3, 3]), normal(r, &[2, 1, 3, 3])],
            |g, n| nn::concat_channels(g, n[0], n[1]),
        ),
        GradCase::new("relu", |r| vec![away_from_zero(r, &[3, 5], 0.05)], |g, n| nn::relu(g, n[0])),
        GradCase::new("sigmoid", |r| vec![normal(r, &[3, 5]).map(|v| 3.0 * v)], |g, n| nn::sigmoid_node(g, n[0])),
        GradCase::new("identity", |r| vec![normal(r, &[4])], |g, n| {
            nn::activation(g, nn::ActivationKind::Identity, n[0])
        }),
        GradCase::new("global_avg_pool", |r| vec![normal(r, &[2, 3, 3, 4])], |g, n| nn::global_avg_pool(g, n[0])),
        GradCase::new("avg_pool", |r| vec![normal(r, &[1, 2, 4, 4])], |g, n| nn::avg_pool(g, n[0], 2)),
        GradCase::new(
            "linear",
            |r| vec![normal(r, &[3, 4]), normal(r, &[4, 2]), normal(r, &[2])],
            |g, n| nn::linear(g, n[0], n[1], n[2]),
        ),
        GradCase::new(
            "bce_loss",
            |r| {
                let p = probabilities(r, &[2, 5]);
                let t = binary(r, &[2, 5]);
                vec![p, t]
            },
            |g, n| {
                let target = g.value(n[1]).clone();
                nn::bce_loss(g, n[0], &target, 1.0)
            },
        )
        .fixed_trailing(1),
        GradCase::new(
            "bce_loss_pos_weight",
            |r| vec![probabilities(r, &[6]), binary(r, &[6])],
            |g, n| {
                let target = g.value(n[1]).clone();
                nn::bce_loss(g, n[0], &target, 2.5)
            },
        )
        .fixed_trailing(1),
        GradCase::new(
            "soft_dice_loss",
            |r| vec![probabilities(r, &[1, 1, 4, 4]), binary(r, &[1, 1, 4, 4])],
            |g, n| {
                let target = g.value(n[1]).clone();
                nn::soft_dice_loss(g, n[0], &target)
            },
        )
        .fixed_trailing(1),
        GradCase::new(
            "soft_dice_loss_batch",
            |r| vec![probabilities(r, &[3, 1, 3, 3]), binary(r, &[3, 1, 3, 3])],
            |g, n| {
                let target = g.value(n[1]).clone();
                nn::soft_dice_loss(g, n[0], &target)
            },
        )
        .fixed_trailing(1),
        GradCase::new(
            "chain5",
            |r| vec![normal(r, &[3, 4]), normal(r, &[4, 2]), normal(r, &[2])],
            |g, n| {
                let h = g.matmul(n[0], n[1])?;
                let h = g.add_channel_bias(h, n[2])?;
                let s = nn::sigmoid_node(g, h)?;
                let sq = g.mul(s, h)?;
                g.mean(sq)
            },
        ),
    ];
    cases.push(model_case("multitask_joint_loss", tiny_config(false)));
    cases.push(model_case("multitask_joint_loss_seg_feeds_heads", tiny_config(true)));
    cases
}

fn tiny_config(seg_feeds_heads: bool) -> ModelConfig {
    ModelConfig {
        input_size: [8, 8],
        base_channels: 2,
        stages: 2,
        inception_enabled: true,
        seg_feeds_heads,
        loss_weights: LossWeights { seg: 1.0, melanoma: 0.7, sk: 1.3 },
    }
}

/// Whole-model check: gradients of the joint loss with respect to every parameter.
fn model_case(name: &str, cfg: ModelConfig) -> GradCase {
    cfg.validate().expect("valid tiny config");
    // Weights at std sqrt(1 / fan_in) keep head logits moderate; near-saturated
    // sigmoids make ln(1 - p) cancellation noise dominate the central difference.
    let input_specs: Vec<(Vec<usize>, f64)> = cfg
        .parameter_specs()
        .into_iter()
        .map(|s| (s.shape, s.fan_in.map_or(0.1, |f| (1.0 / f as f64).sqrt())))
        .collect();
    let [h, w] = cfg.input_size;
    let n = 2;
    let cfg_build = cfg.clone();
    GradCase::new(
        name,
        move |r| {
            let mut v: Vec<Tensor> = input_specs.iter().map(|(s, std)| normal(r, s).map(|x| std * x)).collect();
            v.push(normal(r, &[n, 3, h, w]));
            v.push(binary(r, &[n, 1, h, w]));
            v.push(Tensor::from_vec(&[n], vec![1.0, 0.0]).expect("static"));
            v.push(Tensor::from_vec(&[n], vec![0.0, 0.0]).expect("static"));
            v
        },
        move |g, nodes| {
            let np = nodes.len() - 4;
            let out = forward_graph(&cfg_build, g, &nodes[..np], nodes[np], Heads::ALL)?;
            let targets = Targets {
                mask: g.value(nodes[np + 1]).clone(),
                melanoma: g.value(nodes[np + 2]).clone(),
                sk: g.value(nodes[np + 3]).clone(),
            };
            joint_loss(g, &out.all()?, &targets, &cfg_build.loss_weights, &PosWeights::default())
        },
    )
    .max_elements(40)
    .fixed_trailing(3)
}

/// Test fixture: a scaling op whose backward is deliberately wrong by a factor of two.
#[doc(hidden)]
pub struct FaultyScale;

impl Operation for FaultyScale {
    fn name(&self) -> &'static str {
        "faulty_scale"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad_out.map(|g| 2.0 * g))]
    }
}

/// A case exercising [`FaultyScale`]; it must fail the check.
#[doc(hidden)]
pub fn faulty_case() -> GradCase {
    GradCase::new(
        "faulty_scale",
        |r| vec![normal(r, &[4])],
        |g, n| {
            let v = g.value(n[0]).clone();
            g.record(v, Box::new(FaultyScale), &[n[0]])
        },
    )
}
