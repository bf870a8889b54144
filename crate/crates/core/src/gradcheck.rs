//! Finite-difference verification of every differentiable op and of the
//! assembled network.
//!
//! Each case draws seeded inputs, reduces the op output to a scalar with a
//! fixed random weighting, and compares the reverse-mode gradient of every
//! input against central differences.

use alloc::boxed::Box;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{
    self, Affine, AttentionWeights, ConvWeights, CrossWeights, EncoderLayerWeights, FeatureGraph,
    ForwardCtx, GatWeights, HeadWeights, ModelConfig, Norm, ParamSet,
};
use crate::rng::{stream_id_for, RngStream};
use crate::tensor::{fd_element, Activation, Tensor};

pub const FD_STEP: f64 = 1e-5;
/// Below this magnitude an analytic element is compared absolutely.
pub const SMALL_GRAD: f64 = 1e-6;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const INSTANCES: usize = 20;
/// Smaller steps tried when a stencil straddles a kink (relu, max-pool
/// switch); a wrong gradient disagrees at every step.
pub const REFINE_STEPS: [f64; 2] = [1e-6, 1e-7];

/// Worst disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradDiff {
    /// Max `|a − n| / max(|a|, |n|)` over elements with `|a| ≥ SMALL_GRAD`.
    pub worst_rel: f64,
    /// Max `|a − n|` over elements with `|a| < SMALL_GRAD`.
    pub worst_abs: f64,
    pub checked: usize,
    /// Elements re-measured at a smaller step.
    pub refined: usize,
}

impl GradDiff {
    pub fn between(analytic: &[f64], numeric: &[f64]) -> Self {
        let mut d = GradDiff::default();
        for (&a, &n) in analytic.iter().zip(numeric) {
            let err = (a - n).abs();
            if a.abs() < SMALL_GRAD {
                d.worst_abs = d.worst_abs.max(err);
            } else {
                d.worst_rel = d.worst_rel.max(err / a.abs().max(n.abs()));
            }
            // NaN never compares greater, so carry it explicitly.
            if err.is_nan() {
                d.worst_rel = f64::NAN;
            }
        }
        d.checked = analytic.len();
        d
    }

    pub fn merge(self, other: GradDiff) -> GradDiff {
        let pick = |a: f64, b: f64| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) };
        GradDiff {
            worst_rel: pick(self.worst_rel, other.worst_rel),
            worst_abs: pick(self.worst_abs, other.worst_abs),
            checked: self.checked + other.checked,
            refined: self.refined + other.refined,
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.worst_rel < tolerance && self.worst_abs < SMALL_GRAD
    }
}

fn agrees(a: f64, n: f64, tolerance: f64) -> bool {
    let err = (a - n).abs();
    if a.abs() < SMALL_GRAD {
        err < SMALL_GRAD
    } else {
        err / a.abs().max(n.abs()) < tolerance
    }
}

/// Central difference at [`FD_STEP`]; on disagreement with `analytic`, the
/// closest estimate over [`REFINE_STEPS`]. The flag reports a refinement.
fn numeric_near<F>(f: &F, shape: &[usize], base: &[f64], k: usize, analytic: f64, tolerance: f64) -> Result<(f64, bool)>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let mut n = fd_element(f, shape, base, k, FD_STEP)?;
    if agrees(analytic, n, tolerance) {
        return Ok((n, false));
    }
    for h in REFINE_STEPS {
        let m = fd_element(f, shape, base, k, h)?;
        if (analytic - m).abs() < (analytic - n).abs() {
            n = m;
        }
    }
    Ok((n, true))
}

/// Outcome of one named check over all its instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub diff: GradDiff,
    pub tolerance: f64,
    pub instances: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.diff.passes(self.tolerance)
    }
}

type CaseFn = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

/// Inputs and the function under test for one instance.
pub struct Case {
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    pub f: CaseFn,
}

/// Analytic vs numeric gradients of `sum(f(inputs) ⊙ R)` for every element
/// of every input. `corrupt` perturbs the analytic side to exercise failure
/// detection.
pub fn check_case(case: &Case, rng: &mut RngStream, corrupt: bool) -> Result<GradDiff> {
    let consts: Vec<Tensor> = case
        .inputs
        .iter()
        .map(|(s, d)| Tensor::new(s, d.clone()))
        .collect::<Result<_>>()?;
    let probe = (case.f)(&consts)?;
    let weights = Tensor::new(
        probe.shape(),
        (0..probe.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )?;
    let loss = |ts: &[Tensor]| -> Result<Tensor> { Ok((case.f)(ts)?.mul(&weights)?.sum()) };

    let leaves: Vec<Tensor> = case
        .inputs
        .iter()
        .map(|(s, d)| Tensor::param(s, d.clone()))
        .collect::<Result<_>>()?;
    loss(&leaves)?.backward()?;

    let mut diff = GradDiff::default();
    for (i, leaf) in leaves.iter().enumerate() {
        let mut analytic = leaf.grad_or_zeros();
        if corrupt {
            analytic.iter_mut().for_each(|g| *g = *g * 1.5 + 1e-3);
        }
        let (shape, base) = &case.inputs[i];
        let one = |t: &Tensor| -> Result<Tensor> {
            let mut ts = consts.clone();
            ts[i] = t.clone();
            loss(&ts)
        };
        let mut numeric = Vec::with_capacity(base.len());
        let mut refined = 0;
        for (k, &a) in analytic.iter().enumerate() {
            let (n, r) = numeric_near(&one, shape, base, k, a, OP_TOLERANCE)?;
            numeric.push(n);
            refined += r as usize;
        }
        diff = diff.merge(GradDiff { refined, ..GradDiff::between(&analytic, &numeric) });
    }
    Ok(diff)
}

fn uniform(rng: &mut RngStream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-scale, scale)).collect()
}

/// Values bounded away from zero, for inputs to kinked activations.
fn off_kink(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.uniform(0.05, 1.0);
            if rng.bernoulli(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn input(shape: &[usize], data: Vec<f64>) -> (Vec<usize>, Vec<f64>) {
    (shape.to_vec(), data)
}

fn rand_input(rng: &mut RngStream, shape: &[usize], scale: f64) -> (Vec<usize>, Vec<f64>) {
    let n = shape.iter().product();
    input(shape, uniform(rng, n, scale))
}

fn affine(ts: &[Tensor], at: usize) -> Affine {
    Affine {
        weight: ts[at].clone(),
        bias: ts[at + 1].clone(),
    }
}

fn attention_weights(ts: &[Tensor], at: usize) -> AttentionWeights {
    AttentionWeights {
        q: affine(ts, at),
        k: affine(ts, at + 2),
        v: affine(ts, at + 4),
        out: affine(ts, at + 6),
    }
}

fn push_attention(rng: &mut RngStream, inputs: &mut Vec<(Vec<usize>, Vec<f64>)>, d_in: usize, d: usize) {
    for proj in 0..4 {
        let fan = if proj == 3 { d } else { d_in };
        inputs.push(rand_input(rng, &[fan, d], 0.6));
        inputs.push(rand_input(rng, &[d], 0.2));
    }
}

/// One instance of the named op. Unknown names are a configuration error.
pub fn op_case(name: &str, rng: &mut RngStream, instance: usize) -> Result<Case> {
    let r = rng;
    let case = |inputs: Vec<(Vec<usize>, Vec<f64>)>, f: CaseFn| Case { inputs, f };
    Ok(match name {
        "add" => case(vec![rand_input(r, &[3, 4], 1.0), rand_input(r, &[3, 4], 1.0)], Box::new(|t| t[0].add(&t[1]))),
        "sub" => case(vec![rand_input(r, &[3, 4], 1.0), rand_input(r, &[3, 4], 1.0)], Box::new(|t| t[0].sub(&t[1]))),
        "mul" => case(vec![rand_input(r, &[3, 4], 1.0), rand_input(r, &[3, 4], 1.0)], Box::new(|t| t[0].mul(&t[1]))),
        "scale" => {
            let k = r.uniform(-2.0, 2.0);
            case(vec![rand_input(r, &[5], 1.0)], Box::new(move |t| Ok(t[0].scale(k))))
        }
        "add_broadcast" => case(
            vec![rand_input(r, &[2, 3, 4], 1.0), rand_input(r, &[4], 1.0)],
            Box::new(|t| t[0].add_broadcast(&t[1])),
        ),
        "sum" => case(vec![rand_input(r, &[2, 5], 1.0)], Box::new(|t| Ok(t[0].sum()))),
        "mean" => case(vec![rand_input(r, &[2, 5], 1.0)], Box::new(|t| Ok(t[0].mean()))),
        "mean_axis" => {
            let axis = instance % 3;
            case(vec![rand_input(r, &[2, 3, 4], 1.0)], Box::new(move |t| t[0].mean_axis(axis)))
        }
        "matmul" => case(
            vec![rand_input(r, &[3, 4], 1.0), rand_input(r, &[4, 2], 1.0)],
            Box::new(|t| t[0].matmul(&t[1])),
        ),
        "bmm" => case(
            vec![rand_input(r, &[2, 3, 4], 1.0), rand_input(r, &[2, 4, 5], 1.0)],
            Box::new(|t| t[0].bmm(&t[1])),
        ),
        "reshape" => case(vec![rand_input(r, &[2, 6], 1.0)], Box::new(|t| t[0].reshape(&[3, 4]))),
        "permute" => case(vec![rand_input(r, &[2, 3, 4], 1.0)], Box::new(|t| t[0].permute(&[2, 0, 1]))),
        "transpose_last2" => case(vec![rand_input(r, &[2, 3, 4], 1.0)], Box::new(|t| t[0].transpose_last2())),
        "concat_last" => case(
            vec![rand_input(r, &[2, 3], 1.0), rand_input(r, &[2, 2], 1.0)],
            Box::new(|t| Tensor::concat_last(&[&t[0], &t[1]])),
        ),
        "narrow0" => case(vec![rand_input(r, &[4, 3], 1.0)], Box::new(|t| t[0].narrow0(1, 2))),
        "outer_add" => case(
            vec![rand_input(r, &[2, 3], 1.0), rand_input(r, &[2, 3], 1.0)],
            Box::new(|t| t[0].outer_add(&t[1])),
        ),
        "linear" => case(
            vec![rand_input(r, &[2, 3, 4], 1.0), rand_input(r, &[4, 5], 1.0), rand_input(r, &[5], 1.0)],
            Box::new(|t| t[0].linear(&t[1], Some(&t[2]))),
        ),
        "conv2d" => {
            let (k, stride, pad) = if instance.is_multiple_of(2) { (3, 1, 1) } else { (2, 2, 0) };
            case(
                vec![
                    rand_input(r, &[2, 2, 6, 6], 1.0),
                    rand_input(r, &[3, 2, k, k], 1.0),
                    rand_input(r, &[3], 1.0),
                ],
                Box::new(move |t| t[0].conv2d(&t[1], &t[2], stride, pad)),
            )
        }
        "max_pool2d" => {
            // Distinct values at least 0.04 apart keep every window's argmax
            // stable under the finite-difference step.
            let n = 2 * 5 * 5;
            let mut order: Vec<usize> = (0..n).collect();
            r.shuffle(&mut order);
            let data = order.iter().map(|&i| i as f64 * 0.05 + r.uniform(0.0, 0.01)).collect();
            let (k, s) = if instance.is_multiple_of(2) { (2, 2) } else { (3, 1) };
            case(vec![input(&[1, 2, 5, 5], data)], Box::new(move |t| t[0].max_pool2d(k, s)))
        }
        "softmax" => case(vec![rand_input(r, &[3, 5], 3.0)], Box::new(|t| Ok(t[0].softmax()))),
        "masked_softmax" => {
            let mask: Rc<[bool]> = (0..16)
                .map(|i: usize| (i / 4).abs_diff(i % 4) <= 1)
                .collect::<Vec<_>>()
                .into();
            case(
                vec![rand_input(r, &[2, 4, 4], 3.0)],
                Box::new(move |t| t[0].masked_softmax(mask.clone())),
            )
        }
        "layer_norm" => case(
            vec![rand_input(r, &[3, 6], 2.0), rand_input(r, &[6], 1.5), rand_input(r, &[6], 1.0)],
            Box::new(|t| t[0].layer_norm(&t[1], &t[2], model::LN_EPS)),
        ),
        "relu" => case(vec![input(&[12], off_kink(r, 12))], Box::new(|t| Ok(t[0].relu()))),
        "gelu" => case(vec![rand_input(r, &[12], 3.0)], Box::new(|t| Ok(t[0].gelu()))),
        "leaky_relu" => case(
            vec![input(&[12], off_kink(r, 12))],
            Box::new(|t| Ok(t[0].activation(Activation::LeakyRelu(0.2)))),
        ),
        "dropout" => {
            let stream = r.derive(7);
            case(
                vec![rand_input(r, &[4, 5], 1.0)],
                Box::new(move |t| t[0].dropout(0.3, true, &stream)),
            )
        }
        "cross_entropy" => {
            let labels: Vec<usize> = (0..4).map(|_| r.below(5) as usize).collect();
            case(vec![rand_input(r, &[4, 5], 3.0)], Box::new(move |t| t[0].cross_entropy(&labels)))
        }
        "attention" => {
            let mut inputs = vec![rand_input(r, &[1, 4, 8], 1.0)];
            push_attention(r, &mut inputs, 8, 8);
            case(
                inputs,
                Box::new(|t| model::multi_head_self_attention(&t[0], 2, &attention_weights(t, 1), &mut ForwardCtx::eval())),
            )
        }
        "transformer_encoder" => {
            let mut inputs = vec![rand_input(r, &[1, 4, 8], 1.0)];
            inputs.push(input(&[8], (0..8).map(|_| r.uniform(0.5, 1.5)).collect()));
            inputs.push(rand_input(r, &[8], 0.2));
            push_attention(r, &mut inputs, 8, 8);
            inputs.push(input(&[8], (0..8).map(|_| r.uniform(0.5, 1.5)).collect()));
            inputs.push(rand_input(r, &[8], 0.2));
            inputs.push(rand_input(r, &[8, 32], 0.4));
            inputs.push(rand_input(r, &[32], 0.2));
            inputs.push(rand_input(r, &[32, 8], 0.2));
            inputs.push(rand_input(r, &[8], 0.2));
            case(
                inputs,
                Box::new(|t| {
                    let w = EncoderLayerWeights {
                        ln1: Norm { gamma: t[1].clone(), beta: t[2].clone() },
                        attn: attention_weights(t, 3),
                        ln2: Norm { gamma: t[11].clone(), beta: t[12].clone() },
                        fc1: affine(t, 13),
                        fc2: affine(t, 15),
                    };
                    model::transformer_encoder(&t[0], &[w], 2, 0.1, &mut ForwardCtx::eval())
                }),
            )
        }
        "cnn_branch" => case(
            vec![
                rand_input(r, &[1, 3, 8, 8], 1.0),
                rand_input(r, &[4, 3, 3, 3], 0.5),
                rand_input(r, &[4], 0.2),
            ],
            Box::new(|t| {
                let w = ConvWeights { weight: t[1].clone(), bias: t[2].clone() };
                model::cnn_branch(&t[0], &[w], 0.1, &mut ForwardCtx::eval())
            }),
        ),
        "cross_attention_fuse" => {
            let mut inputs = vec![rand_input(r, &[1, 4, 2, 2], 1.0), rand_input(r, &[1, 4, 8], 1.0)];
            inputs.push(rand_input(r, &[4, 8], 0.5));
            inputs.push(rand_input(r, &[8], 0.2));
            push_attention(r, &mut inputs, 8, 8);
            inputs.push(rand_input(r, &[16, 8], 0.3));
            inputs.push(rand_input(r, &[8], 0.2));
            case(
                inputs,
                Box::new(|t| {
                    let w = CrossWeights { kv: affine(t, 2), attn: attention_weights(t, 4), fuse: affine(t, 12) };
                    model::cross_attention_fuse(&t[0], &t[1], &w, 2, &mut ForwardCtx::eval())
                }),
            )
        }
        "graph_attention" => {
            let adjacency: Rc<[bool]> = model::grid8_adjacency(3, 3).into();
            case(
                vec![
                    rand_input(r, &[1, 9, 4], 1.0),
                    rand_input(r, &[4, 4], 0.7),
                    rand_input(r, &[4, 1], 0.7),
                    rand_input(r, &[4, 1], 0.7),
                ],
                Box::new(move |t| {
                    let g = FeatureGraph { nodes: t[0].clone(), adjacency: adjacency.clone() };
                    let w = GatWeights { weight: t[1].clone(), a_src: t[2].clone(), a_dst: t[3].clone() };
                    model::graph_attention(&g, &w, 0.2, model::GRAPH_ACTIVATION, &mut ForwardCtx::eval())
                }),
            )
        }
        "global_average_pool" => case(vec![rand_input(r, &[2, 5, 3], 1.0)], Box::new(|t| model::global_average_pool(&t[0]))),
        "classify_head" => case(
            vec![
                rand_input(r, &[2, 8], 1.0),
                input(&[8], (0..8).map(|_| r.uniform(0.5, 1.5)).collect()),
                rand_input(r, &[8], 0.2),
                rand_input(r, &[8, 5], 0.5),
                rand_input(r, &[5], 0.2),
            ],
            Box::new(|t| {
                let w = HeadWeights { norm: Norm { gamma: t[1].clone(), beta: t[2].clone() }, out: affine(t, 3) };
                model::classify_head(&t[0], &w, 0.1, &mut ForwardCtx::eval())
            }),
        ),
        "rotation_head" => case(
            vec![rand_input(r, &[2, 8], 1.0), rand_input(r, &[8, 4], 0.5), rand_input(r, &[4], 0.2)],
            Box::new(|t| model::rotation_head(&t[0], &affine(t, 1))),
        ),
        other => return Err(Error::Config(format!("no gradient check named `{other}`"))),
    })
}

/// Every op checked by [`run_suite`], in order; the full model runs last
/// under the name `model`.
pub const OP_NAMES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "add_broadcast",
    "sum",
    "mean",
    "mean_axis",
    "matmul",
    "bmm",
    "reshape",
    "permute",
    "transpose_last2",
    "concat_last",
    "narrow0",
    "outer_add",
    "linear",
    "conv2d",
    "max_pool2d",
    "softmax",
    "masked_softmax",
    "layer_norm",
    "relu",
    "gelu",
    "leaky_relu",
    "dropout",
    "cross_entropy",
    "attention",
    "transformer_encoder",
    "cnn_branch",
    "cross_attention_fuse",
    "graph_attention",
    "global_average_pool",
    "classify_head",
    "rotation_head",
];

pub fn check_op(name: &'static str, seed: u64, instances: usize, corrupt: bool) -> Result<CheckResult> {
    let mut diff = GradDiff::default();
    for i in 0..instances {
        let mut rng = RngStream::new(seed, stream_id_for(name)).derive(i as u64);
        let case = op_case(name, &mut rng, i)?;
        diff = diff.merge(check_case(&case, &mut rng, corrupt)?);
    }
    Ok(CheckResult {
        name,
        diff,
        tolerance: OP_TOLERANCE,
        instances,
    })
}

/// End-to-end check of the combined loss of a freshly initialized model in
/// eval mode. Every input pixel is checked, plus `coords_per_param` sampled
/// elements of every parameter tensor.
pub fn check_model(
    cfg: &ModelConfig,
    seed: u64,
    instances: usize,
    coords_per_param: usize,
    corrupt: bool,
) -> Result<CheckResult> {
    cfg.validate()?;
    let mut diff = GradDiff::default();
    for i in 0..instances {
        let mut rng = RngStream::new(seed, stream_id_for("model")).derive(i as u64);
        diff = diff.merge(model_instance(cfg, &mut rng, coords_per_param, corrupt)?);
    }
    Ok(CheckResult {
        name: "model",
        diff,
        tolerance: MODEL_TOLERANCE,
        instances,
    })
}

fn model_instance(cfg: &ModelConfig, rng: &mut RngStream, coords: usize, corrupt: bool) -> Result<GradDiff> {
    let params = ParamSet::init(cfg, rng.next_u64())?;
    let b = 2;
    let s = cfg.image_size;
    let x_shape = [b, 3, s, s];
    let x_data = uniform(rng, b * 3 * s * s, 1.5);
    let labels: Vec<usize> = (0..b).map(|_| rng.below(cfg.num_classes as u64) as usize).collect();
    let rot: Vec<usize> = (0..b).map(|_| rng.below(4) as usize).collect();
    let lambda = cfg.rotation_loss_weight;

    let loss = |p: &ParamSet, x: &Tensor, trainable: bool| -> Result<(Tensor, model::Bindings)> {
        let bound = p.bind(trainable);
        let out = model::model_forward(cfg, &bound, x, &mut ForwardCtx::eval())?;
        let l = out
            .class_logits
            .cross_entropy(&labels)?
            .add(&out.rot_logits.cross_entropy(&rot)?.scale(lambda))?;
        Ok((l, bound))
    };

    let x_leaf = Tensor::param(&x_shape, x_data.clone())?;
    let (l, bound) = loss(&params, &x_leaf, true)?;
    l.backward()?;
    let grads = bound.grads();
    let x_grad = x_leaf.grad_or_zeros();
    let bump = |g: f64| if corrupt { g * 1.5 + 1e-3 } else { g };

    let x_const = Tensor::new(&x_shape, x_data.clone())?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut refined = 0;

    let input_fn = |t: &Tensor| -> Result<Tensor> { Ok(loss(&params, t, false)?.0) };
    let pixel_picks: Vec<usize> = (0..coords.max(1) * 4).map(|_| rng.below(x_data.len() as u64) as usize).collect();
    for k in pixel_picks {
        let a = bump(x_grad[k]);
        let (n, r) = numeric_near(&input_fn, &x_shape, &x_data, k, a, MODEL_TOLERANCE)?;
        analytic.push(a);
        numeric.push(n);
        refined += r as usize;
    }

    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        let p = params.get(name).expect("listed name");
        let g = &grads.get(name).expect("bound name").data;
        for _ in 0..coords {
            let k = rng.below(p.data.len() as u64) as usize;
            let f = |t: &Tensor| -> Result<Tensor> {
                let mut q = params.clone();
                q.get_mut(name).expect("listed name").data = t.data().to_vec();
                Ok(loss(&q, &x_const, false)?.0)
            };
            let a = bump(g[k]);
            let (n, r) = numeric_near(&f, &p.shape, &p.data, k, a, MODEL_TOLERANCE)?;
            analytic.push(a);
            numeric.push(n);
            refined += r as usize;
        }
    }
    Ok(GradDiff { refined, ..GradDiff::between(&analytic, &numeric) })
}

/// The whole suite: every op at [`INSTANCES`] instances, then the tiny model.
/// `corrupt` names one check whose analytic gradients are deliberately
/// perturbed.
pub fn run_suite(seed: u64, corrupt: Option<&str>) -> Result<Vec<CheckResult>> {
    if let Some(c) = corrupt {
        if c != "model" && !OP_NAMES.contains(&c) {
            return Err(Error::Config(format!("no gradient check named `{c}`")));
        }
    }
    let mut out = Vec::with_capacity(OP_NAMES.len() + 1);
    for &name in OP_NAMES {
        out.push(check_op(name, seed, INSTANCES, corrupt == Some(name))?);
    }
    out.push(check_model(&ModelConfig::tiny(), seed, INSTANCES, 2, corrupt == Some("model"))?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_classifies_small_and_large_elements() {
        let d = GradDiff::between(&[1.0, 1e-8, -2.0], &[1.00001, 3e-7, -2.0]);
        assert!((d.worst_rel - 1e-5 / 1.00001).abs() < 1e-12);
        assert!((d.worst_abs - 2.9e-7).abs() < 1e-15);
        assert!(d.passes(1e-4));
        assert!(!GradDiff::between(&[1.0], &[1.1]).passes(1e-4));
        assert!(!GradDiff::between(&[0.0], &[2e-6]).passes(1e-4));
        assert!(!GradDiff::between(&[1.0], &[f64::NAN]).passes(1e-4));
    }

    #[test]
    fn kink_inside_the_stencil_is_refined_but_wrong_gradients_are_not_rescued() {
        let relu = |t: &Tensor| -> Result<Tensor> { Ok(t.relu().sum()) };
        let x = [3e-6];
        let coarse = fd_element(&relu, &[1], &x, 0, FD_STEP).unwrap();
        assert!((coarse - 0.65).abs() < 1e-9);
        let (n, refined) = numeric_near(&relu, &[1], &x, 0, 1.0, OP_TOLERANCE).unwrap();
        assert!(refined && (n - 1.0).abs() < 1e-9);
        let (n, refined) = numeric_near(&relu, &[1], &x, 0, 1.5, OP_TOLERANCE).unwrap();
        assert!(refined && !agrees(1.5, n, OP_TOLERANCE));
        let (_, refined) = numeric_near(&relu, &[1], &[0.5], 0, 1.0, OP_TOLERANCE).unwrap();
        assert!(!refined);
    }

    #[test]
    fn every_op_passes_and_corruption_is_caught() {
        for &name in OP_NAMES {
            let r = check_op(name, 11, 3, false).unwrap();
            assert!(r.passed(), "{name}: {:?}", r.diff);
            assert!(r.diff.checked > 0);
            let bad = check_op(name, 11, 1, true).unwrap();
            assert!(!bad.passed(), "{name} corruption went unnoticed");
        }
    }

    #[test]
    fn unknown_names_are_config_errors() {
        assert!(matches!(op_case("nope", &mut RngStream::new(0, 0), 0), Err(Error::Config(_))));
        assert!(matches!(run_suite(0, Some("nope")), Err(Error::Config(_))));
    }

    #[test]
    fn tiny_model_matches_finite_differences() {
        let r = check_model(&ModelConfig::tiny(), 5, 2, 2, false).unwrap();
        assert!(r.passed(), "{:?}", r.diff);
        let bad = check_model(&ModelConfig::tiny(), 5, 1, 1, true).unwrap();
        assert!(!bad.passed());
    }
}
