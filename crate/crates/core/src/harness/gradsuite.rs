//! Finite-difference checks of every tape primitive and of the composite
//! layer and backbone.
//!
//! Every case is a scalar function of named arrays held in a parameter
//! store, inputs included. The analytic gradient comes from a reverse sweep
//! at the case's precision; the reference is always a central difference
//! evaluated in double precision, so single-precision cases measure the
//! error of the `f32` backward pass rather than `f32` rounding in the probe.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnStats, Mode, ParamId, ParamStore, Real, Result, Session, Tensor, Var};
use crate::skeleton::build_graph;
use crate::stgcn::{
    backbone_forward, init_backbone, stgcn_layer, BackboneConfig, BackboneParams, LayerParams,
    PartitionedAdjacency, DEFAULT_ALPHA,
};

const STEP: f64 = 1e-5;
const KINK_TOL: f64 = 1e-6;
const SESSION_SEED: u64 = 17;
const DOUBLE_TOL: f64 = 1e-5;
const SINGLE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Double,
    Single,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Double => "f64",
            Self::Single => "f32",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub name: String,
    pub precision: Precision,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because they straddle a kink.
    pub excluded: usize,
    pub tol: f64,
    pub passed: bool,
}

impl fmt::Display for GradCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} {:>4} {:>10.3e} < {:<6.0e} {:>6} checked {:>4} kinks  {}",
            self.name,
            self.precision.to_string(),
            self.max_rel_error,
            self.tol,
            self.checked,
            self.excluded,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

trait Objective {
    fn loss<T: Real>(&self, sess: &mut Session<T>, store: &ParamStore<T>) -> Result<Var>;
}

fn session_loss<T: Real, O: Objective>(
    obj: &O,
    store: &ParamStore<T>,
) -> Result<(Session<T>, Var)> {
    let mut sess = Session::new(Mode::Train, SESSION_SEED);
    let loss = obj.loss(&mut sess, store)?;
    Ok((sess, loss))
}

fn analytic<T: Real, O: Objective>(
    obj: &O,
    store: &ParamStore<T>,
) -> Result<Vec<Option<Vec<f64>>>> {
    let (mut sess, loss) = session_loss(obj, store)?;
    let grads = sess.backward(loss, store)?;
    Ok(store
        .iter()
        .map(|(id, _)| grads.get(id).map(Tensor::to_f64))
        .collect())
}

fn value<O: Objective>(obj: &O, store: &ParamStore<f64>) -> Result<f64> {
    let (sess, loss) = session_loss(obj, store)?;
    Ok(sess.tape.value(loss).data()[0])
}

/// Along a smooth function the three second differences of five samples
/// spaced `STEP` apart agree to `O(STEP³)`. A kink inside the window shifts
/// one of them by about `STEP · jump`, which is twice `STEP` times the error
/// it induces in the central difference.
fn straddles_kink(f: [f64; 5], slope: f64) -> bool {
    let d: Vec<f64> = f.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect();
    let spread =
        d.iter().fold(f64::MIN, |m, &x| m.max(x)) - d.iter().fold(f64::MAX, |m, &x| m.min(x));
    spread > KINK_TOL * STEP * slope.abs().max(1e-3)
}

/// Up to `max` evenly spaced coordinates of an `n`-element array.
fn coords(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|i| i * n / max).collect()
    }
}

fn check<O: Objective>(
    name: &str,
    obj: &O,
    store: &ParamStore<f64>,
    precision: Precision,
    max_coords: usize,
) -> Result<GradCase> {
    let grads = match precision {
        Precision::Double => analytic(obj, store)?,
        Precision::Single => analytic(obj, &store.cast::<f32>())?,
    };
    let f0 = value(obj, store)?;
    let mut work = store.clone();
    let mut pairs = Vec::new();
    let mut excluded = 0;
    let ids: Vec<ParamId> = store
        .iter()
        .filter(|(_, p)| p.learnable)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let n = store.get(id).numel();
        for j in coords(n, max_coords) {
            let x0 = store.get(id).data()[j];
            let mut at = |k: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[j] = x0 + k * STEP;
                value(obj, &work)
            };
            let (f2m, fm, fp, f2p) = (at(-2.0)?, at(-1.0)?, at(1.0)?, at(2.0)?);
            work.get_mut(id).data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * STEP);
            if straddles_kink([f2m, fm, f0, fp, f2p], numeric) {
                excluded += 1;
                continue;
            }
            let a = grads[id.index()].as_ref().map_or(0.0, |g| g[j]);
            pairs.push((a, numeric));
        }
    }
    let scale = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    // Coordinates far below the case's gradient scale are judged on that
    // scale: an f32 sweep cannot resolve them more finely.
    let floor = match precision {
        Precision::Double => 1e-6,
        Precision::Single => (1e-2 * scale).max(1e-6),
    };
    let max_rel_error = pairs
        .iter()
        .map(|&(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max);
    let tol = match precision {
        Precision::Double => DOUBLE_TOL,
        Precision::Single => SINGLE_TOL,
    };
    Ok(GradCase {
        name: name.to_string(),
        precision,
        max_rel_error,
        checked: pairs.len(),
        excluded,
        tol,
        passed: !pairs.is_empty() && max_rel_error < tol,
    })
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

#[derive(Debug, Clone, Copy)]
enum Prim {
    Linear,
    ConvTime {
        stride: usize,
        pad: usize,
        bias: bool,
    },
    JointMix,
    MulConst,
    Add,
    Mul,
    Concat,
    Relu,
    Dropout,
    BatchNorm,
    Pool,
    CrossEntropy,
    Sum,
    Scale,
}

/// One primitive applied to stored inputs, projected onto a fixed random
/// direction when its output is not already scalar.
struct PrimCase {
    prim: Prim,
    inputs: Vec<ParamId>,
    constant: Option<Tensor<f64>>,
    projection: Tensor<f64>,
    bn: Option<BnStats>,
}

impl Objective for PrimCase {
    fn loss<T: Real>(&self, sess: &mut Session<T>, store: &ParamStore<T>) -> Result<Var> {
        let v: Vec<Var> = self
            .inputs
            .iter()
            .map(|&id| sess.param(store, id))
            .collect();
        let t = &mut sess.tape;
        let out = match self.prim {
            Prim::Linear => t.linear(v[0], v[1], Some(v[2]))?,
            Prim::ConvTime { stride, pad, bias } => {
                t.conv_time(v[0], v[1], bias.then(|| v[2]), stride, pad)?
            }
            Prim::JointMix => t.joint_mix(v[0], v[1])?,
            Prim::MulConst => {
                let c = self.constant.as_ref().expect("constant").cast();
                t.mul_const(v[0], &c)?
            }
            Prim::Add => t.add(v[0], v[1])?,
            Prim::Mul => t.mul(v[0], v[1])?,
            Prim::Concat => t.concat(&v)?,
            Prim::Relu => t.relu(v[0])?,
            Prim::Dropout => sess.dropout(v[0], 0.5)?,
            Prim::BatchNorm => {
                let stats = self.bn.expect("bn stats");
                sess.batch_norm(store, v[0], self.inputs[1], self.inputs[2], stats)?
            }
            Prim::Pool => t.global_avg_pool(v[0])?,
            Prim::CrossEntropy => return t.softmax_cross_entropy(v[0], &[0, 3, 1, 4]),
            Prim::Sum => return t.sum(v[0]),
            Prim::Scale => t.scale(v[0], T::of(-1.7))?,
        };
        let p = self.projection.cast();
        let y = sess.tape.mul_const(out, &p)?;
        sess.tape.sum(y)
    }
}

fn prim_case(prim: Prim, rng: &mut ChaCha8Rng) -> Result<(String, PrimCase, ParamStore<f64>)> {
    let mut store = ParamStore::new();
    let mut add = |name: &str, shape: &[usize], store: &mut ParamStore<f64>| {
        store.add(name, random(shape, rng), true)
    };
    let (name, inputs, out_shape): (&str, Vec<ParamId>, Vec<usize>) = match prim {
        Prim::Linear => (
            "linear",
            vec![
                add("x", &[3, 4], &mut store)?,
                add("w", &[4, 5], &mut store)?,
                add("b", &[5], &mut store)?,
            ],
            vec![3, 5],
        ),
        Prim::ConvTime { stride: 1, .. } => (
            "conv_time stride 1",
            vec![
                add("x", &[2, 3, 6, 4], &mut store)?,
                add("k", &[5, 3, 3], &mut store)?,
                add("b", &[5], &mut store)?,
            ],
            vec![2, 5, 6, 4],
        ),
        Prim::ConvTime { .. } => (
            "conv_time stride 2",
            vec![
                add("x", &[1, 2, 9, 3], &mut store)?,
                add("k", &[3, 2, 5], &mut store)?,
            ],
            vec![1, 3, 5, 3],
        ),
        Prim::JointMix => (
            "joint_mix",
            vec![
                add("x", &[2, 3, 4, 5], &mut store)?,
                add("a", &[5, 5], &mut store)?,
            ],
            vec![2, 3, 4, 5],
        ),
        Prim::MulConst => (
            "mul_const",
            vec![add("x", &[3, 4], &mut store)?],
            vec![3, 4],
        ),
        Prim::Add | Prim::Mul => (
            if matches!(prim, Prim::Add) {
                "add"
            } else {
                "mul"
            },
            vec![
                add("a", &[2, 3, 4], &mut store)?,
                add("b", &[2, 3, 4], &mut store)?,
            ],
            vec![2, 3, 4],
        ),
        Prim::Concat => (
            "concat",
            vec![
                add("a", &[2, 2, 3, 4], &mut store)?,
                add("b", &[2, 3, 3, 4], &mut store)?,
            ],
            vec![2, 5, 3, 4],
        ),
        Prim::Relu => ("relu", vec![add("x", &[4, 6], &mut store)?], vec![4, 6]),
        Prim::Dropout => ("dropout", vec![add("x", &[4, 6], &mut store)?], vec![4, 6]),
        Prim::BatchNorm => (
            "batch_norm",
            vec![
                add("x", &[3, 4, 5, 2], &mut store)?,
                add("gamma", &[4], &mut store)?,
                add("beta", &[4], &mut store)?,
            ],
            vec![3, 4, 5, 2],
        ),
        Prim::Pool => (
            "global_avg_pool",
            vec![add("x", &[2, 3, 4, 5], &mut store)?],
            vec![2, 3],
        ),
        Prim::CrossEntropy => (
            "softmax_cross_entropy",
            vec![add("logits", &[4, 5], &mut store)?],
            vec![],
        ),
        Prim::Sum => ("sum", vec![add("x", &[3, 4], &mut store)?], vec![]),
        Prim::Scale => ("scale", vec![add("x", &[3, 4], &mut store)?], vec![3, 4]),
    };
    let bn = match prim {
        Prim::BatchNorm => Some(BnStats {
            mean: store.add("mean", Tensor::zeros(&[4]), false)?,
            var: store.add("var", Tensor::full(&[4], 1.0), false)?,
        }),
        _ => None,
    };
    let constant = matches!(prim, Prim::MulConst).then(|| random(&[3, 4], rng));
    let projection = if out_shape.is_empty() {
        Tensor::scalar(1.0)
    } else {
        random(&out_shape, rng)
    };
    Ok((
        name.to_string(),
        PrimCase {
            prim,
            inputs,
            constant,
            projection,
            bn,
        },
        store,
    ))
}

const PRIMS: [Prim; 15] = [
    Prim::Linear,
    Prim::ConvTime {
        stride: 1,
        pad: 1,
        bias: true,
    },
    Prim::ConvTime {
        stride: 2,
        pad: 2,
        bias: false,
    },
    Prim::JointMix,
    Prim::MulConst,
    Prim::Add,
    Prim::Mul,
    Prim::Concat,
    Prim::Relu,
    Prim::Dropout,
    Prim::BatchNorm,
    Prim::Pool,
    Prim::CrossEntropy,
    Prim::Sum,
    Prim::Scale,
];

struct LayerCase {
    layer: LayerParams,
    adj: PartitionedAdjacency,
    x: ParamId,
    projection: Tensor<f64>,
}

impl Objective for LayerCase {
    fn loss<T: Real>(&self, sess: &mut Session<T>, store: &ParamStore<T>) -> Result<Var> {
        let x = sess.param(store, self.x);
        let y = stgcn_layer(sess, store, &self.layer, &self.adj.tensors(), x, 0.0)?;
        let y = sess.tape.mul_const(y, &self.projection.cast())?;
        sess.tape.sum(y)
    }
}

struct BackboneCase {
    params: BackboneParams,
    adj: PartitionedAdjacency,
    x: ParamId,
    labels: Vec<usize>,
}

impl Objective for BackboneCase {
    fn loss<T: Real>(&self, sess: &mut Session<T>, store: &ParamStore<T>) -> Result<Var> {
        let x = sess.param(store, self.x);
        let out = backbone_forward(sess, store, &self.params, &self.adj.tensors(), x)?;
        sess.tape.softmax_cross_entropy(out.logits, &self.labels)
    }
}

/// One ST-GCN layer `c_in → c_out` on `[2, c_in, 8, 3]` over a three-joint
/// chain.
fn layer_case(
    c_in: usize,
    c_out: usize,
    stride: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(LayerCase, ParamStore<f64>)> {
    let graph = build_graph(3, &[(0, 1), (1, 2)], 1).expect("chain");
    let cfg = BackboneConfig {
        in_channels: c_in,
        channels: vec![c_out],
        strides: vec![stride],
        dropout: 0.0,
        input_bn: false,
        ..BackboneConfig::default()
    };
    let mut store = ParamStore::new();
    let mut params = init_backbone(&mut store, "l", &cfg, 3, 2, rng)?;
    perturb_importance(&mut store, rng);
    let x = store.add("input", random(&[2, c_in, 8, 3], rng), true)?;
    let t_out = cfg.output_frames(8);
    Ok((
        LayerCase {
            layer: params.layers.remove(0),
            adj: PartitionedAdjacency::new(&graph, cfg.max_distance, DEFAULT_ALPHA),
            x,
            projection: random(&[2, c_out, t_out, 3], rng),
        },
        store,
    ))
}

/// Moves edge-importance entries off exactly one so their gradients are
/// generic.
fn perturb_importance(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store
        .iter()
        .filter(|(_, p)| p.name.contains(".gcn.m"))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        for m in store.get_mut(id).data_mut() {
            *m += rng.random_range(-0.2..0.2);
        }
    }
}

/// The ten-layer schedule (widths divided by 16) on a `9×16×5` input over a
/// five-joint tree.
fn backbone_case(rng: &mut ChaCha8Rng) -> Result<(BackboneCase, ParamStore<f64>)> {
    let graph = build_graph(5, &[(0, 1), (1, 2), (1, 3), (3, 4)], 1).expect("tree");
    let cfg = BackboneConfig {
        dropout: 0.0,
        ..BackboneConfig::narrowed(16)
    };
    let mut store = ParamStore::new();
    let params = init_backbone(&mut store, "s0", &cfg, 5, 3, rng)?;
    perturb_importance(&mut store, rng);
    let x = store.add("input", random(&[1, 9, 16, 5], rng), true)?;
    Ok((
        BackboneCase {
            params,
            adj: PartitionedAdjacency::new(&graph, cfg.max_distance, DEFAULT_ALPHA),
            x,
            labels: vec![2],
        },
        store,
    ))
}

/// Runs every case in both precisions.
pub fn run_gradient_suite(seed: u64) -> Result<Vec<GradCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let both = [Precision::Double, Precision::Single];
    for prim in PRIMS {
        let (name, case, store) = prim_case(prim, &mut rng)?;
        for p in both {
            out.push(check(&name, &case, &store, p, usize::MAX)?);
        }
    }
    for (name, c_in, c_out, stride) in [
        ("stgcn_layer identity", 4, 4, 1),
        ("stgcn_layer projection", 3, 4, 2),
    ] {
        let (case, store) = layer_case(c_in, c_out, stride, &mut rng)?;
        for p in both {
            out.push(check(name, &case, &store, p, usize::MAX)?);
        }
    }
    let (case, store) = backbone_case(&mut rng)?;
    for p in both {
        out.push(check("backbone 9x16x5", &case, &store, p, 24)?);
    }
    Ok(out)
}
