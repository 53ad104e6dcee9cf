#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::*;
use ragcn::autodiff::{Mode, ParamStore, Session, Tensor};
use ragcn::skeleton::{build_graph, SequenceTensor, SkeletonGraph};
use ragcn::stgcn::{spatial_graph_conv, GcnParams, PartitionedAdjacency};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Tree on `parents.len() + 1` joints; joint `k + 1` hangs off `parents[k]`
/// (reduced modulo `k + 1`).
pub fn tree(parents: &[usize], center: usize) -> SkeletonGraph {
    let edges: Vec<(usize, usize)> = parents
        .iter()
        .enumerate()
        .map(|(k, &p)| (p % (k + 1), k + 1))
        .collect();
    let n = parents.len() + 1;
    build_graph(n, &edges, center % n).expect("random parent lists are trees")
}

/// Random trees with `2..=max_joints` joints.
pub fn arb_tree(max_joints: usize) -> impl Strategy<Value = SkeletonGraph> {
    (1..max_joints)
        .prop_flat_map(|m| (prop::collection::vec(0usize..64, m), 0usize..64))
        .prop_map(|(parents, center)| tree(&parents, center))
}

/// 3-channel sequence with random coordinates, random padding and random
/// occluded cells; zero under the mask by construction.
pub fn arb_sequence(
    frames: std::ops::RangeInclusive<usize>,
    joints: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = SequenceTensor> {
    (frames, joints)
        .prop_flat_map(|(t, v)| {
            (
                Just(t),
                Just(v),
                1..=t,
                prop::collection::vec(-2.0f32..2.0, 3 * t * v),
                prop::collection::vec(prop::bool::weighted(0.85), t * v),
            )
        })
        .prop_map(|(t, v, real, coords, keep)| {
            let mut s = SequenceTensor::empty(3, t, v);
            for ti in 0..real {
                for vi in 0..v {
                    if keep[ti * v + vi] {
                        let c: Vec<f32> = (0..3).map(|c| coords[(c * t + ti) * v + vi]).collect();
                        s.set_joint(ti, vi, &c);
                    }
                }
            }
            s.set_num_real_frames(real);
            s
        })
}

/// Sequence with every cell of the first `real` frames valid.
pub fn dense(
    frames: usize,
    joints: usize,
    real: usize,
    f: impl Fn(usize, usize, usize) -> f32,
) -> SequenceTensor {
    let mut s = SequenceTensor::empty(3, frames, joints);
    for t in 0..real {
        for v in 0..joints {
            s.set_joint(t, v, &[f(0, t, v), f(1, t, v), f(2, t, v)]);
        }
    }
    s.set_num_real_frames(real);
    s
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Hop distances by breadth-first search from every joint, straight from the
/// edge list.
pub fn bfs_hops(graph: &SkeletonGraph) -> Vec<Vec<usize>> {
    let n = graph.num_joints();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in graph.edges() {
        adj[a].push(b);
        adj[b].push(a);
    }
    (0..n)
        .map(|s| {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                }
            }
            dist
        })
        .collect()
}

/// Neighbour-loop graph convolution for one sample `x[c][t][v]`:
/// every output joint sums `W_d x_j / sqrt((n_d(i)+α)(n_d(j)+α))`, scaled by
/// the importance `m[d][j][i]`, over the joints `j` at distance `d ≤ D`.
/// `w[o][d][c]` is the weight for output channel `o`, partition `d`, input
/// channel `c`.
pub fn neighbor_loop_conv(
    graph: &SkeletonGraph,
    max_distance: usize,
    alpha: f64,
    x: &[Vec<Vec<f64>>],
    w: &[Vec<Vec<f64>>],
    m: &[Vec<Vec<f64>>],
) -> Vec<Vec<Vec<f64>>> {
    let hops = bfs_hops(graph);
    let n = graph.num_joints();
    let frames = x[0].len();
    let count = |i: usize, d: usize| hops[i].iter().filter(|&&h| h == d).count() as f64;
    let mut out = vec![vec![vec![0.0; n]; frames]; w.len()];
    for (o, wo) in w.iter().enumerate() {
        for t in 0..frames {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    let d = hops[i][j];
                    if d > max_distance {
                        continue;
                    }
                    let z = ((count(i, d) + alpha) * (count(j, d) + alpha)).sqrt();
                    let f: f64 = (0..x.len()).map(|c| wo[d][c] * x[c][t][j]).sum();
                    acc += m[d][j][i] * f / z;
                }
                out[o][t][i] = acc;
            }
        }
    }
    out
}

/// `-ln softmax(row)[label]` in the textbook form.
pub fn cross_entropy(row: &[f64], label: usize) -> f64 {
    let z: f64 = row.iter().map(|r| r.exp()).sum();
    -(row[label].exp() / z).ln()
}

/// The library's graph convolution on the same nested inputs as
/// [`neighbor_loop_conv`], in double precision.
pub fn library_conv(
    graph: &SkeletonGraph,
    max_distance: usize,
    alpha: f64,
    x: &[Vec<Vec<f64>>],
    w: &[Vec<Vec<f64>>],
    m: &[Vec<Vec<f64>>],
) -> Vec<Vec<Vec<f64>>> {
    let (c_in, frames, n) = (x.len(), x[0].len(), graph.num_joints());
    let parts = max_distance + 1;
    let mut store = ParamStore::<f64>::new();
    let flat_w: Vec<f64> = w
        .iter()
        .flat_map(|wo| wo.iter().flatten().copied())
        .collect();
    let weight = store
        .add(
            "w",
            Tensor::new(&[w.len(), parts * c_in, 1], flat_w).unwrap(),
            true,
        )
        .unwrap();
    let importance = m
        .iter()
        .enumerate()
        .map(|(d, md)| {
            let flat: Vec<f64> = md.iter().flatten().copied().collect();
            store
                .add(&format!("m{d}"), Tensor::new(&[n, n], flat).unwrap(), true)
                .unwrap()
        })
        .collect();
    let adj = PartitionedAdjacency::new(graph, max_distance, alpha).tensors::<f64>();
    let mut sess = Session::new(Mode::Eval, 0);
    let flat_x: Vec<f64> = x.iter().flat_map(|c| c.iter().flatten().copied()).collect();
    let xv = sess
        .tape
        .leaf(Tensor::new(&[1, c_in, frames, n], flat_x).unwrap(), false);
    let y = spatial_graph_conv(
        &mut sess,
        &store,
        &GcnParams { weight, importance },
        &adj,
        xv,
    )
    .unwrap();
    let data = sess.tape.value(y).data().to_vec();
    data.chunks(frames * n)
        .map(|plane| plane.chunks(n).map(|row| row.to_vec()).collect())
        .collect()
}

/// Random `a × b × c` nested array in `[-1, 1)`.
pub fn random_cube<R: rand::Rng>(rng: &mut R, a: usize, b: usize, c: usize) -> Vec<Vec<Vec<f64>>> {
    (0..a)
        .map(|_| {
            (0..b)
                .map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|)` over matching entries, with a floor on
/// the denominator relative to the largest magnitude.
pub fn max_rel_err(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    let fa: Vec<f64> = a.iter().flatten().flatten().copied().collect();
    let fb: Vec<f64> = b.iter().flatten().flatten().copied().collect();
    assert_eq!(fa.len(), fb.len());
    let scale = fa
        .iter()
        .chain(&fb)
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1e-300);
    fa.iter()
        .zip(&fb)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3 * scale))
        .fold(0.0, f64::max)
}

/// Score map with entries in `[lo, hi)`.
pub fn random_scores<R: rand::Rng>(
    rng: &mut R,
    frames: usize,
    joints: usize,
    lo: f64,
    hi: f64,
) -> ragcn::model::ScoreMap {
    ragcn::model::ScoreMap {
        frames,
        joints,
        data: (0..frames * joints)
            .map(|_| rng.random_range(lo..hi))
            .collect(),
    }
}

/// Maps and masks of consecutive streams built from one score map each.
pub fn mask_chain(
    scores: &[ragcn::model::ScoreMap],
    delta: f64,
    full_frames: usize,
) -> (Vec<ragcn::model::BinaryMap>, Vec<ragcn::model::BinaryMap>) {
    use ragcn::model::{activation_map, next_mask};
    let joints = scores[0].joints;
    let (mut maps, mut masks) = (Vec::new(), Vec::new());
    for score in scores {
        let mask = next_mask(&masks, maps.last(), full_frames, joints).unwrap();
        masks.push(mask);
        maps.push(activation_map(score, delta, full_frames));
    }
    (maps, masks)
}

/// Checks the mask algebra on one chain; `Err` names the broken property.
pub fn check_mask_algebra(
    scores: &[ragcn::model::ScoreMap],
    delta: f64,
    full_frames: usize,
    lambda: f64,
    delta_hi: f64,
) -> Result<(), String> {
    use ragcn::model::activation_map;
    let (maps, masks) = mask_chain(scores, delta, full_frames);
    for w in masks.windows(2) {
        if w[1].data.iter().zip(&w[0].data).any(|(&b, &a)| b && !a) {
            return Err("mask grew".into());
        }
    }
    let mut seen = vec![false; full_frames * scores[0].joints];
    for (map, mask) in maps.iter().zip(&masks) {
        let act = map.and(mask).unwrap();
        for (s, &a) in seen.iter_mut().zip(&act.data) {
            if *s && a {
                return Err("activated twice".into());
            }
            *s |= a;
        }
    }
    for score in scores {
        let lo = activation_map(score, delta, full_frames);
        let hi = activation_map(score, delta_hi.max(delta), full_frames);
        if hi.data.iter().zip(&lo.data).any(|(&h, &l)| h && !l) {
            return Err("raising delta activated a cell".into());
        }
        if score.data.iter().all(|&s| s > 0.0) {
            let scaled = ragcn::model::ScoreMap {
                data: score.data.iter().map(|s| s * lambda).collect(),
                ..score.clone()
            };
            if activation_map(&scaled, delta, full_frames) != lo {
                return Err(format!("scaling by {lambda} changed the map"));
            }
        }
    }
    Ok(())
}
