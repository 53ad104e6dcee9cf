//! Multi-stream network: each stream sees the preprocessed input masked by
//! the joints earlier streams already activated, and the pooled features of
//! all streams feed one fusion classifier.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Mode, ParamId, ParamStore, Real, Session, Tensor, Var};
use crate::preprocess::PreprocessedSequence;
use crate::rng::{seeded, stream};
use crate::skeleton::SkeletonGraph;
use crate::stgcn::{
    backbone_forward, init_backbone, BackboneConfig, BackboneParams, PartitionedAdjacency,
};

/// Score maps whose maximum does not exceed this activate nothing.
pub const SCORE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("training forward pass needs labels")]
    MissingLabel,
    #[error("class {class} out of range for {classes} classes")]
    BadClass { class: usize, classes: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// How binary activation maps are obtained from class scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    /// Normalise by the maximum score and threshold at `δ`.
    #[default]
    Threshold,
    /// Softmax over joint-summed scores; joints above the uniform level
    /// `1/V` are active in every frame. Approximates an older variant.
    SoftmaxLegacy,
}

/// Class whose scores drive the masks at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalClass {
    /// Arg-max of the first stream, for every later stream.
    #[default]
    FirstStream,
    /// Arg-max of the stream right before.
    PreviousStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub streams: usize,
    pub num_classes: usize,
    pub delta: f64,
    #[serde(default)]
    pub activation: ActivationKind,
    #[serde(default)]
    pub eval_class: EvalClass,
    /// With `false` every stream sees the unmasked input.
    #[serde(default = "yes")]
    pub masking: bool,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn new(backbone: BackboneConfig, streams: usize, num_classes: usize) -> Self {
        Self {
            backbone,
            streams,
            num_classes,
            delta: 0.3,
            activation: ActivationKind::Threshold,
            eval_class: EvalClass::FirstStream,
            masking: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate().map_err(ModelError::Config)?;
        if self.streams == 0 {
            return Err(ModelError::Config("at least one stream".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Config("at least two classes".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(ModelError::Config(format!(
                "delta {} not in (0, 1)",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Real-valued `frames × joints` map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub frames: usize,
    pub joints: usize,
    pub data: Vec<f64>,
}

impl ScoreMap {
    pub fn get(&self, t: usize, v: usize) -> f64 {
        self.data[t * self.joints + v]
    }
}

/// Binary `frames × joints` map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMap {
    pub frames: usize,
    pub joints: usize,
    pub data: Vec<bool>,
}

impl BinaryMap {
    pub fn filled(frames: usize, joints: usize, value: bool) -> Self {
        Self {
            frames,
            joints,
            data: vec![value; frames * joints],
        }
    }

    pub fn get(&self, t: usize, v: usize) -> bool {
        self.data[t * self.joints + v]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &BinaryMap) -> Result<BinaryMap> {
        self.same_shape(other)?;
        Ok(BinaryMap {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
            frames: self.frames,
            joints: self.joints,
        })
    }

    pub fn and_not(&self, other: &BinaryMap) -> Result<BinaryMap> {
        self.same_shape(other)?;
        Ok(BinaryMap {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && !b)
                .collect(),
            frames: self.frames,
            joints: self.joints,
        })
    }

    /// Cells set in this map, as `(t, v)` pairs in row-major order.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.joints, i % self.joints))
            .collect()
    }

    fn same_shape(&self, other: &BinaryMap) -> Result<()> {
        if (self.frames, self.joints) != (other.frames, other.joints) {
            return Err(ModelError::ShapeMismatch(format!(
                "maps {}x{} and {}x{}",
                self.frames, self.joints, other.frames, other.joints
            )));
        }
        Ok(())
    }
}

/// `score[t, v] = Σ_k w[k, class] · f[k, t, v]` for features laid out
/// `[K, T', V]` and classifier weights `[K, classes]`.
pub fn cam_scores<T: Real>(
    features: &[T],
    frames: usize,
    joints: usize,
    weights: &Tensor<T>,
    class: usize,
) -> Result<ScoreMap> {
    let ws = weights.shape();
    if ws.len() != 2 || features.len() != ws[0] * frames * joints {
        return Err(ModelError::ShapeMismatch(format!(
            "features of length {} vs weights {ws:?} over {frames}x{joints}",
            features.len()
        )));
    }
    let (k, classes) = (ws[0], ws[1]);
    if class >= classes {
        return Err(ModelError::BadClass { class, classes });
    }
    let plane = frames * joints;
    let mut data = vec![0.0; plane];
    for kk in 0..k {
        let w = weights.data()[kk * classes + class].as_f64();
        for (d, f) in data.iter_mut().zip(&features[kk * plane..(kk + 1) * plane]) {
            *d += w * f.as_f64();
        }
    }
    Ok(ScoreMap {
        frames,
        joints,
        data,
    })
}

/// Repeats each coarse frame over the fine frames it covers: fine frame
/// `t` reads coarse frame `⌊t·T'/T⌋`.
fn upsample(coarse: &[bool], coarse_frames: usize, joints: usize, frames: usize) -> BinaryMap {
    let mut out = BinaryMap::filled(frames, joints, false);
    if coarse_frames == 0 {
        return out;
    }
    for t in 0..frames {
        let tc = (t * coarse_frames / frames).min(coarse_frames - 1);
        out.data[t * joints..(t + 1) * joints]
            .copy_from_slice(&coarse[tc * joints..(tc + 1) * joints]);
    }
    out
}

/// `ε(score / max(score) − δ)` with `ε(0) = 1`, upsampled to `full_frames`.
/// All zero when the maximum score is at most [`SCORE_FLOOR`].
pub fn activation_map(score: &ScoreMap, delta: f64, full_frames: usize) -> BinaryMap {
    let max = score.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let coarse: Vec<bool> = if max > SCORE_FLOOR {
        score.data.iter().map(|&s| s / max >= delta).collect()
    } else {
        vec![false; score.data.len()]
    };
    upsample(&coarse, score.frames, score.joints, full_frames)
}

/// Softmax over joint-summed scores; joints above `1/V` are active in every
/// frame.
pub fn softmax_legacy_map(score: &ScoreMap, full_frames: usize) -> BinaryMap {
    let v = score.joints;
    let sums: Vec<f64> = (0..v)
        .map(|j| (0..score.frames).map(|t| score.get(t, j)).sum())
        .collect();
    let m = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sums.iter().map(|&s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let active: Vec<bool> = exps.iter().map(|&e| e / z > 1.0 / v as f64).collect();
    let mut out = BinaryMap::filled(full_frames, v, false);
    for t in 0..full_frames {
        out.data[t * v..(t + 1) * v].copy_from_slice(&active);
    }
    out
}

/// `mask_s = (Π_{i<s} mask_i) ⊗ (1 − map_{s−1})`; all ones for the first
/// stream (no previous masks).
pub fn next_mask(
    prev_masks: &[BinaryMap],
    prev_map: Option<&BinaryMap>,
    frames: usize,
    joints: usize,
) -> Result<BinaryMap> {
    let mut mask = BinaryMap::filled(frames, joints, true);
    for m in prev_masks {
        mask = mask.and(m)?;
    }
    match prev_map {
        Some(map) => mask.and_not(map),
        None => Ok(mask),
    }
}

/// `x′ ⊗ mask`, broadcast over channels.
pub fn mask_input(x: &PreprocessedSequence, mask: &BinaryMap) -> Result<Vec<f32>> {
    if (mask.frames, mask.joints) != (x.frames, x.joints) {
        return Err(ModelError::ShapeMismatch(format!(
            "mask {}x{} for input {}x{}",
            mask.frames, mask.joints, x.frames, x.joints
        )));
    }
    let plane = x.frames * x.joints;
    Ok(x.data
        .chunks(plane)
        .flat_map(|c| {
            c.iter()
                .zip(&mask.data)
                .map(|(&a, &m)| if m { a } else { 0.0 })
        })
        .collect())
}

/// Per-sample record of what each stream saw and activated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationState {
    /// Class whose scores built the maps, per stream.
    pub classes: Vec<usize>,
    pub delta: f64,
    pub scores: Vec<ScoreMap>,
    pub maps: Vec<BinaryMap>,
    pub masks: Vec<BinaryMap>,
}

impl ActivationState {
    /// Cells stream `s` activated among those it could see.
    pub fn activated(&self, s: usize) -> BinaryMap {
        self.maps[s].and(&self.masks[s]).expect("aligned maps")
    }

    pub fn union_activated(&self) -> BinaryMap {
        let mut out = self.activated(0);
        for s in 1..self.maps.len() {
            let a = self.activated(s);
            out.data.iter_mut().zip(a.data).for_each(|(o, b)| *o |= b);
        }
        out
    }
}

/// Graph of one forward pass.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub fused: Var,
    pub stream_logits: Vec<Var>,
    pub activations: Vec<ActivationState>,
}

/// Stacks preprocessed samples into `[N, C, T, V]`.
pub fn batch_tensor<T: Real>(samples: &[&PreprocessedSequence]) -> Result<Tensor<T>> {
    let first = samples
        .first()
        .ok_or_else(|| ModelError::ShapeMismatch("empty batch".into()))?;
    let shape = [samples.len(), first.channels, first.frames, first.joints];
    let mut data = Vec::with_capacity(shape.iter().product());
    for s in samples {
        if (s.channels, s.frames, s.joints) != (first.channels, first.frames, first.joints) {
            return Err(ModelError::ShapeMismatch("ragged batch".into()));
        }
        data.extend(s.data.iter().map(|&v| T::of(v as f64)));
    }
    Ok(Tensor::new(&shape, data)?)
}

/// Parameters and structure of a multi-stream network.
#[derive(Debug, Clone, PartialEq)]
pub struct RagcnModel<T> {
    pub config: ModelConfig,
    pub graph: SkeletonGraph,
    pub store: ParamStore<T>,
    pub streams: Vec<BackboneParams>,
    pub fusion_weight: ParamId,
    pub fusion_bias: ParamId,
    adjacency: Vec<Tensor<T>>,
}

pub fn stream_prefix(s: usize) -> String {
    format!("s{s}")
}

impl<T: Real> RagcnModel<T> {
    pub fn new(config: ModelConfig, graph: SkeletonGraph, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed, stream::INIT);
        let mut store = ParamStore::new();
        let v = graph.num_joints();
        let streams = (0..config.streams)
            .map(|s| {
                init_backbone(
                    &mut store,
                    &stream_prefix(s),
                    &config.backbone,
                    v,
                    config.num_classes,
                    &mut rng,
                )
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let width = config.streams * config.backbone.feature_channels();
        let bound = 1.0 / (width as f64).sqrt();
        let w: Vec<T> = (0..width * config.num_classes)
            .map(|_| T::of(rng.random_range(-bound..=bound)))
            .collect();
        let fusion_weight = store.add(
            "fusion.w",
            Tensor::new(&[width, config.num_classes], w)?,
            true,
        )?;
        let fusion_bias = store.add("fusion.b", Tensor::zeros(&[config.num_classes]), true)?;
        let adjacency =
            PartitionedAdjacency::new(&graph, config.backbone.max_distance, config.backbone.alpha)
                .tensors();
        Ok(Self {
            config,
            graph,
            store,
            streams,
            fusion_weight,
            fusion_bias,
            adjacency,
        })
    }

    /// A `streams`-stream model whose every stream starts as a copy of
    /// `baseline`'s first stream; the fusion classifier is fresh.
    pub fn from_baseline(baseline: &RagcnModel<T>, config: ModelConfig, seed: u64) -> Result<Self> {
        let b = &baseline.config;
        if b.backbone != config.backbone {
            return Err(ModelError::CheckpointMismatch(
                "backbone configuration".into(),
            ));
        }
        if b.num_classes != config.num_classes {
            return Err(ModelError::CheckpointMismatch(format!(
                "{} classes vs {}",
                b.num_classes, config.num_classes
            )));
        }
        let mut model = Self::new(config, baseline.graph.clone(), seed)?;
        let src = format!("{}.", stream_prefix(0));
        for s in 0..model.config.streams {
            let dst = format!("{}.", stream_prefix(s));
            for (_, p) in baseline.store.iter() {
                let Some(rest) = p.name.strip_prefix(&src) else {
                    continue;
                };
                let id = model
                    .store
                    .id(&format!("{dst}{rest}"))
                    .ok_or_else(|| ModelError::CheckpointMismatch(p.name.clone()))?;
                *model.store.get_mut(id) = p.value.clone();
            }
        }
        Ok(model)
    }

    pub fn joints(&self) -> usize {
        self.graph.num_joints()
    }

    /// Forward pass over `x: [N, 9, T, V]`. Training uses `labels` for the
    /// class activation maps; evaluation uses predictions.
    pub fn forward(
        &self,
        sess: &mut Session<T>,
        x: &Tensor<T>,
        labels: Option<&[usize]>,
    ) -> Result<ModelOutput> {
        let xs = x.shape().to_vec();
        if xs.len() != 4 || xs[3] != self.joints() {
            return Err(ModelError::ShapeMismatch(format!("input {xs:?}")));
        }
        let (n, c, t, v) = (xs[0], xs[1], xs[2], xs[3]);
        let train = sess.mode() == Mode::Train;
        if let Some(l) = labels {
            if l.len() != n {
                return Err(ModelError::ShapeMismatch(format!(
                    "{} labels for {n} samples",
                    l.len()
                )));
            }
            if let Some(&class) = l.iter().find(|&&l| l >= self.config.num_classes) {
                return Err(ModelError::BadClass {
                    class,
                    classes: self.config.num_classes,
                });
            }
        } else if train {
            return Err(ModelError::MissingLabel);
        }

        let mut states: Vec<ActivationState> = (0..n)
            .map(|_| ActivationState {
                classes: Vec::new(),
                delta: self.config.delta,
                scores: Vec::new(),
                maps: Vec::new(),
                masks: Vec::new(),
            })
            .collect();
        let mut pooled = Vec::with_capacity(self.config.streams);
        let mut stream_logits = Vec::with_capacity(self.config.streams);
        let plane = t * v;
        for (s, params) in self.streams.iter().enumerate() {
            for st in states.iter_mut() {
                let mask = if s == 0 || !self.config.masking {
                    BinaryMap::filled(t, v, true)
                } else {
                    next_mask(&st.masks, st.maps.last(), t, v)?
                };
                st.masks.push(mask);
            }
            let input = if states.iter().all(|st| st.masks[s].data.iter().all(|&m| m)) {
                x.clone()
            } else {
                let mut data = x.data().to_vec();
                for (i, st) in states.iter().enumerate() {
                    let mask = &st.masks[s].data;
                    for ch in 0..c {
                        let off = (i * c + ch) * plane;
                        for (d, &m) in data[off..off + plane].iter_mut().zip(mask) {
                            if !m {
                                *d = T::zero();
                            }
                        }
                    }
                }
                Tensor::new(&xs, data)?
            };
            let xv = sess.tape.leaf(input, false);
            let out = backbone_forward(sess, &self.store, params, &self.adjacency, xv)?;

            let feats = sess.tape.value(out.features);
            let (k, tf) = (feats.shape()[1], feats.shape()[2]);
            let logits = sess.tape.value(out.logits).data();
            let weights = self.store.get(params.fc_weight);
            let classes = self.config.num_classes;
            for (i, st) in states.iter_mut().enumerate() {
                let class = match (labels, train) {
                    (Some(l), true) => l[i],
                    _ => {
                        let from = match self.config.eval_class {
                            EvalClass::FirstStream => 0,
                            EvalClass::PreviousStream => s,
                        };
                        if from == s {
                            argmax(&logits[i * classes..(i + 1) * classes])
                        } else {
                            st.classes[from]
                        }
                    }
                };
                let f = &feats.data()[i * k * tf * v..(i + 1) * k * tf * v];
                let score = cam_scores(f, tf, v, weights, class)?;
                let map = match self.config.activation {
                    ActivationKind::Threshold => activation_map(&score, self.config.delta, t),
                    ActivationKind::SoftmaxLegacy => softmax_legacy_map(&score, t),
                };
                st.classes.push(class);
                st.scores.push(score);
                st.maps.push(map);
            }
            pooled.push(out.pooled);
            stream_logits.push(out.logits);
        }
        let joined = if pooled.len() == 1 {
            pooled[0]
        } else {
            sess.tape.concat(&pooled)?
        };
        let w = sess.param(&self.store, self.fusion_weight);
        let b = sess.param(&self.store, self.fusion_bias);
        let fused = sess.tape.linear(joined, w, Some(b))?;
        Ok(ModelOutput {
            fused,
            stream_logits,
            activations: states,
        })
    }
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &r) in row.iter().enumerate() {
        if r > row[best] {
            best = j;
        }
    }
    best
}

/// Cross-entropy of the fused logits plus that of every stream, unit weights.
pub fn total_loss<T: Real>(
    sess: &mut Session<T>,
    fused: Var,
    stream_logits: &[Var],
    labels: &[usize],
) -> Result<Var> {
    let mut loss = sess.tape.softmax_cross_entropy(fused, labels)?;
    for &s in stream_logits {
        let term = sess.tape.softmax_cross_entropy(s, labels)?;
        loss = sess.tape.add(loss, term)?;
    }
    Ok(loss)
}

/// Row-wise arg-max of a `[N, C]` logits value.
pub fn predictions<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.shape()[1];
    logits.data().chunks(c).map(argmax).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::build_graph;

    fn score(frames: usize, joints: usize, data: &[f64]) -> ScoreMap {
        ScoreMap {
            frames,
            joints,
            data: data.to_vec(),
        }
    }

    fn bin(data: &[u8]) -> BinaryMap {
        BinaryMap {
            frames: 1,
            joints: data.len(),
            data: data.iter().map(|&b| b == 1).collect(),
        }
    }

    #[test]
    fn cam_matches_double_loop() {
        let feats: Vec<f64> = (0..4 * 2 * 3).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let w = Tensor::from_f64(&[4, 2], &[0.5, -1.0, 2.0, 0.25, -0.75, 1.5, 1.0, 0.0]).unwrap();
        let s = cam_scores(&feats, 2, 3, &w, 1).unwrap();
        for t in 0..2 {
            for v in 0..3 {
                let mut expect = 0.0;
                for k in 0..4 {
                    expect += w.data()[k * 2 + 1] * feats[(k * 2 + t) * 3 + v];
                }
                assert_eq!(s.get(t, v), expect);
            }
        }
        assert!(matches!(
            cam_scores(&feats, 2, 3, &w, 2),
            Err(ModelError::BadClass { .. })
        ));
        let zero = cam_scores(&[0.0; 24], 2, 3, &w, 0).unwrap();
        assert!(zero.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn threshold_examples() {
        let m = activation_map(&score(1, 3, &[1.0, 0.4, 0.2]), 0.3, 1);
        assert_eq!(m.data, vec![true, true, false]);
        let m = activation_map(&score(1, 3, &[0.5, 0.5, 0.5]), 0.9, 1);
        assert!(m.data.iter().all(|&b| b));
        let m = activation_map(&score(1, 3, &[-1.0, -0.5, 0.0]), 0.3, 1);
        assert_eq!(m.count(), 0);
        // Unique maximum at coarse frame 1, joint 0; T' = 2 → T = 8.
        let m = activation_map(&score(2, 2, &[0.1, 0.2, 0.9, 0.3]), 0.99, 8);
        for t in 0..8 {
            assert_eq!(m.get(t, 0), t >= 4);
            assert!(!m.get(t, 1));
        }
    }

    #[test]
    fn mask_examples() {
        assert!(next_mask(&[], None, 2, 2).unwrap().data.iter().all(|&b| b));
        let full = bin(&[1, 1, 1, 1]);
        assert_eq!(
            next_mask(std::slice::from_ref(&full), Some(&full), 1, 4)
                .unwrap()
                .count(),
            0
        );
        // Element-wise: 1∧¬0, 1∧¬1, 0∧¬0, 1∧¬0.
        let m = next_mask(&[bin(&[1, 1, 0, 1])], Some(&bin(&[0, 1, 0, 0])), 1, 4).unwrap();
        assert_eq!(m, bin(&[1, 0, 0, 1]));
        assert!(next_mask(&[bin(&[1, 1])], None, 1, 4).is_err());
    }

    #[test]
    fn masking_input() {
        let x = PreprocessedSequence {
            channels: 9,
            frames: 2,
            joints: 2,
            data: (0..36).map(|i| i as f32 + 1.0).collect(),
            valid: vec![true; 4],
        };
        assert_eq!(
            mask_input(&x, &BinaryMap::filled(2, 2, true)).unwrap(),
            x.data
        );
        assert!(mask_input(&x, &BinaryMap::filled(2, 2, false))
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let mut m = BinaryMap::filled(2, 2, true);
        m.data[3] = false;
        let y = mask_input(&x, &m).unwrap();
        for c in 0..9 {
            for t in 0..2 {
                for v in 0..2 {
                    let i = (c * 2 + t) * 2 + v;
                    assert_eq!(y[i] == 0.0, t == 1 && v == 1);
                }
            }
        }
    }

    fn tiny_model(streams: usize) -> RagcnModel<f64> {
        let g = build_graph(3, &[(0, 1), (1, 2)], 1).unwrap();
        let backbone = BackboneConfig {
            channels: vec![4, 4],
            strides: vec![1, 2],
            dropout: 0.0,
            ..BackboneConfig::default()
        };
        RagcnModel::new(ModelConfig::new(backbone, streams, 3), g, 5).unwrap()
    }

    #[test]
    fn forward_states_follow_mask_algebra() {
        let model = tiny_model(3);
        let data: Vec<f64> = (0..2 * 9 * 8 * 3)
            .map(|i| ((i * 37) % 11) as f64 / 5.0 - 1.0)
            .collect();
        let x = Tensor::from_f64(&[2, 9, 8, 3], &data).unwrap();
        let mut sess = Session::new(Mode::Train, 1);
        assert_eq!(
            model.forward(&mut sess, &x, None).unwrap_err(),
            ModelError::MissingLabel
        );
        let out = model.forward(&mut sess, &x, Some(&[0, 2])).unwrap();
        assert_eq!(out.stream_logits.len(), 3);
        assert_eq!(sess.tape.shape(out.fused), &[2, 3]);
        for st in &out.activations {
            assert_eq!(st.classes.len(), 3);
            assert!(st.masks[0].data.iter().all(|&m| m));
            for s in 1..3 {
                let expect = st.masks[s - 1].and_not(&st.maps[s - 1]).unwrap();
                assert_eq!(st.masks[s], expect);
            }
            for a in 0..3 {
                for b in a + 1..3 {
                    let both = st.activated(a).and(&st.activated(b)).unwrap();
                    assert_eq!(both.count(), 0);
                }
            }
        }
        assert_eq!(out.activations[1].classes, vec![2, 2, 2]);
        let loss = total_loss(&mut sess, out.fused, &out.stream_logits, &[0, 2]).unwrap();
        let grads = sess.backward(loss, &model.store).unwrap();
        assert!(grads.all_finite());
    }

    #[test]
    fn baseline_copy_init() {
        let base = tiny_model(1);
        let mut cfg = base.config.clone();
        cfg.streams = 3;
        let m = RagcnModel::from_baseline(&base, cfg.clone(), 9).unwrap();
        let w0 = base.store.by_name("s0.l0.gcn.w").unwrap();
        for s in 0..3 {
            assert_eq!(m.store.by_name(&format!("s{s}.l0.gcn.w")).unwrap(), w0);
        }
        cfg.num_classes = 4;
        assert!(matches!(
            RagcnModel::from_baseline(&base, cfg, 9),
            Err(ModelError::CheckpointMismatch(_))
        ));
    }
}
