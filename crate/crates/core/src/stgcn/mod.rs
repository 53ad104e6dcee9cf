//! Spatio-temporal graph convolution backbone over distance-partitioned
//! skeleton adjacency.

mod adjacency;

pub use adjacency::{
    normalize_adjacency, partition_adjacency, PartitionedAdjacency, DEFAULT_ALPHA,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    AutodiffError, BnStats, ParamId, ParamStore, Real, Result, Session, Tensor, Var,
};

/// Output channels of the ten layers at full width.
pub const FULL_CHANNELS: [usize; 10] = [64, 64, 64, 64, 128, 128, 128, 256, 256, 256];
/// Layers 5 and 8 halve the frame axis.
pub const FULL_STRIDES: [usize; 10] = [1, 1, 1, 1, 2, 1, 1, 2, 1, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    /// Temporal window `L`.
    pub kernel: usize,
    /// Maximum graph distance `D`.
    pub max_distance: usize,
    pub alpha: f64,
    pub dropout: f64,
    /// Batch norm over the input channels before layer 1.
    pub input_bn: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 9,
            channels: FULL_CHANNELS.to_vec(),
            strides: FULL_STRIDES.to_vec(),
            kernel: 5,
            max_distance: 2,
            alpha: DEFAULT_ALPHA,
            dropout: 0.5,
            input_bn: true,
        }
    }
}

impl BackboneConfig {
    /// Same schedule with every width divided by `divisor` (at least 1).
    pub fn narrowed(divisor: usize) -> Self {
        let divisor = divisor.max(1);
        Self {
            channels: FULL_CHANNELS.iter().map(|c| (c / divisor).max(1)).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err("channels and strides must be non-empty and aligned".into());
        }
        if self.in_channels == 0 || self.channels.contains(&0) || self.strides.contains(&0) {
            return Err("channel counts and strides must be positive".into());
        }
        if self.kernel < 3 || self.kernel.is_multiple_of(2) {
            return Err(format!(
                "temporal window {} must be odd and >= 3",
                self.kernel
            ));
        }
        if self.max_distance < 1 {
            return Err("max distance must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err("alpha must be non-negative".into());
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }

    /// Frames after the backbone for an input of `frames` frames.
    pub fn output_frames(&self, frames: usize) -> usize {
        let pad = self.kernel / 2;
        self.strides.iter().fold(frames, |t, &s| {
            (t + 2 * pad).saturating_sub(self.kernel) / s + 1
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BnStats,
}

impl BnParams {
    fn add<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[c], T::one()), true)?,
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[c]), true)?,
            stats: BnStats {
                mean: store.add(&format!("{name}.mean"), Tensor::zeros(&[c]), false)?,
                var: store.add(&format!("{name}.var"), Tensor::full(&[c], T::one()), false)?,
            },
        })
    }

    fn apply<T: Real>(&self, sess: &mut Session<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        sess.batch_norm(store, x, self.gamma, self.beta, self.stats)
    }
}

/// `W_0..W_D` stacked as one `[C_out, (D+1)·C_in, 1]` kernel, and the
/// edge-importance matrices `M_0..M_D`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub weight: ParamId,
    pub importance: Vec<ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub gcn: GcnParams,
    pub bn_spatial: BnParams,
    pub tcn: ParamId,
    pub bn_temporal: BnParams,
    pub residual: Option<(ParamId, BnParams)>,
    pub stride: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub prefix: String,
    pub input_bn: Option<BnParams>,
    pub layers: Vec<LayerParams>,
    /// Classifier `[features, classes]` and bias `[classes]`.
    pub fc_weight: ParamId,
    pub fc_bias: ParamId,
    pub dropout: f64,
}

fn uniform<T: Real, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// Kaiming-style uniform bound for a ReLU network.
fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Registers one stream's parameters under `prefix`.
pub fn init_backbone<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &BackboneConfig,
    joints: usize,
    num_classes: usize,
    rng: &mut R,
) -> Result<BackboneParams> {
    cfg.validate().map_err(AutodiffError::InvalidArgument)?;
    let parts = cfg.max_distance + 1;
    let input_bn = if cfg.input_bn {
        Some(BnParams::add(
            store,
            &format!("{prefix}.in_bn"),
            cfg.in_channels,
        )?)
    } else {
        None
    };
    let mut layers = Vec::with_capacity(cfg.channels.len());
    let mut c_in = cfg.in_channels;
    for (i, (&c_out, &stride)) in cfg.channels.iter().zip(&cfg.strides).enumerate() {
        let name = format!("{prefix}.l{i}");
        let weight = store.add(
            &format!("{name}.gcn.w"),
            uniform(&[c_out, parts * c_in, 1], he_bound(parts * c_in), rng),
            true,
        )?;
        let importance = (0..parts)
            .map(|d| {
                store.add(
                    &format!("{name}.gcn.m{d}"),
                    Tensor::full(&[joints, joints], T::one()),
                    true,
                )
            })
            .collect::<Result<_>>()?;
        let bn_spatial = BnParams::add(store, &format!("{name}.bn1"), c_out)?;
        let tcn = store.add(
            &format!("{name}.tcn.w"),
            uniform(
                &[c_out, c_out, cfg.kernel],
                he_bound(c_out * cfg.kernel),
                rng,
            ),
            true,
        )?;
        let bn_temporal = BnParams::add(store, &format!("{name}.bn2"), c_out)?;
        let residual = if c_in != c_out || stride != 1 {
            let w = store.add(
                &format!("{name}.res.w"),
                uniform(&[c_out, c_in, 1], he_bound(c_in), rng),
                true,
            )?;
            Some((w, BnParams::add(store, &format!("{name}.res.bn"), c_out)?))
        } else {
            None
        };
        layers.push(LayerParams {
            gcn: GcnParams { weight, importance },
            bn_spatial,
            tcn,
            bn_temporal,
            residual,
            stride,
            kernel: cfg.kernel,
        });
        c_in = c_out;
    }
    let bound = 1.0 / (c_in as f64).sqrt();
    let fc_weight = store.add(
        &format!("{prefix}.fc.w"),
        uniform(&[c_in, num_classes], bound, rng),
        true,
    )?;
    let fc_bias = store.add(
        &format!("{prefix}.fc.b"),
        Tensor::zeros(&[num_classes]),
        true,
    )?;
    Ok(BackboneParams {
        prefix: prefix.to_string(),
        input_bn,
        layers,
        fc_weight,
        fc_bias,
        dropout: cfg.dropout,
    })
}

/// `Σ_d W_d f (Ā_d ⊗ M_d)` for `x: [N, C, T, V]`.
pub fn spatial_graph_conv<T: Real>(
    sess: &mut Session<T>,
    store: &ParamStore<T>,
    gcn: &GcnParams,
    adj: &[Tensor<T>],
    x: Var,
) -> Result<Var> {
    if adj.len() != gcn.importance.len() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "{} adjacency partitions for {} importance matrices",
            adj.len(),
            gcn.importance.len()
        )));
    }
    let mut mixed = Vec::with_capacity(adj.len());
    for (a, &m) in adj.iter().zip(&gcn.importance) {
        let m = sess.param(store, m);
        let edge = sess.tape.mul_const(m, a)?;
        mixed.push(sess.tape.joint_mix(x, edge)?);
    }
    let stacked = sess.tape.concat(&mixed)?;
    let w = sess.param(store, gcn.weight);
    sess.tape.conv_time(stacked, w, None, 1, 0)
}

/// Spatial conv, BN, ReLU, dropout, temporal conv, BN, residual add, ReLU.
pub fn stgcn_layer<T: Real>(
    sess: &mut Session<T>,
    store: &ParamStore<T>,
    layer: &LayerParams,
    adj: &[Tensor<T>],
    x: Var,
    dropout: f64,
) -> Result<Var> {
    let h = spatial_graph_conv(sess, store, &layer.gcn, adj, x)?;
    let h = layer.bn_spatial.apply(sess, store, h)?;
    let h = sess.tape.relu(h)?;
    let h = sess.dropout(h, dropout)?;
    let k = sess.param(store, layer.tcn);
    let h = sess
        .tape
        .conv_time(h, k, None, layer.stride, layer.kernel / 2)?;
    let h = layer.bn_temporal.apply(sess, store, h)?;
    let res = match &layer.residual {
        None => x,
        Some((w, bn)) => {
            let w = sess.param(store, *w);
            let r = sess.tape.conv_time(x, w, None, layer.stride, 0)?;
            bn.apply(sess, store, r)?
        }
    };
    let h = sess.tape.add(h, res)?;
    sess.tape.relu(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneOutput {
    /// Last-layer features `[N, C_f, T', V]`, kept for class activation maps.
    pub features: Var,
    /// `[N, C_f]`.
    pub pooled: Var,
    /// `[N, classes]`.
    pub logits: Var,
}

/// Runs one stream on `x: [N, 9, T, V]`.
pub fn backbone_forward<T: Real>(
    sess: &mut Session<T>,
    store: &ParamStore<T>,
    params: &BackboneParams,
    adj: &[Tensor<T>],
    x: Var,
) -> Result<BackboneOutput> {
    let expected = store.get(params.layers[0].gcn.weight).shape()[1] / adj.len().max(1);
    let xs = sess.tape.shape(x);
    if xs.len() != 4 || xs[1] != expected {
        return Err(AutodiffError::ShapeMismatch(format!(
            "backbone expects [N, {expected}, T, V], got {xs:?}"
        )));
    }
    let mut h = match &params.input_bn {
        Some(bn) => bn.apply(sess, store, x)?,
        None => x,
    };
    for layer in &params.layers {
        h = stgcn_layer(sess, store, layer, adj, h, params.dropout)?;
    }
    let pooled = sess.tape.global_avg_pool(h)?;
    let w = sess.param(store, params.fc_weight);
    let b = sess.param(store, params.fc_bias);
    let logits = sess.tape.linear(pooled, w, Some(b))?;
    Ok(BackboneOutput {
        features: h,
        pooled,
        logits,
    })
}
