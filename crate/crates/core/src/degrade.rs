//! Test-time degradations: frame, part, block and random occlusion, and
//! Gaussian jitter. They act on raw coordinates, before preprocessing.
//!
//! Random choices are keyed by `(seed, frame, joint)` so results do not
//! depend on iteration order, and random occlusion at a higher probability
//! always contains the mask drawn at a lower one for the same seed.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, keyed, seeded, stream};
use crate::skeleton::{Dataset, SequenceTensor};

/// Frame occlusion only picks its window inside this many leading frames.
pub const FRAME_WINDOW_HORIZON: usize = 100;

pub const FRAME_LENGTHS: [usize; 5] = [10, 20, 30, 40, 50];

/// Joint sets (0-based Kinect v2 indices) for part occlusion ids 1..=5.
pub const PART_JOINTS: [&[usize]; 5] = [
    &[4, 5, 6, 7, 21, 22],
    &[8, 9, 10, 11, 23, 24],
    &[21, 22, 23, 24],
    &[12, 13, 14, 15, 16, 17, 18, 19],
    &[0, 1, 2, 3, 20],
];

pub const PART_NAMES: [&str; 5] = ["left arm", "right arm", "two hands", "two legs", "torso"];

/// Occlusion line for block ranges 1..=5, as a fraction of the per-frame
/// bounding-box height measured from its bottom.
pub const BLOCK_HEIGHTS: [f32; 5] = [0.2, 0.35, 0.5, 0.65, 0.8];

/// Index of the vertical coordinate channel.
const VERTICAL: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DegradeError {
    #[error("sequence has {available} real frames, occlusion needs {needed}")]
    SequenceTooShort { needed: usize, available: usize },
    #[error("unknown part id {0} (expected 1..=5)")]
    UnknownPart(usize),
    #[error("invalid degradation: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Degradation {
    None,
    Frame { length: usize },
    Part { part: usize },
    Block { range: usize },
    Random { p: f64 },
    Jitter { p: f64, sigma: f64 },
}

/// One degradation protocol with its seed. Serialises as e.g.
/// `{"kind": "jitter", "p": 0.06, "sigma": 0.05, "seed": 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(flatten)]
    pub kind: Degradation,
    #[serde(default)]
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: Degradation, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn none() -> Self {
        Self::new(Degradation::None, 0)
    }

    pub fn is_none(&self) -> bool {
        self.kind == Degradation::None
    }

    pub fn validate(&self) -> Result<(), DegradeError> {
        let open_unit = |p: f64| p > 0.0 && p < 1.0;
        match self.kind {
            Degradation::None => Ok(()),
            Degradation::Frame { length } if FRAME_LENGTHS.contains(&length) => Ok(()),
            Degradation::Frame { length } => Err(DegradeError::InvalidSpec(format!(
                "frame length {length} not in {FRAME_LENGTHS:?}"
            ))),
            Degradation::Part { part } if (1..=5).contains(&part) => Ok(()),
            Degradation::Part { part } => Err(DegradeError::UnknownPart(part)),
            Degradation::Block { range } if (1..=5).contains(&range) => Ok(()),
            Degradation::Block { range } => Err(DegradeError::InvalidSpec(format!(
                "block range {range} not in 1..=5"
            ))),
            Degradation::Random { p } if open_unit(p) => Ok(()),
            Degradation::Jitter { p, sigma } if open_unit(p) && sigma > 0.0 => Ok(()),
            other => Err(DegradeError::InvalidSpec(format!("{other:?}"))),
        }
    }

    /// Same protocol, seed re-derived for the `index`-th sample of a set.
    pub fn for_sample(&self, index: usize) -> Self {
        Self {
            kind: self.kind,
            seed: derive_seed(self.seed, index as u64),
        }
    }
}

/// Zeroes `length` consecutive frames whose start is uniform in
/// `[0, min(100, real frames) − length]`.
pub fn occlude_frames(
    x: &SequenceTensor,
    length: usize,
    seed: u64,
) -> Result<SequenceTensor, DegradeError> {
    let horizon = x.num_real_frames().min(FRAME_WINDOW_HORIZON);
    if length == 0 || horizon < length {
        return Err(DegradeError::SequenceTooShort {
            needed: length,
            available: x.num_real_frames(),
        });
    }
    let start = seeded(seed, stream::FRAME_OCCLUSION).random_range(0..=horizon - length);
    let mut out = x.clone();
    for t in start..start + length {
        for v in 0..x.joints() {
            out.occlude(t, v);
        }
    }
    Ok(out)
}

pub fn occlude_part(x: &SequenceTensor, part: usize) -> Result<SequenceTensor, DegradeError> {
    let joints = part
        .checked_sub(1)
        .and_then(|i| PART_JOINTS.get(i))
        .ok_or(DegradeError::UnknownPart(part))?;
    if let Some(&bad) = joints.iter().find(|&&j| j >= x.joints()) {
        return Err(DegradeError::InvalidSpec(format!(
            "part joint {bad} out of range for {} joints",
            x.joints()
        )));
    }
    let mut out = x.clone();
    for t in 0..x.frames() {
        for &v in joints.iter() {
            out.occlude(t, v);
        }
    }
    Ok(out)
}

/// Per frame, hides valid joints strictly below the line at
/// `BLOCK_HEIGHTS[range − 1]` of the valid joints' vertical extent. Frames
/// with no valid joint are left unchanged.
pub fn occlude_block(x: &SequenceTensor, range_id: usize) -> Result<SequenceTensor, DegradeError> {
    let h = range_id
        .checked_sub(1)
        .and_then(|i| BLOCK_HEIGHTS.get(i))
        .copied()
        .ok_or_else(|| DegradeError::InvalidSpec(format!("block range {range_id}")))?;
    if x.channels() <= VERTICAL {
        return Err(DegradeError::InvalidSpec(
            "block occlusion needs a vertical coordinate".into(),
        ));
    }
    let mut out = x.clone();
    for t in 0..x.frames() {
        let ys: Vec<f32> = (0..x.joints())
            .filter(|&v| x.is_valid(t, v))
            .map(|v| x.get(VERTICAL, t, v))
            .collect();
        if ys.is_empty() {
            continue;
        }
        let lo = ys.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = ys.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let line = lo + h * (hi - lo);
        for v in 0..x.joints() {
            if x.is_valid(t, v) && x.get(VERTICAL, t, v) < line {
                out.occlude(t, v);
            }
        }
    }
    Ok(out)
}

/// Uniform draw for one cell, shared across occlusion probabilities.
fn cell_uniform(seed: u64, joints: usize, t: usize, v: usize) -> f64 {
    keyed(seed, stream::RANDOM_OCCLUSION, (t * joints + v) as u64).random()
}

/// Hides each valid cell independently with probability `p`.
pub fn occlude_random(x: &SequenceTensor, p: f64, seed: u64) -> SequenceTensor {
    let mut out = x.clone();
    for t in 0..x.frames() {
        for v in 0..x.joints() {
            if x.is_valid(t, v) && cell_uniform(seed, x.joints(), t, v) < p {
                out.occlude(t, v);
            }
        }
    }
    out
}

/// Adds independent `N(0, σ²)` noise to every coordinate of each valid cell
/// selected with probability `p`. The validity mask is unchanged.
pub fn jitter_gaussian(x: &SequenceTensor, p: f64, sigma: f64, seed: u64) -> SequenceTensor {
    let mut out = x.clone();
    if sigma == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma.abs()).expect("finite sigma");
    for t in 0..x.frames() {
        for v in 0..x.joints() {
            if !x.is_valid(t, v) {
                continue;
            }
            let mut rng = keyed(seed, stream::JITTER, (t * x.joints() + v) as u64);
            if rng.random::<f64>() < p {
                for c in 0..x.channels() {
                    let noise = normal.sample(&mut rng) as f32;
                    out.set(c, t, v, x.get(c, t, v) + noise);
                }
            }
        }
    }
    out
}

pub fn apply(spec: &DegradationSpec, x: &SequenceTensor) -> Result<SequenceTensor, DegradeError> {
    spec.validate()?;
    match spec.kind {
        Degradation::None => Ok(x.clone()),
        Degradation::Frame { length } => occlude_frames(x, length, spec.seed),
        Degradation::Part { part } => occlude_part(x, part),
        Degradation::Block { range } => occlude_block(x, range),
        Degradation::Random { p } => Ok(occlude_random(x, p, spec.seed)),
        Degradation::Jitter { p, sigma } => Ok(jitter_gaussian(x, p, sigma, spec.seed)),
    }
}

/// Degrades every sample, each with its own derived seed.
pub fn apply_to_dataset(spec: &DegradationSpec, ds: &Dataset) -> Result<Dataset, DegradeError> {
    let samples = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(crate::skeleton::LabeledSample {
                sequence: apply(&spec.for_sample(i), &s.sequence)?,
                label: s.label,
                sample_id: s.sample_id.clone(),
            })
        })
        .collect::<Result<_, DegradeError>>()?;
    Ok(Dataset {
        samples,
        num_classes: ds.num_classes,
        graph: ds.graph.clone(),
        split: ds.split,
    })
}
