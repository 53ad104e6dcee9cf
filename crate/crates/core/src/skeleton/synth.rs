//! Deterministic synthetic action dataset on the 25-joint graph.
//!
//! Every class is a periodic motion of one body region on top of a fixed
//! standing pose, so that hiding that region removes the class evidence.
//! Per-sample variation covers amplitude, tempo, phase, body scale and a
//! global offset; Gaussian positional noise is added per joint and frame.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ntu25_graph, Dataset, LabeledSample, SequenceTensor, Split, NTU_NUM_JOINTS};
use crate::rng::{derive_seed, seeded, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub frames: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Each sample has `⌈fraction·frames⌉..=frames` real frames; the rest
    /// are zero padding, as in recorded data padded to a fixed length. The
    /// default keeps at least 50 of 64 frames, enough for every frame
    /// occlusion window.
    #[serde(default = "full_length")]
    pub min_real_fraction: f64,
}

fn full_length() -> f64 {
    1.0
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            samples_per_class: 50,
            frames: 64,
            noise_std: 0.01,
            seed: 7,
            min_real_fraction: 0.8,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(&'static str),
}

/// Standing pose in metres: x lateral, y up (feet near 0), z depth from the
/// sensor. Roughly a 1.65 m adult with arms hanging.
pub const BASE_POSE: [[f32; 3]; NTU_NUM_JOINTS] = [
    [0.00, 0.86, 3.00],  // SpineBase
    [0.00, 1.12, 3.00],  // SpineMid
    [0.00, 1.47, 3.00],  // Neck
    [0.00, 1.65, 3.00],  // Head
    [-0.18, 1.38, 3.00], // ShoulderLeft
    [-0.24, 1.10, 3.00], // ElbowLeft
    [-0.27, 0.86, 3.00], // WristLeft
    [-0.28, 0.79, 3.00], // HandLeft
    [0.18, 1.38, 3.00],  // ShoulderRight
    [0.24, 1.10, 3.00],  // ElbowRight
    [0.27, 0.86, 3.00],  // WristRight
    [0.28, 0.79, 3.00],  // HandRight
    [-0.10, 0.80, 3.00], // HipLeft
    [-0.11, 0.45, 3.00], // KneeLeft
    [-0.12, 0.08, 3.02], // AnkleLeft
    [-0.12, 0.02, 2.92], // FootLeft
    [0.10, 0.80, 3.00],  // HipRight
    [0.11, 0.45, 3.00],  // KneeRight
    [0.12, 0.08, 3.02],  // AnkleRight
    [0.12, 0.02, 2.92],  // FootRight
    [0.00, 1.40, 3.00],  // SpineShoulder
    [-0.29, 0.71, 3.00], // HandTipLeft
    [-0.24, 0.77, 2.97], // ThumbLeft
    [0.29, 0.71, 3.00],  // HandTipRight
    [0.24, 0.77, 2.97],  // ThumbRight
];

const LEFT_ARM: &[usize] = &[5, 6, 7, 21, 22];
const RIGHT_ARM: &[usize] = &[9, 10, 11, 23, 24];
const LEFT_LEG: &[usize] = &[13, 14, 15];
const RIGHT_LEG: &[usize] = &[17, 18, 19];
const HEAD: &[usize] = &[2, 3];
const UPPER_BODY: &[usize] = &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 20, 21, 22, 23, 24];

#[derive(Debug, Clone, Copy)]
enum Axis {
    X,
    Z,
}

/// One rigid rotation of a joint subset about a pivot joint.
struct Swing {
    joints: &'static [usize],
    pivot: usize,
    axis: Axis,
    amplitude: f32,
    /// Phase offset relative to the primitive's phase (radians).
    lag: f32,
    /// Use `(1 - cos)/2` instead of `sin` (one-sided lift).
    lift: bool,
}

/// Motion catalogue; class `k` uses entry `k % len`.
fn primitive(k: usize) -> Vec<Swing> {
    use std::f32::consts::PI;
    let swing = |joints, pivot, axis, amplitude, lag, lift| Swing {
        joints,
        pivot,
        axis,
        amplitude,
        lag,
        lift,
    };
    match k % 8 {
        0 => vec![swing(LEFT_ARM, 4, Axis::X, 0.9, 0.0, false)],
        1 => vec![swing(RIGHT_ARM, 8, Axis::X, 0.9, 0.0, false)],
        2 => vec![
            swing(LEFT_LEG, 12, Axis::X, 0.6, 0.0, false),
            swing(RIGHT_LEG, 16, Axis::X, 0.6, PI, false),
        ],
        3 => vec![swing(UPPER_BODY, 0, Axis::Z, 0.25, 0.0, false)],
        4 => vec![
            swing(LEFT_ARM, 4, Axis::Z, -1.4, 0.0, true),
            swing(RIGHT_ARM, 8, Axis::Z, 1.4, 0.0, true),
        ],
        5 => vec![swing(HEAD, 20, Axis::X, 0.5, 0.0, false)],
        6 => vec![swing(LEFT_LEG, 12, Axis::X, -1.0, 0.0, true)],
        _ => vec![swing(RIGHT_LEG, 16, Axis::X, -1.0, 0.0, true)],
    }
}

fn rotate(p: [f32; 3], pivot: [f32; 3], axis: Axis, angle: f32) -> [f32; 3] {
    let (s, c) = angle.sin_cos();
    let d = [p[0] - pivot[0], p[1] - pivot[1], p[2] - pivot[2]];
    let r = match axis {
        Axis::X => [d[0], c * d[1] - s * d[2], s * d[1] + c * d[2]],
        Axis::Z => [c * d[0] - s * d[1], s * d[0] + c * d[1], d[2]],
    };
    [r[0] + pivot[0], r[1] + pivot[1], r[2] + pivot[2]]
}

pub fn generate_synthetic_dataset(spec: &SynthSpec) -> Result<Dataset, SynthError> {
    generate_split(spec, Split::Train)
}

/// As [`generate_synthetic_dataset`], tagging the result with `split`.
pub fn generate_split(spec: &SynthSpec, split: Split) -> Result<Dataset, SynthError> {
    if spec.num_classes == 0 || spec.samples_per_class == 0 || spec.frames == 0 {
        return Err(SynthError::InvalidSpec("counts must be positive"));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(SynthError::InvalidSpec("noise_std must be finite and >= 0"));
    }
    if !(spec.min_real_fraction > 0.0 && spec.min_real_fraction <= 1.0) {
        return Err(SynthError::InvalidSpec(
            "min_real_fraction must be in (0, 1]",
        ));
    }
    let total = spec.num_classes * spec.samples_per_class;
    let samples = (0..total)
        .map(|i| {
            let label = i % spec.num_classes;
            let seed = derive_seed(spec.seed, i as u64);
            LabeledSample {
                sequence: synthesize(label, spec, seed),
                label,
                sample_id: format!("synth-{i:05}"),
            }
        })
        .collect();
    Ok(Dataset {
        samples,
        num_classes: spec.num_classes,
        graph: ntu25_graph(),
        split,
    })
}

fn synthesize(label: usize, spec: &SynthSpec, seed: u64) -> SequenceTensor {
    use std::f32::consts::TAU;
    let mut rng = seeded(seed, stream::SYNTH);
    let amp_scale: f32 = rng.random_range(0.75..1.25);
    let tempo_band = 1.0 + (label / 8) as f32;
    let cycles: f32 = rng.random_range(1.5..3.0) * tempo_band;
    let phase: f32 = rng.random_range(0.0..TAU);
    let body_scale: f32 = rng.random_range(0.9..1.1);
    let offset = [
        rng.random_range(-0.3f32..0.3),
        0.0,
        rng.random_range(-0.3f32..0.3),
    ];
    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise_std");
    let omega = TAU * cycles / spec.frames as f32;
    let swings: Vec<(Swing, f32, f32, f32)> = primitive(label)
        .into_iter()
        .map(|sw| (sw, amp_scale, omega, phase))
        .collect();

    let frames = spec.frames;
    let shortest = ((spec.min_real_fraction * frames as f64).ceil() as usize).clamp(1, frames);
    let real = rng.random_range(shortest..=frames);
    let mut seq = SequenceTensor::empty(3, frames, NTU_NUM_JOINTS);
    for t in 0..real {
        let mut pose = BASE_POSE;
        for (sw, amp_scale, omega, phase) in &swings {
            let arg = omega * t as f32 + phase + sw.lag;
            let wave = if sw.lift {
                0.5 * (1.0 - arg.cos())
            } else {
                arg.sin()
            };
            let angle = sw.amplitude * amp_scale * wave;
            let pivot = pose[sw.pivot];
            for &j in sw.joints {
                pose[j] = rotate(pose[j], pivot, sw.axis, angle);
            }
        }
        for (v, p) in pose.iter().enumerate() {
            let coords: Vec<f32> = (0..3)
                .map(|c| {
                    let jitter = noise.sample(&mut rng) as f32;
                    p[c] * body_scale + offset[c] + jitter
                })
                .collect();
            seq.set_joint(t, v, &coords);
        }
    }
    seq.set_num_real_frames(real);
    seq
}
