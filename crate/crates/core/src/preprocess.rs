//! Builds the network input `[x | x − x_center | x_{t+1} − x_t]`.
//!
//! Derived features are zeroed wherever they would touch an occluded joint:
//! a relative coordinate needs both the joint and the centre joint valid, a
//! displacement needs the joint valid in both frames.

use thiserror::Error;

use crate::skeleton::{SequenceTensor, SkeletonGraph};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PreprocessError {
    #[error("sequence has {got} joints but the graph has {expected}")]
    GraphMismatch { expected: usize, got: usize },
}

/// `3C×T×V` features with the input's validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedSequence {
    pub channels: usize,
    pub frames: usize,
    pub joints: usize,
    pub data: Vec<f32>,
    pub valid: Vec<bool>,
}

impl PreprocessedSequence {
    #[inline]
    pub fn get(&self, c: usize, t: usize, v: usize) -> f32 {
        self.data[(c * self.frames + t) * self.joints + v]
    }
}

/// `x[:, t, v] − x[:, t, center]`, zero unless both cells are valid.
pub fn relative_coordinates(x: &SequenceTensor, center: usize) -> Vec<f32> {
    let (c, t, v) = (x.channels(), x.frames(), x.joints());
    let mut out = vec![0.0; c * t * v];
    for ti in 0..t {
        if !x.is_valid(ti, center) {
            continue;
        }
        for vi in (0..v).filter(|&vi| x.is_valid(ti, vi)) {
            for ci in 0..c {
                out[x.index(ci, ti, vi)] = x.get(ci, ti, vi) - x.get(ci, ti, center);
            }
        }
    }
    out
}

/// `x[:, t+1, v] − x[:, t, v]`, zero unless both cells are valid; the last
/// frame is always zero.
pub fn temporal_displacements(x: &SequenceTensor) -> Vec<f32> {
    let (c, t, v) = (x.channels(), x.frames(), x.joints());
    let mut out = vec![0.0; c * t * v];
    for ti in 0..t.saturating_sub(1) {
        for vi in (0..v).filter(|&vi| x.is_valid(ti, vi) && x.is_valid(ti + 1, vi)) {
            for ci in 0..c {
                out[x.index(ci, ti, vi)] = x.get(ci, ti + 1, vi) - x.get(ci, ti, vi);
            }
        }
    }
    out
}

pub fn preprocess(
    x: &SequenceTensor,
    graph: &SkeletonGraph,
) -> Result<PreprocessedSequence, PreprocessError> {
    if x.joints() != graph.num_joints() {
        return Err(PreprocessError::GraphMismatch {
            expected: graph.num_joints(),
            got: x.joints(),
        });
    }
    let mut data = Vec::with_capacity(3 * x.data().len());
    data.extend_from_slice(x.data());
    data.extend(relative_coordinates(x, graph.center_joint()));
    data.extend(temporal_displacements(x));
    Ok(PreprocessedSequence {
        channels: 3 * x.channels(),
        frames: x.frames(),
        joints: x.joints(),
        data,
        valid: x.valid().to_vec(),
    })
}
