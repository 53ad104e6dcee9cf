use serde::{Deserialize, Serialize};

use super::SkeletonGraph;

/// Dense `C×T×V` joint coordinates (metres) with a `T×V` validity mask.
///
/// Cells with `valid[t, v] == false` are occluded or absent and carry exact
/// zeros in every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTensor {
    channels: usize,
    frames: usize,
    joints: usize,
    num_real_frames: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl SequenceTensor {
    /// All-zero, all-invalid sequence.
    pub fn empty(channels: usize, frames: usize, joints: usize) -> Self {
        Self {
            channels,
            frames,
            joints,
            num_real_frames: 0,
            data: vec![0.0; channels * frames * joints],
            valid: vec![false; frames * joints],
        }
    }

    /// Builds a sequence from raw buffers. Lengths must match the shape.
    pub fn from_parts(
        channels: usize,
        frames: usize,
        joints: usize,
        num_real_frames: usize,
        data: Vec<f32>,
        valid: Vec<bool>,
    ) -> Option<Self> {
        (data.len() == channels * frames * joints
            && valid.len() == frames * joints
            && num_real_frames <= frames)
            .then_some(Self {
                channels,
                frames,
                joints,
                num_real_frames,
                data,
                valid,
            })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn num_real_frames(&self) -> usize {
        self.num_real_frames
    }

    pub fn set_num_real_frames(&mut self, n: usize) {
        assert!(n <= self.frames);
        self.num_real_frames = n;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, v: usize) -> usize {
        (c * self.frames + t) * self.joints + v
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, v: usize) -> f32 {
        self.data[self.index(c, t, v)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, v: usize, value: f32) {
        let i = self.index(c, t, v);
        self.data[i] = value;
    }

    #[inline]
    pub fn is_valid(&self, t: usize, v: usize) -> bool {
        self.valid[t * self.joints + v]
    }

    /// Marks a cell valid and writes its coordinates.
    pub fn set_joint(&mut self, t: usize, v: usize, coords: &[f32]) {
        debug_assert_eq!(coords.len(), self.channels);
        for (c, &x) in coords.iter().enumerate() {
            self.set(c, t, v, x);
        }
        self.valid[t * self.joints + v] = true;
    }

    pub fn joint(&self, t: usize, v: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.get(c, t, v)).collect()
    }

    /// Zeroes a cell and marks it invalid.
    pub fn occlude(&mut self, t: usize, v: usize) {
        for c in 0..self.channels {
            self.set(c, t, v, 0.0);
        }
        self.valid[t * self.joints + v] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for t in 0..self.frames {
            for v in 0..self.joints {
                for c in 0..self.channels {
                    let x = self.get(c, t, v);
                    if !x.is_finite() {
                        violations.push(Violation::NonFinite { c, t, v });
                    } else if !self.is_valid(t, v) && x != 0.0 {
                        violations.push(Violation::NonzeroUnderMask { c, t, v });
                    }
                }
            }
        }
        if self.num_real_frames > self.frames {
            violations.push(Violation::RealFramesExceedFrames);
        }
        ValidationReport { violations }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    NonzeroUnderMask { c: usize, t: usize, v: usize },
    NonFinite { c: usize, t: usize, v: usize },
    RealFramesExceedFrames,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sequence: SequenceTensor,
    pub label: usize,
    pub sample_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub num_classes: usize,
    pub graph: SkeletonGraph,
    pub split: Split,
}

impl Dataset {
    /// Checks the shared-shape and label invariants.
    pub fn check(&self) -> Result<(), String> {
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        for s in &self.samples {
            if s.label >= self.num_classes {
                return Err(format!("sample {} has label {}", s.sample_id, s.label));
            }
            let q = &s.sequence;
            if q.joints() != self.graph.num_joints()
                || q.frames() != first.sequence.frames()
                || q.channels() != first.sequence.channels()
            {
                return Err(format!("sample {} has a mismatched shape", s.sample_id));
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.samples.first().map_or(0, |s| s.sequence.frames())
    }

    pub fn channels(&self) -> usize {
        self.samples.first().map_or(0, |s| s.sequence.channels())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_all_invalid_is_ok() {
        assert!(SequenceTensor::empty(3, 4, 5).validate().is_ok());
    }

    #[test]
    fn nonzero_under_mask_is_reported() {
        let mut s = SequenceTensor::empty(3, 4, 5);
        s.set(0, 0, 0, 1.0);
        let report = s.validate();
        assert_eq!(
            report.violations,
            vec![Violation::NonzeroUnderMask { c: 0, t: 0, v: 0 }]
        );
    }

    #[test]
    fn nan_is_reported() {
        let mut s = SequenceTensor::empty(3, 2, 2);
        s.set_joint(1, 1, &[0.0, f32::NAN, 0.0]);
        assert_eq!(
            s.validate().violations,
            vec![Violation::NonFinite { c: 1, t: 1, v: 1 }]
        );
    }

    #[test]
    fn occlude_clears_cell() {
        let mut s = SequenceTensor::empty(3, 2, 2);
        s.set_joint(0, 1, &[1.0, 2.0, 3.0]);
        assert!(s.is_valid(0, 1));
        s.occlude(0, 1);
        assert!(!s.is_valid(0, 1));
        assert_eq!(s.joint(0, 1), vec![0.0; 3]);
    }
}
