//! Skeleton graphs, joint-coordinate sequences and datasets.

mod graph;
mod sequence;
pub mod synth;

pub use graph::{
    build_graph, ntu25_graph, GraphError, SkeletonGraph, NTU_BONES, NTU_CENTER_JOINT,
    NTU_JOINT_NAMES, NTU_NUM_JOINTS,
};
pub use sequence::{Dataset, LabeledSample, SequenceTensor, Split, ValidationReport, Violation};
pub use synth::{generate_split, generate_synthetic_dataset, SynthError, SynthSpec};
