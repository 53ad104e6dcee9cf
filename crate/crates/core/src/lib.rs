//! Multi-stream graph convolution for skeleton action recognition that stays
//! accurate when joints are occluded or noisy.
//!
//! The crate is organised bottom-up:
//!
//! - [`skeleton`]: joint graphs, sequence tensors, the 25-joint Kinect graph
//!   and a deterministic synthetic action generator.
//! - [`ntu`]: parser for `.skeleton` text files and benchmark splits.
//! - [`preprocess`]: raw + relative + displacement feature construction.
//! - [`degrade`]: test-time occlusion and jitter protocols.
//! - [`autodiff`]: a small tape-based reverse-mode engine with the layers the
//!   network needs, SGD and a finite-difference checker.
//! - [`stgcn`]: distance-partitioned adjacency, graph convolution, ST-GCN
//!   layers and the ten-layer backbone.
//! - [`model`]: class activation maps, cumulative masks, the multi-stream
//!   network and its loss.
//! - [`harness`]: training protocol, evaluation, robustness sweeps and
//!   checkpoint / dataset containers.
//!
//! Runnable walkthroughs for each capability live under `examples/`.

pub mod autodiff;
pub mod degrade;
pub mod harness;
pub mod model;
pub mod ntu;
pub mod preprocess;
pub mod skeleton;
pub mod stgcn;

mod rng;

pub use autodiff::{Real, Tensor};
pub use skeleton::{Dataset, LabeledSample, SequenceTensor, SkeletonGraph, SynthSpec};
