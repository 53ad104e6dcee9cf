use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NTU_NUM_JOINTS: usize = 25;

/// Middle of the spine (`SpineMid`).
pub const NTU_CENTER_JOINT: usize = 1;

/// Kinect v2 joint names, 0-based. The `.skeleton` files number them from 1.
pub const NTU_JOINT_NAMES: [&str; NTU_NUM_JOINTS] = [
    "SpineBase",
    "SpineMid",
    "Neck",
    "Head",
    "ShoulderLeft",
    "ElbowLeft",
    "WristLeft",
    "HandLeft",
    "ShoulderRight",
    "ElbowRight",
    "WristRight",
    "HandRight",
    "HipLeft",
    "KneeLeft",
    "AnkleLeft",
    "FootLeft",
    "HipRight",
    "KneeRight",
    "AnkleRight",
    "FootRight",
    "SpineShoulder",
    "HandTipLeft",
    "ThumbLeft",
    "HandTipRight",
    "ThumbRight",
];

/// Bones of the Kinect v2 skeleton tree, 0-based.
pub const NTU_BONES: [(usize, usize); NTU_NUM_JOINTS - 1] = [
    (0, 1),
    (1, 20),
    (2, 20),
    (3, 2),
    (4, 20),
    (5, 4),
    (6, 5),
    (7, 6),
    (8, 20),
    (9, 8),
    (10, 9),
    (11, 10),
    (12, 0),
    (13, 12),
    (14, 13),
    (15, 14),
    (16, 0),
    (17, 16),
    (18, 17),
    (19, 18),
    (21, 22),
    (22, 7),
    (23, 24),
    (24, 11),
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph must have at least one joint")]
    Empty,
    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, &'static str),
    #[error("center joint {0} out of range for {1} joints")]
    InvalidCenter(usize, usize),
    #[error("graph is disconnected: joint {0} unreachable from joint 0")]
    DisconnectedGraph(usize),
}

/// An undirected, connected joint graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    center_joint: usize,
}

pub fn build_graph(
    num_joints: usize,
    edges: &[(usize, usize)],
    center: usize,
) -> Result<SkeletonGraph, GraphError> {
    if num_joints == 0 {
        return Err(GraphError::Empty);
    }
    if center >= num_joints {
        return Err(GraphError::InvalidCenter(center, num_joints));
    }
    let mut seen = BTreeSet::new();
    for &(a, b) in edges {
        if a >= num_joints || b >= num_joints {
            return Err(GraphError::InvalidEdge(a, b, "endpoint out of range"));
        }
        if a == b {
            return Err(GraphError::InvalidEdge(a, b, "self-loop"));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(GraphError::InvalidEdge(a, b, "duplicate"));
        }
    }
    let graph = SkeletonGraph {
        num_joints,
        edges: edges.to_vec(),
        center_joint: center,
    };
    if let Some(j) = graph.hops_from(0).iter().position(Option::is_none) {
        return Err(GraphError::DisconnectedGraph(j));
    }
    Ok(graph)
}

/// The 25-joint Kinect v2 graph used by NTU RGB+D.
pub fn ntu25_graph() -> SkeletonGraph {
    build_graph(NTU_NUM_JOINTS, &NTU_BONES, NTU_CENTER_JOINT).expect("NTU bone list is a tree")
}

impl SkeletonGraph {
    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn center_joint(&self) -> usize {
        self.center_joint
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_joints];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Breadth-first hop counts from `source`; `None` marks unreachable joints.
    pub fn hops_from(&self, source: usize) -> Vec<Option<usize>> {
        let adj = self.neighbors();
        let mut dist = vec![None; self.num_joints];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &w in &adj[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// All-pairs shortest-path hop counts (row-major `V×V`).
    pub fn hop_matrix(&self) -> Vec<usize> {
        let v = self.num_joints;
        let mut out = vec![usize::MAX; v * v];
        for i in 0..v {
            for (k, d) in self.hops_from(i).into_iter().enumerate() {
                out[i * v + k] = d.unwrap_or(usize::MAX);
            }
        }
        out
    }

    /// Relabel joints: joint `j` becomes `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<SkeletonGraph, GraphError> {
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a], perm[b]))
            .collect();
        build_graph(self.num_joints, &edges, perm[self.center_joint])
    }
}
