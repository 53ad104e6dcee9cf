use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::skeleton::SkeletonGraph;

/// Default regulariser added to the degrees so that empty rows stay finite.
pub const DEFAULT_ALPHA: f64 = 1e-4;

/// `A_0..A_D` as row-major `V×V` 0/1 matrices: `A_d[i,k] = 1` iff the hop
/// distance between `i` and `k` is exactly `d`.
pub fn partition_adjacency(graph: &SkeletonGraph, max_distance: usize) -> Vec<Vec<f64>> {
    let hops = graph.hop_matrix();
    (0..=max_distance)
        .map(|d| {
            hops.iter()
                .map(|&h| if h == d { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// `Λ^{-1/2} A Λ^{-1/2}` with `Λ_ii = Σ_k A[i,k] + α`. Rows whose degree is
/// zero (possible only with `α = 0`) are left at zero.
pub fn normalize_adjacency(a: &[f64], joints: usize, alpha: f64) -> Vec<f64> {
    assert_eq!(a.len(), joints * joints, "adjacency must be square");
    let scale: Vec<f64> = a
        .chunks(joints)
        .map(|row| {
            let deg = row.iter().sum::<f64>() + alpha;
            if deg > 0.0 {
                deg.powf(-0.5)
            } else {
                0.0
            }
        })
        .collect();
    let mut out = vec![0.0; a.len()];
    for i in 0..joints {
        for k in 0..joints {
            out[i * joints + k] = scale[i] * a[i * joints + k] * scale[k];
        }
    }
    out
}

/// Normalised distance partitions of one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedAdjacency {
    pub joints: usize,
    pub max_distance: usize,
    pub alpha: f64,
    pub mats: Vec<Vec<f64>>,
}

impl PartitionedAdjacency {
    pub fn new(graph: &SkeletonGraph, max_distance: usize, alpha: f64) -> Self {
        let v = graph.num_joints();
        let mats = partition_adjacency(graph, max_distance)
            .iter()
            .map(|a| normalize_adjacency(a, v, alpha))
            .collect();
        Self {
            joints: v,
            max_distance,
            alpha,
            mats,
        }
    }

    pub fn tensors<T: Real>(&self) -> Vec<Tensor<T>> {
        self.mats
            .iter()
            .map(|m| Tensor::from_f64(&[self.joints, self.joints], m).expect("square"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{build_graph, ntu25_graph};

    fn chain3() -> SkeletonGraph {
        build_graph(3, &[(0, 1), (1, 2)], 1).unwrap()
    }

    #[test]
    fn chain_partitions() {
        let a = partition_adjacency(&chain3(), 2);
        assert_eq!(a[0], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(a[1], vec![0., 1., 0., 1., 0., 1., 0., 1., 0.]);
        assert_eq!(a[2], vec![0., 0., 1., 0., 0., 0., 1., 0., 0.]);
    }

    #[test]
    fn ntu_partitions_are_disjoint() {
        let a = partition_adjacency(&ntu25_graph(), 2);
        for cell in 0..625 {
            assert!(a.iter().map(|m| m[cell]).sum::<f64>() <= 1.0);
        }
    }

    #[test]
    fn normalisation_oracles() {
        assert_eq!(
            normalize_adjacency(&[1., 0., 0., 1.], 2, 0.0),
            vec![1., 0., 0., 1.]
        );
        assert_eq!(
            normalize_adjacency(&[0., 1., 1., 0.], 2, 0.0),
            vec![0., 1., 1., 0.]
        );
        let empty = normalize_adjacency(&[0., 0., 0., 1.], 2, DEFAULT_ALPHA);
        assert!(empty.iter().all(|x| x.is_finite()));
        let adj = PartitionedAdjacency::new(&ntu25_graph(), 2, DEFAULT_ALPHA);
        for m in &adj.mats {
            for i in 0..25 {
                for k in 0..25 {
                    assert_eq!(m[i * 25 + k], m[k * 25 + i]);
                    assert!(m[i * 25 + k] >= 0.0);
                }
            }
        }
    }
}
