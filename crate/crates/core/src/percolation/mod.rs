//! Bernoulli coloring of cells and black clusters.
//!
//! Cell `i` is black iff its label `Z_i <= p`, so colorings for different `p`
//! on one realization are coupled monotonically. Clusters are the connected
//! components of the black subgraph of the witness adjacency graph.

mod estimators;
mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tessellation::{AdjacencyGraph, Tessellation};
use crate::unionfind::UnionFind;

pub use estimators::{
    antipodal_pair, estimate_pc, window_for, fkg_check, prepare_replica, refinement_violations, step2_check,
    two_point, uniqueness_proxy, FkgReport, PcWindow, Replica, Step2Report, ThresholdEstimate,
    TwoPointEstimate, UniquenessPoint, UniquenessReport,
};
pub use oracle::{oracle_clusters, OracleReport};

/// Label for cells outside the black set.
pub const WHITE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercolationParams {
    pub lambda: f64,
    pub p: f64,
    pub window: f64,
}

impl PercolationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("intensity {} must be positive", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(invalid(format!("survival probability {} outside [0, 1]", self.p)));
        }
        if !(self.window > 0.0) {
            return Err(invalid(format!("window radius {} must be positive", self.window)));
        }
        Ok(())
    }
}

/// Black cells at level `p`, in increasing order.
pub fn color(t: &Tessellation, p: f64) -> Vec<u32> {
    color_labels(&t.points.labels, p)
}

pub fn color_labels(labels: &[f64], p: f64) -> Vec<u32> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &z)| z <= p)
        .map(|(i, _)| i as u32)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Smallest member cell.
    pub id: u32,
    pub size: usize,
    /// Largest nucleus radius among members, when computed.
    pub extent: f64,
    /// Some member cell is not trusted by the tessellation.
    pub touches_untrusted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub black: Vec<u32>,
    /// Per cell: smallest member of its cluster, or [`WHITE`].
    pub labels: Vec<u32>,
    /// Ordered by id.
    pub clusters: Vec<Cluster>,
}

impl ClusterReport {
    pub fn count(&self) -> usize {
        self.clusters.len()
    }

    pub fn label(&self, cell: u32) -> Option<u32> {
        match self.labels.get(cell as usize) {
            Some(&l) if l != WHITE => Some(l),
            _ => None,
        }
    }

    /// Both cells black and in one cluster.
    pub fn connected(&self, a: u32, b: u32) -> bool {
        matches!((self.label(a), self.label(b)), (Some(x), Some(y)) if x == y)
    }

    /// Blocks as sorted member lists, ordered by smallest member.
    pub fn partition(&self) -> Vec<Vec<u32>> {
        let mut index = std::collections::BTreeMap::new();
        for &c in &self.black {
            index.entry(self.labels[c as usize]).or_insert_with(Vec::new).push(c);
        }
        index.into_values().collect()
    }

    /// Fill extents and trust flags from the tessellation.
    pub fn with_geometry(mut self, t: &Tessellation) -> Self {
        let pos: std::collections::HashMap<u32, usize> =
            self.clusters.iter().enumerate().map(|(k, c)| (c.id, k)).collect();
        for &c in &self.black {
            let k = pos[&self.labels[c as usize]];
            let cl = &mut self.clusters[k];
            cl.extent = cl.extent.max(t.points.radii[c as usize]);
            cl.touches_untrusted |= !t.trusted(c);
        }
        self
    }
}

/// Connected components of the subgraph of `adj` induced by `black`.
pub fn clusters(adj: &AdjacencyGraph, black: &[u32]) -> Result<ClusterReport> {
    let n = adj.n;
    let mut is_black = vec![false; n];
    for &c in black {
        if c as usize >= n {
            return Err(invalid(format!("cell {c} not in a tessellation of {n} cells")));
        }
        is_black[c as usize] = true;
    }
    let mut uf = UnionFind::new(n);
    for (a, b) in adj.edges() {
        if is_black[a as usize] && is_black[b as usize] {
            uf.union(a, b);
        }
    }
    let canon = uf.canonical_labels();
    let mut black: Vec<u32> = black.to_vec();
    black.sort_unstable();
    black.dedup();
    let mut labels = vec![WHITE; n];
    let mut sizes = std::collections::BTreeMap::new();
    for &c in &black {
        labels[c as usize] = canon[c as usize];
        *sizes.entry(canon[c as usize]).or_insert(0usize) += 1;
    }
    let clusters = sizes
        .into_iter()
        .map(|(id, size)| Cluster {
            id,
            size,
            extent: 0.0,
            touches_untrusted: false,
        })
        .collect();
    Ok(ClusterReport {
        black,
        labels,
        clusters,
    })
}

/// Smallest eigenvalue of the same-cluster matrix `M_ab = 1{l_a = l_b}` for
/// points with cluster labels `l`. `None` labels (white points) give zero
/// rows and columns.
pub fn psd_kernel_check(labels: &[Option<u32>]) -> Result<f64> {
    let n = labels.len();
    if n < 2 {
        return Err(invalid("kernel check needs at least two points"));
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |a, b| match (labels[a], labels[b]) {
        (Some(x), Some(y)) if x == y => 1.0,
        _ => 0.0,
    });
    // Shift by the identity: the QR iteration underflows to NaN on the long
    // runs of exact zero eigenvalues these 0/1 matrices have.
    let eig = nalgebra::SymmetricEigen::new(m + nalgebra::DMatrix::identity(n, n));
    if eig.eigenvalues.iter().any(|x: &f64| !x.is_finite()) {
        return Err(crate::error::Error::EstimationFailed("eigenvalue iteration did not converge".into()));
    }
    Ok(eig.eigenvalues.iter().map(|x| x - 1.0).fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(n: usize, edges: &[(u32, u32)]) -> AdjacencyGraph {
        AdjacencyGraph::from_edges(n, edges).unwrap()
    }

    #[test]
    fn path_plus_isolated() {
        let g = graph(5, &[(1, 2), (2, 3)]);
        let r = clusters(&g, &[1, 2, 3, 4]).unwrap();
        assert_eq!(r.partition(), vec![vec![1, 2, 3], vec![4]]);
        assert!(r.connected(1, 3));
        assert!(!r.connected(0, 1));
    }

    #[test]
    fn empty_and_complete() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(clusters(&g, &[]).unwrap().count(), 0);
        assert_eq!(clusters(&g, &[1, 3]).unwrap().count(), 1);
        assert!(clusters(&g, &[7]).is_err());
    }

    #[test]
    fn kernel_examples() {
        let m = psd_kernel_check(&[Some(1), Some(1), Some(3)]).unwrap();
        assert!(m.abs() < 1e-12);
        let id = psd_kernel_check(&[Some(0), Some(1), Some(2), Some(3)]).unwrap();
        assert!((id - 1.0).abs() < 1e-12);
        let one = psd_kernel_check(&[Some(0); 5]).unwrap();
        assert!(one.abs() < 1e-12);
        assert!(psd_kernel_check(&[Some(0)]).is_err());
    }

    #[test]
    fn labels_color_monotone() {
        let labels = [0.1, 0.5, 0.9, 0.3];
        assert!(color_labels(&labels, 0.0).is_empty());
        assert_eq!(color_labels(&labels, 1.0).len(), 4);
        assert_eq!(color_labels(&labels, 0.4), vec![0, 3]);
    }

    proptest! {
        #[test]
        fn kernel_is_psd(labels in prop::collection::vec(prop::option::of(0u32..4), 2..30)) {
            prop_assert!(psd_kernel_check(&labels).unwrap() >= -1e-9);
        }

        #[test]
        fn more_black_refines(
            edges in prop::collection::vec((0u32..20, 0u32..20), 0..40),
            labels in prop::collection::vec(0.0f64..1.0, 20),
            p1 in 0.0f64..1.0,
            dp in 0.0f64..1.0,
        ) {
            let edges: Vec<(u32, u32)> = edges.into_iter().filter(|(a, b)| a != b).collect();
            let g = graph(20, &edges);
            let fine = clusters(&g, &color_labels(&labels, p1)).unwrap();
            let coarse = clusters(&g, &color_labels(&labels, (p1 + dp).min(1.0))).unwrap();
            prop_assert_eq!(refinement_violations(&fine, &coarse), 0);
        }
    }
}
