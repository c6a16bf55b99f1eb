//! Finite windows of vertex-transitive graphs: square grids and regular trees.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const UNREACHED: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphFamily {
    /// `side^dim` box of the integer lattice with nearest-neighbor edges.
    Grid { dim: usize, side: usize },
    /// Ball of radius `depth` in the `degree`-regular tree.
    RegularTree { degree: usize, depth: usize },
}

#[derive(Clone, Debug)]
pub struct GraphWorld {
    pub family: GraphFamily,
    pub adjacency: Vec<Vec<u32>>,
    pub origin: u32,
    // Trees only; empty for grids.
    parent: Vec<u32>,
    depth: Vec<u32>,
}

impl GraphWorld {
    pub fn grid(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 || side == 0 {
            return Err(invalid("grid needs dim >= 1 and side >= 1"));
        }
        let n = side
            .checked_pow(dim as u32)
            .filter(|&n| n < u32::MAX as usize)
            .ok_or_else(|| invalid("grid too large"))?;
        let mut adjacency = vec![Vec::with_capacity(2 * dim); n];
        let mut stride = 1usize;
        for _ in 0..dim {
            for v in 0..n {
                let coord = (v / stride) % side;
                if coord + 1 < side {
                    let u = v + stride;
                    adjacency[v].push(u as u32);
                    adjacency[u].push(v as u32);
                }
            }
            stride *= side;
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let half = side / 2;
        let mut origin = 0usize;
        let mut stride = 1usize;
        for _ in 0..dim {
            origin += half * stride;
            stride *= side;
        }
        Ok(Self {
            family: GraphFamily::Grid { dim, side },
            adjacency,
            origin: origin as u32,
            parent: Vec::new(),
            depth: Vec::new(),
        })
    }

    pub fn regular_tree(degree: usize, depth: usize) -> Result<Self> {
        if degree < 2 {
            return Err(invalid("tree degree must be at least 2"));
        }
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new()];
        let mut parent = vec![UNREACHED];
        let mut depths = vec![0u32];
        let mut frontier = vec![0u32];
        for level in 1..=depth {
            let mut next = Vec::new();
            for &v in &frontier {
                let children = if v == 0 { degree } else { degree - 1 };
                for _ in 0..children {
                    let u = adjacency.len() as u32;
                    if adjacency.len() >= (1 << 26) {
                        return Err(invalid("tree too large"));
                    }
                    adjacency.push(vec![v]);
                    adjacency[v as usize].push(u);
                    parent.push(v);
                    depths.push(level as u32);
                    next.push(u);
                }
            }
            frontier = next;
        }
        Ok(Self {
            family: GraphFamily::RegularTree { degree, depth },
            adjacency,
            origin: 0,
            parent,
            depth: depths,
        })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn contains(&self, v: u32) -> bool {
        (v as usize) < self.adjacency.len()
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adjacency[v as usize]
    }

    /// Hop distance, closed form for both families.
    pub fn distance(&self, a: u32, b: u32) -> u32 {
        match self.family {
            GraphFamily::Grid { dim, side } => {
                let (mut a, mut b) = (a as usize, b as usize);
                let mut d = 0usize;
                for _ in 0..dim {
                    d += (a % side).abs_diff(b % side);
                    a /= side;
                    b /= side;
                }
                d as u32
            }
            GraphFamily::RegularTree { .. } => {
                let (mut a, mut b) = (a, b);
                let mut d = 0;
                while self.depth[a as usize] > self.depth[b as usize] {
                    a = self.parent[a as usize];
                    d += 1;
                }
                while self.depth[b as usize] > self.depth[a as usize] {
                    b = self.parent[b as usize];
                    d += 1;
                }
                while a != b {
                    a = self.parent[a as usize];
                    b = self.parent[b as usize];
                    d += 2;
                }
                d
            }
        }
    }

    /// Hop distances from `source` by breadth-first search.
    pub fn bfs(&self, source: u32) -> Vec<u32> {
        let mut dist = vec![UNREACHED; self.len()];
        let mut queue = VecDeque::new();
        dist[source as usize] = 0;
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v as usize];
            for &u in self.neighbors(v) {
                if dist[u as usize] == UNREACHED {
                    dist[u as usize] = dv + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.bfs(0).iter().all(|&d| d != UNREACHED)
    }

    /// Number of vertices within hop distance `t` of the origin.
    pub fn ball_size(&self, t: f64) -> usize {
        let r = t.floor();
        self.bfs(self.origin)
            .iter()
            .filter(|&&d| d != UNREACHED && (d as f64) <= r)
            .count()
    }

    pub fn radius_from_origin(&self, v: u32) -> u32 {
        self.distance(self.origin, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_structure() {
        let g = GraphWorld::grid(2, 5).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g.origin, 12);
        assert!(g.is_connected());
        let edges: usize = g.adjacency.iter().map(Vec::len).sum();
        assert_eq!(edges, 2 * 2 * 5 * 4);
        for v in 0..g.len() as u32 {
            for &u in g.neighbors(v) {
                assert!(g.neighbors(u).contains(&v));
            }
        }
    }

    #[test]
    fn closed_form_distance_matches_bfs() {
        for g in [
            GraphWorld::grid(2, 7).unwrap(),
            GraphWorld::grid(3, 4).unwrap(),
            GraphWorld::regular_tree(3, 5).unwrap(),
        ] {
            for s in [0u32, 3, (g.len() / 2) as u32, g.len() as u32 - 1] {
                let bfs = g.bfs(s);
                for v in 0..g.len() as u32 {
                    assert_eq!(g.distance(s, v), bfs[v as usize]);
                }
            }
        }
    }

    #[test]
    fn tree_sizes() {
        let t = GraphWorld::regular_tree(3, 4).unwrap();
        assert_eq!(t.len(), 1 + 3 + 6 + 12 + 24);
        assert_eq!(t.ball_size(0.0), 1);
        assert_eq!(t.ball_size(1.5), 4);
        assert_eq!(t.ball_size(2.0), 10);
    }
}
