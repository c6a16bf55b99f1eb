//! Voronoi cells on graphs by multi-source breadth-first search.

use std::collections::VecDeque;

use crate::error::{invalid, Result};
use crate::geometry::GraphWorld;

/// Owner value for vertices no nucleus reaches.
pub const UNASSIGNED: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphCells {
    /// Index into the nucleus list, or [`UNASSIGNED`].
    pub owner: Vec<u32>,
    /// Hop distance to the owning nucleus.
    pub dist: Vec<u32>,
}

impl GraphCells {
    pub fn unassigned(&self) -> usize {
        self.owner.iter().filter(|&&o| o == UNASSIGNED).count()
    }
}

/// Assign every vertex to its nearest nucleus in hop distance. Ties go to the
/// nucleus with the smallest vertex identifier. `nuclei[k]` is the vertex of
/// nucleus `k`.
pub fn graph_voronoi(world: &GraphWorld, nuclei: &[u32]) -> Result<GraphCells> {
    graph_voronoi_within(world, nuclei, |_| true)
}

/// As [`graph_voronoi`], but the search never leaves vertices accepted by
/// `inside`.
pub fn graph_voronoi_within(
    world: &GraphWorld,
    nuclei: &[u32],
    inside: impl Fn(u32) -> bool,
) -> Result<GraphCells> {
    if nuclei.is_empty() {
        return Err(invalid("graph Voronoi needs at least one nucleus"));
    }
    let n = world.len();
    let mut owner = vec![UNASSIGNED; n];
    let mut dist = vec![u32::MAX; n];
    // Seeding in increasing vertex order keeps every BFS layer sorted by the
    // owner's vertex id, so the first discovery of a vertex comes from the
    // smallest tied nucleus.
    let mut order: Vec<u32> = (0..nuclei.len() as u32).collect();
    order.sort_by_key(|&k| nuclei[k as usize]);
    let mut queue = VecDeque::new();
    for &k in &order {
        let v = nuclei[k as usize];
        if !world.contains(v) {
            return Err(invalid(format!("nucleus vertex {v} outside the world")));
        }
        if owner[v as usize] != UNASSIGNED {
            return Err(invalid(format!("duplicate nucleus at vertex {v}")));
        }
        owner[v as usize] = k;
        dist[v as usize] = 0;
        queue.push_back(v);
    }
    while let Some(v) = queue.pop_front() {
        for &u in world.neighbors(v) {
            if owner[u as usize] == UNASSIGNED && inside(u) {
                owner[u as usize] = owner[v as usize];
                dist[u as usize] = dist[v as usize] + 1;
                queue.push_back(u);
            }
        }
    }
    Ok(GraphCells { owner, dist })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_tie_goes_to_smaller_identifier() {
        // A 1-dimensional grid is the path 0-1-2-3-4.
        let path = GraphWorld::grid(1, 5).unwrap();
        let cells = graph_voronoi(&path, &[4, 0]).unwrap();
        // Nucleus 1 sits at vertex 0 and wins the tie at vertex 2.
        assert_eq!(cells.owner, vec![1, 1, 1, 0, 0]);
        assert_eq!(cells.dist, vec![0, 1, 2, 1, 0]);
    }

    #[test]
    fn all_nuclei_and_single_nucleus() {
        let g = GraphWorld::grid(2, 6).unwrap();
        let all: Vec<u32> = (0..36).collect();
        let cells = graph_voronoi(&g, &all).unwrap();
        assert_eq!(cells.owner, all);
        let one = graph_voronoi(&g, &[7]).unwrap();
        assert!(one.owner.iter().all(|&o| o == 0));
        assert_eq!(one.unassigned(), 0);
        assert!(graph_voronoi(&g, &[]).is_err());
    }

    #[test]
    fn blocked_region_is_unassigned() {
        let path = GraphWorld::grid(1, 5).unwrap();
        let cells = graph_voronoi_within(&path, &[0], |v| v != 2).unwrap();
        assert_eq!(cells.owner, vec![0, 0, UNASSIGNED, UNASSIGNED, UNASSIGNED]);
    }

    #[test]
    fn matches_brute_force_on_tree() {
        let t = GraphWorld::regular_tree(3, 5).unwrap();
        let nuclei = [0u32, 17, 40, 41, 60];
        let cells = graph_voronoi(&t, &nuclei).unwrap();
        for v in 0..t.len() as u32 {
            let best = nuclei
                .iter()
                .enumerate()
                .min_by_key(|(_, &y)| (t.distance(v, y), y))
                .unwrap();
            assert_eq!(cells.owner[v as usize], best.0 as u32);
            assert_eq!(cells.dist[v as usize], t.distance(v, *best.1));
        }
    }
}
