//! Sparse graphs steered by Voronoi percolation.
//!
//! Continuum: `Y` is an intensity-one process with the origin inserted and
//! `Y^(lambda)` an independent process whose cells are colored at level `p`.
//! Two Delaunay neighbors of `Y` are joined when both of their cells meet the
//! designated giant cluster, the largest cluster crossing from `B_{r_in}(o)`
//! to the sphere of radius `r_out`.
//!
//! Graph backends: keep every base edge whose two endpoint cells are black.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point, Space};
use crate::parallel::try_map_indexed;
use crate::percolation::{color, prepare_replica, window_for, PcWindow};
use crate::pointprocess::sample_poisson;
use crate::rng::RandomStream;
use crate::tessellation::witness::DEFAULT_REFINE_STEPS;
use crate::tessellation::{build_adjacency, Tessellation};
use crate::unionfind::UnionFind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorGraph {
    pub backend: String,
    /// Vertex ids are nucleus indices of `Y` (continuum) or base-graph
    /// vertices (graphs); ids run below `n`.
    pub n: usize,
    pub root: u32,
    /// Sorted pairs `(a, b)` with `a < b`.
    pub edges: Vec<(u32, u32)>,
    /// Vertices whose cell meets `B_{r_in}(o)`.
    pub inner: Vec<u32>,
    /// Vertices whose cell meets the outer sphere.
    pub outer: Vec<u32>,
    /// Continuum: vertices whose cell meets the giant cluster. Graphs:
    /// vertices in black cells.
    pub marked: Vec<u32>,
    /// Clusters of the steering percolation crossing the annulus.
    pub steering_crossings: usize,
    /// No crossing cluster, so the graph is empty.
    pub no_giant: bool,
}

impl FactorGraph {
    pub const CSV_HEADER: &'static str = "backend,lambda,p,replica,deg_root,crossing_components,discarded";

    pub fn degree(&self, v: u32) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    pub fn deg_root(&self) -> usize {
        self.degree(self.root)
    }

    /// `2|E| / |V|` over the given vertex count.
    pub fn mean_degree(&self, vertices: usize) -> f64 {
        if vertices == 0 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / vertices as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GiantCheck {
    pub has_crossing_component: bool,
    pub crossing_component_count: usize,
}

/// Components of the graph (vertices with at least one edge) that contain
/// both an inner and an outer vertex.
pub fn giant_uniqueness_check(g: &FactorGraph) -> GiantCheck {
    let mut uf = UnionFind::new(g.n);
    let mut active = vec![false; g.n];
    for &(a, b) in &g.edges {
        uf.union(a, b);
        active[a as usize] = true;
        active[b as usize] = true;
    }
    let inner: HashSet<u32> = g.inner.iter().filter(|&&v| active[v as usize]).map(|&v| uf.find(v)).collect();
    let both: BTreeSet<u32> = g
        .outer
        .iter()
        .filter(|&&v| active[v as usize])
        .map(|&v| uf.find(v))
        .filter(|r| inner.contains(r))
        .collect();
    GiantCheck {
        has_crossing_component: !both.is_empty(),
        crossing_component_count: both.len(),
    }
}

fn annulus(r_in: f64, r_out: f64, space: &Space) -> Result<PcWindow> {
    let w = PcWindow::Annulus { r_in, r_out };
    w.validate(space)?;
    Ok(w)
}

/// Continuum construction. `None` when either tessellation is not certified
/// by its window.
pub fn build_sparse_graph(
    space: &Space,
    lambda: f64,
    p: f64,
    r_in: f64,
    r_out: f64,
    stream: &RandomStream,
) -> Result<Option<FactorGraph>> {
    if !space.is_continuum() {
        return Err(Error::Unsupported("continuum factor graph on a graph backend".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("survival probability {p} outside [0, 1]")));
    }
    let window = annulus(r_in, r_out, space)?;
    let config = window.config();

    let Some(steer) = prepare_replica(space, lambda, config, window.window(space, lambda)?, &stream.split(1))? else {
        return Ok(None);
    };
    let omega = steer.clusters(p);
    let (a, b) = window.sides(&steer.t);
    let la: HashSet<u32> = a.iter().filter_map(|&c| omega.label(c)).collect();
    let crossing: BTreeSet<u32> = b.iter().filter_map(|&c| omega.label(c)).filter(|l| la.contains(l)).collect();
    // Largest crossing cluster, smallest id on ties.
    let giant = crossing
        .iter()
        .copied()
        .max_by_key(|&id| {
            let size = omega.clusters.iter().find(|c| c.id == id).map_or(0, |c| c.size);
            (size, std::cmp::Reverse(id))
        });

    let ys = stream.split(0);
    let y = sample_poisson(space, 1.0, window_for(space, 1.0, r_out)?, &ys.split(0))?.with_origin(space, 0.0);
    let t = Tessellation::build(space, y, config, &ys.split(1))?;
    if t.probes.iter().any(|q| !q.certified()) {
        return Ok(None);
    }
    let root = t.cell_of(&space.origin);
    let (inner, outer) = window.sides(&t);
    let mut g = FactorGraph {
        backend: space.to_string(),
        n: t.len(),
        root,
        edges: Vec::new(),
        inner,
        outer,
        marked: Vec::new(),
        steering_crossings: crossing.len(),
        no_giant: giant.is_none(),
    };
    let Some(giant) = giant else {
        return Ok(Some(g));
    };
    let in_giant = |x: &Point| omega.label(steer.t.cell_of(x)) == Some(giant);
    let mut meets = vec![false; t.len()];
    for q in &t.probes {
        if !meets[q.nearest as usize] && in_giant(&q.x) {
            meets[q.nearest as usize] = true;
        }
    }
    for (i, x) in t.points.nuclei.iter().enumerate() {
        if space.radius(x) <= r_out && in_giant(x) {
            meets[i] = true;
        }
    }
    // Witness points lie on faces and test both cells at once; they catch
    // thin cells at the region boundary that hold no probe.
    let adj = build_adjacency(&t, None, DEFAULT_REFINE_STEPS)?;
    for w in &adj.witnesses {
        if in_giant(&w.location) {
            meets[w.pair.0 as usize] = true;
            meets[w.pair.1 as usize] = true;
        }
    }
    g.edges = adj
        .edges()
        .filter(|&(a, b)| meets[a as usize] && meets[b as usize])
        .collect();
    g.marked = (0..t.len() as u32).filter(|&i| meets[i as usize]).collect();
    Ok(Some(g))
}

/// Graph-backend analog: Bernoulli(`lambda`) nuclei, graph Voronoi cells,
/// and every base edge inside the ball of radius `r_out` whose endpoints
/// lie in black cells. `None` when the window does not certify the cells.
pub fn build_sparse_graph_discrete(
    space: &Space,
    lambda: f64,
    p: f64,
    r_in: f64,
    r_out: f64,
    stream: &RandomStream,
) -> Result<Option<(FactorGraph, Tessellation)>> {
    let Some(world) = space.graph_world() else {
        return Err(Error::Unsupported("discrete factor graph needs a graph backend".into()));
    };
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("survival probability {p} outside [0, 1]")));
    }
    let window = annulus(r_in, r_out, space)?;
    let Some(rep) = prepare_replica(space, lambda, window.config(), window.window(space, lambda)?, stream)? else {
        return Ok(None);
    };
    let cells = rep.t.graph_cells().expect("graph cells");
    let mut black = vec![false; rep.t.len()];
    for c in color(&rep.t, p) {
        black[c as usize] = true;
    }
    let mut marked = Vec::new();
    let mut inside = vec![false; world.len()];
    for q in &rep.t.probes {
        let Point::Vertex(v) = q.x else { continue };
        inside[v as usize] = true;
        if black[q.nearest as usize] {
            marked.push(v);
        }
    }
    marked.sort_unstable();
    let mut edges = Vec::new();
    for &u in &marked {
        for &v in world.neighbors(u) {
            if u < v && inside[v as usize] && black[cells.owner[v as usize] as usize] {
                edges.push((u, v));
            }
        }
    }
    edges.sort_unstable();
    let (cin, cout) = window.sides(&rep.t);
    let cin: HashSet<u32> = cin.into_iter().collect();
    let cout: HashSet<u32> = cout.into_iter().collect();
    let radius = |v: u32| space.radius(&Point::Vertex(v));
    let inner = (0..world.len() as u32).filter(|&v| inside[v as usize] && radius(v) <= r_in).collect();
    let shell = r_out.floor();
    let outer = (0..world.len() as u32).filter(|&v| inside[v as usize] && radius(v) >= shell).collect();
    let omega = rep.clusters(p);
    let lin: HashSet<u32> = cin.iter().filter_map(|&c| omega.label(c)).collect();
    let crossings: BTreeSet<u32> = cout.iter().filter_map(|&c| omega.label(c)).filter(|l| lin.contains(l)).collect();
    let g = FactorGraph {
        backend: space.to_string(),
        n: world.len(),
        root: world.origin,
        edges,
        inner,
        outer,
        marked,
        steering_crossings: crossings.len(),
        no_giant: crossings.is_empty(),
    };
    Ok(Some((g, rep.t)))
}

/// Exhaustive re-scan of every base edge within `r_out` of the origin:
/// number of edges whose presence in `g` disagrees with "both endpoint
/// cells black".
pub fn rescan_discrete(g: &FactorGraph, t: &Tessellation, p: f64, r_out: f64) -> usize {
    let world = t.space.graph_world().expect("graph backend");
    let cells = t.graph_cells().expect("graph cells");
    let dist = world.bfs(world.origin);
    let kept: HashSet<(u32, u32)> = g.edges.iter().copied().collect();
    let black = |v: u32| {
        let c = cells.owner[v as usize];
        c != crate::tessellation::UNASSIGNED && t.points.labels[c as usize] <= p
    };
    let mut bad = 0;
    for u in 0..world.len() as u32 {
        if dist[u as usize] as f64 > r_out {
            continue;
        }
        for &v in world.neighbors(u) {
            if u < v && dist[v as usize] as f64 <= r_out {
                if (black(u) && black(v)) != kept.contains(&(u, v)) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub deg_root: usize,
    pub crossing_components: usize,
    pub steering_crossings: usize,
    pub edges: usize,
    /// Discrete only: re-scan mismatches.
    pub rescan_mismatches: usize,
    pub discarded: bool,
}

/// Independent replicas of the continuum or discrete construction.
pub fn factorgraph_run(
    space: &Space,
    lambda: f64,
    p: f64,
    r_in: f64,
    r_out: f64,
    replicas: usize,
    stream: &RandomStream,
) -> Result<Vec<FactorRow>> {
    try_map_indexed(replicas, |k| -> Result<_> {
        let s = stream.split(k as u64);
        let built = if space.is_continuum() {
            build_sparse_graph(space, lambda, p, r_in, r_out, &s)?.map(|g| (g, 0))
        } else {
            build_sparse_graph_discrete(space, lambda, p, r_in, r_out, &s)?
                .map(|(g, t)| {
                    let bad = rescan_discrete(&g, &t, p, r_out);
                    (g, bad)
                })
        };
        Ok(match built {
            Some((g, bad)) => {
                let check = giant_uniqueness_check(&g);
                FactorRow {
                    deg_root: g.deg_root(),
                    crossing_components: check.crossing_component_count,
                    steering_crossings: g.steering_crossings,
                    edges: g.edges.len(),
                    rescan_mismatches: bad,
                    discarded: false,
                }
            }
            None => FactorRow {
                deg_root: 0,
                crossing_components: 0,
                steering_crossings: 0,
                edges: 0,
                rescan_mismatches: 0,
                discarded: true,
            },
        })
    })
}
