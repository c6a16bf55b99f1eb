//! Probe flood fill, an independent check on witness-based clusters.
//!
//! Probes in black cells are linked when they lie within `eps = 2 * spacing`
//! of each other. Probes of one cell are always connected, since cells are
//! star-shaped about their nuclei. A link between probes of different cells
//! is accepted only if the geodesic segment between them stays in black cells
//! and every change of cell along it happens at a point whose two nearest
//! nuclei are the two cells involved, with the third strictly farther.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use super::{ClusterReport, WHITE};
use crate::error::{invalid, Result};
use crate::geometry::Point;
use crate::tessellation::witness::PairSearch;
use crate::tessellation::{ProbeRegion, Tessellation, Witness};
use crate::unionfind::UnionFind;
use crate::vptree::VpTree;

/// Cells with fewer probes than this trigger the low-resolution warning.
pub const MIN_PROBES: u32 = 8;
const BISECTION_STEPS: usize = 64;
const CROSSINGS_PER_LINK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// Black cells that own at least one oracle probe.
    pub cells: Vec<u32>,
    /// Per cell: smallest cell of its block, or [`WHITE`].
    pub labels: Vec<u32>,
    /// Black cells with fewer than [`MIN_PROBES`] probes.
    pub low_resolution: Vec<u32>,
    pub links_tested: usize,
    pub links_rejected: usize,
}

impl OracleReport {
    pub fn partition(&self) -> Vec<Vec<u32>> {
        let mut index = std::collections::BTreeMap::new();
        for &c in &self.cells {
            index.entry(self.labels[c as usize]).or_insert_with(Vec::new).push(c);
        }
        index.into_values().collect()
    }

    /// Cells of [`Self::cells`] whose block, restricted to those cells, differs
    /// from their block in `report`.
    pub fn disagreements(&self, report: &ClusterReport) -> Vec<u32> {
        let mut first_o = std::collections::HashMap::new();
        let mut first_r = std::collections::HashMap::new();
        for &c in &self.cells {
            first_o.entry(self.labels[c as usize]).or_insert(c);
            first_r.entry(report.labels[c as usize]).or_insert(c);
        }
        self.cells
            .iter()
            .copied()
            .filter(|&c| {
                report.labels[c as usize] == WHITE
                    || first_o[&self.labels[c as usize]] != first_r[&report.labels[c as usize]]
            })
            .collect()
    }
}

/// Flood-fill partition of the black cells met by probes. `seeds` are
/// witness points; a probe is added just inside each of the two cells at
/// every seed joining black cells, so thin faces are not missed. The seeds
/// are only starting points: each link is re-derived from scratch.
pub fn oracle_clusters(t: &Tessellation, black: &[u32], seeds: &[Witness]) -> Result<OracleReport> {
    let n = t.len();
    let mut is_black = vec![false; n];
    for &c in black {
        if c as usize >= n {
            return Err(invalid(format!("cell {c} not in a tessellation of {n} cells")));
        }
        is_black[c as usize] = true;
    }
    if t.probes.is_empty() {
        return Err(invalid("oracle needs probes"));
    }
    let mut seen = vec![false; n];
    let mut uf = UnionFind::new(n);
    let mut tested = 0;
    let mut rejected = 0;

    if let Some(world) = t.space.graph_world() {
        let cells = t.graph_cells().expect("graph cells");
        for p in &t.probes {
            let Point::Vertex(u) = p.x else { continue };
            let a = cells.owner[u as usize];
            if a == WHITE || !is_black[a as usize] {
                continue;
            }
            seen[a as usize] = true;
            for &v in world.neighbors(u) {
                let b = cells.owner[v as usize];
                if b != WHITE && b != a && is_black[b as usize] {
                    tested += 1;
                    uf.union(a, b);
                }
            }
        }
    } else {
        let eps = 2.0 * t.spacing;
        let mut pts: Vec<(Point, u32)> = Vec::new();
        for p in &t.probes {
            if is_black[p.nearest as usize] {
                seen[p.nearest as usize] = true;
                if p.d2 - p.d1 <= 2.0 * eps {
                    pts.push((p.x, p.nearest));
                }
            }
        }
        for w in seeds {
            let (i, j) = w.pair;
            if !(is_black[i as usize] && is_black[j as usize]) {
                continue;
            }
            let off = (0.25 * t.spacing).min(0.25 * w.margin.max(0.0));
            if !(off > 0.0) {
                continue;
            }
            // Witnesses often sit on the clipping boundary; slide along the
            // bisector towards the origin's projection until inside.
            let search = PairSearch::new(t, i, j);
            let region = clip_region(t);
            let inside = |z: &Point| region.is_none_or(|g| g.contains(&t.space, z));
            let on_face = |z: &Point| {
                let k = t.index.knn::<3>(&t.space, z);
                k.len >= 2 && (k.idx[0].min(k.idx[1]), k.idx[0].max(k.idx[1])) == (i, j)
            };
            let mut base = w.location;
            if region.is_some() {
                let anchor = search.project(&t.space.origin);
                let d = t.space.dist(&w.location, &anchor);
                if inside(&anchor) && d > 0.0 {
                    let mut slide = off.min(d);
                    for _ in 0..12 {
                        let z = search.project(&t.space.geodesic(&w.location, &anchor, slide / d));
                        if inside(&z) && on_face(&z) {
                            base = z;
                            break;
                        }
                        slide *= 0.25;
                    }
                }
            }
            // Step towards each nucleus until the point is inside its cell;
            // the step needed grows as the face turns towards the nuclei.
            for y in [i, j] {
                let yn = &t.points.nuclei[y as usize];
                let d = t.space.dist(&base, yn);
                let mut step = off / 64.0;
                while step < 0.5 * d && step <= w.margin.max(off) {
                    let q = t.space.geodesic(&base, yn, step / d);
                    let c = t.cell_of(&q);
                    if c == y && inside(&q) {
                        if is_black[c as usize] {
                            seen[c as usize] = true;
                            pts.push((q, c));
                        }
                        break;
                    }
                    step *= 2.0;
                }
            }
        }
        let linker = Linker {
            t,
            is_black: &is_black,
            eta: crate::tessellation::witness::ETA_RELATIVE * t.scale,
            delta: 1e-3 * t.spacing,
            tiny: 1e-12 * t.scale,
            clip: clip_region(t),
            budget: Cell::new(0),
        };
        let locs: Vec<Point> = pts.iter().map(|p| p.0).collect();
        let tree = VpTree::build(&t.space, &locs);
        let mut near = Vec::new();
        for (a, &(xa, ca)) in pts.iter().enumerate() {
            near.clear();
            tree.within(&t.space, &xa, eps, |b, _| {
                if b as usize > a {
                    near.push(b);
                }
            });
            near.sort_unstable();
            for &b in &near {
                let (xb, cb) = pts[b as usize];
                if cb == ca || uf.same(ca, cb) {
                    continue;
                }
                tested += 1;
                linker.budget.set(CROSSINGS_PER_LINK);
                if linker.link(&xa, ca, &xb, cb, 24) {
                    uf.union(ca, cb);
                } else {
                    rejected += 1;
                }
            }
        }
    }

    let canon = uf.canonical_labels();
    let cells: Vec<u32> = (0..n as u32).filter(|&c| seen[c as usize]).collect();
    let mut labels = vec![WHITE; n];
    for &c in &cells {
        labels[c as usize] = canon[c as usize];
    }
    let low_resolution = cells
        .iter()
        .copied()
        .filter(|&c| t.probe_counts[c as usize] < MIN_PROBES)
        .collect();
    Ok(OracleReport {
        cells,
        labels,
        low_resolution,
        links_tested: tested,
        links_rejected: rejected,
    })
}

fn clip_region(t: &Tessellation) -> Option<ProbeRegion> {
    match t.config.region {
        r @ ProbeRegion::Square(_) => Some(r),
        r if t.config.clip => Some(r),
        _ => None,
    }
}

struct Linker<'a> {
    t: &'a Tessellation,
    is_black: &'a [bool],
    eta: f64,
    delta: f64,
    tiny: f64,
    clip: Option<ProbeRegion>,
    budget: Cell<usize>,
}

impl Linker<'_> {
    fn black(&self, c: u32) -> bool {
        self.is_black[c as usize]
    }

    /// Segment `a -> b` stays black with valid cell changes.
    fn link(&self, a: &Point, ca: u32, b: &Point, cb: u32, depth: u32) -> bool {
        if ca == cb {
            return true;
        }
        if !self.black(ca) || !self.black(cb) {
            return false;
        }
        if depth == 0 || self.t.space.dist(a, b) <= self.delta {
            return self.cross(a, ca, b, cb);
        }
        let m = self.t.space.geodesic(a, b, 0.5);
        let cm = self.t.cell_of(&m);
        if !self.black(cm) {
            return false;
        }
        self.link(a, ca, &m, cm, depth - 1) && self.link(&m, cm, b, cb, depth - 1)
    }

    /// Locate the first detected change of cell on a short segment and
    /// check it, then continue from there.
    fn cross(&self, a: &Point, ca: u32, b: &Point, cb: u32) -> bool {
        let s = &self.t.space;
        let (mut lo, mut hi, mut chi) = (*a, *b, cb);
        let mut ccur = ca;
        loop {
            if self.budget.get() == 0 {
                return false;
            }
            self.budget.set(self.budget.get() - 1);
            for _ in 0..BISECTION_STEPS {
                if s.dist(&lo, &hi) <= self.tiny {
                    break;
                }
                let m = s.geodesic(&lo, &hi, 0.5);
                let c = self.t.cell_of(&m);
                if c == ccur {
                    lo = m;
                } else {
                    hi = m;
                    chi = c;
                }
            }
            if !self.black(chi) || !self.valid_change(&s.geodesic(&lo, &hi, 0.5), ccur, chi) {
                return false;
            }
            if chi == cb {
                return true;
            }
            ccur = chi;
            lo = hi;
            hi = *b;
            chi = cb;
            if s.dist(&lo, b) <= self.tiny {
                return false;
            }
        }
    }

    fn valid_change(&self, z: &Point, a: u32, b: u32) -> bool {
        if let Some(region) = &self.clip {
            if !region.contains(&self.t.space, z) {
                return false;
            }
        }
        let k = self.t.index.knn::<3>(&self.t.space, z);
        if k.len < 2 {
            return false;
        }
        let pair = (k.idx[0].min(k.idx[1]), k.idx[0].max(k.idx[1]));
        if pair != (a.min(b), a.max(b)) {
            return false;
        }
        let third = if k.len > 2 { k.dist[2] } else { f64::INFINITY };
        third.min(self.t.reach(z)) - k.dist[1] > self.eta
    }
}
