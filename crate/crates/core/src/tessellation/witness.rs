//! Delaunay adjacency from margin witnesses.
//!
//! Cells `C_i` and `C_j` intersect iff some point `z` is equidistant from
//! `y_i` and `y_j` while every other nucleus is at least as far. A witness is
//! such a point with a strictly positive margin `d_(3)(z) - d_i(z)`, where the
//! third distance is capped by the window certificate `W - |z|`. Witnesses are
//! found by projecting probes onto the bisector of their two or three nearest
//! nuclei and, when the margin there is not positive, by a pattern search
//! along the bisector.

use std::cell::Cell;
use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ProbeRegion, Tessellation};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::rng::{RandomStream, StreamRng};

/// Default witness tolerance relative to the expected cell diameter.
pub const ETA_RELATIVE: f64 = 1e-6;
/// Default number of pattern-search steps per attempt.
pub const DEFAULT_REFINE_STEPS: usize = 60;
/// Attempts per candidate pair before it is given up.
const ATTEMPTS_PER_PAIR: u8 = 4;
/// Nearest nuclei examined for probes close to a vertex.
const NEAR_VERTEX_K: usize = 6;
const CLIMB_SEED: u64 = 0xC11B_5EED;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Witness {
    pub location: Point,
    /// Cell ids, smaller first.
    pub pair: (u32, u32),
    /// `|d_i - d_j|` at the location.
    pub gap: f64,
    /// Certified third distance minus `max(d_i, d_j)`.
    pub margin: f64,
}

impl Witness {
    /// Recompute gap and margin by direct evaluation against every nucleus.
    pub fn revalidate(&self, t: &Tessellation) -> (f64, f64) {
        let (i, j) = self.pair;
        let z = &self.location;
        if t.is_graph() {
            // Graph witnesses are base edges (u, v) with u in C_i; the record
            // keeps u only, so check that u sits in one of the two cells.
            let c = t.cell_of(z);
            return (0.0, if c == i || c == j { 0.0 } else { f64::NEG_INFINITY });
        }
        let di = t.space.dist(z, &t.points.nuclei[i as usize]);
        let dj = t.space.dist(z, &t.points.nuclei[j as usize]);
        let third = t
            .points
            .nuclei
            .iter()
            .enumerate()
            .filter(|(k, _)| *k as u32 != i && *k as u32 != j)
            .map(|(_, y)| t.space.dist(z, y))
            .fold(f64::INFINITY, f64::min)
            .min(t.reach(z));
        ((di - dj).abs(), third - di.max(dj))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyStats {
    pub candidate_pairs: usize,
    pub projections: usize,
    pub climbs: usize,
    pub degenerate: usize,
}

/// Delaunay graph with a witness per edge.
#[derive(Clone, Debug)]
pub struct AdjacencyGraph {
    pub n: usize,
    /// Sorted by pair.
    pub witnesses: Vec<Witness>,
    /// Pairs whose best margin stayed within `[-eta, eta]`: numerically
    /// co-spherical configurations, reported rather than decided.
    pub degenerate: Vec<Witness>,
    /// Cell containing the origin (the inserted nucleus for Palm sets).
    pub root: Option<u32>,
    pub eta: f64,
    pub stats: AdjacencyStats,
    offsets: Vec<u32>,
    targets: Vec<u32>,
}

impl AdjacencyGraph {
    /// Assemble from witnesses; duplicates of a pair keep the first.
    pub fn from_witnesses(n: usize, mut witnesses: Vec<Witness>, root: Option<u32>, eta: f64) -> Self {
        witnesses.sort_by_key(|w| w.pair);
        witnesses.dedup_by_key(|w| w.pair);
        let mut degree = vec![0u32; n + 1];
        for w in &witnesses {
            degree[w.pair.0 as usize] += 1;
            degree[w.pair.1 as usize] += 1;
        }
        let mut offsets = vec![0u32; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0u32; offsets[n] as usize];
        for w in &witnesses {
            let (a, b) = w.pair;
            targets[fill[a as usize] as usize] = b;
            fill[a as usize] += 1;
            targets[fill[b as usize] as usize] = a;
            fill[b as usize] += 1;
        }
        for i in 0..n {
            targets[offsets[i] as usize..offsets[i + 1] as usize].sort_unstable();
        }
        Self {
            n,
            witnesses,
            degenerate: Vec::new(),
            root,
            eta,
            stats: AdjacencyStats::default(),
            offsets,
            targets,
        }
    }

    /// Graph from a plain edge list with placeholder witnesses at `location`.
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut w = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a as usize >= n || b as usize >= n || a == b {
                return Err(crate::error::invalid(format!("bad edge ({a}, {b}) for {n} vertices")));
            }
            w.push(Witness {
                location: Point::Vertex(a),
                pair: (a.min(b), a.max(b)),
                gap: 0.0,
                margin: 0.0,
            });
        }
        Ok(Self::from_witnesses(n, w, None, 0.0))
    }

    pub fn neighbors(&self, i: u32) -> &[u32] {
        &self.targets[self.offsets[i as usize] as usize..self.offsets[i as usize + 1] as usize]
    }

    pub fn degree(&self, i: u32) -> usize {
        self.neighbors(i).len()
    }

    pub fn has_edge(&self, i: u32, j: u32) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.witnesses.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.witnesses.iter().map(|w| w.pair)
    }

    pub fn witness(&self, i: u32, j: u32) -> Option<&Witness> {
        let key = (i.min(j), i.max(j));
        self.witnesses
            .binary_search_by_key(&key, |w| w.pair)
            .ok()
            .map(|k| &self.witnesses[k])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eval {
    pub gap: f64,
    pub margin: f64,
    /// Nucleus realizing the third distance, `u32::MAX` if the certificate
    /// bound was smaller.
    pub third: u32,
}

/// Searches the bisector of one pair of nuclei.
pub struct PairSearch<'a> {
    t: &'a Tessellation,
    i: u32,
    j: u32,
    yi: Point,
    yj: Point,
    tol: f64,
    clip: Option<ProbeRegion>,
    /// Set when some evaluation had its margin cut by the window reach.
    capped: Cell<bool>,
}

impl<'a> PairSearch<'a> {
    pub fn new(t: &'a Tessellation, i: u32, j: u32) -> Self {
        let eta = ETA_RELATIVE * t.scale;
        Self {
            t,
            i,
            j,
            yi: t.points.nuclei[i as usize],
            yj: t.points.nuclei[j as usize],
            capped: Cell::new(false),
            tol: 1e-3 * eta,
            clip: match t.config.region {
                r @ ProbeRegion::Square(_) => Some(r),
                r @ ProbeRegion::Ball(_) if t.config.clip => Some(r),
                ProbeRegion::Ball(_) => None,
            },
        }
    }

    /// [`Self::project`], then, if the result lies outside a clipping
    /// region, slide it along the bisector towards the projection of the
    /// origin until it is just inside.
    pub fn project_inside(&self, q: &Point) -> Point {
        let z = self.project(q);
        let Some(region) = &self.clip else { return z };
        let s = &self.t.space;
        if region.contains(s, &z) {
            return z;
        }
        let anchor = self.project(&s.origin);
        if !region.contains(s, &anchor) {
            return z;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut best = anchor;
        for _ in 0..40 {
            let m = 0.5 * (lo + hi);
            let u = self.project(&s.geodesic(&anchor, &z, m));
            if region.contains(s, &u) {
                lo = m;
                best = u;
            } else {
                hi = m;
            }
        }
        best
    }

    /// Move `q` onto the bisector. On e2, e3 and h2 this is the exact nearest
    /// point, the midpoint of `q` and its mirror image. On products the
    /// bisector is not totally geodesic; there the crossing is searched on
    /// the geodesic towards the farther nucleus and on the one towards the
    /// factor-wise mirror image, keeping the nearer.
    pub fn project(&self, q: &Point) -> Point {
        let s = &self.t.space;
        let di = s.dist(q, &self.yi);
        let dj = s.dist(q, &self.yj);
        if (di - dj).abs() <= self.tol {
            return *q;
        }
        if !matches!(q, Point::Product(..)) {
            let z = s.geodesic(q, &self.mirror(q), 0.5);
            let g = (s.dist(&z, &self.yi) - s.dist(&z, &self.yj)).abs();
            if g <= self.tol.max(1e-9 * di.max(dj)) {
                return z;
            }
        }
        let (near, far) = if di < dj { (&self.yi, &self.yj) } else { (&self.yj, &self.yi) };
        let f0 = di.min(dj) - di.max(dj);
        let a = self.crossing(q, far, near, far, f0, s.dist(far, near));
        if s.dist(q, &a) <= self.t.spacing {
            return a;
        }
        let b = self.crossing(q, &self.mirror(q), near, far, f0, -f0);
        if s.dist(q, &b) < s.dist(q, &a) {
            b
        } else {
            a
        }
    }

    fn mirror(&self, q: &Point) -> Point {
        use crate::geometry::hyperbolic::reflect;
        match (q, &self.yi, &self.yj) {
            (Point::Euclidean(x), Point::Euclidean(a), Point::Euclidean(b)) => {
                let n = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                let nn = n[0] * n[0] + n[1] * n[1] + n[2] * n[2];
                let m = [
                    x[0] - 0.5 * (a[0] + b[0]),
                    x[1] - 0.5 * (a[1] + b[1]),
                    x[2] - 0.5 * (a[2] + b[2]),
                ];
                let k = 2.0 * (m[0] * n[0] + m[1] * n[1] + m[2] * n[2]) / nn;
                Point::Euclidean([x[0] - k * n[0], x[1] - k * n[1], x[2] - k * n[2]])
            }
            (Point::Hyperbolic(x), Point::Hyperbolic(a), Point::Hyperbolic(b)) => {
                Point::Hyperbolic(reflect(x, a, b))
            }
            (Point::Product(x1, x2), Point::Product(a1, a2), Point::Product(b1, b2)) => {
                Point::Product(reflect(x1, a1, b1), reflect(x2, a2, b2))
            }
            _ => *q,
        }
    }

    /// Root of `d(., near) - d(., far)` on the geodesic from `q` (value `fa`)
    /// to `to` (value `fb`), by regula falsi (Illinois variant).
    fn crossing(&self, q: &Point, to: &Point, near: &Point, far: &Point, fa: f64, fb: f64) -> Point {
        let s = &self.t.space;
        let (mut a, mut fa) = (0.0, fa);
        let (mut b, mut fb) = (1.0, fb);
        if !(fb > 0.0) {
            return *to;
        }
        let mut side = 0i8;
        let mut z = *q;
        for _ in 0..200 {
            let t = if fb > fa { (a * fb - b * fa) / (fb - fa) } else { 0.5 * (a + b) };
            let t = if t > a && t < b { t } else { 0.5 * (a + b) };
            z = s.geodesic(q, to, t);
            let f = s.dist(&z, near) - s.dist(&z, far);
            if f.abs() <= self.tol || b - a < 1e-15 {
                return z;
            }
            if f < 0.0 {
                a = t;
                fa = f;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = t;
                fb = f;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        z
    }

    pub fn evaluate(&self, z: &Point) -> Eval {
        let s = &self.t.space;
        let di = s.dist(z, &self.yi);
        let dj = s.dist(z, &self.yj);
        if let Some(region) = &self.clip {
            if !region.contains(s, z) {
                return Eval {
                    gap: (di - dj).abs(),
                    margin: f64::NEG_INFINITY,
                    third: u32::MAX,
                };
            }
        }
        let k = self.t.index.knn::<3>(s, z);
        let mut third = (u32::MAX, f64::INFINITY);
        for m in 0..k.len {
            if k.idx[m] != self.i && k.idx[m] != self.j {
                third = (k.idx[m], k.dist[m]);
                break;
            }
        }
        let reach = self.t.reach(z);
        if reach < third.1 {
            third = (u32::MAX, reach);
            self.capped.set(true);
        }
        Eval {
            gap: (di - dj).abs(),
            margin: third.1 - di.max(dj),
            third: third.0,
        }
    }

    /// Pattern search along the bisector for a point whose margin exceeds
    /// `target`. Returns the best point seen.
    pub fn climb(&self, start: &Point, target: f64, steps: usize, rng: &mut StreamRng) -> (Point, Eval) {
        let s = &self.t.space;
        let mut z = self.project_inside(start);
        let mut e = self.evaluate(&z);
        let h_max = 4.0 * self.t.spacing;
        let mut h = self.t.spacing;
        let h_min = 1e-9 * self.t.scale;
        for _ in 0..steps {
            if e.margin > target || h < h_min {
                break;
            }
            let mut moved = false;
            for c in 0..3 {
                let q = if c == 0 {
                    if e.third == u32::MAX {
                        continue;
                    }
                    // Step directly away from the nucleus that limits the margin.
                    let yk = self.t.points.nuclei[e.third as usize];
                    let d = s.dist(&yk, &z);
                    if d <= 0.0 {
                        continue;
                    }
                    s.geodesic_line(&yk, &z, 1.0 + h / d)
                } else {
                    s.translate(&z, &s.sphere_point(h, rng))
                };
                let z2 = self.project(&q);
                let e2 = self.evaluate(&z2);
                if e2.margin > e.margin {
                    z = z2;
                    e = e2;
                    moved = true;
                    break;
                }
            }
            // A local maximum at this resolution that is far below the
            // target will not reach it by refining further.
            if !moved && target.is_finite() && target - e.margin > 8.0 * h {
                break;
            }
            h = if moved { (1.5 * h).min(h_max) } else { 0.5 * h };
        }
        (z, e)
    }

    pub fn witness(&self, z: Point, e: Eval) -> Witness {
        Witness {
            location: z,
            pair: (self.i.min(self.j), self.i.max(self.j)),
            gap: e.gap,
            margin: e.margin,
        }
    }
}

/// Deterministic generator for the search on one pair.
pub(crate) fn climb_rng(i: u32, j: u32, attempt: u64) -> StreamRng {
    RandomStream::new(CLIMB_SEED).derive(&[i as u64, j as u64, attempt]).rng()
}

/// Build the witness adjacency graph. `eta` defaults to `1e-6` times the
/// expected cell diameter.
pub fn build_adjacency(t: &Tessellation, eta: Option<f64>, refine_steps: usize) -> Result<AdjacencyGraph> {
    if t.probes.is_empty() {
        return Err(Error::InvalidState("adjacency needs probes".into()));
    }
    let root = if t.points.palm {
        Some(0)
    } else {
        Some(t.cell_of(&t.space.origin)).filter(|&c| c != super::UNASSIGNED)
    };
    if t.is_graph() {
        return Ok(graph_adjacency(t, root));
    }
    let eta = eta.unwrap_or(ETA_RELATIVE * t.scale);
    let near_triple = 2.0 * t.spacing;
    let mut stats = AdjacencyStats::default();
    // Per pair, the probes closest to its bisector, best first.
    let mut starts: HashMap<(u32, u32), Vec<(f64, u32)>> = HashMap::new();
    for (k, p) in t.probes.iter().enumerate() {
        if p.second == u32::MAX {
            continue;
        }
        let mut cands = vec![(p.nearest, p.second, p.d2 - p.d1)];
        if p.third != u32::MAX {
            cands.push((p.nearest, p.third, p.d3 - p.d1));
            cands.push((p.second, p.third, p.d3 - p.d1));
        }
        if p.third != u32::MAX && p.d3 - p.d1 < near_triple {
            // Near a vertex: short faces may involve nuclei beyond the
            // third, so nominate every pair among the nuclei that are
            // nearly tied.
            let knn = t.index.knn::<NEAR_VERTEX_K>(&t.space, &p.x);
            let tied: Vec<(u32, f64)> = (0..knn.len)
                .map(|m| (knn.idx[m], knn.dist[m]))
                .filter(|&(_, d)| d - p.d1 < near_triple)
                .collect();
            for x in 0..tied.len() {
                for y in x + 1..tied.len() {
                    if y > 2 {
                        cands.push((tied[x].0, tied[y].0, tied[y].1 - p.d1));
                    }
                }
            }
        }
        for &(a, b, gap) in &cands {
            let list = starts.entry((a.min(b), a.max(b))).or_default();
            if list.len() < ATTEMPTS_PER_PAIR as usize || gap < list[list.len() - 1].0 {
                let at = list.partition_point(|e| (e.0, e.1) < (gap, k as u32));
                list.insert(at, (gap, k as u32));
                list.truncate(ATTEMPTS_PER_PAIR as usize);
            }
        }
    }
    let mut keys: Vec<(u32, u32)> = starts.keys().copied().collect();
    keys.sort_unstable();
    stats.candidate_pairs = keys.len();
    let mut witnesses = Vec::new();
    let mut degenerate = Vec::new();
    for key in keys {
        let search = PairSearch::new(t, key.0, key.1);
        let mut best: Option<Witness> = None;
        for (attempt, &(_, k)) in starts[&key].iter().enumerate() {
            let mut z = search.project_inside(&t.probes[k as usize].x);
            let mut e = search.evaluate(&z);
            stats.projections += 1;
            if e.margin <= eta && refine_steps > 0 {
                let mut rng = climb_rng(key.0, key.1, attempt as u64 + 1);
                (z, e) = search.climb(&z, eta, refine_steps, &mut rng);
                stats.climbs += 1;
            }
            if e.margin > eta && e.gap <= eta {
                best = None;
                witnesses.push(search.witness(z, e));
                break;
            }
            if best.is_none_or(|b| e.margin > b.margin) {
                best = Some(search.witness(z, e));
            }
        }
        // Starts near a vertex can stall outside a thin face; try once more
        // from between the nuclei.
        if refine_steps > 0 && best.is_some_and(|b| b.margin <= eta) {
            let mid = t.space.geodesic(&search.yi, &search.yj, 0.5);
            let mut rng = climb_rng(key.0, key.1, 0);
            let (z, e) = search.climb(&mid, eta, refine_steps, &mut rng);
            stats.climbs += 1;
            if e.margin > eta && e.gap <= eta {
                best = None;
                witnesses.push(search.witness(z, e));
            } else if best.is_none_or(|b| e.margin > b.margin) {
                best = Some(search.witness(z, e));
            }
        }
        if let Some(w) = best.filter(|w| w.margin >= -eta) {
            degenerate.push(w);
        }
    }
    stats.degenerate = degenerate.len();
    let mut g = AdjacencyGraph::from_witnesses(t.len(), witnesses, root, eta);
    g.degenerate = degenerate;
    g.stats = stats;
    Ok(g)
}

fn graph_adjacency(t: &Tessellation, root: Option<u32>) -> AdjacencyGraph {
    let world = t.space.graph_world().expect("graph backend");
    let cells = t.graph_cells().expect("graph cells");
    let mut seen: HashMap<(u32, u32), ()> = HashMap::new();
    let mut witnesses = Vec::new();
    for p in &t.probes {
        let Point::Vertex(u) = p.x else { continue };
        let a = cells.owner[u as usize];
        for &v in world.neighbors(u) {
            let b = cells.owner[v as usize];
            if b == super::UNASSIGNED || b == a {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if seen.insert(key, ()).is_none() {
                witnesses.push(Witness {
                    location: p.x,
                    pair: key,
                    gap: 0.0,
                    margin: 0.0,
                });
            }
        }
    }
    let mut g = AdjacencyGraph::from_witnesses(t.len(), witnesses, root, 0.0);
    g.stats.candidate_pairs = g.witnesses.len();
    g
}

/// Largest margin found on the bisector of `(i, j)`, searching from the
/// supplied starting points and the midpoint of the two nuclei. Stops early
/// once `target` is exceeded. The flag reports whether the window reach cut
/// any margin seen during the search, so a failure may be an artifact of
/// truncation.
pub fn best_margin(
    t: &Tessellation,
    i: u32,
    j: u32,
    starts: &[Point],
    target: f64,
    steps: usize,
) -> (Option<Witness>, bool) {
    let search = PairSearch::new(t, i, j);
    let yi = t.points.nuclei[i as usize];
    let yj = t.points.nuclei[j as usize];
    let mid = t.space.geodesic(&yi, &yj, 0.5);
    let mut best: Option<Witness> = None;
    for (k, s) in starts.iter().chain(std::iter::once(&mid)).enumerate() {
        let mut rng = climb_rng(i, j, 1000 + k as u64);
        let (z, e) = search.climb(s, target, steps, &mut rng);
        let w = search.witness(z, e);
        if best.is_none_or(|b| w.margin > b.margin) {
            best = Some(w);
        }
        if e.margin > target {
            break;
        }
    }
    (best, search.capped.get())
}

/// Uniform random starting points around a location, for multi-start search.
pub(crate) fn jitter(t: &Tessellation, at: &Point, radius: f64, rng: &mut StreamRng) -> Point {
    let r = radius * rng.random::<f64>();
    t.space.translate(at, &t.space.sphere_point(r, rng))
}
