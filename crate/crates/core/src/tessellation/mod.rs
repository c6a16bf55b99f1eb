//! Voronoi tessellations of a marked point set.
//!
//! Cells are never built as polytopes. A tessellation is a nearest-nucleus
//! index plus a cloud of probe points, each tagged with its nearest and
//! second-nearest nucleus. Adjacency between cells is established by
//! witnesses (see [`witness`]), and truncation to a finite window is handled
//! by certificates: any nucleus outside the sampling window `B_W(o)` lies at
//! distance at least `W - |x|` from `x`, so a nearest-neighbor answer at `x`
//! is exact whenever it is closer than that.

pub mod certify;
mod estimators;
mod graph_voronoi;
pub mod witness;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{BallSampler, Point, Space, SpaceKind};
use crate::pointprocess::MarkedPointSet;
use crate::rng::RandomStream;
use crate::vptree::VpTree;

pub use estimators::{
    cell_count_probe, pair_margins, PairMargin, palm_cell_escapes, touching_report, escape_bound, escape_bound_check, touching_probe, CellCountReport,
    EscapeReport, TouchingConfig, TouchingReport, TouchingSummary,
};
pub use graph_voronoi::{graph_voronoi, GraphCells, UNASSIGNED};
pub use witness::{build_adjacency, AdjacencyGraph, AdjacencyStats, Witness};

/// Default number of probes per expected cell volume `1 / lambda`.
pub const DEFAULT_PROBE_DENSITY: f64 = 64.0;
/// Hard cap on probe counts, to fail fast on oversized windows.
pub const MAX_PROBES: usize = 20_000_000;
/// Nearest distances closer than this are reported as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Where probes are placed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProbeRegion {
    /// `B_r(o)`.
    Ball(f64),
    /// The axis-parallel square `[-h, h]^2` (2-dimensional Euclidean only).
    Square(f64),
}

impl ProbeRegion {
    pub fn contains(&self, space: &Space, x: &Point) -> bool {
        match (self, x) {
            (ProbeRegion::Square(h), Point::Euclidean(c)) => c[0].abs() <= *h && c[1].abs() <= *h,
            (ProbeRegion::Ball(r), _) => space.radius(x) <= *r,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TessellationConfig {
    pub probe_density: f64,
    pub region: ProbeRegion,
    /// Try to certify every cell met by the probe region as bounded and
    /// determined by the window. Uncertified cells are never trusted.
    pub certify: bool,
    /// Box evaluations per certificate attempt.
    pub certify_budget: usize,
    /// Restrict adjacency to witnesses inside the probe region, so the
    /// tessellation is effectively intersected with it. Squares always clip.
    pub clip: bool,
}

impl TessellationConfig {
    /// Probes on `B_r(o)` with cell certificates.
    pub fn ball(r: f64) -> Self {
        Self {
            probe_density: DEFAULT_PROBE_DENSITY,
            region: ProbeRegion::Ball(r),
            certify: true,
            certify_budget: certify::DEFAULT_BUDGET,
            clip: false,
        }
    }

    /// Probes on `[-h, h]^2` with cell certificates.
    pub fn square(h: f64) -> Self {
        Self {
            region: ProbeRegion::Square(h),
            ..Self::ball(h)
        }
    }

    pub fn with_density(mut self, density: f64) -> Self {
        self.probe_density = density;
        self
    }

    pub fn without_certificates(mut self) -> Self {
        self.certify = false;
        self
    }

    pub fn clipped(mut self) -> Self {
        self.clip = true;
        self
    }
}

/// A probe point with its nearest-nucleus data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub x: Point,
    pub nearest: u32,
    /// `u32::MAX` when there is only one nucleus.
    pub second: u32,
    /// `u32::MAX` when there are fewer than three nuclei.
    pub third: u32,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// Lower bound on the distance from `x` to any nucleus outside the window.
    pub reach: f64,
}

impl Probe {
    /// The nearest-nucleus assignment is exact for the infinite process.
    pub fn certified(&self) -> bool {
        self.d2 < self.reach
    }
}

/// Result of [`Tessellation::assign`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assignment {
    pub cell: u32,
    pub d1: f64,
    /// `f64::INFINITY` with a single nucleus.
    pub d2: f64,
    pub tie: bool,
}

#[derive(Clone, Debug)]
pub struct Tessellation {
    pub space: Space,
    pub points: MarkedPointSet,
    pub index: VpTree,
    pub probes: Vec<Probe>,
    pub config: TessellationConfig,
    /// Typical distance between neighboring probes.
    pub spacing: f64,
    /// Scale used for numerical tolerances: expected cell diameter.
    pub scale: f64,
    /// Per cell: not certified as bounded and determined by the window, or
    /// owns an uncertified probe. Cells away from the probe region are never
    /// examined and count as escaping.
    pub escaping: Vec<bool>,
    /// Per cell: certified radius `rho` with `C_i` inside `B_rho(y_i)`, or
    /// infinity.
    pub cell_radius: Vec<f64>,
    /// Per cell: probe count.
    pub probe_counts: Vec<u32>,
    /// Graph backends: hop distance of each window vertex to its nucleus.
    graph_cells: Option<GraphCells>,
}

impl Tessellation {
    /// Build the tessellation of `points` with probes drawn from `stream`.
    pub fn build(
        space: &Space,
        points: MarkedPointSet,
        config: TessellationConfig,
        stream: &RandomStream,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidState("tessellation of an empty point set".into()));
        }
        if !(config.probe_density > 0.0) {
            return Err(invalid("probe density must be positive"));
        }
        if let (ProbeRegion::Square(_), false) =
            (config.region, matches!(space.kind, SpaceKind::Euclidean { dim: 2 }))
        {
            return Err(invalid("square probe regions need the e2 backend"));
        }
        let index = VpTree::build(space, &points.nuclei);
        let lambda = points.intensity;
        let n = points.len();
        if space.graph_world().is_some() {
            return Self::build_graph(space, points, config, index);
        }
        let dim = space.dim() as f64;
        let spacing = (1.0 / (config.probe_density * lambda)).powf(1.0 / dim);
        let scale = 2.0 * space.radius_for_volume(1.0 / lambda)?;
        let mut rng = stream.rng();

        let region_volume = match config.region {
            ProbeRegion::Ball(r) => space.ball_volume(r)?,
            ProbeRegion::Square(h) => 4.0 * h * h,
        };
        let count = (config.probe_density * lambda * region_volume).ceil();
        if count > MAX_PROBES as f64 {
            return Err(Error::WindowTooLarge { expected: count });
        }
        let mut tess = Self {
            space: space.clone(),
            points,
            index,
            probes: Vec::with_capacity(count as usize),
            config,
            spacing,
            scale,
            escaping: vec![true; n],
            cell_radius: vec![f64::INFINITY; n],
            probe_counts: vec![0; n],
            graph_cells: None,
        };
        match config.region {
            ProbeRegion::Ball(r) => {
                let sampler = BallSampler::new(space, r)?;
                for _ in 0..count as usize {
                    let x = sampler.sample(&mut rng);
                    let p = tess.probe_at(x);
                    tess.probes.push(p);
                }
            }
            ProbeRegion::Square(h) => {
                for _ in 0..count as usize {
                    let x = Point::Euclidean([
                        h * (2.0 * rng.random::<f64>() - 1.0),
                        h * (2.0 * rng.random::<f64>() - 1.0),
                        0.0,
                    ]);
                    let p = tess.probe_at(x);
                    tess.probes.push(p);
                }
            }
        }
        let mut met = vec![false; n];
        for p in &tess.probes {
            tess.probe_counts[p.nearest as usize] += 1;
            met[p.nearest as usize] = true;
        }
        for (i, y) in tess.points.nuclei.iter().enumerate() {
            if config.region.contains(space, y) {
                met[i] = true;
            }
        }
        if config.certify {
            let rho0 = 0.5 * scale;
            for i in 0..n {
                if !met[i] {
                    continue;
                }
                let rho_max = 0.5 * (tess.points.window_radius - tess.points.radii[i]);
                if let Some(rho) = certify::containment_radius(
                    space,
                    &tess.index,
                    &tess.points.nuclei,
                    i as u32,
                    rho0.min(rho_max),
                    rho_max,
                    config.certify_budget,
                ) {
                    tess.cell_radius[i] = rho;
                    tess.escaping[i] = false;
                }
            }
        } else {
            for i in 0..n {
                tess.escaping[i] = !met[i];
            }
        }
        for p in &tess.probes {
            if !p.certified() {
                tess.escaping[p.nearest as usize] = true;
            }
        }
        Ok(tess)
    }

    fn build_graph(
        space: &Space,
        points: MarkedPointSet,
        config: TessellationConfig,
        index: VpTree,
    ) -> Result<Self> {
        let world = space.graph_world().expect("graph backend").clone();
        let window = points.window_radius;
        let seeds: Vec<u32> = points
            .nuclei
            .iter()
            .map(|p| match p {
                Point::Vertex(v) => *v,
                _ => unreachable!("graph nuclei are vertices"),
            })
            .collect();
        let dist0 = world.bfs(world.origin);
        let in_window = |v: u32| (dist0[v as usize] as f64) <= window;
        let cells = graph_voronoi::graph_voronoi_within(&world, &seeds, in_window)?;
        let n = points.len();
        let max_degree = world.adjacency.iter().map(Vec::len).max().unwrap_or(0);
        let mut probes = Vec::new();
        let mut escaping = vec![false; n];
        let mut probe_counts = vec![0; n];
        for v in 0..world.len() as u32 {
            if !in_window(v) || cells.owner[v as usize] == UNASSIGNED {
                continue;
            }
            let owner = cells.owner[v as usize];
            let d1 = cells.dist[v as usize] as f64;
            let boundary = dist0[v as usize] as f64 >= window.floor()
                || world.neighbors(v).len() < max_degree;
            if boundary {
                escaping[owner as usize] = true;
            }
            if !config.region.contains(space, &Point::Vertex(v)) {
                continue;
            }
            probe_counts[owner as usize] += 1;
            // Nuclei outside the window are at least floor(W) + 1 hops from
            // the origin. The second distance is not tracked on graphs, so it
            // is recorded as d1 and certification reduces to d1 < reach.
            probes.push(Probe {
                x: Point::Vertex(v),
                nearest: owner,
                second: u32::MAX,
                third: u32::MAX,
                d1,
                d2: d1,
                d3: f64::INFINITY,
                reach: window.floor() + 1.0 - dist0[v as usize] as f64,
            });
        }
        Ok(Self {
            space: space.clone(),
            points,
            index,
            probes,
            config,
            spacing: 1.0,
            scale: 1.0,
            cell_radius: vec![f64::INFINITY; n],
            escaping,
            probe_counts,
            graph_cells: Some(cells),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_graph(&self) -> bool {
        self.graph_cells.is_some()
    }

    pub fn graph_cells(&self) -> Option<&GraphCells> {
        self.graph_cells.as_ref()
    }

    /// `W - |x|`: no nucleus outside the window is closer to `x` than this.
    #[inline]
    pub fn reach(&self, x: &Point) -> f64 {
        self.points.window_radius - self.space.radius(x)
    }

    fn probe_at(&self, x: Point) -> Probe {
        let k = self.index.knn::<3>(&self.space, &x);
        Probe {
            x,
            nearest: k.idx[0],
            second: if k.len > 1 { k.idx[1] } else { u32::MAX },
            third: if k.len > 2 { k.idx[2] } else { u32::MAX },
            d1: k.dist[0],
            d2: k.dist[1],
            d3: k.dist[2],
            reach: self.reach(&x),
        }
    }

    /// Flag cells meeting the sphere `S_e(o)`. Cells are star-shaped about
    /// their nuclei, so a cell whose nucleus lies inside `B_e(o)` and that
    /// misses `S_e(o)` lies inside `B_e(o)` entirely.
    /// Cells whose full extent is known: not escaping.
    pub fn trusted(&self, cell: u32) -> bool {
        !self.escaping[cell as usize]
    }

    /// Nearest nucleus to `x`.
    pub fn assign(&self, x: &Point) -> Result<Assignment> {
        if self.points.is_empty() {
            return Err(Error::InvalidState("no nuclei".into()));
        }
        if let (Some(cells), Point::Vertex(v)) = (&self.graph_cells, x) {
            let owner = cells.owner[*v as usize];
            if owner == UNASSIGNED {
                return Err(Error::InvalidState(format!("vertex {v} has no cell")));
            }
            return Ok(Assignment {
                cell: owner,
                d1: cells.dist[*v as usize] as f64,
                d2: f64::INFINITY,
                tie: false,
            });
        }
        let k = self.index.knn::<2>(&self.space, x);
        Ok(Assignment {
            cell: k.idx[0],
            d1: k.dist[0],
            d2: k.dist[1],
            tie: k.dist[1] - k.dist[0] < TIE_TOLERANCE,
        })
    }

    /// Cell of `x` without the tie bookkeeping.
    #[inline]
    pub fn cell_of(&self, x: &Point) -> u32 {
        match (&self.graph_cells, x) {
            (Some(cells), Point::Vertex(v)) => cells.owner[*v as usize],
            _ => self.index.knn::<1>(&self.space, x).idx[0],
        }
    }

    /// Cells meeting `B_r(o)`, by nucleus position and probe assignment.
    pub fn cells_meeting_ball(&self, r: f64) -> Vec<u32> {
        let mut hit = vec![false; self.len()];
        for (i, &rad) in self.points.radii.iter().enumerate() {
            if rad <= r {
                hit[i] = true;
            }
        }
        for p in &self.probes {
            if self.space.radius(&p.x) <= r {
                hit[p.nearest as usize] = true;
            }
        }
        (0..self.len() as u32).filter(|&i| hit[i as usize]).collect()
    }

    /// Snapshot for regression fixtures.
    pub fn snapshot(&self, adjacency: Option<&AdjacencyGraph>) -> TessellationSnapshot {
        let doc = self.points.to_document(&self.space);
        TessellationSnapshot {
            backend: doc.backend,
            lambda: doc.lambda,
            window: doc.window,
            nuclei: doc.nuclei,
            labels: doc.labels,
            spacing: self.spacing,
            probes: self
                .probes
                .iter()
                .map(|p| ProbeRecord {
                    coords: p.x.coords(&self.space),
                    nearest: p.nearest,
                    second: p.second,
                    d1: p.d1,
                    d2: finite_or_none(p.d2),
                    d3: finite_or_none(p.d3),
                })
                .collect(),
            trusted: (0..self.len() as u32).filter(|&i| self.trusted(i)).collect(),
            edges: adjacency
                .map(|a| {
                    a.witnesses
                        .iter()
                        .map(|w| EdgeRecord {
                            pair: w.pair,
                            location: w.location.coords(&self.space),
                            gap: w.gap,
                            margin: w.margin,
                        })
                        .collect()
                })
                .unwrap_or_default(),
        }
    }
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub coords: Vec<f64>,
    pub nearest: u32,
    pub second: u32,
    pub d1: f64,
    pub d2: Option<f64>,
    pub d3: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub pair: (u32, u32),
    pub location: Vec<f64>,
    pub gap: f64,
    pub margin: f64,
}

/// JSON export of a tessellation and, optionally, its adjacency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TessellationSnapshot {
    pub backend: String,
    pub lambda: f64,
    pub window: f64,
    pub nuclei: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub spacing: f64,
    pub probes: Vec<ProbeRecord>,
    pub trusted: Vec<u32>,
    pub edges: Vec<EdgeRecord>,
}

impl TessellationSnapshot {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
