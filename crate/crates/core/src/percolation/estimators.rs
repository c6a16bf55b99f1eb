//! Replica estimators: crossing thresholds, two-point function, uniqueness
//! proxies and correlation inequality spot checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{clusters, color, ClusterReport, PercolationParams, WHITE};
use crate::error::{invalid, Error, Result};
use crate::geometry::{hyperbolic, Point, Space, SpaceKind};
use crate::parallel::try_map_indexed;
use crate::pointprocess::sample_poisson;
use crate::rng::RandomStream;
use crate::stats::{Proportion, Running, Z95};
use crate::tessellation::witness::DEFAULT_REFINE_STEPS;
use crate::tessellation::{build_adjacency, AdjacencyGraph, Tessellation, TessellationConfig};

/// Nuclei are sampled this many typical cell radii beyond the probe region.
pub const WINDOW_MARGIN: f64 = 4.0;
const BOOTSTRAP_RESAMPLES: usize = 1000;

/// A sampled, tessellated realization with its adjacency graph.
pub struct Replica {
    pub t: Tessellation,
    pub adj: AdjacencyGraph,
}

impl Replica {
    pub fn clusters(&self, p: f64) -> ClusterReport {
        clusters(&self.adj, &color(&self.t, p)).expect("cells of this tessellation")
    }
}

/// Sample on `B_window(o)`, tessellate and build adjacency. `None` when some
/// probe is not certified by the window, i.e. the replica is discarded.
pub fn prepare_replica(
    space: &Space,
    lambda: f64,
    config: TessellationConfig,
    window: f64,
    stream: &RandomStream,
) -> Result<Option<Replica>> {
    let points = sample_poisson(space, lambda, window, &stream.split(0))?;
    if points.is_empty() {
        return Ok(None);
    }
    let t = Tessellation::build(space, points, config, &stream.split(1))?;
    if t.probes.iter().any(|p| !p.certified()) {
        return Ok(None);
    }
    let adj = build_adjacency(&t, None, DEFAULT_REFINE_STEPS)?;
    Ok(Some(Replica { t, adj }))
}

fn cell_radius(space: &Space, lambda: f64) -> Result<f64> {
    if space.is_continuum() {
        space.radius_for_volume(1.0 / lambda)
    } else {
        Ok(1.0)
    }
}

/// Window needed around a probe region of radius `r`.
pub fn window_for(space: &Space, lambda: f64, r: f64) -> Result<f64> {
    Ok(r + WINDOW_MARGIN * cell_radius(space, lambda)?.max(if space.is_continuum() { 0.0 } else { 2.0 }))
}

/// Geometry of the finite-volume proxy for `p_c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PcWindow {
    /// Left-right crossing of `[-half, half]^2` (e2 only).
    Square { half: f64 },
    /// Connection of `B_{r_in}(o)` to the sphere of radius `r_out`.
    Annulus { r_in: f64, r_out: f64 },
}

impl PcWindow {
    pub fn validate(&self, space: &Space) -> Result<()> {
        match *self {
            PcWindow::Square { half } => {
                if !matches!(space.kind, SpaceKind::Euclidean { dim: 2 }) {
                    return Err(invalid("square crossing needs the e2 backend"));
                }
                if !(half > 0.0) {
                    return Err(invalid(format!("square half-width {half} must be positive")));
                }
            }
            PcWindow::Annulus { r_in, r_out } => {
                if !(r_in >= 0.0 && r_out > r_in) {
                    return Err(invalid(format!("annulus needs 0 <= r_in < r_out, got {r_in}, {r_out}")));
                }
            }
        }
        Ok(())
    }

    pub fn config(&self) -> TessellationConfig {
        match *self {
            PcWindow::Square { half } => TessellationConfig::square(half),
            PcWindow::Annulus { r_out, .. } => TessellationConfig::ball(r_out).clipped(),
        }
        .without_certificates()
    }

    pub fn window(&self, space: &Space, lambda: f64) -> Result<f64> {
        match *self {
            PcWindow::Square { half } => window_for(space, lambda, half * std::f64::consts::SQRT_2),
            PcWindow::Annulus { r_out, .. } => window_for(space, lambda, r_out),
        }
    }

    /// Cells on the two sides to be connected.
    pub fn sides(&self, t: &Tessellation) -> (Vec<u32>, Vec<u32>) {
        match *self {
            PcWindow::Square { half } => {
                let steps = (2.0 * half / (t.spacing / 8.0)).ceil() as usize;
                let mut left = Vec::new();
                let mut right = Vec::new();
                for k in 0..=steps {
                    let y = -half + 2.0 * half * k as f64 / steps as f64;
                    left.push(t.cell_of(&Point::Euclidean([-half, y, 0.0])));
                    right.push(t.cell_of(&Point::Euclidean([half, y, 0.0])));
                }
                (dedup(left), dedup(right))
            }
            PcWindow::Annulus { r_in, r_out } => (t.cells_meeting_ball(r_in), sphere_cells(t, r_out)),
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            PcWindow::Square { .. } => "square-crossing",
            PcWindow::Annulus { .. } => "annulus-one-arm",
        }
    }
}

fn dedup(mut v: Vec<u32>) -> Vec<u32> {
    v.sort_unstable();
    v.dedup();
    v
}

/// Cells meeting the sphere of radius `r` about the origin: exact circle
/// sweeps in dimension two, the outer probe shell otherwise.
fn sphere_cells(t: &Tessellation, r: f64) -> Vec<u32> {
    let step = t.spacing / 8.0;
    let circle = |len: f64, at: &dyn Fn(f64) -> Point| -> Vec<u32> {
        let n = ((len / step).ceil() as usize).max(16);
        dedup((0..n).map(|k| t.cell_of(&at(std::f64::consts::TAU * k as f64 / n as f64))).collect())
    };
    match t.space.kind {
        SpaceKind::Euclidean { dim: 2 } => circle(std::f64::consts::TAU * r, &|a| {
            Point::Euclidean([r * a.cos(), r * a.sin(), 0.0])
        }),
        SpaceKind::Hyperbolic2 => circle(std::f64::consts::TAU * r.sinh(), &|a| {
            Point::Hyperbolic(hyperbolic::polar(r, a))
        }),
        _ => {
            let shell = if t.is_graph() { 0.5 } else { t.spacing };
            dedup(
                t.probes
                    .iter()
                    .filter(|p| t.space.radius(&p.x) >= r - shell)
                    .map(|p| p.nearest)
                    .collect(),
            )
        }
    }
}

/// Some cluster contains a black cell of `a` and a black cell of `b`.
fn joins(r: &ClusterReport, a: &[u32], b: &[u32]) -> bool {
    let la: std::collections::HashSet<u32> = a.iter().filter_map(|&c| r.label(c)).collect();
    b.iter().filter_map(|&c| r.label(c)).any(|l| la.contains(&l))
}

/// Number of distinct clusters with black cells in both `a` and `b`.
fn crossing_count(r: &ClusterReport, a: &[u32], b: &[u32]) -> usize {
    let la: std::collections::HashSet<u32> = a.iter().filter_map(|&c| r.label(c)).collect();
    let both: std::collections::HashSet<u32> =
        b.iter().filter_map(|&c| r.label(c)).filter(|l| la.contains(l)).collect();
    both.len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub statistic: String,
    pub values: Vec<Proportion>,
    pub ci: Vec<(f64, f64)>,
    pub threshold: f64,
    pub threshold_ci: (f64, f64),
    pub method: String,
    pub replicas: usize,
    pub discarded: usize,
}

impl ThresholdEstimate {
    pub const CSV_HEADER: &'static str = "lambda,p,statistic,value,ci_lo,ci_hi";

    /// One row per grid point, then the threshold itself under `p_c`.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows: Vec<String> = self
            .grid
            .iter()
            .zip(&self.values)
            .zip(&self.ci)
            .map(|((p, v), ci)| {
                format!("{},{},{},{},{},{}", self.lambda, p, self.statistic, v.estimate(), ci.0, ci.1)
            })
            .collect();
        rows.push(format!(
            "{},{},p_c,{},{},{}",
            self.lambda, self.threshold, self.threshold, self.threshold_ci.0, self.threshold_ci.1
        ));
        rows
    }
}

/// First crossing of `level` by piecewise-linear interpolation of `values`
/// over `grid`; clamped to the grid ends.
pub fn crossing_point(grid: &[f64], values: &[f64], level: f64) -> f64 {
    if values[0] >= level {
        return grid[0];
    }
    for k in 1..grid.len() {
        if values[k] >= level {
            let (v0, v1) = (values[k - 1], values[k]);
            let s = (level - v0) / (v1 - v0);
            return grid[k - 1] + s * (grid[k] - grid[k - 1]);
        }
    }
    grid[grid.len() - 1]
}

/// Estimate `p_c(lambda)` as the level where the crossing probability passes
/// one half. Every replica is evaluated on the whole grid with shared labels.
pub fn estimate_pc(
    space: &Space,
    lambda: f64,
    window: PcWindow,
    grid: &[f64],
    replicas: usize,
    stream: &RandomStream,
) -> Result<ThresholdEstimate> {
    window.validate(space)?;
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid("p grid must be increasing within [0, 1] with at least two points"));
    }
    if replicas == 0 {
        return Err(invalid("at least one replica"));
    }
    let config = window.config();
    let w = window.window(space, lambda)?;
    let rows: Vec<Option<Vec<bool>>> = try_map_indexed(replicas, |k| -> Result<_> {
        let Some(rep) = prepare_replica(space, lambda, config, w, &stream.split(k as u64))? else {
            return Ok(None);
        };
        let (a, b) = window.sides(&rep.t);
        Ok(Some(grid.iter().map(|&p| joins(&rep.clusters(p), &a, &b)).collect()))
    })?;
    let kept: Vec<Vec<bool>> = rows.iter().flatten().cloned().collect();
    let discarded = replicas - kept.len();
    if kept.is_empty() {
        return Err(Error::NoData("every replica was discarded".into()));
    }
    if kept.iter().any(|r| r.windows(2).any(|w| w[0] && !w[1])) {
        return Err(Error::EstimationFailed("crossing indicator not monotone in p".into()));
    }
    let n = kept.len() as u64;
    let values: Vec<Proportion> = (0..grid.len())
        .map(|g| Proportion::new(kept.iter().filter(|r| r[g]).count() as u64, n))
        .collect();
    for w in values.windows(2) {
        let se = (w[0].se().powi(2) + w[1].se().powi(2)).sqrt();
        if w[1].estimate() < w[0].estimate() - 3.0 * se - 1e-12 {
            return Err(Error::EstimationFailed("crossing probability decreases in p".into()));
        }
    }
    let means: Vec<f64> = values.iter().map(|v| v.estimate()).collect();
    let threshold = crossing_point(grid, &means, 0.5);
    let mut rng = stream.split(u32::MAX as u64).rng();
    let mut boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut sums = vec![0usize; grid.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        sums.iter_mut().for_each(|s| *s = 0);
        for _ in 0..kept.len() {
            let r = &kept[rng.random_range(0..kept.len())];
            for (s, &hit) in sums.iter_mut().zip(r) {
                *s += hit as usize;
            }
        }
        let m: Vec<f64> = sums.iter().map(|&s| s as f64 / kept.len() as f64).collect();
        boot.push(crossing_point(grid, &m, 0.5));
    }
    boot.sort_by(f64::total_cmp);
    let q = |f: f64| boot[((f * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
    Ok(ThresholdEstimate {
        lambda,
        grid: grid.to_vec(),
        statistic: match window {
            PcWindow::Square { .. } => "crossing".into(),
            PcWindow::Annulus { .. } => "one_arm".into(),
        },
        ci: values.iter().map(|v| v.wilson(Z95)).collect(),
        values,
        threshold,
        threshold_ci: (q(0.025), q(0.975)),
        method: window.method().into(),
        replicas,
        discarded,
    })
}

/// Two points at radius `r` on opposite sides of the origin, so at distance
/// `2r`. On graphs `r` is rounded to hops.
pub fn antipodal_pair(space: &Space, r: f64) -> Option<(Point, Point)> {
    match &space.kind {
        SpaceKind::Euclidean { .. } => Some((Point::Euclidean([r, 0.0, 0.0]), Point::Euclidean([-r, 0.0, 0.0]))),
        SpaceKind::Hyperbolic2 => Some((
            Point::Hyperbolic(hyperbolic::polar(r, 0.0)),
            Point::Hyperbolic(hyperbolic::polar(r, std::f64::consts::PI)),
        )),
        SpaceKind::ProductH2 { .. } => {
            let o = hyperbolic::polar(0.0, 0.0);
            Some((
                Point::Product(hyperbolic::polar(r, 0.0), o),
                Point::Product(hyperbolic::polar(r, std::f64::consts::PI), o),
            ))
        }
        SpaceKind::Graph(world) => {
            let h = r.round() as u32;
            let dist = world.bfs(world.origin);
            let ring: Vec<u32> = (0..world.len() as u32).filter(|&v| dist[v as usize] == h).collect();
            let x = *ring.first()?;
            let from_x = world.bfs(x);
            let y = ring.iter().copied().find(|&v| from_x[v as usize] == 2 * h)?;
            Some((Point::Vertex(x), Point::Vertex(y)))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointEstimate {
    pub params: PercolationParams,
    pub separations: Vec<f64>,
    pub hits: Vec<Proportion>,
    pub ci: Vec<(f64, f64)>,
    pub replicas: usize,
    pub discarded: usize,
}

impl TwoPointEstimate {
    pub const CSV_HEADER: &'static str = "lambda,p,sep,tau_hat,ci_lo,ci_hi,n";

    pub fn tau(&self, k: usize) -> f64 {
        self.hits[k].estimate()
    }

    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.hits.len())
            .map(|k| {
                format!(
                    "{},{},{},{},{},{},{}",
                    self.params.lambda,
                    self.params.p,
                    self.separations[k],
                    self.hits[k].estimate(),
                    self.ci[k].0,
                    self.ci[k].1,
                    self.hits[k].n
                )
            })
            .collect()
    }
}

/// Probe region for a window of radius `w`: the part whose cells are
/// determined with high probability.
fn interior(space: &Space, lambda: f64, w: f64) -> Result<f64> {
    let margin = window_for(space, lambda, 0.0)?;
    if w <= margin {
        return Err(invalid(format!("window {w} leaves no interior (margin {margin})")));
    }
    Ok(w - margin)
}

/// Per-pair frequency of `x <-> y` (both cells black and in one cluster)
/// inside the clipped interior of the window.
pub fn two_point(
    space: &Space,
    params: PercolationParams,
    pairs: &[(Point, Point)],
    replicas: usize,
    stream: &RandomStream,
) -> Result<TwoPointEstimate> {
    params.validate()?;
    let r = interior(space, params.lambda, params.window)?;
    for (x, y) in pairs {
        space.check_point(x)?;
        space.check_point(y)?;
        if space.radius(x) > r || space.radius(y) > r {
            return Err(invalid(format!("pair points must lie within the interior radius {r}")));
        }
    }
    let config = TessellationConfig::ball(r).clipped().without_certificates();
    let rows: Vec<Option<Vec<bool>>> = try_map_indexed(replicas, |k| -> Result<_> {
        let Some(rep) = prepare_replica(space, params.lambda, config, params.window, &stream.split(k as u64))? else {
            return Ok(None);
        };
        let cl = rep.clusters(params.p);
        Ok(Some(
            pairs
                .iter()
                .map(|(x, y)| cl.connected(rep.t.cell_of(x), rep.t.cell_of(y)))
                .collect(),
        ))
    })?;
    let kept: Vec<&Vec<bool>> = rows.iter().flatten().collect();
    let n = kept.len() as u64;
    let hits: Vec<Proportion> = (0..pairs.len())
        .map(|k| Proportion::new(kept.iter().filter(|r| r[k]).count() as u64, n))
        .collect();
    Ok(TwoPointEstimate {
        params,
        separations: pairs.iter().map(|(x, y)| space.dist(x, y)).collect(),
        ci: hits.iter().map(|h| h.wilson(Z95)).collect(),
        hits,
        replicas,
        discarded: replicas - kept.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessPoint {
    pub p: f64,
    /// At least one cluster joins `B_{r_in}` to the outer sphere.
    pub p_ge1: Proportion,
    /// At least two distinct such clusters.
    pub p_ge2: Proportion,
    /// Connection of two antipodal points at radius `r_in`.
    pub tau_lr: Proportion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub lambda: f64,
    pub r_in: f64,
    pub r_out: f64,
    pub points: Vec<UniquenessPoint>,
    pub replicas: usize,
    pub discarded: usize,
}

impl UniquenessReport {
    pub const CSV_HEADER: &'static str = "lambda,p,R_in,R_out,p_ge1,p_ge2,tau_lr";

    pub fn csv_rows(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|u| {
                format!(
                    "{},{},{},{},{},{},{}",
                    self.lambda,
                    u.p,
                    self.r_in,
                    self.r_out,
                    u.p_ge1.estimate(),
                    u.p_ge2.estimate(),
                    u.tau_lr.estimate()
                )
            })
            .collect()
    }
}

/// Annulus multiplicity and long-range connection, for each `p` in `ps` on
/// shared realizations.
pub fn uniqueness_proxy(
    space: &Space,
    lambda: f64,
    ps: &[f64],
    r_in: f64,
    r_out: f64,
    replicas: usize,
    stream: &RandomStream,
) -> Result<UniquenessReport> {
    let window = PcWindow::Annulus { r_in, r_out };
    window.validate(space)?;
    if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid("p outside [0, 1]"));
    }
    let (x, y) = antipodal_pair(space, r_in).ok_or_else(|| invalid("no antipodal pair at r_in"))?;
    let config = window.config();
    let w = window.window(space, lambda)?;
    let rows: Vec<Option<Vec<(usize, bool)>>> = try_map_indexed(replicas, |k| -> Result<_> {
        let Some(rep) = prepare_replica(space, lambda, config, w, &stream.split(k as u64))? else {
            return Ok(None);
        };
        let (a, b) = window.sides(&rep.t);
        let (cx, cy) = (rep.t.cell_of(&x), rep.t.cell_of(&y));
        Ok(Some(
            ps.iter()
                .map(|&p| {
                    let cl = rep.clusters(p);
                    (crossing_count(&cl, &a, &b), cl.connected(cx, cy))
                })
                .collect(),
        ))
    })?;
    let kept: Vec<&Vec<(usize, bool)>> = rows.iter().flatten().collect();
    let n = kept.len() as u64;
    let count = |f: &dyn Fn(&(usize, bool)) -> bool, g: usize| {
        Proportion::new(kept.iter().filter(|r| f(&r[g])).count() as u64, n)
    };
    let points = ps
        .iter()
        .enumerate()
        .map(|(g, &p)| UniquenessPoint {
            p,
            p_ge1: count(&|r| r.0 >= 1, g),
            p_ge2: count(&|r| r.0 >= 2, g),
            tau_lr: count(&|r| r.1, g),
        })
        .collect();
    Ok(UniquenessReport {
        lambda,
        r_in,
        r_out,
        points,
        replicas,
        discarded: replicas - kept.len(),
    })
}

/// Cells of `fine` whose cluster is split in `coarse`, plus cells black in
/// `fine` but white in `coarse`. Zero when `fine` refines `coarse`.
pub fn refinement_violations(fine: &ClusterReport, coarse: &ClusterReport) -> usize {
    let mut image = std::collections::HashMap::new();
    let mut bad = 0;
    for &c in &fine.black {
        let target = coarse.labels.get(c as usize).copied().unwrap_or(WHITE);
        if target == WHITE {
            bad += 1;
            continue;
        }
        let first = *image.entry(fine.labels[c as usize]).or_insert(target);
        if first != target {
            bad += 1;
        }
    }
    bad
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkgReport {
    pub p_a: f64,
    pub p_b: f64,
    pub p_ab: f64,
    /// Standard error of `p_ab - p_a p_b`.
    pub se: f64,
    pub n: usize,
}

impl FkgReport {
    pub fn passes(&self) -> bool {
        self.p_ab >= self.p_a * self.p_b - 3.0 * self.se
    }
}

/// Spot check of Harris-FKG for `A = {x <-> y}` and `B = {u <-> v}`.
pub fn fkg_check(
    space: &Space,
    params: PercolationParams,
    a: (Point, Point),
    b: (Point, Point),
    replicas: usize,
    stream: &RandomStream,
) -> Result<FkgReport> {
    params.validate()?;
    let r = interior(space, params.lambda, params.window)?;
    let config = TessellationConfig::ball(r).clipped().without_certificates();
    let rows: Vec<Option<(bool, bool)>> = try_map_indexed(replicas, |k| -> Result<_> {
        let Some(rep) = prepare_replica(space, params.lambda, config, params.window, &stream.split(k as u64))? else {
            return Ok(None);
        };
        let cl = rep.clusters(params.p);
        let ev = |(x, y): &(Point, Point)| cl.connected(rep.t.cell_of(x), rep.t.cell_of(y));
        Ok(Some((ev(&a), ev(&b))))
    })?;
    let kept: Vec<(bool, bool)> = rows.into_iter().flatten().collect();
    let n = kept.len();
    if n < 2 {
        return Err(Error::NoData("too few kept replicas".into()));
    }
    let pa = kept.iter().filter(|e| e.0).count() as f64 / n as f64;
    let pb = kept.iter().filter(|e| e.1).count() as f64 / n as f64;
    let pab = kept.iter().filter(|e| e.0 && e.1).count() as f64 / n as f64;
    // Influence function of p_ab - p_a p_b.
    let psi: Running = kept
        .iter()
        .map(|&(ea, eb)| (ea && eb) as u8 as f64 - pb * ea as u8 as f64 - pa * eb as u8 as f64)
        .collect();
    Ok(FkgReport {
        p_a: pa,
        p_b: pb,
        p_ab: pab,
        se: psi.se(),
        n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step2Report {
    /// `P(B(o) in omega)`.
    pub c: f64,
    /// `P(B(x) in omega, B(y) in omega, B(x) <-> B(y))`.
    pub joint: f64,
    /// `P(B(x) <-> B(y))`.
    pub connect: f64,
    pub se: f64,
    pub n: usize,
}

impl Step2Report {
    pub fn passes(&self) -> bool {
        self.joint >= self.c * self.c * self.connect - 3.0 * self.se
    }
}

/// Cells meeting `B_r(x)`, from nuclei and probes.
fn cells_meeting(t: &Tessellation, x: &Point, r: f64) -> Vec<u32> {
    let mut out = vec![t.cell_of(x)];
    for (i, y) in t.points.nuclei.iter().enumerate() {
        if t.space.dist(x, y) <= r {
            out.push(i as u32);
        }
    }
    for p in &t.probes {
        if t.space.dist(x, &p.x) <= r {
            out.push(p.nearest);
        }
    }
    dedup(out)
}

/// The three-event FKG comparison used to pass from ball connections to
/// point connections, with balls of radius `3 r`.
pub fn step2_check(
    space: &Space,
    params: PercolationParams,
    x: Point,
    y: Point,
    r: f64,
    replicas: usize,
    stream: &RandomStream,
) -> Result<Step2Report> {
    params.validate()?;
    let reg = interior(space, params.lambda, params.window)?;
    let rad = 3.0 * r;
    for z in [&x, &y] {
        if space.radius(z) + rad > reg {
            return Err(invalid("balls must lie within the interior"));
        }
    }
    let config = TessellationConfig::ball(reg).clipped().without_certificates();
    let o = space.origin;
    let rows: Vec<Option<[bool; 4]>> = try_map_indexed(replicas, |k| -> Result<_> {
        let Some(rep) = prepare_replica(space, params.lambda, config, params.window, &stream.split(k as u64))? else {
            return Ok(None);
        };
        let cl = rep.clusters(params.p);
        let all_black = |cells: &[u32]| cells.iter().all(|&c| cl.label(c).is_some());
        let (bx, by, bo) = (
            cells_meeting(&rep.t, &x, rad),
            cells_meeting(&rep.t, &y, rad),
            cells_meeting(&rep.t, &o, rad),
        );
        let conn = joins(&cl, &bx, &by);
        Ok(Some([all_black(&bo), all_black(&bx), all_black(&by), conn]))
    })?;
    let kept: Vec<[bool; 4]> = rows.into_iter().flatten().collect();
    let n = kept.len();
    if n < 2 {
        return Err(Error::NoData("too few kept replicas".into()));
    }
    let frac = |f: &dyn Fn(&[bool; 4]) -> bool| kept.iter().filter(|e| f(e)).count() as f64 / n as f64;
    let c = frac(&|e| e[0]);
    let joint = frac(&|e| e[1] && e[2] && e[3]);
    let connect = frac(&|e| e[3]);
    let psi: Running = kept
        .iter()
        .map(|e| {
            let f = |b: bool| b as u8 as f64;
            f(e[1] && e[2] && e[3]) - c * c * f(e[3]) - 2.0 * c * connect * f(e[0])
        })
        .collect();
    Ok(Step2Report {
        c,
        joint,
        connect,
        se: psi.se(),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_point_interpolates() {
        let g = [0.0, 0.5, 1.0];
        assert_eq!(crossing_point(&g, &[0.0, 0.4, 0.8], 0.5), 0.5 + 0.5 * 0.25);
        assert_eq!(crossing_point(&g, &[0.6, 0.7, 0.8], 0.5), 0.0);
        assert_eq!(crossing_point(&g, &[0.1, 0.2, 0.3], 0.5), 1.0);
    }

    #[test]
    fn antipodal_points_are_2r_apart() {
        for name in ["e2", "e3", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf", "grid:2:16", "tree:3:6"] {
            let s: Space = name.parse().unwrap();
            let (x, y) = antipodal_pair(&s, 2.0).unwrap();
            assert!((s.dist(&x, &y) - 4.0).abs() < 1e-9, "{name}");
            assert!((s.radius(&x) - 2.0).abs() < 1e-9, "{name}");
        }
    }

    #[test]
    fn square_extremes() {
        let s: Space = "e2".parse().unwrap();
        let est = estimate_pc(&s, 1.0, PcWindow::Square { half: 3.0 }, &[0.0, 1.0], 4, &RandomStream::new(3)).unwrap();
        assert_eq!(est.values[0].estimate(), 0.0);
        assert_eq!(est.values[1].estimate(), 1.0);
    }

    #[test]
    fn annulus_extremes() {
        for name in ["h2", "grid:2:32"] {
            let s: Space = name.parse().unwrap();
            let r = uniqueness_proxy(&s, 1.0, &[0.0, 1.0], 1.0, 3.0, 4, &RandomStream::new(5)).unwrap();
            assert_eq!(r.points[0].p_ge1.estimate(), 0.0, "{name}");
            assert_eq!(r.points[1].p_ge2.estimate(), 0.0, "{name}");
            assert_eq!(r.points[1].p_ge1.estimate(), 1.0, "{name}");
        }
    }

    #[test]
    fn diagonal_two_point_is_p() {
        let s: Space = "e2".parse().unwrap();
        let params = PercolationParams {
            lambda: 1.0,
            p: 0.3,
            window: 6.0,
        };
        let x = Point::Euclidean([0.5, 0.2, 0.0]);
        let est = two_point(&s, params, &[(x, x)], 400, &RandomStream::new(9)).unwrap();
        let h = est.hits[0];
        assert!((h.estimate() - 0.3).abs() <= 3.0 * (0.3f64 * 0.7 / h.n as f64).sqrt());
    }
}
