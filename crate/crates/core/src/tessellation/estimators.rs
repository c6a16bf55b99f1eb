//! Finitary estimators: touching of the cells meeting a ball, number of cells
//! meeting a ball, and escape of the Palm cell from a ball.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::witness::{best_margin, jitter, climb_rng, DEFAULT_REFINE_STEPS, ETA_RELATIVE};
use super::certify::{self, Coverage};
use super::{Tessellation, TessellationConfig, DEFAULT_PROBE_DENSITY};
use crate::error::{invalid, Error, Result};
use crate::geometry::{hyperbolic, Point, Space, SpaceKind};
use crate::parallel::try_map_indexed;
use crate::pointprocess::{extend_poisson, sample_poisson, MarkedPointSet};
use crate::rng::RandomStream;
use crate::stats::{wilson, Proportion, Z95};

/// Window geometry and search effort for [`touching_probe`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchingConfig {
    pub lambda: f64,
    pub r: f64,
    pub d: f64,
    /// First sampling window for the nuclei. While some cell meeting `B_R(o)`
    /// is not certified, the sample is grown by independent Poisson shells of
    /// width `window_step`, up to `max_window`.
    pub window: f64,
    pub window_step: f64,
    pub max_window: f64,
    pub probe_density: f64,
    pub refine_steps: usize,
    /// Starting points per pair for the wall search, besides the midpoint.
    pub starts: usize,
}

impl TouchingConfig {
    /// Windows from `R + 4 rho` to `R + 8 rho` in steps of `rho / 2`, with
    /// `rho` the radius of a ball of volume `1 / lambda`.
    pub fn auto(space: &Space, lambda: f64, r: f64, d: f64) -> Result<Self> {
        let rho = space.radius_for_volume(1.0 / lambda)?;
        Ok(Self {
            lambda,
            r,
            d,
            window: r + 4.0 * rho,
            window_step: 0.5 * rho,
            max_window: r + 8.0 * rho,
            probe_density: DEFAULT_PROBE_DENSITY,
            refine_steps: DEFAULT_REFINE_STEPS,
            starts: 4,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.r > 0.0) || !(self.d >= 0.0) {
            return Err(invalid("touching needs lambda > 0, R > 0, D >= 0"));
        }
        if !(self.window > self.r) || !(self.max_window >= self.window) || !(self.window_step > 0.0) {
            return Err(invalid("touching needs R < window <= max window and a positive step"));
        }
        Ok(())
    }
}

/// One replica of the touching experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchingReport {
    pub lambda: f64,
    pub r: f64,
    pub d: f64,
    pub replica: usize,
    pub cells: usize,
    pub pairs: usize,
    pub touching: usize,
    pub wall_d: usize,
    /// Every pair of cells meeting `B_R(o)` has a `D`-wall witness (for
    /// `D = 0` this is plain pairwise touching).
    pub all_touch: bool,
    pub discarded: bool,
}

impl TouchingReport {
    pub const CSV_HEADER: &'static str = "lambda,R,D,replica,cells,pairs,touching,wall_D,all_touch,discarded";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.lambda,
            self.r,
            self.d,
            self.replica,
            self.cells,
            self.pairs,
            self.touching,
            self.wall_d,
            self.all_touch as u8,
            self.discarded as u8
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchingSummary {
    pub config: TouchingConfig,
    pub reports: Vec<TouchingReport>,
    pub discarded: usize,
    /// Over kept replicas.
    pub all_touch: Proportion,
    pub ci: (f64, f64),
}

impl TouchingSummary {
    pub fn estimate(&self) -> f64 {
        self.all_touch.estimate()
    }
}

/// Search outcome for one pair of cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairMargin {
    pub i: u32,
    pub j: u32,
    /// Best margin found, `-inf` when the cells are certified apart.
    pub margin: f64,
    /// The window reach cut some margin during the search.
    pub capped: bool,
}

/// Best wall margin of every pair among `cells`. Each search stops once it
/// exceeds `target`.
pub fn pair_margins(t: &Tessellation, cells: &[u32], target: f64, cfg_starts: usize, steps: usize) -> Vec<PairMargin> {
    let mut out = Vec::new();
    for (a, &i) in cells.iter().enumerate() {
        for &j in &cells[a + 1..] {
            let (i, j) = (i.min(j), i.max(j));
            let (yi, yj) = (&t.points.nuclei[i as usize], &t.points.nuclei[j as usize]);
            if t.space.dist(yi, yj) > t.cell_radius[i as usize] + t.cell_radius[j as usize] {
                // Certified inside disjoint balls.
                out.push(PairMargin { i, j, margin: f64::NEG_INFINITY, capped: false });
                continue;
            }
            let mut starts: Vec<Point> = t
                .probes
                .iter()
                .filter(|p| {
                    let pair = (p.nearest.min(p.second), p.nearest.max(p.second));
                    pair == (i, j)
                })
                .take(cfg_starts)
                .map(|p| p.x)
                .collect();
            if starts.len() < cfg_starts {
                let yi = t.points.nuclei[i as usize];
                let yj = t.points.nuclei[j as usize];
                let mid = t.space.geodesic(&yi, &yj, 0.5);
                let spread = 0.5 * t.space.dist(&yi, &yj);
                let mut rng = climb_rng(i, j, 7);
                while starts.len() < cfg_starts {
                    starts.push(jitter(t, &mid, spread, &mut rng));
                }
            }
            let (w, capped) = best_margin(t, i, j, &starts, target, steps);
            let margin = w.map_or(f64::NEG_INFINITY, |w| w.margin);
            out.push(PairMargin { i, j, margin, capped });
        }
    }
    out
}

/// Touching report for a single, already sampled configuration.
///
/// Margins are cut at the window reach, so every wall found is a wall of the
/// infinite tessellation. The replica is marked discarded when truncation
/// could matter: a probe of `B_R(o)` whose nearest nucleus is not certified,
/// or a pair without a wall whose search met the reach cut.
pub fn touching_report(t: &Tessellation, cfg: &TouchingConfig, replica: usize) -> TouchingReport {
    let cells = t.cells_meeting_ball(cfg.r);
    let mut report = TouchingReport {
        lambda: cfg.lambda,
        r: cfg.r,
        d: cfg.d,
        replica,
        cells: cells.len(),
        pairs: cells.len() * cells.len().saturating_sub(1) / 2,
        touching: 0,
        wall_d: 0,
        all_touch: false,
        discarded: t.probes.iter().any(|p| p.d1 >= p.reach),
    };
    if report.discarded {
        return report;
    }
    let eta = ETA_RELATIVE * t.scale;
    let target = (2.0 * cfg.d).max(eta);
    for m in pair_margins(t, &cells, target, cfg.starts, cfg.refine_steps) {
        if m.margin > eta {
            report.touching += 1;
        }
        if m.margin > target {
            report.wall_d += 1;
        } else if m.capped {
            report.discarded = true;
        }
    }
    report.all_touch = report.wall_d == report.pairs;
    report
}

/// Monte Carlo estimate of the probability that all cells meeting `B_R(o)`
/// pairwise share a `D`-wall. While truncation could matter (see
/// [`touching_report`]) the sample is grown by independent Poisson shells; if
/// it still could at `max_window`, the replica is discarded and counted.
pub fn touching_probe(space: &Space, cfg: &TouchingConfig, replicas: usize, stream: &RandomStream) -> Result<TouchingSummary> {
    cfg.validate()?;
    if !space.is_continuum() {
        return Err(Error::Unsupported("touching needs a continuum backend".into()));
    }
    let reports = try_map_indexed(replicas, |k| -> Result<TouchingReport> {
        let s = stream.split(k as u64);
        let points = sample_poisson(space, cfg.lambda, cfg.window, &s.split(0))?;
        if points.is_empty() {
            return Ok(TouchingReport {
                lambda: cfg.lambda,
                r: cfg.r,
                d: cfg.d,
                replica: k,
                cells: 0,
                pairs: 0,
                touching: 0,
                wall_d: 0,
                all_touch: false,
                discarded: true,
            });
        }
        let tc = TessellationConfig::ball(cfg.r)
            .with_density(cfg.probe_density)
            .without_certificates();
        let mut points = points;
        let mut step = 0u64;
        loop {
            let t = Tessellation::build(space, points, tc, &s.split(1))?;
            let report = touching_report(&t, cfg, k);
            let next = t.points.window_radius + cfg.window_step;
            if !report.discarded || next > cfg.max_window + 1e-12 {
                return Ok(report);
            }
            step += 1;
            points = match extend_poisson(space, &t.points, next, &s.split(1 + step)) {
                Ok(p) => p,
                Err(Error::WindowTooLarge { .. }) => return Ok(report),
                Err(e) => return Err(e),
            };
        }
    })?;
    let kept: Vec<&TouchingReport> = reports.iter().filter(|r| !r.discarded).collect();
    let all_touch = Proportion::new(kept.iter().filter(|r| r.all_touch).count() as u64, kept.len() as u64);
    Ok(TouchingSummary {
        config: *cfg,
        discarded: reports.len() - kept.len(),
        ci: all_touch.wilson(Z95),
        all_touch,
        reports,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellCountReport {
    pub lambda: f64,
    pub r: f64,
    pub window: f64,
    /// `None` for discarded replicas.
    pub counts: Vec<Option<usize>>,
    pub discarded: usize,
}

impl CellCountReport {
    /// `P(count >= n)` over kept replicas with a Wilson interval.
    pub fn p_at_least(&self, n: usize) -> (f64, f64, f64) {
        let kept: Vec<usize> = self.counts.iter().flatten().copied().collect();
        let s = kept.iter().filter(|&&c| c >= n).count() as u64;
        let p = Proportion::new(s, kept.len() as u64);
        let (lo, hi) = p.wilson(Z95);
        (p.estimate(), lo, hi)
    }
}

/// Number of cells meeting `B_R(o)`. A replica is discarded when some probe of
/// `B_R(o)` cannot be certified against nuclei outside the window.
pub fn cell_count_probe(
    space: &Space,
    lambda: f64,
    r: f64,
    window: f64,
    replicas: usize,
    stream: &RandomStream,
) -> Result<CellCountReport> {
    if !(r > 0.0) || !(window > r) {
        return Err(invalid("cell count needs 0 < R < window"));
    }
    let counts = try_map_indexed(replicas, |k| -> Result<Option<usize>> {
        let s = stream.split(k as u64);
        let points = sample_poisson(space, lambda, window, &s.split(0))?;
        if points.is_empty() {
            return Ok(None);
        }
        let tc = TessellationConfig::ball(r).without_certificates();
        let t = Tessellation::build(space, points, tc, &s.split(1))?;
        if t.probes.iter().any(|p| p.d1 >= p.reach) {
            return Ok(None);
        }
        Ok(Some(t.cells_meeting_ball(r).len()))
    })?;
    Ok(CellCountReport {
        lambda,
        r,
        window,
        discarded: counts.iter().filter(|c| c.is_none()).count(),
        counts,
    })
}

/// The packing bound `f(3r/2) / f(r/4) * exp(-lambda f(r/2))` on
/// `P(C_o not inside B_r(o))`.
pub fn escape_bound(space: &Space, lambda: f64, r: f64) -> Result<f64> {
    let f = |t: f64| space.ball_volume(t);
    let small = f(r / 4.0)?;
    if small <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(f(1.5 * r)? / small * (-lambda * f(0.5 * r)?).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    pub lambda: f64,
    pub r: f64,
    pub window: f64,
    pub replicas: usize,
    pub escapes: usize,
    pub empirical: f64,
    pub ci: (f64, f64),
    pub bound: f64,
    /// The bound is at least 1 and says nothing.
    pub vacuous: bool,
    /// Windows smaller than `2r` and mesh-based checks count every doubtful
    /// replica as an escape, so the estimate is an upper bound.
    pub conservative: bool,
}

impl EscapeReport {
    pub fn passes(&self) -> bool {
        self.vacuous || self.empirical <= self.bound
    }
}

/// Empirical escape probability of the Palm cell `C_o` (origin inserted as a
/// nucleus) from `B_r(o)`, next to the packing bound.
///
/// `C_o` is star-shaped about `o`, so it leaves `B_r(o)` iff it meets `S_r(o)`,
/// i.e. iff some `x` on the sphere has no nucleus strictly within distance
/// `r`. Only nuclei within `2r` can cover the sphere; a smaller `window` drops
/// some of them and can only create escapes. In dimension 2 the covered set of
/// the circle is a union of arcs, computed exactly. On products the sphere is
/// covered by boxes with a Lipschitz bound, and a replica counts as an escape
/// unless the covering is certified within the evaluation budget.
pub fn escape_bound_check(
    space: &Space,
    lambda: f64,
    r: f64,
    window: Option<f64>,
    replicas: usize,
    stream: &RandomStream,
) -> Result<EscapeReport> {
    if !space.is_continuum() {
        return Err(Error::Unsupported("escape check needs a continuum backend".into()));
    }
    if !(r > 0.0) || !(lambda > 0.0) {
        return Err(invalid("escape check needs lambda > 0 and r > 0"));
    }
    let window = window.unwrap_or(2.0 * r).min(2.0 * r);
    let bound = escape_bound(space, lambda, r)?;
    let flags = try_map_indexed(replicas, |k| -> Result<bool> {
        let points = sample_poisson(space, lambda, window, &stream.split(k as u64))?;
        Ok(palm_cell_escapes(space, &points, r))
    })?;
    let escapes = flags.iter().filter(|&&e| e).count();
    let conservative = window < 2.0 * r || matches!(space.kind, SpaceKind::ProductH2 { .. } | SpaceKind::Euclidean { dim: 3 });
    Ok(EscapeReport {
        lambda,
        r,
        window,
        replicas,
        escapes,
        empirical: escapes as f64 / replicas.max(1) as f64,
        ci: wilson(escapes as u64, replicas as u64, Z95),
        bound,
        vacuous: !(bound < 1.0),
        conservative,
    })
}

/// Whether the Palm cell of `o` (with the nuclei of `points`) meets `S_r(o)`.
pub fn palm_cell_escapes(space: &Space, points: &MarkedPointSet, r: f64) -> bool {
    match &space.kind {
        SpaceKind::Euclidean { dim: 2 } | SpaceKind::Hyperbolic2 => {
            let mut arcs = Vec::new();
            for (y, &rho) in points.nuclei.iter().zip(&points.radii) {
                if rho >= 2.0 * r || rho == 0.0 {
                    continue;
                }
                // Points x of S_r at angle theta from y satisfy d(x, y) < r
                // iff cos(theta) > c.
                let (c, phi) = match y {
                    Point::Euclidean(p) => (rho / (2.0 * r), p[1].atan2(p[0])),
                    Point::Hyperbolic(p) => {
                        let (cr, sr) = (r.cosh(), r.sinh());
                        ((cr * rho.cosh() - cr) / (sr * rho.sinh()), hyperbolic::angle(p))
                    }
                    _ => unreachable!(),
                };
                if c < -1.0 {
                    return false;
                }
                if c < 1.0 {
                    arcs.push((phi, c.acos()));
                }
            }
            !arcs_cover_circle(&arcs)
        }
        SpaceKind::Euclidean { .. } | SpaceKind::ProductH2 { .. } => {
            let tree = crate::vptree::VpTree::build(space, &points.nuclei);
            let o = space.origin;
            certify::sphere_coverage(space, &tree, &o, u32::MAX, r, certify::DEFAULT_BUDGET * 10) != Coverage::Covered
        }
        SpaceKind::Graph(_) => unreachable!("checked by caller"),
    }
}

/// Whether open arcs `(centre, half_width)` cover the whole circle.
fn arcs_cover_circle(arcs: &[(f64, f64)]) -> bool {
    if arcs.is_empty() {
        return false;
    }
    let mut iv: Vec<(f64, f64)> = arcs
        .iter()
        .map(|&(c, w)| {
            let a = (c - w).rem_euclid(TAU);
            (a, a + 2.0 * w)
        })
        .collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sweep from angle 0, which only arcs wrapping past TAU can cover. Open
    // arcs must overlap strictly.
    let mut reach = iv.iter().map(|&(_, b)| b - TAU).fold(0.0, f64::max);
    if reach <= 0.0 {
        return false;
    }
    for &(a, b) in &iv {
        if a >= reach {
            return false;
        }
        reach = reach.max(b);
        if reach >= TAU {
            return true;
        }
    }
    false
}
