//! Thickened clusters at probe resolution.
//!
//! For a black cell `C` let `A_C` be the union of black cells of other
//! clusters within distance `10R` of `C`. The thickening is
//!
//! ```text
//! C_a = { x : d(x, z) <= min(3(1-a)R, (1-a) d(z, A_C) / 2) for some z in C }.
//! ```
//!
//! Every point within `6R` of `z` that lies in a black cell of another
//! cluster belongs to `A_C`, and the minimum only looks at `d(z, A_C)` below
//! `6R`, so the distance is computed to all other-cluster black probes with
//! a `6R` cap. Membership is evaluated on the tessellation's probes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::Point;
use crate::parallel::map_indexed;
use crate::percolation::{ClusterReport, WHITE};
use crate::tessellation::{ProbeRegion, Tessellation};
use crate::vptree::VpTree;

/// Largest admissible thickening parameter.
pub const ALPHA_MAX: f64 = 2.0 / 3.0;
const REFINE_STEPS: usize = 40;

/// `min(3(1-a)R, (1-a) d / 2)`.
pub fn local_radius(alpha: f64, r: f64, dist_to_opposing: f64) -> f64 {
    ((1.0 - alpha) * 3.0 * r).min(0.5 * (1.0 - alpha) * dist_to_opposing)
}

/// Black probes with their cells, indexed for range queries.
struct BlackProbes {
    /// Indices into `t.probes`.
    ids: Vec<u32>,
    tree: VpTree,
}

impl BlackProbes {
    fn new(t: &Tessellation, report: &ClusterReport) -> Self {
        let ids: Vec<u32> = (0..t.probes.len() as u32)
            .filter(|&k| report.label(t.probes[k as usize].nearest).is_some())
            .collect();
        let pts: Vec<Point> = ids.iter().map(|&k| t.probes[k as usize].x).collect();
        let tree = VpTree::build(&t.space, &pts);
        Self { ids, tree }
    }

    fn cell(&self, t: &Tessellation, i: u32) -> u32 {
        t.probes[self.ids[i as usize] as usize].nearest
    }
}

/// Black cells of other clusters whose probes come within `10R` of a probe
/// of `cell`.
pub fn opposing_set(report: &ClusterReport, t: &Tessellation, cell: u32, r: f64) -> Result<BTreeSet<u32>> {
    let Some(own) = report.label(cell) else {
        return Err(invalid(format!("cell {cell} is not black")));
    };
    let black = BlackProbes::new(t, report);
    let mut out = BTreeSet::new();
    for p in t.probes.iter().filter(|p| p.nearest == cell) {
        black.tree.within(&t.space, &p.x, 10.0 * r, |i, _| {
            let c = black.cell(t, i);
            if report.labels[c as usize] != own {
                out.insert(c);
            }
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThickenedRegion {
    pub alpha: f64,
    pub r: f64,
    /// Per probe: estimated `d(z, A_C)` capped at `6R` for black probes,
    /// `None` for white ones.
    pub opposing_distance: Vec<Option<f64>>,
    /// Per probe: clusters whose thickening contains it, increasing.
    pub members: Vec<Vec<u32>>,
    /// Probe count per cluster component, ordered by cluster id.
    pub components: Vec<(u32, usize)>,
    /// Distances to `A_C` are probe estimates; the true value may be smaller
    /// by up to this much.
    pub tolerance: f64,
}

impl ThickenedRegion {
    pub fn contains(&self, probe: usize) -> bool {
        !self.members[probe].is_empty()
    }
}

/// Thicken every black cluster with parameter `alpha` in `(0, 2/3]`.
pub fn thicken(t: &Tessellation, report: &ClusterReport, alpha: f64, r: f64) -> Result<ThickenedRegion> {
    if !(alpha > 0.0 && alpha <= ALPHA_MAX) {
        return Err(invalid(format!("thickening parameter {alpha} outside (0, 2/3]")));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(invalid(format!("thickening scale {r} must be positive")));
    }
    let black = BlackProbes::new(t, report);
    let dist = opposing_distances(t, report, &black, r);
    thicken_with(t, report, &black, dist, alpha, r)
}

/// Thickenings for several parameters sharing one distance computation.
pub fn thicken_grid(t: &Tessellation, report: &ClusterReport, alphas: &[f64], r: f64) -> Result<Vec<ThickenedRegion>> {
    if alphas.is_empty() {
        return Err(invalid("empty thickening grid"));
    }
    for &a in alphas {
        if !(a > 0.0 && a <= ALPHA_MAX) {
            return Err(invalid(format!("thickening parameter {a} outside (0, 2/3]")));
        }
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(invalid(format!("thickening scale {r} must be positive")));
    }
    let black = BlackProbes::new(t, report);
    let dist = opposing_distances(t, report, &black, r);
    alphas
        .iter()
        .map(|&a| thicken_with(t, report, &black, dist.clone(), a, r))
        .collect()
}

fn opposing_distances(t: &Tessellation, report: &ClusterReport, black: &BlackProbes, r: f64) -> Vec<Option<f64>> {
    let cap = 6.0 * r;
    let clip = match t.config.region {
        region @ ProbeRegion::Square(_) => Some(region),
        region if t.config.clip => Some(region),
        _ => None,
    };
    map_indexed(t.probes.len(), |k| {
        let p = &t.probes[k];
        let own = report.label(p.nearest)?;
        let hit = black.tree.nearest_where(&t.space, &p.x, cap, |i| {
            report.labels[black.cell(t, i) as usize] != own
        });
        let Some((i, d)) = hit else {
            return Some(cap);
        };
        if t.is_graph() {
            return Some(d);
        }
        // One refinement along the segment towards the opposing probe.
        let y = t.probes[black.ids[i as usize] as usize].x;
        let opposing = |x: &Point| {
            let c = t.cell_of(x);
            let l = report.labels[c as usize];
            l != WHITE && l != own && clip.is_none_or(|reg| reg.contains(&t.space, x))
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..REFINE_STEPS {
            let m = 0.5 * (lo + hi);
            if opposing(&t.space.geodesic(&p.x, &y, m)) {
                hi = m;
            } else {
                lo = m;
            }
        }
        Some(d * hi)
    })
}

fn thicken_with(
    t: &Tessellation,
    report: &ClusterReport,
    black: &BlackProbes,
    dist: Vec<Option<f64>>,
    alpha: f64,
    r: f64,
) -> Result<ThickenedRegion> {
    let reach = (1.0 - alpha) * 3.0 * r;
    let members: Vec<Vec<u32>> = map_indexed(t.probes.len(), |k| {
        let x = &t.probes[k].x;
        let mut out = Vec::new();
        black.tree.within(&t.space, x, reach, |i, d| {
            let z = black.ids[i as usize] as usize;
            let c = report.labels[t.probes[z].nearest as usize];
            if let Some(dz) = dist[z] {
                if d <= local_radius(alpha, r, dz) {
                    out.push(c);
                }
            }
        });
        out.sort_unstable();
        out.dedup();
        out
    });
    let mut comp = std::collections::BTreeMap::new();
    for m in &members {
        for &c in m {
            *comp.entry(c).or_insert(0usize) += 1;
        }
    }
    Ok(ThickenedRegion {
        alpha,
        r,
        opposing_distance: dist,
        members,
        components: comp.into_iter().collect(),
        tolerance: if t.is_graph() { 0.0 } else { t.spacing },
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThickeningViolations {
    /// Probes in `C_a` but not in `C_b` for some `b < a`, or black probes
    /// missing from their own cluster's thickening.
    pub nesting: usize,
    /// Probes claimed by two clusters.
    pub overlap: usize,
    /// Probes within `R` of a black probe whose `6R` ball meets no other
    /// cluster, yet outside the region.
    pub ball: usize,
    pub probes: usize,
}

impl ThickeningViolations {
    pub const CSV_HEADER: &'static str =
        "lambda,p,R,alpha,replica,violations_nesting,violations_overlap,violations_ball,probes";

    pub fn total(&self) -> usize {
        self.nesting + self.overlap + self.ball
    }
}

/// Check nesting across the given parameters, cross-cluster disjointness and
/// `R`-ball inclusion. The `6R` condition is re-derived by a range scan.
pub fn verify_thickening(
    regions: &[ThickenedRegion],
    report: &ClusterReport,
    t: &Tessellation,
    r: f64,
) -> Vec<ThickeningViolations> {
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by(|&a, &b| regions[a].alpha.total_cmp(&regions[b].alpha));
    let black = BlackProbes::new(t, report);
    let all: Vec<Point> = t.probes.iter().map(|p| p.x).collect();
    let all_tree = VpTree::build(&t.space, &all);
    // Black probes whose 6R ball meets only their own cluster.
    let isolated: Vec<bool> = map_indexed(t.probes.len(), |k| {
        let p = &t.probes[k];
        let Some(own) = report.label(p.nearest) else {
            return false;
        };
        let mut alone = true;
        black.tree.within(&t.space, &p.x, 6.0 * r, |i, _| {
            if report.labels[black.cell(t, i) as usize] != own {
                alone = false;
            }
        });
        alone
    });
    let mut out = vec![ThickeningViolations::default(); regions.len()];
    for (rank, &g) in order.iter().enumerate() {
        let reg = &regions[g];
        let v = &mut out[g];
        v.probes = t.probes.len();
        for (k, p) in t.probes.iter().enumerate() {
            let m = &reg.members[k];
            if m.len() > 1 {
                v.overlap += 1;
            }
            if let Some(own) = report.label(p.nearest) {
                if !m.contains(&own) {
                    v.nesting += 1;
                }
            }
            // Smaller parameters give larger sets.
            if let Some(&prev) = rank.checked_sub(1).map(|j| &order[j]) {
                if m.iter().any(|c| !regions[prev].members[k].contains(c)) {
                    v.nesting += 1;
                }
            }
        }
        for (k, p) in t.probes.iter().enumerate() {
            if !isolated[k] {
                continue;
            }
            all_tree.within(&t.space, &p.x, r, |j, _| {
                if !reg.contains(j as usize) {
                    v.ball += 1;
                }
            });
        }
    }
    out
}

/// Per replica, violations for each parameter of `alphas`; `None` when the
/// replica was discarded.
#[allow(clippy::too_many_arguments)]
pub fn thickening_run(
    space: &crate::geometry::Space,
    lambda: f64,
    p: f64,
    r: f64,
    alphas: &[f64],
    config: crate::tessellation::TessellationConfig,
    window: f64,
    replicas: usize,
    stream: &crate::rng::RandomStream,
) -> Result<Vec<Option<Vec<ThickeningViolations>>>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("survival probability {p} outside [0, 1]")));
    }
    crate::parallel::try_map_indexed(replicas, |k| -> Result<_> {
        let s = stream.split(k as u64);
        let Some(rep) = crate::percolation::prepare_replica(space, lambda, config, window, &s)? else {
            return Ok(None);
        };
        let cl = rep.clusters(p);
        let regions = thicken_grid(&rep.t, &cl, alphas, r)?;
        Ok(Some(verify_thickening(&regions, &cl, &rep.t, r)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Space;
    use crate::percolation::{clusters, color, prepare_replica};
    use crate::pointprocess::MarkedPointSet;
    use crate::rng::RandomStream;
    use crate::tessellation::witness::DEFAULT_REFINE_STEPS;
    use crate::tessellation::{build_adjacency, TessellationConfig};

    #[test]
    fn radius_formula() {
        assert_eq!(local_radius(1.0, 1.0, 5.0), 0.0);
        assert_eq!(local_radius(0.0, 1.0, f64::INFINITY), 3.0);
        assert_eq!(local_radius(0.5, 1.0, 2.0), 0.5);
        for d in [0.1, 1.0, 4.0, 12.0] {
            let mut last = f64::INFINITY;
            for a in [0.0, 0.1, 0.3, 0.6, 2.0 / 3.0, 1.0] {
                let s = local_radius(a, 1.0, d);
                assert!(s <= last);
                last = s;
            }
        }
    }

    fn crafted() -> (Tessellation, ClusterReport) {
        // Black cells around (-3, 0) and (3, 0) separated by white cells.
        let s: Space = "e2".parse().unwrap();
        let mut nuclei = Vec::new();
        let mut labels = Vec::new();
        for i in -6i32..=6 {
            for j in -6i32..=6 {
                nuclei.push(Point::Euclidean([i as f64, j as f64, 0.0]));
                let black = (i == -3 || i == -4 || i == 3 || i == 4) && j.abs() <= 1;
                labels.push(if black { 0.1 } else { 0.9 });
            }
        }
        let pts = MarkedPointSet::from_parts(&s, nuclei, labels, 9.0, 1.0).unwrap();
        let cfg = TessellationConfig::square(5.0).with_density(40.0).without_certificates();
        let t = Tessellation::build(&s, pts, cfg, &RandomStream::new(5)).unwrap();
        let adj = build_adjacency(&t, None, DEFAULT_REFINE_STEPS).unwrap();
        let rep = clusters(&adj, &color(&t, 0.5)).unwrap();
        (t, rep)
    }

    #[test]
    fn opposing_set_matches_brute_force() {
        let (t, rep) = crafted();
        assert_eq!(rep.count(), 2);
        let cell = t.cell_of(&Point::Euclidean([-3.0, 0.0, 0.0]));
        for r in [0.1, 0.25, 0.45, 0.6, 1.0] {
            let got = opposing_set(&rep, &t, cell, r).unwrap();
            let mut want = BTreeSet::new();
            let own = rep.label(cell).unwrap();
            for a in t.probes.iter().filter(|p| p.nearest == cell) {
                for b in &t.probes {
                    if let Some(l) = rep.label(b.nearest) {
                        if l != own && t.space.dist(&a.x, &b.x) <= 10.0 * r {
                            want.insert(b.nearest);
                        }
                    }
                }
            }
            assert_eq!(got, want, "R = {r}");
            assert_eq!(got.is_empty(), r < 0.5);
        }
        let white = t.cell_of(&Point::Euclidean([0.0, 0.0, 0.0]));
        assert!(opposing_set(&rep, &t, white, 1.0).is_err());
    }

    #[test]
    fn crafted_thickening() {
        let (t, rep) = crafted();
        let regions = thicken_grid(&t, &rep, &[0.1, 1.0 / 3.0, 0.6], 1.0).unwrap();
        for v in verify_thickening(&regions, &rep, &t, 1.0) {
            assert_eq!(v.total(), 0, "{v:?}");
        }
        // The clusters are about 5 apart, so d(z, A_C) is near 5 at the
        // facing edges and each side grows by at most (1 - a) * 2.5.
        let near = t.probes.iter().position(|p| {
            matches!(p.x, Point::Euclidean(c) if (c[0] + 2.6).abs() < 0.05 && c[1].abs() < 0.5)
        });
        if let Some(k) = near {
            let d = regions[0].opposing_distance[k].unwrap();
            assert!((d - 5.0).abs() < 0.3, "{d}");
        }
        assert!(thicken(&t, &rep, 0.7, 1.0).is_err());
        assert!(thicken(&t, &rep, 0.0, 1.0).is_err());
    }

    #[test]
    fn single_cluster_has_no_violations() {
        let s: Space = "h2".parse().unwrap();
        let cfg = TessellationConfig::ball(2.0).clipped().without_certificates();
        let rep = prepare_replica(&s, 1.0, cfg, 6.0, &RandomStream::new(8)).unwrap().unwrap();
        let all = rep.clusters(1.0);
        let own = all.label(rep.t.probes[0].nearest);
        assert!(rep.t.probes.iter().all(|p| all.label(p.nearest) == own));
        let regions = thicken_grid(&rep.t, &all, &[0.1, 0.3, 0.6], 0.5).unwrap();
        assert!(regions.iter().all(|g| (0..rep.t.probes.len()).all(|k| g.contains(k))));
        for v in verify_thickening(&regions, &all, &rep.t, 0.5) {
            assert_eq!(v.total(), 0);
        }
    }

    #[test]
    fn random_configurations() {
        for (name, seed) in [("e2", 1), ("h2", 2), ("grid:2:32", 3)] {
            let s: Space = name.parse().unwrap();
            let cfg = TessellationConfig::ball(if s.is_continuum() { 2.5 } else { 10.0 }).clipped().without_certificates();
            let w = if s.is_continuum() { 6.0 } else { 16.0 };
            let lambda = if s.is_continuum() { 1.0 } else { 0.1 };
            let Some(rep) = prepare_replica(&s, lambda, cfg, w, &RandomStream::new(seed)).unwrap() else {
                continue;
            };
            let cl = rep.clusters(0.5);
            let r = if s.is_continuum() { 0.3 } else { 1.0 };
            let regions = thicken_grid(&rep.t, &cl, &[0.1, 1.0 / 3.0, 0.6], r).unwrap();
            for v in verify_thickening(&regions, &cl, &rep.t, r) {
                assert_eq!(v.total(), 0, "{name}: {v:?}");
            }
        }
    }
}
