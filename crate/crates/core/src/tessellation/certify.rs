//! Containment certificates for single cells.
//!
//! A Voronoi cell is star-shaped about its nucleus along any geodesic, so
//! `C_i` lies in `B_rho(y_i)` as soon as every point of the sphere
//! `S_rho(y_i)` is strictly closer to another nucleus. The sphere is covered
//! by boxes in a chart; a box is settled when its centre is closer to another
//! nucleus by more than a Lipschitz bound on the box. Extra nuclei only help,
//! so the certificate stays valid for any superset of the known nuclei, and
//! such a cell is determined by the nuclei within `2 rho` of `y_i`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::geometry::{hyperbolic, PNorm, Point, Space, SpaceKind};
use crate::vptree::VpTree;

/// Default number of box evaluations per certificate attempt.
pub const DEFAULT_BUDGET: usize = 20_000;
const CACHE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coverage {
    /// Every point of the sphere is strictly closer to another nucleus.
    Covered,
    /// Some sphere point is at least as close to the centre nucleus.
    Exposed,
    /// The budget ran out before either was established.
    Undecided,
}

/// Parameter ranges of the sphere chart.
fn chart_box(space: &Space) -> Vec<(f64, f64)> {
    match &space.kind {
        SpaceKind::Euclidean { dim: 2 } | SpaceKind::Hyperbolic2 => vec![(0.0, TAU)],
        SpaceKind::Euclidean { .. } => vec![(0.0, PI), (0.0, TAU)],
        SpaceKind::ProductH2 { .. } => vec![(0.0, 1.0), (0.0, TAU), (0.0, TAU)],
        SpaceKind::Graph(_) => unreachable!("graph spaces have no sphere chart"),
    }
}

/// Factor radii on the product sphere of radius `rho`, monotone in `s`.
fn factor_radii(norm: PNorm, rho: f64, s: f64) -> (f64, f64) {
    match norm {
        PNorm::L1 => (rho * (1.0 - s), rho * s),
        PNorm::L2 => {
            let a = s * FRAC_PI_2;
            (rho * a.cos(), rho * a.sin())
        }
        PNorm::LInf => {
            if s < 0.5 {
                (rho, 2.0 * s * rho)
            } else {
                (2.0 * (1.0 - s) * rho, rho)
            }
        }
    }
}

/// Point of `S_rho(o)` at chart coordinates `u`.
fn chart_point(space: &Space, rho: f64, u: &[f64]) -> Point {
    match &space.kind {
        SpaceKind::Euclidean { dim: 2 } => Point::Euclidean([rho * u[0].cos(), rho * u[0].sin(), 0.0]),
        SpaceKind::Euclidean { .. } => {
            let (st, ct) = u[0].sin_cos();
            Point::Euclidean([rho * st * u[1].cos(), rho * st * u[1].sin(), rho * ct])
        }
        SpaceKind::Hyperbolic2 => Point::Hyperbolic(hyperbolic::polar(rho, u[0])),
        SpaceKind::ProductH2 { norm } => {
            let (r1, r2) = factor_radii(*norm, rho, u[0]);
            Point::Product(hyperbolic::polar(r1, u[1]), hyperbolic::polar(r2, u[2]))
        }
        SpaceKind::Graph(_) => unreachable!(),
    }
}

/// Upper bound on the distance from the image of the box centre to the image
/// of any point of the box, split by axis so the widest axis can be halved.
fn box_bound(space: &Space, rho: f64, lo: &[f64], hi: &[f64], per_axis: &mut [f64]) -> f64 {
    let hw: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
    match &space.kind {
        SpaceKind::Euclidean { dim: 2 } => per_axis[0] = rho * hw[0],
        SpaceKind::Euclidean { .. } => {
            // Moving the azimuth at polar angle t costs rho sin(t) per radian.
            per_axis[0] = rho * hw[0];
            per_axis[1] = rho * hw[1];
        }
        SpaceKind::Hyperbolic2 => per_axis[0] = rho.sinh() * hw[0],
        SpaceKind::ProductH2 { norm } => {
            // Radial move first, then along each circle at the larger radius;
            // all three norms are dominated by the sum of factor distances.
            let c = 0.5 * (lo[0] + hi[0]);
            let (a_lo, b_lo) = factor_radii(*norm, rho, lo[0]);
            let (a_c, b_c) = factor_radii(*norm, rho, c);
            let (a_hi, b_hi) = factor_radii(*norm, rho, hi[0]);
            let da = (a_lo - a_c).abs().max((a_hi - a_c).abs());
            let db = (b_lo - b_c).abs().max((b_hi - b_c).abs());
            per_axis[0] = da + db;
            per_axis[1] = a_lo.max(a_hi).sinh() * hw[1];
            per_axis[2] = b_lo.max(b_hi).sinh() * hw[2];
        }
        SpaceKind::Graph(_) => unreachable!(),
    }
    per_axis[..lo.len()].iter().sum()
}

/// Distance from `x` to the nearest nucleus other than `skip`.
fn nearest_other(space: &Space, index: &VpTree, x: &Point, skip: u32) -> (f64, u32) {
    let k = index.knn::<2>(space, x);
    (0..k.len).find(|&m| k.idx[m] != skip).map_or((f64::INFINITY, u32::MAX), |m| (k.dist[m], k.idx[m]))
}

/// Whether `S_rho(centre)` is covered by nuclei other than `skip` (pass
/// `u32::MAX` when `centre` is not itself indexed).
pub fn sphere_coverage(space: &Space, index: &VpTree, centre: &Point, skip: u32, rho: f64, budget: usize) -> Coverage {
    // Recent coverers, most recent first; the index answers the rest.
    let mut cache: Vec<Point> = Vec::with_capacity(CACHE);
    let root = chart_box(space);
    let d = root.len();
    // Start from a modest grid so exposed points are met early, then refine
    // depth first so consecutive boxes are neighbours.
    let splits = 4usize;
    let total = splits.pow(d as u32);
    let mut stack: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(total + 64);
    for k in 0..total {
        let (mut lo, mut hi) = (vec![0.0; d], vec![0.0; d]);
        let mut rem = k;
        for a in 0..d {
            let idx = rem % splits;
            rem /= splits;
            let w = (root[a].1 - root[a].0) / splits as f64;
            lo[a] = root[a].0 + w * idx as f64;
            hi[a] = lo[a] + w;
        }
        stack.push((lo, hi));
    }
    for (lo, hi) in &stack {
        let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let x = space.translate(centre, &chart_point(space, rho, &mid));
        if nearest_other(space, index, &x, skip).0 >= rho {
            return Coverage::Exposed;
        }
    }
    let mut per_axis = [0.0; 3];
    let mut evals = 0usize;
    while let Some((lo, hi)) = stack.pop() {
        evals += 1;
        if evals > budget {
            return Coverage::Undecided;
        }
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let x = space.translate(centre, &chart_point(space, rho, &mid));
        let bound = box_bound(space, rho, &lo, &hi, &mut per_axis);
        // The nucleus that covered the previous box usually covers this one.
        if let Some(k) = cache.iter().position(|y| space.dist(&x, y) + bound < rho) {
            let y = cache.remove(k);
            cache.insert(0, y);
            continue;
        }
        let (dmin, k) = nearest_other(space, index, &x, skip);
        if dmin >= rho {
            return Coverage::Exposed;
        }
        if cache.len() == CACHE {
            cache.pop();
        }
        cache.insert(0, *index.point(k));
        if dmin + bound < rho {
            continue;
        }
        let axis = (0..d).max_by(|&a, &b| per_axis[a].total_cmp(&per_axis[b])).unwrap_or(0);
        let (mut lo2, mut hi1) = (lo.clone(), hi.clone());
        hi1[axis] = mid[axis];
        lo2[axis] = mid[axis];
        stack.push((lo, hi1));
        stack.push((lo2, hi));
    }
    Coverage::Covered
}

/// Smallest radius from a geometric ladder starting at `rho0` for which
/// `C_i` is certified inside `B_rho(y_i)`, subject to `rho <= rho_max`.
pub fn containment_radius(space: &Space, index: &VpTree, nuclei: &[Point], i: u32, rho0: f64, rho_max: f64, budget: usize) -> Option<f64> {
    let y = nuclei[i as usize];
    let mut rho = rho0;
    while rho <= rho_max {
        match sphere_coverage(space, index, &y, i, rho, budget) {
            Coverage::Covered => return Some(rho),
            Coverage::Exposed | Coverage::Undecided => rho *= 1.4,
        }
    }
    if rho0 < rho_max && sphere_coverage(space, index, &y, i, rho_max, budget) == Coverage::Covered {
        return Some(rho_max);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointprocess::sample_poisson;
    use crate::rng::RandomStream;
    use rand::Rng;

    #[test]
    fn chart_points_lie_on_sphere() {
        for name in ["e2", "e3", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf"] {
            let s: Space = name.parse().unwrap();
            let b = chart_box(&s);
            let mut rng = RandomStream::new(2).rng();
            for _ in 0..50 {
                let u: Vec<f64> = b.iter().map(|(a, c)| a + (c - a) * rng.random::<f64>()).collect();
                let p = chart_point(&s, 1.7, &u);
                assert!((s.radius(&p) - 1.7).abs() < 1e-9, "{name}");
            }
        }
    }

    #[test]
    fn box_bound_dominates_sampled_distances() {
        for name in ["e2", "e3", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf"] {
            let s: Space = name.parse().unwrap();
            let root = chart_box(&s);
            let mut rng = RandomStream::new(3).rng();
            let mut per = [0.0; 3];
            for _ in 0..200 {
                let rho = 0.2 + 3.0 * rng.random::<f64>();
                let (mut lo, mut hi) = (vec![], vec![]);
                for (a, c) in &root {
                    let w = (c - a) * rng.random::<f64>() * 0.5;
                    let l = a + (c - a - w) * rng.random::<f64>();
                    lo.push(l);
                    hi.push(l + w);
                }
                let bound = box_bound(&s, rho, &lo, &hi, &mut per);
                let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
                let c = chart_point(&s, rho, &mid);
                for _ in 0..20 {
                    let u: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| a + (b - a) * rng.random::<f64>()).collect();
                    let d = s.dist(&c, &chart_point(&s, rho, &u));
                    assert!(d <= bound + 1e-9, "{name}: {d} > {bound}");
                }
            }
        }
    }

    #[test]
    fn isolated_nucleus_is_exposed() {
        let s = Space::hyperbolic2();
        let pts = vec![Point::Hyperbolic(hyperbolic::ORIGIN)];
        let idx = VpTree::build(&s, &pts);
        assert_eq!(sphere_coverage(&s, &idx, &pts[0], 0, 1.0, 1000), Coverage::Exposed);
    }

    #[test]
    fn certified_cells_have_no_far_points() {
        // Independent route: every sampled point beyond the radius is closer
        // to some other nucleus.
        for name in ["e2", "h2", "e3", "h2xh2:l2", "h2xh2:linf"] {
            let s: Space = name.parse().unwrap();
            let pts = sample_poisson(&s, 2.0, 3.5, &RandomStream::new(8)).unwrap();
            let idx = VpTree::build(&s, &pts.nuclei);
            let i = pts.nuclei.iter().enumerate().min_by(|a, b| s.radius(a.1).total_cmp(&s.radius(b.1))).unwrap().0 as u32;
            let rho0 = s.radius_for_volume(0.5).unwrap();
            let Some(rho) = containment_radius(&s, &idx, &pts.nuclei, i, rho0, 1.7, DEFAULT_BUDGET) else {
                continue;
            };
            let y = pts.nuclei[i as usize];
            let mut rng = RandomStream::new(9).rng();
            for _ in 0..2000 {
                let r = rho * (1.0 + rng.random::<f64>());
                let x = s.translate(&y, &s.sphere_point(r, &mut rng));
                assert!(nearest_other(&s, &idx, &x, i).0 < s.dist(&x, &y), "{name}");
            }
        }
    }
}
