use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use super::{PNorm, Space, SpaceKind};
use crate::error::{invalid, Result};

/// Area of a hyperbolic disk of radius `s`, written as `4 pi sinh^2(s/2)` to
/// avoid cancellation in `cosh s - 1` at small radii.
#[inline]
pub(crate) fn h2_area(s: f64) -> f64 {
    let h = (0.5 * s).sinh();
    4.0 * PI * h * h
}

pub(crate) fn ball_volume(space: &Space, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    match &space.kind {
        SpaceKind::Euclidean { dim } => match dim {
            1 => 2.0 * t,
            2 => PI * t * t,
            _ => 4.0 / 3.0 * PI * t * t * t,
        },
        SpaceKind::Hyperbolic2 => h2_area(t),
        SpaceKind::ProductH2 { norm } => product_volume(*norm, t),
        SpaceKind::Graph(w) => w.ball_size(t) as f64,
    }
}

fn product_volume(norm: PNorm, t: f64) -> f64 {
    match norm {
        PNorm::LInf => h2_area(t) * h2_area(t),
        // r = t sin(phi) removes the square-root endpoint singularity.
        PNorm::L2 => adaptive_simpson(
            |phi| {
                let (s, c) = phi.sin_cos();
                2.0 * PI * (t * s).sinh() * h2_area(t * c) * t * c
            },
            0.0,
            FRAC_PI_2,
            1e-8,
        ),
        PNorm::L1 => adaptive_simpson(
            |r| 2.0 * PI * r.sinh() * h2_area(t - r),
            0.0,
            t,
            1e-8,
        ),
    }
}

/// Hit-or-miss estimate of `vol B_t(o)` with its standard error.
///
/// Independent of the radial formulas: Euclidean balls are sampled in a
/// bounding cube, hyperbolic factors uniformly in a Poincare disk and
/// weighted by the conformal density `4 / (1 - |u|^2)^2`; membership uses
/// the metric itself.
pub fn monte_carlo_volume<R: rand::Rng + ?Sized>(space: &Space, t: f64, samples: usize, rng: &mut R) -> Result<(f64, f64)> {
    if !(t > 0.0) || samples < 2 {
        return Err(invalid("need t > 0 and at least two samples"));
    }
    // Disk slightly larger than the ball so misses occur.
    let disk = (0.5 * (t + 0.5)).tanh();
    let draw_disk = |rng: &mut R| -> ([f64; 2], f64) {
        loop {
            let u = [rng.random_range(-disk..disk), rng.random_range(-disk..disk)];
            let r2 = u[0] * u[0] + u[1] * u[1];
            if r2 < disk * disk {
                let w = 4.0 / ((1.0 - r2) * (1.0 - r2));
                return (u, w);
            }
        }
    };
    let origin = super::hyperbolic::polar(0.0, 0.0);
    let h2_dist = |u: [f64; 2]| super::hyperbolic::distance(&super::hyperbolic::from_poincare(u), &origin);
    let (box_volume, mut sum, mut sum2) = match &space.kind {
        SpaceKind::Euclidean { dim } => ((2.0 * t).powi(*dim as i32), 0.0, 0.0),
        SpaceKind::Hyperbolic2 => (PI * disk * disk, 0.0, 0.0),
        SpaceKind::ProductH2 { .. } => ((PI * disk * disk).powi(2), 0.0, 0.0),
        SpaceKind::Graph(_) => return Err(crate::error::Error::Unsupported("graph balls are counted exactly".into())),
    };
    for _ in 0..samples {
        let f = match &space.kind {
            SpaceKind::Euclidean { dim } => {
                let r2: f64 = (0..*dim).map(|_| rng.random_range(-t..t).powi(2)).sum();
                if r2.sqrt() < t { 1.0 } else { 0.0 }
            }
            SpaceKind::Hyperbolic2 => {
                let (u, w) = draw_disk(rng);
                if h2_dist(u) < t { w } else { 0.0 }
            }
            SpaceKind::ProductH2 { norm } => {
                let (u, wu) = draw_disk(rng);
                let (v, wv) = draw_disk(rng);
                if norm.combine(h2_dist(u), h2_dist(v)) < t { wu * wv } else { 0.0 }
            }
            SpaceKind::Graph(_) => unreachable!(),
        };
        sum += f;
        sum2 += f * f;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((box_volume * mean, box_volume * (var / n).sqrt()))
}

/// Adaptive Simpson quadrature with relative tolerance `rel_tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    // A coarse pass sets the absolute scale for the relative tolerance.
    let n = 64;
    let h = (b - a) / n as f64;
    let mut coarse = 0.0;
    let mut xs = Vec::with_capacity(n + 1);
    for i in 0..=n {
        xs.push(f(a + h * i as f64));
    }
    for i in 0..n / 2 {
        coarse += h / 3.0 * (xs[2 * i] + 4.0 * xs[2 * i + 1] + xs[2 * i + 2]);
    }
    let tol = rel_tol * coarse.abs().max(f64::MIN_POSITIVE);
    let mut total = 0.0;
    // Start from 32 panels so narrow features are not skipped.
    for i in 0..n / 2 {
        let (x0, x2) = (a + h * (2 * i) as f64, a + h * (2 * i + 2) as f64);
        let (f0, f1, f2) = (xs[2 * i], xs[2 * i + 1], xs[2 * i + 2]);
        let whole = (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2);
        total += recurse(&f, x0, x2, f0, f1, f2, whole, tol / (n / 2) as f64, 40);
    }
    total
}

/// Smallest radius whose ball volume reaches `v`.
pub(crate) fn invert(space: &Space, v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while ball_volume(space, hi) < v {
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ball_volume(space, mid) < v {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    hi
}

/// Fit of `vol(B_t) = c e^{a t} t^b` over a radius grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Root-mean-square residual of the log-volume fit.
    pub residual: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl GrowthParams {
    /// True when the fitted exponential rate is indistinguishable from zero.
    pub fn is_polynomial(&self) -> bool {
        self.a.abs() < 1e-3
    }
}

/// Least-squares fit of `log f(t) = log c + a t + b log t`.
pub fn fit_growth(space: &Space, t_grid: &[f64]) -> Result<GrowthParams> {
    if t_grid.len() < 4 {
        return Err(invalid("growth fit needs at least 4 radii"));
    }
    if t_grid.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(invalid("growth fit radii must be positive and finite"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("growth fit radii must be strictly increasing"));
    }
    let n = t_grid.len();
    let mut design = DMatrix::<f64>::zeros(n, 3);
    let mut rhs = DVector::<f64>::zeros(n);
    for (i, &t) in t_grid.iter().enumerate() {
        let v = ball_volume(space, t);
        if !(v > 0.0) {
            return Err(invalid(format!("ball volume vanishes at t = {t}")));
        }
        design[(i, 0)] = 1.0;
        design[(i, 1)] = t;
        design[(i, 2)] = t.ln();
        rhs[i] = v.ln();
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(invalid("degenerate radius grid for growth fit"));
    }
    let coef = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| invalid(format!("growth fit failed: {e}")))?;
    let fitted = &design * &coef;
    let residual = ((&rhs - fitted).norm_squared() / n as f64).sqrt();
    Ok(GrowthParams {
        a: coef[1],
        b: coef[2],
        c: coef[0].exp(),
        residual,
        t_min: t_grid[0],
        t_max: t_grid[n - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Space;

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn closed_form_volumes() {
        let e2 = Space::euclidean(2).unwrap();
        assert!((e2.ball_volume(2.0).unwrap() - 4.0 * PI).abs() < 1e-12);
        let h2 = Space::hyperbolic2();
        let v = h2.ball_volume(3.0).unwrap();
        assert!((v - 2.0 * PI * (3f64.cosh() - 1.0)).abs() < 1e-9);
        assert!((v - 56.97).abs() < 0.01);
        for name in ["e2", "e3", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf", "grid:2:8"] {
            let s: Space = name.parse().unwrap();
            assert_eq!(s.ball_volume(0.0).unwrap(), 0.0);
            assert!(s.ball_volume(-1.0).is_err());
        }
    }

    #[test]
    fn product_quadrature_matches_direct_double_integral() {
        // Independent route: midpoint rule on the (r1, r2) quarter-plane.
        for (norm, name) in [(PNorm::L1, "h2xh2:l1"), (PNorm::L2, "h2xh2:l2"), (PNorm::LInf, "h2xh2:linf")] {
            let s: Space = name.parse().unwrap();
            for &t in &[0.5, 1.0, 2.0, 3.0] {
                let n = 1500;
                let h = t / n as f64;
                let mut acc = 0.0;
                for i in 0..n {
                    let r1 = (i as f64 + 0.5) * h;
                    for j in 0..n {
                        let r2 = (j as f64 + 0.5) * h;
                        if norm.combine(r1, r2) <= t {
                            acc += r1.sinh() * r2.sinh();
                        }
                    }
                }
                let direct = 4.0 * PI * PI * acc * h * h;
                let quad = s.ball_volume(t).unwrap();
                assert!((direct - quad).abs() / quad < 3e-3, "{name} t={t}: {direct} vs {quad}");
            }
        }
    }

    #[test]
    fn volume_strictly_increasing_and_continuous() {
        for name in ["e2", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf"] {
            let s: Space = name.parse().unwrap();
            let mut prev = 0.0;
            for i in 1..=400 {
                let t = i as f64 * 0.02;
                let v = s.ball_volume(t).unwrap();
                assert!(v > prev, "{name} at {t}");
                let v2 = s.ball_volume(t + 1e-9).unwrap();
                assert!((v2 - v) / v < 1e-5, "{name} jump at {t}");
                prev = v;
            }
        }
    }

    #[test]
    fn inversion() {
        for name in ["e2", "h2", "h2xh2:l2"] {
            let s: Space = name.parse().unwrap();
            for &v in &[0.1, 1.0, 20.0, 1000.0] {
                let r = s.radius_for_volume(v).unwrap();
                assert!((s.ball_volume(r).unwrap() - v).abs() / v < 1e-9);
            }
        }
    }

    #[test]
    fn growth_fits() {
        let h2 = Space::hyperbolic2();
        let g = fit_growth(&h2, &grid(5.0, 15.0, 21)).unwrap();
        assert!((g.a - 1.0).abs() < 0.05, "{g:?}");
        assert!(g.b.abs() < 0.05, "{g:?}");

        let e2 = Space::euclidean(2).unwrap();
        let g = fit_growth(&e2, &grid(1.0, 10.0, 10)).unwrap();
        assert!(g.is_polynomial());
        assert!((g.b - 2.0).abs() < 1e-9);
        assert!((g.c - PI).abs() < 1e-9);

        let p1: Space = "h2xh2:l1".parse().unwrap();
        let g = fit_growth(&p1, &grid(8.0, 20.0, 13)).unwrap();
        assert!((g.a - 1.0).abs() < 0.1, "{g:?}");
    }

    #[test]
    fn growth_fit_rejects_bad_grids() {
        let h2 = Space::hyperbolic2();
        assert!(fit_growth(&h2, &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_growth(&h2, &[1.0, 2.0, 2.0, 3.0]).is_err());
        assert!(fit_growth(&h2, &[0.0, 1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn monte_carlo_agrees_with_formulas() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for name in ["e2", "e3", "h2", "h2xh2:l2", "h2xh2:l1", "h2xh2:linf"] {
            let s: Space = name.parse().unwrap();
            for t in [1.0, 2.0, 3.0] {
                let (v, se) = monte_carlo_volume(&s, t, 400_000, &mut rng).unwrap();
                let exact = s.ball_volume(t).unwrap();
                assert!((v - exact).abs() < 4.0 * se + 1e-12, "{name} t={t}: {v} +- {se} vs {exact}");
            }
        }
    }
}
