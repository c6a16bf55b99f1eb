//! Metric measure spaces the simulator runs on.
//!
//! Continuum backends are `R^d` (d <= 3), the hyperbolic plane in the
//! hyperboloid model, and the product of two hyperbolic planes with an
//! `L^1`, `L^2` or `L^inf` combination of the component distances. Graph
//! backends are finite windows of grids and regular trees with hop distance.

pub mod graph;
pub mod hyperbolic;
mod sampling;
mod volume;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
pub use graph::{GraphFamily, GraphWorld};
pub use sampling::BallSampler;
pub use volume::{adaptive_simpson, fit_growth, monte_carlo_volume, GrowthParams};

/// A point of some backend. Euclidean points of dimension `d < 3` leave the
/// trailing coordinates at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Point {
    Euclidean([f64; 3]),
    Hyperbolic([f64; 3]),
    Product([f64; 3], [f64; 3]),
    Vertex(u32),
}

impl Point {
    /// Coordinates in the backend's embedding, as used by the JSON exports.
    pub fn coords(&self, space: &Space) -> Vec<f64> {
        match (self, &space.kind) {
            (Point::Euclidean(c), SpaceKind::Euclidean { dim }) => c[..*dim].to_vec(),
            (Point::Euclidean(c), _) => c.to_vec(),
            (Point::Hyperbolic(c), _) => c.to_vec(),
            (Point::Product(a, b), _) => a.iter().chain(b.iter()).copied().collect(),
            (Point::Vertex(v), _) => vec![*v as f64],
        }
    }

    pub fn from_coords(space: &Space, c: &[f64]) -> Result<Point> {
        let bad = || invalid(format!("{} coordinates do not fit backend {}", c.len(), space));
        Ok(match &space.kind {
            SpaceKind::Euclidean { dim } => {
                if c.len() != *dim {
                    return Err(bad());
                }
                let mut x = [0.0; 3];
                x[..*dim].copy_from_slice(c);
                Point::Euclidean(x)
            }
            SpaceKind::Hyperbolic2 => {
                if c.len() != 3 {
                    return Err(bad());
                }
                Point::Hyperbolic(hyperbolic::normalize([c[0], c[1], c[2]]))
            }
            SpaceKind::ProductH2 { .. } => {
                if c.len() != 6 {
                    return Err(bad());
                }
                Point::Product(
                    hyperbolic::normalize([c[0], c[1], c[2]]),
                    hyperbolic::normalize([c[3], c[4], c[5]]),
                )
            }
            SpaceKind::Graph(world) => {
                if c.len() != 1 || c[0] < 0.0 || !world.contains(c[0] as u32) {
                    return Err(bad());
                }
                Point::Vertex(c[0] as u32)
            }
        })
    }
}

/// How the two factor distances of `H^2 x H^2` are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PNorm {
    L1,
    L2,
    LInf,
}

impl PNorm {
    #[inline]
    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            PNorm::L1 => a + b,
            PNorm::L2 => a.hypot(b),
            PNorm::LInf => a.max(b),
        }
    }

    /// Largest second-factor radius `s` with `combine(r, s) <= t`, for `r <= t`.
    #[inline]
    pub fn co_radius(self, t: f64, r: f64) -> f64 {
        match self {
            PNorm::L1 => (t - r).max(0.0),
            PNorm::L2 => (t * t - r * r).max(0.0).sqrt(),
            PNorm::LInf => t,
        }
    }
}

#[derive(Clone, Debug)]
pub enum SpaceKind {
    Euclidean { dim: usize },
    Hyperbolic2,
    ProductH2 { norm: PNorm },
    Graph(Arc<GraphWorld>),
}

#[derive(Clone, Debug)]
pub struct Space {
    pub kind: SpaceKind,
    pub origin: Point,
}

impl Space {
    pub fn euclidean(dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(invalid("euclidean backends support dimensions 1 to 3"));
        }
        Ok(Self {
            kind: SpaceKind::Euclidean { dim },
            origin: Point::Euclidean([0.0; 3]),
        })
    }

    pub fn hyperbolic2() -> Self {
        Self {
            kind: SpaceKind::Hyperbolic2,
            origin: Point::Hyperbolic(hyperbolic::ORIGIN),
        }
    }

    pub fn product_h2(norm: PNorm) -> Self {
        Self {
            kind: SpaceKind::ProductH2 { norm },
            origin: Point::Product(hyperbolic::ORIGIN, hyperbolic::ORIGIN),
        }
    }

    pub fn graph(world: GraphWorld) -> Self {
        let origin = Point::Vertex(world.origin);
        Self {
            kind: SpaceKind::Graph(Arc::new(world)),
            origin,
        }
    }

    pub fn is_continuum(&self) -> bool {
        !matches!(self.kind, SpaceKind::Graph(_))
    }

    pub fn graph_world(&self) -> Option<&Arc<GraphWorld>> {
        match &self.kind {
            SpaceKind::Graph(w) => Some(w),
            _ => None,
        }
    }

    /// Topological dimension; 0 for graphs.
    pub fn dim(&self) -> usize {
        match &self.kind {
            SpaceKind::Euclidean { dim } => *dim,
            SpaceKind::Hyperbolic2 => 2,
            SpaceKind::ProductH2 { .. } => 4,
            SpaceKind::Graph(_) => 0,
        }
    }

    /// Whether ball volumes grow exponentially.
    pub fn is_nonamenable(&self) -> bool {
        match &self.kind {
            SpaceKind::Euclidean { .. } => false,
            SpaceKind::Graph(w) => matches!(w.family, GraphFamily::RegularTree { .. }),
            _ => true,
        }
    }

    pub fn check_point(&self, x: &Point) -> Result<()> {
        let ok = match (&self.kind, x) {
            (SpaceKind::Euclidean { .. }, Point::Euclidean(_)) => true,
            (SpaceKind::Hyperbolic2, Point::Hyperbolic(_)) => true,
            (SpaceKind::ProductH2 { .. }, Point::Product(..)) => true,
            (SpaceKind::Graph(w), Point::Vertex(v)) => w.contains(*v),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("point {x:?} does not belong to backend {self}")))
        }
    }

    /// Checked distance.
    pub fn distance(&self, x: &Point, y: &Point) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.dist(x, y))
    }

    /// Unchecked distance for hot loops; points must belong to this backend.
    #[inline]
    pub fn dist(&self, x: &Point, y: &Point) -> f64 {
        match (x, y) {
            (Point::Euclidean(a), Point::Euclidean(b)) => {
                let d0 = a[0] - b[0];
                let d1 = a[1] - b[1];
                let d2 = a[2] - b[2];
                (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
            }
            (Point::Hyperbolic(a), Point::Hyperbolic(b)) => hyperbolic::distance(a, b),
            (Point::Product(a1, a2), Point::Product(b1, b2)) => {
                let norm = match self.kind {
                    SpaceKind::ProductH2 { norm } => norm,
                    _ => unreachable!("product point outside a product backend"),
                };
                norm.combine(hyperbolic::distance(a1, b1), hyperbolic::distance(a2, b2))
            }
            (Point::Vertex(a), Point::Vertex(b)) => match &self.kind {
                SpaceKind::Graph(w) => w.distance(*a, *b) as f64,
                _ => unreachable!("vertex outside a graph backend"),
            },
            _ => panic!("mismatched point kinds {x:?} / {y:?}"),
        }
    }

    #[inline]
    pub fn radius(&self, x: &Point) -> f64 {
        self.dist(&self.origin, x)
    }

    /// Point at parameter `t` along a constant-speed geodesic from `x` to `y`.
    pub fn geodesic_point(&self, x: &Point, y: &Point, t: f64) -> Result<Point> {
        if !self.is_continuum() {
            return Err(Error::Unsupported("geodesics on graph backends".into()));
        }
        self.check_point(x)?;
        self.check_point(y)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid(format!("geodesic parameter {t} outside [0, 1]")));
        }
        Ok(self.geodesic(x, y, t))
    }

    /// Unchecked geodesic interpolation for continuum backends.
    #[inline]
    pub fn geodesic(&self, x: &Point, y: &Point, t: f64) -> Point {
        match (x, y) {
            (Point::Euclidean(a), Point::Euclidean(b)) => Point::Euclidean([
                a[0] + t * (b[0] - a[0]),
                a[1] + t * (b[1] - a[1]),
                a[2] + t * (b[2] - a[2]),
            ]),
            (Point::Hyperbolic(a), Point::Hyperbolic(b)) => {
                Point::Hyperbolic(hyperbolic::geodesic(a, b, t))
            }
            (Point::Product(a1, a2), Point::Product(b1, b2)) => Point::Product(
                hyperbolic::geodesic(a1, b1, t),
                hyperbolic::geodesic(a2, b2, t),
            ),
            _ => panic!("geodesic on unsupported points {x:?} / {y:?}"),
        }
    }

    /// Like [`Space::geodesic`] but `t` may leave `[0, 1]`, extending the
    /// geodesic through its endpoints.
    #[inline]
    pub fn geodesic_line(&self, x: &Point, y: &Point, t: f64) -> Point {
        match (x, y) {
            (Point::Hyperbolic(a), Point::Hyperbolic(b)) => {
                Point::Hyperbolic(hyperbolic::geodesic_line(a, b, t))
            }
            (Point::Product(a1, a2), Point::Product(b1, b2)) => Point::Product(
                hyperbolic::geodesic_line(a1, b1, t),
                hyperbolic::geodesic_line(a2, b2, t),
            ),
            _ => self.geodesic(x, y, t),
        }
    }

    /// Isometry taking the origin to `to`, applied to `p`.
    pub fn translate(&self, to: &Point, p: &Point) -> Point {
        match (to, p) {
            (Point::Euclidean(a), Point::Euclidean(b)) => {
                Point::Euclidean([a[0] + b[0], a[1] + b[1], a[2] + b[2]])
            }
            (Point::Hyperbolic(a), Point::Hyperbolic(b)) => {
                Point::Hyperbolic(hyperbolic::boost(a, b))
            }
            (Point::Product(a1, a2), Point::Product(b1, b2)) => {
                Point::Product(hyperbolic::boost(a1, b1), hyperbolic::boost(a2, b2))
            }
            _ => panic!("translation on unsupported points {to:?} / {p:?}"),
        }
    }

    /// Volume (graph: vertex count) of the ball of radius `t` about the origin.
    pub fn ball_volume(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(invalid(format!("ball radius {t} must be nonnegative")));
        }
        Ok(volume::ball_volume(self, t))
    }

    /// Radius whose ball has the given volume (continuum backends).
    pub fn radius_for_volume(&self, v: f64) -> Result<f64> {
        if !self.is_continuum() {
            return Err(Error::Unsupported("volume inversion on graphs".into()));
        }
        if !(v >= 0.0) {
            return Err(invalid("volume must be nonnegative"));
        }
        Ok(volume::invert(self, v))
    }

    /// Uniform sample from `B_t(o)`. Builds a fresh [`BallSampler`]; reuse one
    /// when drawing many points.
    pub fn sample_in_ball<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<Point> {
        Ok(BallSampler::new(self, t)?.sample(rng))
    }

    /// Point at distance exactly `r` from the origin in a random direction.
    /// Uniform for `R^d` and `H^2`; quasi-uniform for products.
    pub fn sphere_point<R: Rng + ?Sized>(&self, r: f64, rng: &mut R) -> Point {
        match &self.kind {
            SpaceKind::Euclidean { dim } => {
                let dir = sampling::random_direction(*dim, rng);
                Point::Euclidean([r * dir[0], r * dir[1], r * dir[2]])
            }
            SpaceKind::Hyperbolic2 => {
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                Point::Hyperbolic(hyperbolic::polar(r, theta))
            }
            SpaceKind::ProductH2 { norm } => {
                let phi = rng.random::<f64>() * std::f64::consts::FRAC_PI_2;
                let (a, b) = match norm {
                    PNorm::L2 => (r * phi.cos(), r * phi.sin()),
                    PNorm::L1 => {
                        let u = rng.random::<f64>();
                        (r * u, r * (1.0 - u))
                    }
                    PNorm::LInf => {
                        let u = rng.random::<f64>() * r;
                        if rng.random::<bool>() {
                            (r, u)
                        } else {
                            (u, r)
                        }
                    }
                };
                let t1 = rng.random::<f64>() * std::f64::consts::TAU;
                let t2 = rng.random::<f64>() * std::f64::consts::TAU;
                Point::Product(hyperbolic::polar(a, t1), hyperbolic::polar(b, t2))
            }
            SpaceKind::Graph(_) => panic!("sphere points on graph backends"),
        }
    }

    /// Canonical backend string, the inverse of [`FromStr`].
    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SpaceKind::Euclidean { dim } => write!(f, "e{dim}"),
            SpaceKind::Hyperbolic2 => write!(f, "h2"),
            SpaceKind::ProductH2 { norm } => {
                let n = match norm {
                    PNorm::L1 => "l1",
                    PNorm::L2 => "l2",
                    PNorm::LInf => "linf",
                };
                write!(f, "h2xh2:{n}")
            }
            SpaceKind::Graph(w) => match w.family {
                GraphFamily::Grid { dim, side } => write!(f, "grid:{dim}:{side}"),
                GraphFamily::RegularTree { degree, depth } => write!(f, "tree:{degree}:{depth}"),
            },
        }
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |x: &str| -> Result<usize> {
            x.parse::<usize>()
                .map_err(|_| invalid(format!("bad number {x:?} in backend {s:?}")))
        };
        match parts.as_slice() {
            ["e1"] => Space::euclidean(1),
            ["e2"] => Space::euclidean(2),
            ["e3"] => Space::euclidean(3),
            ["h2"] => Ok(Space::hyperbolic2()),
            ["h2xh2"] | ["h2xh2", "l2"] => Ok(Space::product_h2(PNorm::L2)),
            ["h2xh2", "l1"] => Ok(Space::product_h2(PNorm::L1)),
            ["h2xh2", "linf"] => Ok(Space::product_h2(PNorm::LInf)),
            ["grid", d, side] => Ok(Space::graph(GraphWorld::grid(num(d)?, num(side)?)?)),
            ["tree", k, depth] => Ok(Space::graph(GraphWorld::regular_tree(num(k)?, num(depth)?)?)),
            _ => Err(invalid(format!("unknown backend {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn distance_examples() {
        let h = Space::hyperbolic2();
        let y = Point::Hyperbolic([1f64.cosh(), 1f64.sinh(), 0.0]);
        assert!(close(h.distance(&h.origin, &y).unwrap(), 1.0, 1e-12));

        let e = Space::euclidean(2).unwrap();
        let d = e
            .distance(&Point::Euclidean([0.0; 3]), &Point::Euclidean([3.0, 4.0, 0.0]))
            .unwrap();
        assert!(close(d, 5.0, 1e-12));

        let p = Space::product_h2(PNorm::L2);
        let q = Point::Product(hyperbolic::polar(3.0, 0.2), hyperbolic::polar(4.0, 1.0));
        assert!(close(p.distance(&p.origin, &q).unwrap(), 5.0, 1e-9));
    }

    #[test]
    fn mismatched_kinds_rejected() {
        let e = Space::euclidean(2).unwrap();
        let err = e.distance(&e.origin, &Point::Hyperbolic(hyperbolic::ORIGIN));
        assert!(matches!(err, Err(Error::InvalidInput(_))));
        let g: Space = "grid:2:4".parse().unwrap();
        assert!(g.distance(&g.origin, &Point::Vertex(99)).is_err());
    }

    #[test]
    fn geodesic_examples() {
        let e = Space::euclidean(2).unwrap();
        let a = Point::Euclidean([0.0; 3]);
        let b = Point::Euclidean([2.0, 0.0, 0.0]);
        assert_eq!(e.geodesic_point(&a, &b, 0.5).unwrap(), Point::Euclidean([1.0, 0.0, 0.0]));
        assert_eq!(e.geodesic_point(&a, &b, 0.0).unwrap(), a);
        assert_eq!(e.geodesic_point(&a, &b, 1.0).unwrap(), b);

        // d(x, y) = 2 by construction: translate a radius-2 point to x.
        let h = Space::hyperbolic2();
        let x = Point::Hyperbolic(hyperbolic::polar(0.7, 0.3));
        let y = h.translate(&x, &Point::Hyperbolic(hyperbolic::polar(2.0, 2.0)));
        assert!(close(h.dist(&x, &y), 2.0, 1e-9));
        let m = h.geodesic_point(&x, &y, 0.5).unwrap();
        assert!(close(h.dist(&x, &m), 1.0, 1e-9));
        assert!(close(h.dist(&y, &m), 1.0, 1e-9));

        let g: Space = "tree:3:3".parse().unwrap();
        assert!(matches!(
            g.geodesic_point(&g.origin, &g.origin, 0.5),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn backend_strings_round_trip() {
        for s in ["e2", "e3", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf", "grid:2:16", "tree:3:4"] {
            let sp: Space = s.parse().unwrap();
            assert_eq!(sp.to_string(), s);
        }
        assert!("h3".parse::<Space>().is_err());
        assert!("grid:2".parse::<Space>().is_err());
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let stream = RandomStream::new(3);
        for (k, name) in ["e2", "e3", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf"].iter().enumerate() {
            let s: Space = name.parse().unwrap();
            let sampler = BallSampler::new(&s, 4.0).unwrap();
            let mut rng = stream.split(k as u64).rng();
            for _ in 0..10_000 {
                let x = sampler.sample(&mut rng);
                let y = sampler.sample(&mut rng);
                let z = sampler.sample(&mut rng);
                let dxy = s.dist(&x, &y);
                assert!(dxy >= 0.0);
                assert!(close(dxy, s.dist(&y, &x), 1e-9));
                assert!(s.dist(&x, &x) < 1e-9);
                assert!(s.dist(&x, &z) <= dxy + s.dist(&y, &z) + 1e-9, "{name}");
            }
        }
        for name in ["grid:2:12", "tree:3:6"] {
            let s: Space = name.parse().unwrap();
            let w = s.graph_world().unwrap();
            let mut rng = stream.split(99).rng();
            for _ in 0..10_000 {
                let n = w.len() as u32;
                let (x, y, z) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
                let (x, y, z) = (Point::Vertex(x), Point::Vertex(y), Point::Vertex(z));
                assert_eq!(s.dist(&x, &y), s.dist(&y, &x));
                assert!(s.dist(&x, &z) <= s.dist(&x, &y) + s.dist(&y, &z));
                assert_eq!(s.dist(&x, &x), 0.0);
            }
        }
    }

    #[test]
    fn geodesics_have_constant_speed() {
        let stream = RandomStream::new(4);
        for (k, name) in ["e2", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf"].iter().enumerate() {
            let s: Space = name.parse().unwrap();
            let sampler = BallSampler::new(&s, 5.0).unwrap();
            let mut rng = stream.split(k as u64).rng();
            for _ in 0..2000 {
                let x = sampler.sample(&mut rng);
                let y = sampler.sample(&mut rng);
                let t: f64 = rng.random();
                let d = s.dist(&x, &y);
                let g = s.geodesic(&x, &y, t);
                assert!(close(s.dist(&x, &g), t * d, 1e-8 * (1.0 + d)), "{name}");
                let m = s.geodesic(&x, &y, 0.5);
                assert!(close(s.dist(&x, &m), s.dist(&y, &m), 1e-8 * (1.0 + d)));
            }
        }
    }

    #[test]
    fn translations_are_isometries() {
        let stream = RandomStream::new(5);
        for (k, name) in ["e3", "h2", "h2xh2:l2"].iter().enumerate() {
            let s: Space = name.parse().unwrap();
            let sampler = BallSampler::new(&s, 3.0).unwrap();
            let mut rng = stream.split(k as u64).rng();
            for _ in 0..500 {
                let to = sampler.sample(&mut rng);
                let a = sampler.sample(&mut rng);
                let b = sampler.sample(&mut rng);
                assert!(s.dist(&s.translate(&to, &s.origin), &to) < 1e-9);
                let d0 = s.dist(&a, &b);
                let d1 = s.dist(&s.translate(&to, &a), &s.translate(&to, &b));
                assert!(close(d0, d1, 1e-8 * (1.0 + d0)));
            }
        }
    }

    #[test]
    fn sphere_points_lie_on_sphere() {
        let mut rng = RandomStream::new(6).rng();
        for name in ["e2", "e3", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf"] {
            let s: Space = name.parse().unwrap();
            for _ in 0..100 {
                let p = s.sphere_point(2.5, &mut rng);
                assert!(close(s.radius(&p), 2.5, 1e-9), "{name}");
            }
        }
    }

    #[test]
    fn coords_round_trip() {
        let mut rng = RandomStream::new(8).rng();
        for name in ["e2", "h2", "h2xh2:l2", "grid:2:8"] {
            let s: Space = name.parse().unwrap();
            let p = if s.is_continuum() {
                s.sample_in_ball(2.0, &mut rng).unwrap()
            } else {
                Point::Vertex(5)
            };
            let q = Point::from_coords(&s, &p.coords(&s)).unwrap();
            assert!(s.dist(&p, &q) < 1e-9);
        }
    }
}
