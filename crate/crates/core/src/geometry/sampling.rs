//! Uniform sampling from balls about the origin.

use rand::Rng;
use std::f64::consts::TAU;

use super::{hyperbolic, PNorm, Point, Space, SpaceKind};
use crate::error::{invalid, Error, Result};

/// Product balls above this radius use the stratified sampler.
const REJECTION_MAX_RADIUS: f64 = 6.0;
const STRATA: usize = 1024;

/// Radius of a uniform point in a hyperbolic disk of radius `t`, by inverting
/// the radial CDF `(cosh r - 1) / (cosh t - 1)`.
#[inline]
pub(crate) fn h2_radius(u: f64, cosh_t_minus_1: f64) -> f64 {
    2.0 * (0.5 * u * cosh_t_minus_1).sqrt().asinh()
}

pub(crate) fn random_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> [f64; 3] {
    match dim {
        1 => [if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0, 0.0],
        2 => {
            let (s, c) = (rng.random::<f64>() * TAU).sin_cos();
            [c, s, 0.0]
        }
        _ => {
            let z = 2.0 * rng.random::<f64>() - 1.0;
            let phi = rng.random::<f64>() * TAU;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            [rho * phi.cos(), rho * phi.sin(), z]
        }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Euclidean { dim: usize },
    Hyperbolic { cosh_t_minus_1: f64 },
    ProductRejection { norm: PNorm, cosh_t_minus_1: f64 },
    ProductStratified { norm: PNorm, strata: Strata },
}

/// Piecewise-constant envelope over the first factor radius. The marginal
/// density `sinh(r) (cosh(rho(r)) - 1)` has `sinh` increasing and the co-radius
/// `rho` decreasing, so `sinh(b) (cosh(rho(a)) - 1)` bounds it on `[a, b]` and
/// thinning against it is exact.
#[derive(Clone, Debug)]
struct Strata {
    edges: Vec<f64>,
    bound: Vec<f64>,
    cumulative: Vec<f64>,
}

/// Reusable uniform sampler on `B_t(o)` for a continuum backend.
#[derive(Clone, Debug)]
pub struct BallSampler {
    t: f64,
    kind: Kind,
}

impl BallSampler {
    pub fn new(space: &Space, t: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(invalid(format!("sampling radius {t} must be positive")));
        }
        let kind = match &space.kind {
            SpaceKind::Euclidean { dim } => Kind::Euclidean { dim: *dim },
            SpaceKind::Hyperbolic2 => Kind::Hyperbolic {
                cosh_t_minus_1: t.cosh() - 1.0,
            },
            SpaceKind::ProductH2 { norm } => {
                if t <= REJECTION_MAX_RADIUS || *norm == PNorm::LInf {
                    Kind::ProductRejection {
                        norm: *norm,
                        cosh_t_minus_1: t.cosh() - 1.0,
                    }
                } else {
                    Kind::ProductStratified {
                        norm: *norm,
                        strata: Strata::new(*norm, t),
                    }
                }
            }
            SpaceKind::Graph(_) => {
                return Err(Error::Unsupported(
                    "ball sampling on graph backends; use vertex marking".into(),
                ))
            }
        };
        Ok(Self { t, kind })
    }

    pub fn radius(&self) -> f64 {
        self.t
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match &self.kind {
            Kind::Euclidean { dim } => {
                let r = self.t * rng.random::<f64>().powf(1.0 / *dim as f64);
                let d = random_direction(*dim, rng);
                Point::Euclidean([r * d[0], r * d[1], r * d[2]])
            }
            Kind::Hyperbolic { cosh_t_minus_1 } => {
                let r = h2_radius(rng.random(), *cosh_t_minus_1);
                Point::Hyperbolic(hyperbolic::polar(r, rng.random::<f64>() * TAU))
            }
            Kind::ProductRejection {
                norm,
                cosh_t_minus_1,
            } => loop {
                let r1 = h2_radius(rng.random(), *cosh_t_minus_1);
                let r2 = h2_radius(rng.random(), *cosh_t_minus_1);
                if norm.combine(r1, r2) <= self.t {
                    return product_point(r1, r2, rng);
                }
            },
            Kind::ProductStratified { norm, strata } => {
                let r1 = strata.sample(*norm, self.t, rng);
                let rho = norm.co_radius(self.t, r1);
                let r2 = h2_radius(rng.random(), rho.cosh() - 1.0);
                product_point(r1, r2, rng)
            }
        }
    }
}

fn product_point<R: Rng + ?Sized>(r1: f64, r2: f64, rng: &mut R) -> Point {
    Point::Product(
        hyperbolic::polar(r1, rng.random::<f64>() * TAU),
        hyperbolic::polar(r2, rng.random::<f64>() * TAU),
    )
}

fn marginal(norm: PNorm, t: f64, r: f64) -> f64 {
    r.sinh() * (norm.co_radius(t, r).cosh() - 1.0)
}

impl Strata {
    fn new(norm: PNorm, t: f64) -> Self {
        let edges: Vec<f64> = (0..=STRATA).map(|i| t * i as f64 / STRATA as f64).collect();
        let mut bound = Vec::with_capacity(STRATA);
        let mut cumulative = Vec::with_capacity(STRATA);
        let mut acc = 0.0;
        for w in edges.windows(2) {
            let b = w[1].sinh() * (norm.co_radius(t, w[0]).cosh() - 1.0);
            bound.push(b);
            acc += b * (w[1] - w[0]);
            cumulative.push(acc);
        }
        Self {
            edges,
            bound,
            cumulative,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, norm: PNorm, t: f64, rng: &mut R) -> f64 {
        let total = *self.cumulative.last().unwrap();
        loop {
            let u = rng.random::<f64>() * total;
            let k = self.cumulative.partition_point(|&c| c <= u).min(STRATA - 1);
            let (a, b) = (self.edges[k], self.edges[k + 1]);
            let r = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>() * self.bound[k] <= marginal(norm, t, r) {
                return r;
            }
        }
    }
}
