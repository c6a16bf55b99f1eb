//! Marked Poisson process in a simulation window, and the Mecke self-test.
//!
//! On continuum backends the nuclei are a Poisson process of intensity
//! `lambda * vol` restricted to `B_R(o)`, each carrying an independent uniform
//! label. On graph backends every vertex of the window is a nucleus
//! independently with probability `min(lambda, 1)` (Bernoulli marking).

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{adaptive_simpson, BallSampler, Point, Space};
use crate::rng::RandomStream;
use crate::stats::Running;

/// Expected point counts above this are refused.
pub const MAX_EXPECTED_POINTS: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct MarkedPointSet {
    /// Sorted by distance from the origin.
    pub nuclei: Vec<Point>,
    pub labels: Vec<f64>,
    /// `radii[i] = d(o, nuclei[i])`, non-decreasing.
    pub radii: Vec<f64>,
    pub window_radius: f64,
    pub intensity: f64,
    pub seed_record: String,
    /// Exact radius ties that were resampled (continuum only).
    pub tie_resamples: usize,
    /// Whether the origin was inserted as an extra nucleus at index 0.
    pub palm: bool,
}

impl MarkedPointSet {
    pub fn len(&self) -> usize {
        self.nuclei.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nuclei.is_empty()
    }

    /// Build from explicit nuclei and labels (sorted internally). Used for
    /// crafted configurations and fixtures.
    pub fn from_parts(
        space: &Space,
        nuclei: Vec<Point>,
        labels: Vec<f64>,
        window_radius: f64,
        intensity: f64,
    ) -> Result<Self> {
        if nuclei.len() != labels.len() {
            return Err(invalid("nuclei and labels differ in length"));
        }
        if labels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(invalid("labels must lie in [0, 1]"));
        }
        let mut rows: Vec<(f64, Point, f64)> = Vec::with_capacity(nuclei.len());
        for (p, l) in nuclei.into_iter().zip(labels) {
            rows.push((space.distance(&space.origin, &p)?, p, l));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| vertex_key(&a.1).cmp(&vertex_key(&b.1))));
        Ok(Self {
            radii: rows.iter().map(|r| r.0).collect(),
            nuclei: rows.iter().map(|r| r.1).collect(),
            labels: rows.iter().map(|r| r.2).collect(),
            window_radius,
            intensity,
            seed_record: String::from("explicit"),
            tie_resamples: 0,
            palm: false,
        })
    }

    /// Palm version: the origin inserted as nucleus 0 with the given label.
    pub fn with_origin(&self, space: &Space, label: f64) -> Self {
        let mut out = self.clone();
        out.nuclei.insert(0, space.origin);
        out.labels.insert(0, label);
        out.radii.insert(0, 0.0);
        out.palm = true;
        out
    }

    pub fn to_document(&self, space: &Space) -> PointSetDocument {
        PointSetDocument {
            backend: space.to_string(),
            lambda: self.intensity,
            window: self.window_radius,
            nuclei: self.nuclei.iter().map(|p| p.coords(space)).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn to_json(&self, space: &Space) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document(space))?)
    }

    /// Parse a JSON document; returns the backend it names with the points.
    pub fn from_json(json: &str) -> Result<(Space, Self)> {
        let doc: PointSetDocument = serde_json::from_str(json)?;
        let space: Space = doc.backend.parse()?;
        let nuclei = doc
            .nuclei
            .iter()
            .map(|c| Point::from_coords(&space, c))
            .collect::<Result<Vec<_>>>()?;
        let set = Self::from_parts(&space, nuclei, doc.labels, doc.window, doc.lambda)?;
        Ok((space, set))
    }
}

fn vertex_key(p: &Point) -> u32 {
    match p {
        Point::Vertex(v) => *v,
        _ => 0,
    }
}

/// Serialized form of a [`MarkedPointSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSetDocument {
    pub backend: String,
    pub lambda: f64,
    pub window: f64,
    pub nuclei: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

/// Sample the marked process `Y^(lambda)` in `B_R(o)`.
pub fn sample_poisson(
    space: &Space,
    lambda: f64,
    window_radius: f64,
    stream: &RandomStream,
) -> Result<MarkedPointSet> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("intensity {lambda} must be positive")));
    }
    if !(window_radius > 0.0) {
        return Err(invalid(format!("window radius {window_radius} must be positive")));
    }
    let mut rng = stream.rng();
    if let Some(world) = space.graph_world() {
        let q = lambda.min(1.0);
        let mut rows: Vec<(f64, u32, f64)> = Vec::new();
        let dist = world.bfs(world.origin);
        for v in 0..world.len() as u32 {
            let d = dist[v as usize];
            let hit = rng.random::<f64>() < q;
            let label = rng.random::<f64>();
            if hit && (d as f64) <= window_radius {
                rows.push((d as f64, v, label));
            }
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        return Ok(MarkedPointSet {
            nuclei: rows.iter().map(|r| Point::Vertex(r.1)).collect(),
            labels: rows.iter().map(|r| r.2).collect(),
            radii: rows.iter().map(|r| r.0).collect(),
            window_radius,
            intensity: lambda,
            seed_record: stream.id(),
            tie_resamples: 0,
            palm: false,
        });
    }

    let expected = lambda * space.ball_volume(window_radius)?;
    if !(expected <= MAX_EXPECTED_POINTS) {
        return Err(Error::WindowTooLarge { expected });
    }
    let count = if expected > 0.0 {
        Poisson::new(expected)
            .map_err(|e| invalid(format!("poisson mean {expected}: {e}")))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let sampler = BallSampler::new(space, window_radius)?;
    let mut rows: Vec<(f64, Point, f64)> = Vec::with_capacity(count);
    for _ in 0..count {
        let p = sampler.sample(&mut rng);
        rows.push((space.radius(&p), p, rng.random::<f64>()));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Exact radius ties have probability zero; resample the later point.
    let mut tie_resamples = 0;
    loop {
        let tie = rows.windows(2).position(|w| w[0].0 == w[1].0);
        match tie {
            None => break,
            Some(i) => {
                let p = sampler.sample(&mut rng);
                rows[i + 1] = (space.radius(&p), p, rows[i + 1].2);
                tie_resamples += 1;
                rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
        }
    }
    Ok(MarkedPointSet {
        radii: rows.iter().map(|r| r.0).collect(),
        nuclei: rows.iter().map(|r| r.1).collect(),
        labels: rows.iter().map(|r| r.2).collect(),
        window_radius,
        intensity: lambda,
        seed_record: stream.id(),
        tie_resamples,
        palm: false,
    })
}

/// Grow a Poisson sample on `B_W(o)` to `B_new(o)` by adding an independent
/// Poisson sample on the shell between them. Existing points keep their
/// indices; the new ones follow in order of radius.
pub fn extend_poisson(
    space: &Space,
    set: &MarkedPointSet,
    new_window: f64,
    stream: &RandomStream,
) -> Result<MarkedPointSet> {
    if space.graph_world().is_some() {
        return Err(Error::Unsupported("window extension on graph backends".into()));
    }
    if set.palm {
        return Err(invalid("cannot extend a Palm sample"));
    }
    let inner = set.window_radius;
    if !(new_window > inner) {
        return Err(invalid(format!("new window {new_window} must exceed {inner}")));
    }
    let lambda = set.intensity;
    let expected = lambda * (space.ball_volume(new_window)? - space.ball_volume(inner)?).max(0.0);
    if !(expected + set.len() as f64 <= MAX_EXPECTED_POINTS) {
        return Err(Error::WindowTooLarge { expected });
    }
    let mut rng = stream.rng();
    let count = if expected > 0.0 {
        Poisson::new(expected)
            .map_err(|e| invalid(format!("poisson mean {expected}: {e}")))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let sampler = BallSampler::new(space, new_window)?;
    let mut rows: Vec<(f64, Point, f64)> = Vec::with_capacity(count);
    while rows.len() < count {
        let p = sampler.sample(&mut rng);
        let r = space.radius(&p);
        if r > inner {
            rows.push((r, p, rng.random::<f64>()));
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = set.clone();
    for (r, p, l) in rows {
        out.radii.push(r);
        out.nuclei.push(p);
        out.labels.push(l);
    }
    out.window_radius = new_window;
    Ok(out)
}

/// Test functions with known integrals for [`mecke_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TestFunction {
    /// `1_{B_t(o)}`.
    Indicator { radius: f64 },
    /// `exp(-d(o, y))`.
    ExpDecay,
    /// The constant `c`.
    Constant { value: f64 },
}

impl TestFunction {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            TestFunction::Indicator { radius } => {
                if r < radius {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::ExpDecay => (-r).exp(),
            TestFunction::Constant { value } => value,
        }
    }

    /// `lambda * integral of h over B_R(o)`; sums over vertices on graphs.
    pub fn analytic(&self, space: &Space, lambda: f64, window: f64) -> Result<f64> {
        if let Some(world) = space.graph_world() {
            let q = lambda.min(1.0);
            let dist = world.bfs(world.origin);
            let total: f64 = dist
                .iter()
                .filter(|&&d| (d as f64) <= window)
                .map(|&d| self.eval(d as f64))
                .sum();
            return Ok(q * total);
        }
        let f = |t: f64| space.ball_volume(t);
        Ok(lambda
            * match *self {
                TestFunction::Indicator { radius } => f(radius.min(window))?,
                TestFunction::Constant { value } => value * f(window)?,
                // Integration by parts: int_0^R e^{-r} dV(r).
                TestFunction::ExpDecay => {
                    let tail = adaptive_simpson(
                        |r| (-r).exp() * space.ball_volume(r).unwrap_or(0.0),
                        0.0,
                        window,
                        1e-10,
                    );
                    (-window).exp() * f(window)? + tail
                }
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeckeReport {
    pub empirical_mean: f64,
    pub analytic_value: f64,
    pub standard_error: f64,
    pub replicas: usize,
}

impl MeckeReport {
    /// Discrepancy in units of the standard error (0 when both agree to
    /// rounding, as for the deterministic full-intensity graph process).
    pub fn z_score(&self) -> f64 {
        let diff = (self.empirical_mean - self.analytic_value).abs();
        if diff <= 1e-12 * self.analytic_value.abs().max(1.0) {
            0.0
        } else {
            diff / self.standard_error
        }
    }
}

/// Compare the empirical mean of `sum_{y in Y} h(y)` against its Mecke value.
pub fn mecke_check(
    space: &Space,
    lambda: f64,
    window_radius: f64,
    h: TestFunction,
    replicas: usize,
    stream: &RandomStream,
) -> Result<MeckeReport> {
    if replicas == 0 {
        return Err(invalid("mecke check needs at least one replica"));
    }
    let mut acc = Running::default();
    for k in 0..replicas {
        let set = sample_poisson(space, lambda, window_radius, &stream.split(k as u64))?;
        acc.push(set.radii.iter().map(|&r| h.eval(r)).sum());
    }
    Ok(MeckeReport {
        empirical_mean: acc.mean(),
        analytic_value: h.analytic(space, lambda, window_radius)?,
        standard_error: acc.se(),
        replicas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn extension_matches_direct_counts() {
        let s: Space = "h2xh2:l2".parse().unwrap();
        let (lambda, w1, w2) = (0.3, 2.0, 3.0);
        let mut total = Running::default();
        for k in 0..300 {
            let set = sample_poisson(&s, lambda, w1, &RandomStream::new(k)).unwrap();
            let big = extend_poisson(&s, &set, w2, &RandomStream::new(10_000 + k)).unwrap();
            assert_eq!(&big.nuclei[..set.len()], &set.nuclei[..]);
            assert!(big.radii[set.len()..].iter().all(|&r| r > w1 && r <= w2));
            assert!(big.radii.windows(2).all(|w| w[0] < w[1]));
            total.push(big.len() as f64);
        }
        let mean = lambda * s.ball_volume(w2).unwrap();
        assert!((total.mean() - mean).abs() < 4.0 * (mean / 300.0).sqrt(), "{} vs {mean}", total.mean());
    }

    #[test]
    fn sorted_and_labelled() {
        let s = Space::hyperbolic2();
        let set = sample_poisson(&s, 0.5, 3.0, &RandomStream::new(1)).unwrap();
        assert_eq!(set.nuclei.len(), set.labels.len());
        assert!(set.radii.windows(2).all(|w| w[0] < w[1]));
        assert!(set.labels.iter().all(|l| (0.0..=1.0).contains(l)));
        for (p, r) in set.nuclei.iter().zip(&set.radii) {
            assert!((s.radius(p) - r).abs() < 1e-12 && *r <= 3.0);
        }
    }

    #[test]
    fn deterministic_given_stream() {
        let s = Space::euclidean(2).unwrap();
        let st = RandomStream::new(5).derive(&[2, 9]);
        let a = sample_poisson(&s, 1.0, 4.0, &st).unwrap();
        let b = sample_poisson(&s, 1.0, 4.0, &st).unwrap();
        assert_eq!(a.nuclei, b.nuclei);
        assert_eq!(a.labels, b.labels);
        let c = sample_poisson(&s, 1.0, 4.0, &st.split(0)).unwrap();
        assert_ne!(a.nuclei, c.nuclei);
    }

    #[test]
    fn mean_counts() {
        let s = Space::hyperbolic2();
        let r = mecke_check(&s, 0.5, 3.0, TestFunction::Constant { value: 1.0 }, 2000, &RandomStream::new(2)).unwrap();
        assert!((r.analytic_value - 28.49).abs() < 0.01);
        assert!(r.z_score() < 4.0, "{r:?}");
        let e = Space::euclidean(2).unwrap();
        let r = mecke_check(&e, 1.0, 1.0, TestFunction::Constant { value: 1.0 }, 4000, &RandomStream::new(3)).unwrap();
        assert!((r.analytic_value - PI).abs() < 1e-12);
        assert!(r.z_score() < 4.0, "{r:?}");
    }

    #[test]
    fn analytic_catalog_values() {
        let e = Space::euclidean(2).unwrap();
        let v = TestFunction::Indicator { radius: 1.0 }.analytic(&e, 2.0, 3.0).unwrap();
        assert!((v - 2.0 * PI).abs() < 1e-12);
        let h = Space::hyperbolic2();
        let v = TestFunction::Indicator { radius: 1.0 }.analytic(&h, 1.0, 3.0).unwrap();
        // 2 pi (cosh 1 - 1) = 3.41229...
        assert!((v - 2.0 * PI * (1f64.cosh() - 1.0)).abs() < 1e-12);
        assert!((v - 3.4123).abs() < 1e-4);
        // e2: int_{B_R} e^{-|y|} dy = 2 pi (1 - e^{-R}(1 + R)).
        let v = TestFunction::ExpDecay.analytic(&e, 1.0, 3.0).unwrap();
        let exact = 2.0 * PI * (1.0 - (-3f64).exp() * 4.0);
        assert!((v - exact).abs() < 1e-8);
        let zero = mecke_check(&e, 1.0, 2.0, TestFunction::Constant { value: 0.0 }, 5, &RandomStream::new(0)).unwrap();
        assert_eq!(zero.empirical_mean, 0.0);
        assert_eq!(zero.analytic_value, 0.0);
        assert_eq!(zero.z_score(), 0.0);
    }

    #[test]
    fn graph_bernoulli_marking() {
        let g: Space = "grid:2:16".parse().unwrap();
        let set = sample_poisson(&g, 1.0, 100.0, &RandomStream::new(4)).unwrap();
        assert_eq!(set.len(), 256);
        let set = sample_poisson(&g, 0.25, 100.0, &RandomStream::new(4)).unwrap();
        assert!(set.len() > 30 && set.len() < 100);
        assert!(set.radii.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn errors() {
        let s = Space::hyperbolic2();
        assert!(sample_poisson(&s, 0.0, 1.0, &RandomStream::new(0)).is_err());
        assert!(sample_poisson(&s, 1.0, -1.0, &RandomStream::new(0)).is_err());
        assert!(matches!(
            sample_poisson(&s, 1.0, 30.0, &RandomStream::new(0)),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let s: Space = "h2xh2:l2".parse().unwrap();
        let set = sample_poisson(&s, 1.0, 1.5, &RandomStream::new(9)).unwrap();
        let json = set.to_json(&s).unwrap();
        let (s2, back) = MarkedPointSet::from_json(&json).unwrap();
        assert_eq!(s2.to_string(), "h2xh2:l2");
        assert_eq!(back.len(), set.len());
        for (a, b) in back.nuclei.iter().zip(&set.nuclei) {
            assert!(s.dist(a, b) < 1e-9);
        }
        assert_eq!(back.labels, set.labels);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["backend", "lambda", "window", "nuclei", "labels"] {
            assert!(v.get(key).is_some());
        }
    }
}
