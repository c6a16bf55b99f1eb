//! Quick installation checks: geometry, the Mecke identity, and the
//! flood-fill oracle against witness clusters.

use crate::geometry::{fit_growth, monte_carlo_volume, Space};
use crate::parallel::try_map_indexed;
use crate::percolation::{clusters, color, oracle_clusters, prepare_replica};
use crate::pointprocess::{mecke_check, TestFunction};
use crate::rng::RandomStream;
use crate::tessellation::TessellationConfig;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} [{}] {}: {}", self.suite, self.name, self.detail)
    }
}

const CONTINUUM: &[&str] = &["e2", "h2", "h2xh2:l2"];

pub fn geometry(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let stream = RandomStream::new(seed).split(0);
    for (i, name) in CONTINUUM.iter().enumerate() {
        let space: Space = name.parse()?;
        for (j, t) in [1.0, 2.0].into_iter().enumerate() {
            let mut rng = stream.derive(&[i as u64, j as u64]).rng();
            let (v, se) = monte_carlo_volume(&space, t, 1_000_000, &mut rng)?;
            let exact = space.ball_volume(t)?;
            let rel = (v - exact).abs() / exact;
            out.push(Check {
                suite: "geometry",
                name: format!("{name} ball volume t={t}"),
                passed: rel <= 0.01,
                detail: format!("monte carlo {v:.4} +- {se:.4}, formula {exact:.4}, rel err {rel:.4}"),
            });
        }
    }
    let grid: Vec<f64> = (0..21).map(|k| 5.0 + 0.5 * k as f64).collect();
    let g = fit_growth(&Space::hyperbolic2(), &grid)?;
    out.push(Check {
        suite: "geometry",
        name: "h2 growth rate".into(),
        passed: (g.a - 1.0).abs() <= 0.05,
        detail: format!("a = {:.4}", g.a),
    });
    Ok(out)
}

pub fn mecke(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let stream = RandomStream::new(seed).split(1);
    let catalog = [
        TestFunction::Indicator { radius: 1.0 },
        TestFunction::ExpDecay,
        TestFunction::Constant { value: 1.0 },
    ];
    for (i, name) in CONTINUUM.iter().chain(["grid:2:32"].iter()).enumerate() {
        let space: Space = name.parse()?;
        let window = if space.is_continuum() { 2.0 } else { 10.0 };
        for (j, h) in catalog.iter().enumerate() {
            let r = mecke_check(&space, 1.0, window, *h, 400, &stream.derive(&[i as u64, j as u64]))?;
            out.push(Check {
                suite: "mecke",
                name: format!("{name} {h:?}"),
                passed: r.z_score() <= 3.0,
                detail: format!(
                    "mean {:.4}, analytic {:.4}, z {:.2}",
                    r.empirical_mean,
                    r.analytic_value,
                    r.z_score()
                ),
            });
        }
    }
    Ok(out)
}

pub fn oracle(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let stream = RandomStream::new(seed).split(2);
    for (i, (name, r, n)) in [("e2", 3.0, 6usize), ("h2", 2.0, 6), ("h2xh2:l2", 1.0, 2)].into_iter().enumerate() {
        let space: Space = name.parse()?;
        let window = r + 4.0 * space.radius_for_volume(1.0)?;
        let cfg = TessellationConfig::ball(r).clipped().without_certificates();
        let per = try_map_indexed(n, |k| -> Result<(usize, usize)> {
            let Some(rep) = prepare_replica(&space, 1.0, cfg, window, &stream.derive(&[i as u64, k as u64]))? else {
                return Ok((0, 0));
            };
            let mut bad = 0;
            for p in [0.3, 0.5, 0.7] {
                let black = color(&rep.t, p);
                let cl = clusters(&rep.adj, &black)?;
                let or = oracle_clusters(&rep.t, &black, &rep.adj.witnesses)?;
                bad += or.disagreements(&cl).len();
            }
            Ok((1, bad))
        })?;
        let used: usize = per.iter().map(|x| x.0).sum();
        let bad: usize = per.iter().map(|x| x.1).sum();
        out.push(Check {
            suite: "oracle",
            name: format!("{name} partitions"),
            passed: bad == 0 && used > 0,
            detail: format!("{used} configurations, {bad} disagreeing cells"),
        });
    }
    Ok(out)
}

/// Every suite, in order.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut out = geometry(seed)?;
    out.extend(mecke(seed)?);
    out.extend(oracle(seed)?);
    Ok(out)
}
