//! Cluster frequencies seen by a unit-ball random walk.
//!
//! The walk starts at the origin and moves to a uniform point of the open
//! unit ball around its current position. The frequency of a cluster is the
//! long-run fraction of time the walk spends in it; here it is the average
//! over a finite horizon.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{BallSampler, Point, Space};
use crate::parallel::try_map_indexed;
use crate::percolation::{prepare_replica, ClusterReport, TwoPointEstimate};
use crate::rng::{RandomStream, StreamRng};
use crate::stats::Running;
use crate::tessellation::{Tessellation, TessellationConfig};

/// Batches used for the batch-means standard error of a walk average.
pub const BATCHES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct WalkState {
    /// `R_0 = o, R_1, ..., R_n`.
    pub positions: Vec<Point>,
    /// The walk left the allowed radius and was cut at the previous step.
    pub truncated: bool,
}

impl WalkState {
    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }
}

/// `n` steps of the unit-ball walk from the origin.
pub fn walk(space: &Space, n: usize, rng: &mut StreamRng) -> Result<WalkState> {
    walk_within(space, n, f64::INFINITY, rng)
}

/// Like [`walk`], but stops with the truncation flag set at the first step
/// that would land farther than `limit` from the origin.
pub fn walk_within(space: &Space, n: usize, limit: f64, rng: &mut StreamRng) -> Result<WalkState> {
    if !space.is_continuum() {
        return Err(Error::Unsupported("random walks on graph backends".into()));
    }
    // Boundary draws are rejected so the step ball is open.
    let sampler = BallSampler::new(space, 1.0)?;
    let mut positions = Vec::with_capacity(n + 1);
    positions.push(space.origin);
    let mut cur = space.origin;
    for _ in 0..n {
        let step = loop {
            let u = sampler.sample(rng);
            if space.radius(&u) < 1.0 {
                break u;
            }
        };
        let next = space.translate(&cur, &step);
        if space.radius(&next) > limit {
            return Ok(WalkState {
                positions,
                truncated: true,
            });
        }
        positions.push(next);
        cur = next;
    }
    Ok(WalkState {
        positions,
        truncated: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterFrequency {
    pub cluster_id: u32,
    pub beta: f64,
    /// Batch-means standard error.
    pub se: f64,
}

/// Walk averages for one realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEstimate {
    pub n_steps: usize,
    /// Per kept walk, the visited clusters in increasing id.
    pub walks: Vec<Vec<ClusterFrequency>>,
    pub truncated: usize,
    /// Cluster of the origin's cell, if black.
    pub origin_cluster: Option<u32>,
    /// Largest `|beta_1 - beta_2|` over clusters, between the first two walks.
    pub agreement: f64,
    /// Largest ratio of that difference to its batch-means standard error.
    pub agreement_z: f64,
}

impl FrequencyEstimate {
    pub const CSV_HEADER: &'static str = "lambda,p,replica,cluster_id,beta_hat,n_steps,truncated";

    /// `beta` of a cluster on walk `w` (zero if not visited).
    pub fn beta(&self, w: usize, cluster: u32) -> f64 {
        self.walks[w]
            .iter()
            .find(|c| c.cluster_id == cluster)
            .map_or(0.0, |c| c.beta)
    }

    pub fn total(&self, w: usize) -> f64 {
        self.walks[w].iter().map(|c| c.beta).sum()
    }

    /// Frequency of the origin's cluster on walk `w` (zero when white).
    pub fn origin_beta(&self, w: usize) -> f64 {
        self.origin_cluster.map_or(0.0, |c| self.beta(w, c))
    }
}

/// Fraction of `R_1..R_n` in each cluster, per walk. Truncated walks are
/// excluded.
pub fn estimate_frequency(report: &ClusterReport, t: &Tessellation, walks: &[WalkState]) -> Result<FrequencyEstimate> {
    let kept: Vec<&WalkState> = walks.iter().filter(|w| !w.truncated).collect();
    if kept.is_empty() {
        return Err(Error::NoData("every walk was truncated".into()));
    }
    let n = kept[0].steps();
    if n == 0 || kept.iter().any(|w| w.steps() != n) {
        return Err(invalid("walks must share a positive horizon"));
    }
    let mut per_walk = Vec::with_capacity(kept.len());
    for w in &kept {
        let labels: Vec<Option<u32>> = w.positions[1..]
            .iter()
            .map(|x| report.label(t.cell_of(x)))
            .collect();
        per_walk.push(walk_frequencies(&labels));
    }
    let (mut agreement, mut agreement_z) = (0.0, 0.0);
    if per_walk.len() >= 2 {
        let ids: std::collections::BTreeSet<u32> =
            per_walk[0].iter().chain(&per_walk[1]).map(|c| c.cluster_id).collect();
        for id in ids {
            let get = |w: &[ClusterFrequency]| w.iter().find(|c| c.cluster_id == id).map_or((0.0, 0.0), |c| (c.beta, c.se));
            let (b1, s1) = get(&per_walk[0]);
            let (b2, s2) = get(&per_walk[1]);
            let diff = (b1 - b2).abs();
            agreement = f64::max(agreement, diff);
            let se = (s1 * s1 + s2 * s2).sqrt();
            let z = if se > 0.0 {
                diff / se
            } else if diff > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            agreement_z = f64::max(agreement_z, z);
        }
    }
    Ok(FrequencyEstimate {
        n_steps: n,
        walks: per_walk,
        truncated: walks.len() - kept.len(),
        origin_cluster: report.label(t.cell_of(&t.space.origin)),
        agreement,
        agreement_z,
    })
}

/// Per-cluster visit fractions with batch-means errors.
fn walk_frequencies(labels: &[Option<u32>]) -> Vec<ClusterFrequency> {
    let n = labels.len();
    let mut ids: Vec<u32> = labels.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let batches = BATCHES.min(n);
    let size = n / batches;
    ids.into_iter()
        .map(|id| {
            let hits = labels.iter().filter(|&&l| l == Some(id)).count();
            let means: Running = (0..batches)
                .map(|b| {
                    let chunk = &labels[b * size..(b + 1) * size];
                    chunk.iter().filter(|&&l| l == Some(id)).count() as f64 / size as f64
                })
                .collect();
            ClusterFrequency {
                cluster_id: id,
                beta: hits as f64 / n as f64,
                se: if batches > 1 { means.se() } else { 0.0 },
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LroCheck {
    pub mean_origin_beta: f64,
    pub se: f64,
    /// Smallest tested two-point value.
    pub delta: f64,
    pub replicas: usize,
}

impl LroCheck {
    pub fn passes(&self) -> bool {
        self.mean_origin_beta >= self.delta - 3.0 * self.se
    }
}

/// Long-range order forces a positive frequency for the origin's cluster:
/// the mean of `beta(C_o)` over realizations is at least `min tau(x, y)`.
pub fn lro_frequency_bound(freqs: &[FrequencyEstimate], twopoint: &TwoPointEstimate) -> Result<LroCheck> {
    if freqs.is_empty() {
        return Err(Error::NoData("no frequency estimates".into()));
    }
    let delta = twopoint
        .hits
        .iter()
        .map(|h| h.estimate())
        .fold(f64::INFINITY, f64::min);
    let r: Running = freqs.iter().map(|f| f.origin_beta(0)).collect();
    Ok(LroCheck {
        mean_origin_beta: r.mean(),
        se: if freqs.len() > 1 { r.se() } else { 0.0 },
        delta: if delta.is_finite() { delta } else { 0.0 },
        replicas: freqs.len(),
    })
}

/// Settings for [`frequency_run`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyConfig {
    pub lambda: f64,
    pub p: f64,
    pub n_steps: usize,
    /// Walks are cut beyond this radius; clusters are computed inside it.
    pub walk_radius: f64,
    /// Nuclei window.
    pub window: f64,
    pub walks: usize,
    /// Extra steps burnt before averaging, for the horizon-shift check.
    pub shift: usize,
}

impl FrequencyConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lambda > 0.0) {
            errs.push(format!("lambda {} must be positive", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.p) {
            errs.push(format!("p {} outside [0, 1]", self.p));
        }
        if self.n_steps == 0 {
            errs.push("n_steps must be positive".into());
        }
        if !(self.walk_radius > 0.0 && self.window > self.walk_radius) {
            errs.push("need 0 < walk_radius < window".into());
        }
        if self.walks < 2 {
            errs.push("at least two walks per realization".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// One realization: the plain estimate and the one after dropping the first
/// `shift` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReplica {
    pub estimate: Option<FrequencyEstimate>,
    pub shifted: Option<FrequencyEstimate>,
    pub discarded: bool,
}

/// Walks on independent realizations. Each realization is clipped to the
/// ball of radius `walk_radius`.
pub fn frequency_run(
    space: &Space,
    cfg: &FrequencyConfig,
    replicas: usize,
    stream: &RandomStream,
) -> Result<Vec<FrequencyReplica>> {
    cfg.validate()?;
    let config = TessellationConfig::ball(cfg.walk_radius).clipped().without_certificates();
    try_map_indexed(replicas, |k| -> Result<_> {
        let s = stream.split(k as u64);
        let Some(rep) = prepare_replica(space, cfg.lambda, config, cfg.window, &s)? else {
            return Ok(FrequencyReplica {
                estimate: None,
                shifted: None,
                discarded: true,
            });
        };
        let report = rep.clusters(cfg.p);
        let mut walks = Vec::with_capacity(cfg.walks);
        for w in 0..cfg.walks {
            let mut rng = s.derive(&[2, w as u64]).rng();
            walks.push(walk_within(space, cfg.n_steps + cfg.shift, cfg.walk_radius, &mut rng)?);
        }
        let head: Vec<WalkState> = walks
            .iter()
            .map(|w| WalkState {
                positions: w.positions[..w.positions.len().min(cfg.n_steps + 1)].to_vec(),
                truncated: w.truncated,
            })
            .collect();
        let tail: Vec<WalkState> = walks
            .iter()
            .map(|w| WalkState {
                positions: w.positions[cfg.shift.min(w.positions.len() - 1)..].to_vec(),
                truncated: w.truncated,
            })
            .collect();
        let estimate = estimate_frequency(&report, &rep.t, &head).ok();
        let shifted = if cfg.shift > 0 {
            estimate_frequency(&report, &rep.t, &tail).ok()
        } else {
            None
        };
        Ok(FrequencyReplica {
            discarded: estimate.is_none(),
            estimate,
            shifted,
        })
    })
}
