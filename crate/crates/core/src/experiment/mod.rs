//! Declarative experiment runs: a JSON spec in, a bundle of CSV files and a
//! manifest out.
//!
//! Every (estimator, lambda, p) grid point draws from its own sub-stream of
//! the master seed and rows are written in grid order, so a bundle depends
//! only on the spec and never on the worker count.

mod plot;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorgraph::{factorgraph_run, FactorGraph};
use crate::frequency::{frequency_run, FrequencyConfig, FrequencyEstimate};
use crate::geometry::Space;
use crate::percolation::{
    antipodal_pair, estimate_pc, two_point, uniqueness_proxy, window_for, PcWindow, PercolationParams,
    ThresholdEstimate, TwoPointEstimate, UniquenessReport,
};
use crate::rng::RandomStream;
use crate::tessellation::{touching_probe, TessellationConfig, TouchingConfig, TouchingReport};
use crate::thickening::{thickening_run, ThickeningViolations};

pub use plot::{plot, CURVES};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Touching,
    Twopoint,
    Threshold,
    Uniqueness,
    Frequency,
    Thickening,
    Factorgraph,
}

impl Estimator {
    pub fn file(self) -> &'static str {
        match self {
            Estimator::Touching => "touching.csv",
            Estimator::Twopoint => "twopoint.csv",
            Estimator::Threshold => "threshold.csv",
            Estimator::Uniqueness => "uniqueness.csv",
            Estimator::Frequency => "frequency.csv",
            Estimator::Thickening => "thickening.csv",
            Estimator::Factorgraph => "factorgraph.csv",
        }
    }

    pub fn header(self) -> &'static str {
        match self {
            Estimator::Touching => TouchingReport::CSV_HEADER,
            Estimator::Twopoint => TwoPointEstimate::CSV_HEADER,
            Estimator::Threshold => ThresholdEstimate::CSV_HEADER,
            Estimator::Uniqueness => UniquenessReport::CSV_HEADER,
            Estimator::Frequency => FrequencyEstimate::CSV_HEADER,
            Estimator::Thickening => ThickeningViolations::CSV_HEADER,
            Estimator::Factorgraph => FactorGraph::CSV_HEADER,
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

/// Radii of an experiment. `r_out` also bounds frequency walks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Windows {
    /// Sampling window; derived from the intensity when absent.
    pub r_sim: Option<f64>,
    pub r_in: f64,
    pub r_out: f64,
    /// Touching radius and thickening scale.
    pub r: f64,
    /// Wall thickness for touching.
    pub d: f64,
    /// Use a left-right crossing of `[-h, h]^2` for thresholds (e2 only).
    pub square: Option<f64>,
}

impl Default for Windows {
    fn default() -> Self {
        Self {
            r_sim: None,
            r_in: 0.5,
            r_out: 2.0,
            r: 1.0,
            d: 0.0,
            square: None,
        }
    }
}

fn default_alphas() -> Vec<f64> {
    vec![1.0 / 3.0]
}

fn default_steps() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub preset: Option<String>,
    pub backend: String,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub ps: Vec<f64>,
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub windows: Windows,
    pub replicas: usize,
    #[serde(default)]
    pub probe_density: Option<f64>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Walk horizon for frequencies.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Named specs for the standard probes.
pub const PRESETS: &[&str] = &[
    "touching-higher-rank",
    "touching-rank-one",
    "pu-proxy",
    "degree-vs-lambda",
    "sparse-graph",
    "threshold-e2",
];

impl ExperimentSpec {
    pub fn preset(name: &str) -> Result<Self> {
        let base = |backend: &str, lambdas: Vec<f64>, ps: Vec<f64>, est: Estimator, replicas: usize| ExperimentSpec {
            name: name.to_string(),
            preset: Some(name.to_string()),
            backend: backend.to_string(),
            lambdas,
            ps,
            estimators: vec![est],
            windows: Windows::default(),
            replicas,
            probe_density: None,
            alphas: default_alphas(),
            steps: default_steps(),
            seed: 0,
            out: None,
        };
        let grid = |a: f64, b: f64, n: usize| -> Vec<f64> {
            (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
        };
        let touching = [0.5, 0.2, 0.1, 0.05].to_vec();
        let mut spec = match name {
            "touching-higher-rank" => base("h2xh2:l2", touching, vec![], Estimator::Touching, 300),
            "touching-rank-one" => base("h2", touching, vec![], Estimator::Touching, 300),
            "pu-proxy" => base("h2", vec![1.0, 0.3, 0.1], grid(0.5, 0.9, 5), Estimator::Uniqueness, 100),
            "degree-vs-lambda" => base("h2", vec![1.0, 0.3, 0.1], vec![0.8], Estimator::Factorgraph, 300),
            "sparse-graph" => base("grid:2:128", vec![0.05], grid(0.2, 1.0, 5), Estimator::Factorgraph, 50),
            "threshold-e2" => base("e2", vec![1.0], grid(0.3, 0.7, 11), Estimator::Threshold, 200),
            _ => {
                return Err(Error::Validation(vec![format!(
                    "unknown preset {name:?}; known: {}",
                    PRESETS.join(", ")
                )]))
            }
        };
        match name {
            "touching-higher-rank" | "touching-rank-one" => spec.windows.d = 0.1,
            "degree-vs-lambda" => spec.windows.r_out = 3.0,
            "sparse-graph" => {
                spec.windows.r_in = 4.0;
                spec.windows.r_out = 24.0;
            }
            "threshold-e2" => spec.windows.square = Some(20.0),
            _ => {}
        }
        Ok(spec)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(json)?;
        // A preset supplies defaults for every field the document omits.
        if let Some(name) = raw.get("preset").and_then(|v| v.as_str()) {
            let mut merged = serde_json::to_value(Self::preset(name)?)?;
            if let (Some(m), Some(r)) = (merged.as_object_mut(), raw.as_object()) {
                for (k, v) in r {
                    if k == "windows" {
                        if let (Some(mw), Some(rw)) = (m.get_mut("windows").and_then(|w| w.as_object_mut()), v.as_object()) {
                            for (wk, wv) in rw {
                                mw.insert(wk.clone(), wv.clone());
                            }
                            continue;
                        }
                    }
                    m.insert(k.clone(), v.clone());
                }
            }
            return Ok(serde_json::from_value(merged)?);
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn space(&self) -> Result<Space> {
        self.backend.parse()
    }

    /// All field problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let space = match self.space() {
            Ok(s) => Some(s),
            Err(e) => {
                errs.push(format!("backend: {e}"));
                None
            }
        };
        if self.name.trim().is_empty() {
            errs.push("name: must not be empty".into());
        }
        if self.lambdas.is_empty() {
            errs.push("lambdas: grid is empty".into());
        }
        if self.lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            errs.push("lambdas: intensities must be positive".into());
        }
        if self.ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            errs.push("ps: values must lie in [0, 1]".into());
        }
        if self.estimators.is_empty() {
            errs.push("estimators: nothing to run".into());
        }
        if self.replicas == 0 {
            errs.push("replicas: must be at least 1".into());
        }
        let needs_p = self.estimators.iter().any(|e| *e != Estimator::Touching);
        if needs_p && self.ps.is_empty() {
            errs.push("ps: grid is empty".into());
        }
        if self.estimators.contains(&Estimator::Threshold)
            && (self.ps.len() < 2 || self.ps.windows(2).any(|w| !(w[0] < w[1])))
        {
            errs.push("ps: threshold estimation needs an increasing grid of at least two points".into());
        }
        let w = &self.windows;
        if !(w.r_in >= 0.0 && w.r_out > w.r_in) {
            errs.push(format!("windows: need 0 <= R_in < R_out (got {} and {})", w.r_in, w.r_out));
        }
        if !(w.r > 0.0) || !(w.d >= 0.0) {
            errs.push("windows: need R > 0 and D >= 0".into());
        }
        if let Some(h) = w.square {
            if !(h > 0.0) {
                errs.push("windows: square half-width must be positive".into());
            }
            if !self.backend.eq_ignore_ascii_case("e2") {
                errs.push("windows: square crossings need the e2 backend".into());
            }
        }
        if let (Some(s), Some(r_sim)) = (&space, w.r_sim) {
            for &l in &self.lambdas {
                if let Ok(margin) = window_for(s, l, 0.0) {
                    if w.r_out > r_sim - margin {
                        errs.push(format!(
                            "windows: R_out {} exceeds the interior radius {:.3} of R_sim at lambda {l}",
                            w.r_out,
                            r_sim - margin
                        ));
                        break;
                    }
                }
            }
        }
        if let Some(d) = self.probe_density {
            if !(d > 0.0) {
                errs.push("probe_density: must be positive".into());
            }
        }
        if self.estimators.contains(&Estimator::Thickening)
            && (self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a <= 2.0 / 3.0)))
        {
            errs.push("alphas: thickening parameters must lie in (0, 2/3]".into());
        }
        if let Some(s) = &space {
            for e in &self.estimators {
                let continuum_only = matches!(e, Estimator::Touching | Estimator::Frequency);
                if continuum_only && !s.is_continuum() {
                    errs.push(format!("estimators: {e:?} needs a continuum backend"));
                }
            }
        }
        if self.estimators.contains(&Estimator::Frequency) && self.steps == 0 {
            errs.push("steps: walk horizon must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub file: String,
    pub rows: usize,
    pub replicas: usize,
    pub discarded: usize,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub preset: Option<String>,
    pub backend: String,
    pub seed: u64,
    pub version: String,
    pub complete: bool,
    pub files: Vec<FileRecord>,
    pub spec: ExperimentSpec,
}

impl Manifest {
    pub fn read(bundle: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(bundle.join(MANIFEST))?)?)
    }

    pub fn discard_rate(&self, file: &str) -> Option<f64> {
        let f = self.files.iter().find(|f| f.file == file)?;
        (f.replicas > 0).then(|| f.discarded as f64 / f.replicas as f64)
    }
}

/// CSV text of one estimator: header, rows, trailing newline.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub estimator: Estimator,
    pub rows: Vec<String>,
    pub replicas: usize,
    pub discarded: usize,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(self.estimator.header());
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

/// Run every estimator of `spec` in memory.
pub fn run_tables(spec: &ExperimentSpec) -> Result<Vec<Result<Table>>> {
    spec.validate()?;
    let space = spec.space()?;
    let root = RandomStream::new(spec.seed);
    let mut estimators = spec.estimators.clone();
    estimators.sort();
    estimators.dedup();
    Ok(estimators
        .into_iter()
        .map(|e| run_estimator(spec, &space, e, &root.split(e.code())))
        .collect())
}

fn sim_window(spec: &ExperimentSpec, space: &Space, lambda: f64) -> Result<f64> {
    match spec.windows.r_sim {
        Some(w) => Ok(w),
        None => window_for(space, lambda, spec.windows.r_out),
    }
}

fn run_estimator(spec: &ExperimentSpec, space: &Space, e: Estimator, stream: &RandomStream) -> Result<Table> {
    let w = spec.windows;
    let n = spec.replicas;
    let mut table = Table {
        estimator: e,
        rows: Vec::new(),
        replicas: 0,
        discarded: 0,
    };
    for (i, &lambda) in spec.lambdas.iter().enumerate() {
        let at = |j: usize| stream.derive(&[i as u64, j as u64]);
        match e {
            Estimator::Touching => {
                let mut cfg = TouchingConfig::auto(space, lambda, w.r, w.d)?;
                if let Some(d) = spec.probe_density {
                    cfg.probe_density = d;
                }
                let s = touching_probe(space, &cfg, n, &at(0))?;
                table.replicas += n;
                table.discarded += s.discarded;
                table.rows.extend(s.reports.iter().map(|r| r.csv_row()));
            }
            Estimator::Threshold => {
                let window = match w.square {
                    Some(half) => PcWindow::Square { half },
                    None => PcWindow::Annulus {
                        r_in: w.r_in,
                        r_out: w.r_out,
                    },
                };
                let est = estimate_pc(space, lambda, window, &spec.ps, n, &at(0))?;
                table.replicas += est.replicas;
                table.discarded += est.discarded;
                table.rows.extend(est.csv_rows());
            }
            Estimator::Uniqueness => {
                let rep = uniqueness_proxy(space, lambda, &spec.ps, w.r_in, w.r_out, n, &at(0))?;
                table.replicas += rep.replicas;
                table.discarded += rep.discarded;
                table.rows.extend(rep.csv_rows());
            }
            Estimator::Twopoint => {
                // Antipodal pairs at separations 2 R_in and 2 R_out about the origin.
                let pairs: Vec<_> = [w.r_in, w.r_out]
                    .iter()
                    .filter(|&&r| r > 0.0)
                    .filter_map(|&r| antipodal_pair(space, r))
                    .collect();
                let window = match w.r_sim {
                    Some(r) => r,
                    None => window_for(space, lambda, 0.0)? + w.r_out + 0.5,
                };
                for (j, &p) in spec.ps.iter().enumerate() {
                    let params = PercolationParams { lambda, p, window };
                    let est = two_point(space, params, &pairs, n, &at(j))?;
                    table.replicas += est.replicas;
                    table.discarded += est.discarded;
                    table.rows.extend(est.csv_rows());
                }
            }
            Estimator::Frequency => {
                let window = sim_window(spec, space, lambda)?;
                for (j, &p) in spec.ps.iter().enumerate() {
                    let cfg = FrequencyConfig {
                        lambda,
                        p,
                        n_steps: spec.steps,
                        walk_radius: w.r_out,
                        window,
                        walks: 2,
                        shift: spec.steps / 10,
                    };
                    let reps = frequency_run(space, &cfg, n, &at(j))?;
                    table.replicas += n;
                    for (k, r) in reps.iter().enumerate() {
                        let Some(est) = &r.estimate else {
                            table.discarded += 1;
                            continue;
                        };
                        if est.walks[0].is_empty() {
                            table.rows.push(format!("{lambda},{p},{k},-,0,{},{}", est.n_steps, est.truncated));
                        }
                        for c in &est.walks[0] {
                            table.rows.push(format!(
                                "{lambda},{p},{k},{},{},{},{}",
                                c.cluster_id, c.beta, est.n_steps, est.truncated
                            ));
                        }
                    }
                }
            }
            Estimator::Thickening => {
                let window = sim_window(spec, space, lambda)?;
                let mut cfg = TessellationConfig::ball(w.r_out).clipped().without_certificates();
                if let Some(d) = spec.probe_density {
                    cfg = cfg.with_density(d);
                }
                for (j, &p) in spec.ps.iter().enumerate() {
                    let reps = thickening_run(space, lambda, p, w.r, &spec.alphas, cfg, window, n, &at(j))?;
                    table.replicas += n;
                    for (k, r) in reps.iter().enumerate() {
                        let Some(vs) = r else {
                            table.discarded += 1;
                            continue;
                        };
                        for (a, v) in spec.alphas.iter().zip(vs) {
                            table.rows.push(format!(
                                "{lambda},{p},{},{a},{k},{},{},{},{}",
                                w.r, v.nesting, v.overlap, v.ball, v.probes
                            ));
                        }
                    }
                }
            }
            Estimator::Factorgraph => {
                for (j, &p) in spec.ps.iter().enumerate() {
                    let rows = factorgraph_run(space, lambda, p, w.r_in, w.r_out, n, &at(j))?;
                    table.replicas += n;
                    for (k, r) in rows.iter().enumerate() {
                        table.discarded += r.discarded as usize;
                        table.rows.push(format!(
                            "{},{lambda},{p},{k},{},{},{}",
                            spec.backend, r.deg_root, r.crossing_components, r.discarded as u8
                        ));
                    }
                }
            }
        }
    }
    Ok(table)
}

/// Execute `spec` and write the bundle into `out` (created if needed).
pub fn run(spec: &ExperimentSpec, out: &Path) -> Result<Manifest> {
    let tables = run_tables(spec)?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut complete = true;
    let mut estimators = spec.estimators.clone();
    estimators.sort();
    estimators.dedup();
    for (e, t) in estimators.into_iter().zip(tables) {
        match t {
            Ok(t) => {
                fs::write(out.join(e.file()), t.to_csv())?;
                files.push(FileRecord {
                    file: e.file().to_string(),
                    rows: t.rows.len(),
                    replicas: t.replicas,
                    discarded: t.discarded,
                    error: None,
                });
            }
            Err(err) => {
                complete = false;
                files.push(FileRecord {
                    file: e.file().to_string(),
                    rows: 0,
                    replicas: 0,
                    discarded: 0,
                    error: Some(err.to_string()),
                });
            }
        }
    }
    let manifest = Manifest {
        name: spec.name.clone(),
        preset: spec.preset.clone(),
        backend: spec.backend.clone(),
        seed: spec.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        complete,
        files,
        spec: spec.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(out.join(MANIFEST), json)?;
    Ok(manifest)
}

/// Rows of a bundle CSV as string fields, header excluded.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::NoData(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

/// One line per file for terminal output.
pub fn summary(m: &Manifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} ({}), seed {}", m.name, m.backend, m.seed);
    for f in &m.files {
        match &f.error {
            Some(e) => {
                let _ = writeln!(s, "  {}: failed: {e}", f.file);
            }
            None => {
                let _ = writeln!(s, "  {}: {} rows, {} of {} replicas discarded", f.file, f.rows, f.discarded, f.replicas);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentSpec {
        ExperimentSpec {
            name: "small".into(),
            preset: None,
            backend: "e2".into(),
            lambdas: vec![1.0],
            ps: vec![0.5],
            estimators: vec![Estimator::Factorgraph, Estimator::Uniqueness],
            windows: Windows {
                r_in: 0.5,
                r_out: 1.5,
                ..Windows::default()
            },
            replicas: 1,
            probe_density: None,
            alphas: default_alphas(),
            steps: 20,
            seed: 3,
            out: None,
        }
    }

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            ExperimentSpec::preset(name).unwrap().validate().unwrap();
        }
        assert!(matches!(ExperimentSpec::preset("nope"), Err(Error::Validation(_))));
    }

    #[test]
    fn validation_lists_every_field() {
        let mut s = small();
        s.lambdas.clear();
        s.replicas = 0;
        s.windows.r_in = 3.0;
        let Err(Error::Validation(errs)) = s.validate() else { panic!() };
        assert_eq!(errs.len(), 3, "{errs:?}");
        let mut t = small();
        t.estimators = vec![Estimator::Touching];
        t.backend = "grid:2:16".into();
        assert!(t.validate().is_err());
    }

    #[test]
    fn preset_documents_override_fields() {
        let s = ExperimentSpec::from_json(r#"{"preset": "degree-vs-lambda", "replicas": 4, "windows": {"r_out": 2.5}}"#).unwrap();
        assert_eq!(s.replicas, 4);
        assert_eq!(s.windows.r_out, 2.5);
        assert_eq!(s.windows.r_in, 0.5);
        assert_eq!(s.backend, "h2");
    }

    #[test]
    fn one_row_per_replica_and_grid_point() {
        let tables = run_tables(&small()).unwrap();
        let tables: Vec<Table> = tables.into_iter().map(|t| t.unwrap()).collect();
        assert_eq!(tables[0].estimator, Estimator::Uniqueness);
        assert_eq!(tables[0].rows.len(), 1);
        assert_eq!(tables[1].rows.len(), 1);
        assert!(tables[1].to_csv().starts_with("backend,lambda,p,replica,deg_root"));
        assert_eq!(run_tables(&small()).unwrap()[1].as_ref().unwrap(), &tables[1]);
    }
}
