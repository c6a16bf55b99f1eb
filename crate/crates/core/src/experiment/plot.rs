//! SVG curves from result bundles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{read_csv, Estimator, Manifest};
use crate::error::{Error, Result};
use crate::stats::{wilson, Running, Z95};

/// Curve ids accepted by [`plot`].
pub const CURVES: &[&str] = &[
    "threshold",
    "touching",
    "twopoint",
    "uniqueness",
    "degree",
    "frequency",
    "thickening",
];

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

#[derive(Clone, Debug, Default)]
struct Series {
    label: String,
    /// `(x, y, lo, hi)`
    points: Vec<(f64, f64, f64, f64)>,
}

struct Figure {
    title: String,
    x_label: String,
    y_label: String,
    series: Vec<Series>,
    /// Vertical markers with labels.
    markers: Vec<(f64, String)>,
}

fn num(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("not a number in bundle CSV: {s:?}")))
}

struct Rows {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Rows {
    fn load(bundle: &Path, e: Estimator) -> Result<Self> {
        let path = bundle.join(e.file());
        if !path.exists() {
            return Err(Error::NoData(format!("{} has no {}", bundle.display(), e.file())));
        }
        let (header, rows) = read_csv(&path)?;
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("bundle CSV lacks column {name}")))
    }
}

fn key(x: f64) -> u64 {
    // Group by value; the bundle prints each grid value identically.
    x.to_bits()
}

fn series_from_groups(groups: BTreeMap<(String, u64), BTreeMap<u64, Vec<f64>>>, proportion: bool) -> Vec<Series> {
    groups
        .into_iter()
        .map(|((label, _), by_x)| {
            let points = by_x
                .into_iter()
                .map(|(xb, ys)| {
                    let x = f64::from_bits(xb);
                    if proportion {
                        let n = ys.len() as u64;
                        let k = ys.iter().filter(|&&y| y > 0.5).count() as u64;
                        let (lo, hi) = wilson(k, n, Z95);
                        (x, k as f64 / n as f64, lo, hi)
                    } else {
                        let r: Running = ys.iter().copied().collect();
                        let se = if ys.len() > 1 { r.se() } else { 0.0 };
                        (x, r.mean(), r.mean() - Z95 * se, r.mean() + Z95 * se)
                    }
                })
                .collect();
            Series { label, points }
        })
        .collect()
}

fn backend_of(bundle: &Path) -> String {
    Manifest::read(bundle)
        .map(|m| m.backend)
        .unwrap_or_else(|_| bundle.display().to_string())
}

fn figure(bundle: &Path, curve: &str, tag: &str, fig: &mut Figure) -> Result<()> {
    let prefix = if tag.is_empty() { String::new() } else { format!("{tag} ") };
    // Sort key pairs the label with the series' numeric parameter, so
    // legends follow numeric rather than lexical order.
    let mut groups: BTreeMap<(String, u64), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut push = |label: String, order: f64, x: f64, y: f64| {
        groups
            .entry((label, key(order)))
            .or_default()
            .entry(key(x))
            .or_default()
            .push(y);
    };
    match curve {
        "threshold" => {
            let t = Rows::load(bundle, Estimator::Threshold)?;
            let (l, p, st, v, lo, hi) = (t.col("lambda")?, t.col("p")?, t.col("statistic")?, t.col("value")?, t.col("ci_lo")?, t.col("ci_hi")?);
            let mut by: BTreeMap<u64, Series> = BTreeMap::new();
            for r in &t.rows {
                let lambda = num(&r[l])?;
                if r[st] == "p_c" {
                    fig.markers.push((num(&r[v])?, format!("{prefix}p_c = {:.3}", num(&r[v])?)));
                    continue;
                }
                let s = by.entry(key(lambda)).or_insert_with(|| Series {
                    label: format!("{prefix}lambda={lambda} {}", r[st]),
                    points: vec![],
                });
                s.points.push((num(&r[p])?, num(&r[v])?, num(&r[lo])?, num(&r[hi])?));
            }
            fig.series.extend(by.into_values());
            fig.x_label = "p".into();
            fig.y_label = "crossing probability".into();
            return Ok(());
        }
        "twopoint" => {
            let t = Rows::load(bundle, Estimator::Twopoint)?;
            let (l, p, s, v, lo, hi) = (t.col("lambda")?, t.col("p")?, t.col("sep")?, t.col("tau_hat")?, t.col("ci_lo")?, t.col("ci_hi")?);
            let mut by: BTreeMap<(u64, u64), Series> = BTreeMap::new();
            for r in &t.rows {
                let (lambda, pv) = (num(&r[l])?, num(&r[p])?);
                let e = by.entry((key(lambda), key(pv))).or_insert_with(|| Series {
                    label: format!("{prefix}lambda={lambda} p={pv}"),
                    points: vec![],
                });
                e.points.push((num(&r[s])?, num(&r[v])?, num(&r[lo])?, num(&r[hi])?));
            }
            fig.series.extend(by.into_values());
            fig.x_label = "separation".into();
            fig.y_label = "two-point function".into();
            return Ok(());
        }
        "uniqueness" => {
            let t = Rows::load(bundle, Estimator::Uniqueness)?;
            let m = Manifest::read(bundle)?;
            let f = m.files.iter().find(|f| f.file == Estimator::Uniqueness.file());
            let lambdas = m.spec.lambdas.len().max(1);
            let n = f.map(|f| (f.replicas - f.discarded) / lambdas).unwrap_or(0) as u64;
            let (l, p, g2) = (t.col("lambda")?, t.col("p")?, t.col("p_ge2")?);
            let mut by: BTreeMap<u64, Series> = BTreeMap::new();
            for r in &t.rows {
                let lambda = num(&r[l])?;
                let y = num(&r[g2])?;
                let (lo, hi) = if n > 0 {
                    wilson((y * n as f64).round() as u64, n, Z95)
                } else {
                    (y, y)
                };
                by.entry(key(lambda))
                    .or_insert_with(|| Series {
                        label: format!("{prefix}lambda={lambda}"),
                        points: vec![],
                    })
                    .points
                    .push((num(&r[p])?, y, lo, hi));
            }
            fig.series.extend(by.into_values());
            fig.x_label = "p".into();
            fig.y_label = "P(two or more crossing clusters)".into();
            return Ok(());
        }
        "touching" => {
            let t = Rows::load(bundle, Estimator::Touching)?;
            let (l, a, d) = (t.col("lambda")?, t.col("all_touch")?, t.col("discarded")?);
            let label = format!("{prefix}{}", backend_of(bundle));
            for r in &t.rows {
                if num(&r[d])? != 0.0 {
                    continue;
                }
                push(label.clone(), 0.0, num(&r[l])?, num(&r[a])?);
            }
            fig.x_label = "lambda".into();
            fig.y_label = "P(all pairs touch)".into();
        }
        "degree" => {
            let t = Rows::load(bundle, Estimator::Factorgraph)?;
            let (b, l, p, d, x) = (t.col("backend")?, t.col("lambda")?, t.col("p")?, t.col("deg_root")?, t.col("discarded")?);
            for r in &t.rows {
                if num(&r[x])? != 0.0 {
                    continue;
                }
                let pv = num(&r[p])?;
                push(format!("{prefix}{} p={pv}", r[b]), pv, num(&r[l])?, num(&r[d])?);
            }
            fig.x_label = "lambda".into();
            fig.y_label = "root degree".into();
        }
        "frequency" => {
            let t = Rows::load(bundle, Estimator::Frequency)?;
            let (l, p, k, bh) = (t.col("lambda")?, t.col("p")?, t.col("replica")?, t.col("beta_hat")?);
            // Largest cluster frequency per replica.
            let mut best: BTreeMap<(u64, u64, String), f64> = BTreeMap::new();
            for r in &t.rows {
                let e = best.entry((key(num(&r[l])?), key(num(&r[p])?), r[k].clone())).or_insert(0.0);
                *e = e.max(num(&r[bh])?);
            }
            for ((lb, pb, _), y) in best {
                let lambda = f64::from_bits(lb);
                push(format!("{prefix}lambda={lambda}"), lambda, f64::from_bits(pb), y);
            }
            fig.x_label = "p".into();
            fig.y_label = "largest cluster frequency".into();
        }
        "thickening" => {
            let t = Rows::load(bundle, Estimator::Thickening)?;
            let cols = ["violations_nesting", "violations_overlap", "violations_ball"];
            let (l, p, a) = (t.col("lambda")?, t.col("p")?, t.col("alpha")?);
            let vc: Vec<usize> = cols.iter().map(|c| t.col(c)).collect::<Result<_>>()?;
            for r in &t.rows {
                let lambda = num(&r[l])?;
                let total: f64 = vc.iter().map(|&c| num(&r[c])).sum::<Result<f64>>()?;
                push(format!("{prefix}lambda={lambda} alpha={}", r[a]), lambda, num(&r[p])?, total);
            }
            fig.x_label = "p".into();
            fig.y_label = "violations per replica".into();
        }
        _ => {
            return Err(Error::InvalidInput(format!(
                "unknown curve {curve:?}; known: {}",
                CURVES.join(", ")
            )))
        }
    }
    let proportion = curve == "touching";
    fig.series.extend(series_from_groups(groups, proportion));
    Ok(())
}

/// Render `curve` from `bundle`, overlaying the same curve from `overlays`.
pub fn plot(bundle: &Path, curve: &str, overlays: &[PathBuf]) -> Result<String> {
    if !CURVES.contains(&curve) {
        return Err(Error::InvalidInput(format!(
            "unknown curve {curve:?}; known: {}",
            CURVES.join(", ")
        )));
    }
    let mut fig = Figure {
        title: match Manifest::read(bundle) {
            Ok(m) => format!("{}: {curve}", m.name),
            Err(_) => curve.to_string(),
        },
        x_label: String::new(),
        y_label: String::new(),
        series: vec![],
        markers: vec![],
    };
    let many = !overlays.is_empty();
    let tag = |b: &Path| if many && curve != "touching" { backend_of(b) } else { String::new() };
    figure(bundle, curve, &tag(bundle), &mut fig)?;
    for o in overlays {
        figure(o, curve, &tag(o), &mut fig)?;
    }
    if fig.series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::NoData(format!("no rows for curve {curve}")));
    }
    Ok(render(&fig))
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut v = start;
    while v <= hi + 1e-9 * step {
        out.push(if v.abs() < 1e-12 * step { 0.0 } else { v });
        v += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render(fig: &Figure) -> String {
    let pts = fig.series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, lo, hi) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        for v in [y, lo, hi] {
            if v.is_finite() {
                y0 = y0.min(v);
                y1 = y1.max(v);
            }
        }
    }
    for (m, _) in &fig.markers {
        x0 = x0.min(*m);
        x1 = x1.max(*m);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (x1 - x0);
    let (x0, x1) = (x0 - pad, x1 + pad);
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&fig.title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for t in nice_ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, fmt_tick(t));
    }
    for t in nice_ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, escape(&fig.x_label));
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(&fig.y_label)
    );
    for (m, label) in &fig.markers {
        let x = sx(*m);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#, TOP + ph);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" fill="gray">{}</text>"#, x + 4.0, TOP + 14.0, escape(label));
    }
    for (i, ser) in fig.series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = ser.points.iter().map(|&(x, y, _, _)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, path.join(" "));
        for &(x, y, lo, hi) in &ser.points {
            let (px, py) = (sx(x), sy(y));
            if lo.is_finite() && hi.is_finite() && hi > lo {
                let (a, b) = (sy(lo), sy(hi));
                let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{a:.2}" x2="{px:.2}" y2="{b:.2}" stroke="{c}"/>"#);
                for e in [a, b] {
                    let _ = writeln!(s, r#"<line x1="{:.2}" y1="{e:.2}" x2="{:.2}" y2="{e:.2}" stroke="{c}"/>"#, px - 4.0, px + 4.0);
                }
            }
            let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{c}"/>"#);
        }
        let ly = TOP + 8.0 + 18.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{c}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(0.0, 1.0);
        assert_eq!(t.first(), Some(&0.0));
        assert!((t.last().unwrap() - 1.0).abs() < 1e-9);
        assert!(t.len() >= 3 && t.len() <= 7);
        assert_eq!(fmt_tick(0.25), "0.25");
        assert_eq!(fmt_tick(2.0), "2");
    }

    #[test]
    fn unknown_curve_is_an_error() {
        let e = plot(Path::new("/nonexistent"), "bogus", &[]).unwrap_err();
        assert!(e.to_string().contains("bogus"));
    }
}
