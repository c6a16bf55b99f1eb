//! Browser demo. [`Scene`] holds one tessellated sample and renders it to
//! RGBA rasters; [`DemoScene`] is its JavaScript face.
//!
//! The view is the disk `B_r(o)`: scaled directly in `e2`, through its
//! Poincare disk image in `h2`.

use voroperc::frequency::{estimate_frequency, walk_within};
use voroperc::geometry::hyperbolic::{from_poincare, to_poincare};
use voroperc::geometry::{Point, SpaceKind};
use voroperc::percolation::{clusters, color, prepare_replica, ClusterReport, Replica, WHITE};
use voroperc::tessellation::TessellationConfig;
use voroperc::thickening::thicken;
use voroperc::vptree::VpTree;
use voroperc::{Error, RandomStream, Result, Space};
use wasm_bindgen::prelude::*;

const OUTSIDE: [u8; 4] = [255, 255, 255, 0];
const WHITE_CELL: [u8; 4] = [236, 236, 236, 255];
const EDGE: [u8; 4] = [90, 90, 90, 255];
const HALO: [u8; 4] = [250, 200, 60, 255];

pub struct Scene {
    space: Space,
    radius: f64,
    seed: u64,
    replica: Replica,
    probe_index: VpTree,
}

/// Outcome of a walk: the path in view coordinates and cluster frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkView {
    /// Interleaved `x, y` in `[-1, 1]^2`.
    pub path: Vec<f64>,
    pub truncated: bool,
    /// `(cluster id, fraction of steps)`, largest first.
    pub frequencies: Vec<(u32, f64)>,
}

impl Scene {
    pub fn new(backend: &str, lambda: f64, radius: f64, seed: u64) -> Result<Self> {
        let space: Space = backend.parse()?;
        if !matches!(space.kind, SpaceKind::Hyperbolic2 | SpaceKind::Euclidean { dim: 2 }) {
            return Err(Error::Unsupported(format!("the demo draws e2 and h2, not {backend}")));
        }
        if !(radius > 0.0 && radius <= 6.0) || !(lambda > 0.0) {
            return Err(Error::InvalidInput("need lambda > 0 and 0 < radius <= 6".into()));
        }
        let window = radius + 4.0 * space.radius_for_volume(1.0 / lambda)?;
        let cfg = TessellationConfig::ball(radius).clipped().without_certificates();
        let replica = prepare_replica(&space, lambda, cfg, window, &RandomStream::new(seed))?
            .ok_or_else(|| Error::NoData("the sample has no nuclei".into()))?;
        let probes: Vec<Point> = replica.t.probes.iter().map(|p| p.x.clone()).collect();
        let probe_index = VpTree::build(&space, &probes);
        Ok(Self {
            space,
            radius,
            seed,
            replica,
            probe_index,
        })
    }

    pub fn cells(&self) -> usize {
        self.replica.t.len()
    }

    /// View coordinates of a point, `None` outside the view.
    pub fn to_view(&self, x: &Point) -> Option<[f64; 2]> {
        match x {
            Point::Euclidean(c) => Some([c[0] / self.radius, c[1] / self.radius]),
            Point::Hyperbolic(h) => {
                let u = to_poincare(h);
                let s = (0.5 * self.radius).tanh();
                Some([u[0] / s, u[1] / s])
            }
            _ => None,
        }
    }

    fn from_view(&self, v: [f64; 2]) -> Option<Point> {
        match self.space.kind {
            SpaceKind::Euclidean { .. } => {
                let p = Point::Euclidean([v[0] * self.radius, v[1] * self.radius, 0.0]);
                (self.space.radius(&p) <= self.radius).then_some(p)
            }
            _ => {
                let s = (0.5 * self.radius).tanh();
                (v[0] * v[0] + v[1] * v[1] <= 1.0).then(|| Point::Hyperbolic(from_poincare([v[0] * s, v[1] * s])))
            }
        }
    }

    fn pixel_points(&self, size: usize) -> Vec<Option<Point>> {
        let mut out = Vec::with_capacity(size * size);
        for j in 0..size {
            for i in 0..size {
                let x = 2.0 * (i as f64 + 0.5) / size as f64 - 1.0;
                let y = 1.0 - 2.0 * (j as f64 + 0.5) / size as f64;
                out.push(self.from_view([x, y]));
            }
        }
        out
    }

    pub fn clusters(&self, p: f64) -> Result<ClusterReport> {
        clusters(&self.replica.adj, &color(&self.replica.t, p))
    }

    fn paint(&self, report: &ClusterReport, size: usize, halo: Option<&dyn Fn(&Point) -> bool>) -> Vec<u8> {
        let pts = self.pixel_points(size);
        let cell: Vec<u32> = pts
            .iter()
            .map(|x| match x {
                Some(x) => self.replica.t.index.nearest(&self.space, x).map_or(WHITE, |n| n.0),
                None => WHITE,
            })
            .collect();
        let mut rgba = Vec::with_capacity(4 * size * size);
        for k in 0..size * size {
            let (i, j) = (k % size, k / size);
            let c = cell[k];
            let px = match &pts[k] {
                None => OUTSIDE,
                Some(x) => {
                    let boundary = (i + 1 < size && cell[k + 1] != c) || (j + 1 < size && cell[k + size] != c);
                    let label = report.labels[c as usize];
                    if boundary {
                        EDGE
                    } else if label != WHITE {
                        cluster_color(label)
                    } else if halo.is_some_and(|h| h(x)) {
                        HALO
                    } else {
                        WHITE_CELL
                    }
                }
            };
            rgba.extend_from_slice(&px);
        }
        rgba
    }

    /// `size x size` RGBA raster; black clusters in distinct colors.
    pub fn raster(&self, p: f64, size: usize) -> Result<Vec<u8>> {
        let report = self.clusters(p)?;
        Ok(self.paint(&report, size, None))
    }

    /// Raster with the thickening of the black clusters shaded over white
    /// cells.
    pub fn thickening_raster(&self, p: f64, alpha: f64, r: f64, size: usize) -> Result<Vec<u8>> {
        let report = self.clusters(p)?;
        let region = thicken(&self.replica.t, &report, alpha, r)?;
        let inside = |x: &Point| {
            self.probe_index
                .nearest(&self.space, x)
                .is_some_and(|(k, _)| region.contains(k as usize))
        };
        Ok(self.paint(&report, size, Some(&inside)))
    }

    /// Unit-ball random walk from the origin, cut at the view boundary.
    pub fn walk(&self, p: f64, steps: usize, walk_seed: u64) -> Result<WalkView> {
        let report = self.clusters(p)?;
        let mut rng = RandomStream::new(self.seed).derive(&[7, walk_seed]).rng();
        let w = walk_within(&self.space, steps, self.radius, &mut rng)?;
        let path = w.positions.iter().filter_map(|x| self.to_view(x)).flatten().collect();
        let mut frequencies = Vec::new();
        if !w.truncated {
            let est = estimate_frequency(&report, &self.replica.t, std::slice::from_ref(&w))?;
            frequencies = est.walks[0].iter().map(|c| (c.cluster_id, c.beta)).collect();
            frequencies.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        Ok(WalkView {
            path,
            truncated: w.truncated,
            frequencies,
        })
    }
}

/// Stable pseudo-random hue per cluster id.
pub fn cluster_color(id: u32) -> [u8; 4] {
    let h = (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
    let hue = (h % 360) as f64;
    let (s, v) = (0.65, 0.85);
    let c = v * s;
    let x = c * (1.0 - ((hue / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (hue / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let byte = |t: f64| ((t + m) * 255.0).round() as u8;
    [byte(r), byte(g), byte(b), 255]
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct DemoScene {
    scene: Scene,
    last_walk: Option<WalkView>,
}

#[wasm_bindgen]
impl DemoScene {
    #[wasm_bindgen(constructor)]
    pub fn new(backend: &str, lambda: f64, radius: f64, seed: u32) -> std::result::Result<DemoScene, JsError> {
        Ok(Self {
            scene: Scene::new(backend, lambda, radius, seed as u64).map_err(js)?,
            last_walk: None,
        })
    }

    pub fn cells(&self) -> usize {
        self.scene.cells()
    }

    /// Percolation at level `p`, as RGBA bytes.
    pub fn render(&self, p: f64, size: usize) -> std::result::Result<Vec<u8>, JsError> {
        self.scene.raster(p, size).map_err(js)
    }

    pub fn render_thickening(&self, p: f64, alpha: f64, r: f64, size: usize) -> std::result::Result<Vec<u8>, JsError> {
        self.scene.thickening_raster(p, alpha, r, size).map_err(js)
    }

    /// Walk path as interleaved view coordinates; details via `walk_summary`.
    pub fn walk(&mut self, p: f64, steps: usize, walk_seed: u32) -> std::result::Result<Vec<f64>, JsError> {
        let w = self.scene.walk(p, steps, walk_seed as u64).map_err(js)?;
        let path = w.path.clone();
        self.last_walk = Some(w);
        Ok(path)
    }

    pub fn walk_summary(&self) -> String {
        match &self.last_walk {
            None => String::new(),
            Some(w) if w.truncated => "walk left the view; no frequencies".into(),
            Some(w) if w.frequencies.is_empty() => "walk stayed in white cells".into(),
            Some(w) => w
                .frequencies
                .iter()
                .take(5)
                .map(|(c, b)| format!("cluster {c}: {:.1}%", 100.0 * b))
                .collect::<Vec<_>>()
                .join(", "),
        }
    }
}
