//! Vantage-point tree over an arbitrary backend metric.
//!
//! Only the triangle inequality is used for pruning, so the same index serves
//! Euclidean, hyperbolic and product backends alike.

use crate::geometry::{Point, Space};

const LEAF_SIZE: usize = 8;
/// Below this many points the tree is a single leaf (linear scan).
pub const BRUTE_FORCE_BELOW: usize = 64;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Inner {
        vantage: u32,
        /// Largest vantage distance in the inside subtree.
        inner_max: f64,
        /// Smallest vantage distance in the outside subtree.
        outer_min: f64,
        inside: u32,
        outside: u32,
    },
}

/// Up to `K` nearest neighbours, sorted by distance.
#[derive(Clone, Copy, Debug)]
pub struct Knn<const K: usize> {
    pub idx: [u32; K],
    pub dist: [f64; K],
    pub len: usize,
}

impl<const K: usize> Knn<K> {
    fn new() -> Self {
        Self {
            idx: [u32::MAX; K],
            dist: [f64::INFINITY; K],
            len: 0,
        }
    }

    #[inline]
    fn bound(&self) -> f64 {
        if self.len < K {
            f64::INFINITY
        } else {
            self.dist[K - 1]
        }
    }

    #[inline]
    fn offer(&mut self, i: u32, d: f64) {
        if self.len == K && d >= self.dist[K - 1] {
            return;
        }
        let mut pos = self.len.min(K - 1);
        if self.len < K {
            self.len += 1;
        }
        // Ties keep the smaller index first so results are order-independent.
        while pos > 0
            && (self.dist[pos - 1] > d || (self.dist[pos - 1] == d && self.idx[pos - 1] > i))
        {
            self.dist[pos] = self.dist[pos - 1];
            self.idx[pos] = self.idx[pos - 1];
            pos -= 1;
        }
        self.dist[pos] = d;
        self.idx[pos] = i;
    }
}

#[derive(Clone, Debug)]
pub struct VpTree {
    points: Vec<Point>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl VpTree {
    pub fn build(space: &Space, points: &[Point]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        if points.len() < BRUTE_FORCE_BELOW {
            tree.nodes.push(Node::Leaf {
                start: 0,
                end: points.len() as u32,
            });
        } else {
            let mut scratch = vec![0.0; points.len()];
            let n = points.len();
            tree.build_node(space, 0, n, &mut scratch, 0x9E37_79B9);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: u32) -> &Point {
        &self.points[i as usize]
    }

    fn build_node(&mut self, space: &Space, lo: usize, hi: usize, scratch: &mut [f64], seed: u64) -> u32 {
        let id = self.nodes.len() as u32;
        if hi - lo <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: lo as u32,
                end: hi as u32,
            });
            return id;
        }
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        // Deterministic pseudo-random vantage choice.
        let mut h = seed ^ (lo as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (hi as u64);
        h = (h ^ (h >> 31)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        let pick = lo + (h as usize) % (hi - lo);
        self.order.swap(lo, pick);
        let vantage = self.order[lo];
        let vp = self.points[vantage as usize];
        let rest = lo + 1;
        let mut pairs: Vec<(f64, u32)> = self.order[rest..hi]
            .iter()
            .map(|&i| (space.dist(&vp, &self.points[i as usize]), i))
            .collect();
        let mid = pairs.len() / 2;
        pairs.select_nth_unstable_by(mid, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let inner_max = pairs[..mid].iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let outer_min = pairs[mid..].iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        for (k, p) in pairs.iter().enumerate() {
            self.order[rest + k] = p.1;
            scratch[rest + k] = p.0;
        }
        let split = rest + mid;
        let inside = self.build_node(space, rest, split, scratch, h);
        let outside = self.build_node(space, split, hi, scratch, h.rotate_left(17));
        self.nodes[id as usize] = Node::Inner {
            vantage,
            inner_max,
            outer_min,
            inside,
            outside,
        };
        id
    }

    /// The `K` nearest points to `q`.
    pub fn knn<const K: usize>(&self, space: &Space, q: &Point) -> Knn<K> {
        let mut out = Knn::<K>::new();
        if !self.points.is_empty() {
            self.knn_node(space, q, 0, &mut out);
        }
        out
    }

    fn knn_node<const K: usize>(&self, space: &Space, q: &Point, node: u32, out: &mut Knn<K>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    out.offer(i, space.dist(q, &self.points[i as usize]));
                }
            }
            Node::Inner {
                vantage,
                inner_max,
                outer_min,
                inside,
                outside,
            } => {
                let d = space.dist(q, &self.points[vantage as usize]);
                out.offer(vantage, d);
                let near_first = d <= 0.5 * (inner_max + outer_min);
                let (first, second) = if near_first { (inside, outside) } else { (outside, inside) };
                for (k, child) in [first, second].into_iter().enumerate() {
                    let is_inside = (k == 0) == near_first;
                    let tau = out.bound();
                    let reachable = if is_inside {
                        d - tau <= inner_max
                    } else {
                        d + tau >= outer_min
                    };
                    if reachable {
                        self.knn_node(space, q, child, out);
                    }
                }
            }
        }
    }

    pub fn nearest(&self, space: &Space, q: &Point) -> Option<(u32, f64)> {
        let k = self.knn::<1>(space, q);
        (k.len == 1).then(|| (k.idx[0], k.dist[0]))
    }

    /// Nearest point whose index satisfies `keep`, if any lies within `limit`.
    pub fn nearest_where(
        &self,
        space: &Space,
        q: &Point,
        limit: f64,
        keep: impl Fn(u32) -> bool,
    ) -> Option<(u32, f64)> {
        let mut best = (u32::MAX, limit);
        if !self.points.is_empty() {
            self.filtered_node(space, q, 0, &keep, &mut best);
        }
        (best.0 != u32::MAX).then_some(best)
    }

    fn filtered_node(
        &self,
        space: &Space,
        q: &Point,
        node: u32,
        keep: &impl Fn(u32) -> bool,
        best: &mut (u32, f64),
    ) {
        let offer = |i: u32, d: f64, best: &mut (u32, f64)| {
            if (d < best.1 || (d == best.1 && i < best.0)) && keep(i) {
                *best = (i, d);
            }
        };
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    offer(i, space.dist(q, &self.points[i as usize]), best);
                }
            }
            Node::Inner {
                vantage,
                inner_max,
                outer_min,
                inside,
                outside,
            } => {
                let d = space.dist(q, &self.points[vantage as usize]);
                offer(vantage, d, best);
                let near_first = d <= 0.5 * (inner_max + outer_min);
                let (first, second) = if near_first { (inside, outside) } else { (outside, inside) };
                for (k, child) in [first, second].into_iter().enumerate() {
                    let is_inside = (k == 0) == near_first;
                    let tau = best.1;
                    let reachable = if is_inside { d - tau <= inner_max } else { d + tau >= outer_min };
                    if reachable {
                        self.filtered_node(space, q, child, keep, best);
                    }
                }
            }
        }
    }

    /// Visit every point within distance `r` of `q` (inclusive).
    pub fn within(&self, space: &Space, q: &Point, r: f64, mut visit: impl FnMut(u32, f64)) {
        if !self.points.is_empty() {
            self.within_node(space, q, r, 0, &mut visit);
        }
    }

    fn within_node(&self, space: &Space, q: &Point, r: f64, node: u32, visit: &mut impl FnMut(u32, f64)) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let d = space.dist(q, &self.points[i as usize]);
                    if d <= r {
                        visit(i, d);
                    }
                }
            }
            Node::Inner {
                vantage,
                inner_max,
                outer_min,
                inside,
                outside,
            } => {
                let d = space.dist(q, &self.points[vantage as usize]);
                if d <= r {
                    visit(vantage, d);
                }
                if d - r <= inner_max {
                    self.within_node(space, q, r, inside, visit);
                }
                if d + r >= outer_min {
                    self.within_node(space, q, r, outside, visit);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BallSampler;
    use crate::rng::RandomStream;
    use proptest::prelude::*;

    fn brute(space: &Space, pts: &[Point], q: &Point, k: usize) -> Vec<(f64, u32)> {
        let mut v: Vec<(f64, u32)> = pts.iter().enumerate().map(|(i, p)| (space.dist(q, p), i as u32)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v.truncate(k);
        v
    }

    fn cloud(name: &str, n: usize, seed: u64) -> (Space, Vec<Point>) {
        let s: Space = name.parse().unwrap();
        let sampler = BallSampler::new(&s, 3.0).unwrap();
        let mut rng = RandomStream::new(seed).rng();
        let pts = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        (s, pts)
    }

    #[test]
    fn knn_matches_brute_force() {
        for (k, name) in ["e2", "e3", "h2", "h2xh2:l2", "h2xh2:l1", "h2xh2:linf"].iter().enumerate() {
            for &n in &[1usize, 5, 63, 64, 500] {
                let (s, pts) = cloud(name, n, k as u64 * 100 + n as u64);
                let tree = VpTree::build(&s, &pts);
                let (_, queries) = cloud(name, 50, 7 + k as u64);
                for q in &queries {
                    let got = tree.knn::<3>(&s, q);
                    let want = brute(&s, &pts, q, 3);
                    assert_eq!(got.len, want.len());
                    for (j, w) in want.iter().enumerate() {
                        assert_eq!(got.idx[j], w.1, "{name} n={n}");
                        assert_eq!(got.dist[j], w.0);
                    }
                }
            }
        }
    }

    #[test]
    fn range_query_matches_brute_force() {
        let (s, pts) = cloud("h2", 800, 3);
        let tree = VpTree::build(&s, &pts);
        let q = pts[17];
        let mut got = Vec::new();
        tree.within(&s, &q, 0.9, |i, _| got.push(i));
        got.sort_unstable();
        let mut want: Vec<u32> = (0..pts.len() as u32).filter(|&i| s.dist(&q, &pts[i as usize]) <= 0.9).collect();
        want.sort_unstable();
        assert_eq!(got, want);
    }

    #[test]
    fn empty_tree() {
        let s = Space::hyperbolic2();
        let tree = VpTree::build(&s, &[]);
        assert!(tree.nearest(&s, &s.origin).is_none());
        assert_eq!(tree.knn::<2>(&s, &s.origin).len, 0);
    }

    #[test]
    fn filtered_nearest_matches_brute_force() {
        let (s, pts) = cloud("h2xh2:l2", 600, 5);
        let tree = VpTree::build(&s, &pts);
        let (_, qs) = cloud("h2xh2:l2", 30, 6);
        for q in &qs {
            let got = tree.nearest_where(&s, q, f64::INFINITY, |i| i % 7 == 3);
            let want = (0..pts.len() as u32)
                .filter(|i| i % 7 == 3)
                .map(|i| (i, s.dist(q, &pts[i as usize])))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(got, want);
            assert!(tree.nearest_where(&s, q, 1e-6, |_| true).is_none());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn nearest_is_minimum(seed in 0u64..1000, n in 1usize..300) {
            let (s, pts) = cloud("e2", n, seed);
            let tree = VpTree::build(&s, &pts);
            let (_, qs) = cloud("e2", 5, seed + 1);
            for q in &qs {
                let (_, d) = tree.nearest(&s, q).unwrap();
                let m = pts.iter().map(|p| s.dist(q, p)).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(d, m);
            }
        }
    }
}
