//! Hyperboloid-model primitives for the hyperbolic plane.
//!
//! Points are `[x0, x1, x2]` on the upper sheet `x0^2 - x1^2 - x2^2 = 1`.

pub type H2 = [f64; 3];

pub const ORIGIN: H2 = [1.0, 0.0, 0.0];

#[inline]
pub fn minkowski(x: &H2, y: &H2) -> f64 {
    x[0] * y[0] - x[1] * y[1] - x[2] * y[2]
}

/// Geodesic distance. Uses `2 asinh(|x - y|_M / 2)`, which stays accurate for
/// nearby points where `acosh(<x, y>)` loses half its digits.
#[inline]
pub fn distance(x: &H2, y: &H2) -> f64 {
    let d0 = x[0] - y[0];
    let d1 = x[1] - y[1];
    let d2 = x[2] - y[2];
    let q = d1 * d1 + d2 * d2 - d0 * d0;
    if q <= 0.0 {
        return 0.0;
    }
    2.0 * (0.5 * q.sqrt()).asinh()
}

/// Project onto the sheet by recomputing `x0` from the spatial part.
#[inline]
pub fn normalize(x: H2) -> H2 {
    [(1.0 + x[1] * x[1] + x[2] * x[2]).sqrt(), x[1], x[2]]
}

/// Point at distance `r` from the origin in direction `theta`.
#[inline]
pub fn polar(r: f64, theta: f64) -> H2 {
    let (s, c) = theta.sin_cos();
    let sh = r.sinh();
    [r.cosh(), sh * c, sh * s]
}

/// Angle of the spatial part as seen from the origin.
#[inline]
pub fn angle(x: &H2) -> f64 {
    x[2].atan2(x[1])
}

/// Apply the boost that maps the origin to `to` (no rotation).
pub fn boost(to: &H2, p: &H2) -> H2 {
    let a = to[0];
    let b = to[1];
    let c = to[2];
    let k = 1.0 / (1.0 + a);
    let x0 = a * p[0] + b * p[1] + c * p[2];
    let x1 = b * p[0] + (1.0 + b * b * k) * p[1] + b * c * k * p[2];
    let x2 = c * p[0] + b * c * k * p[1] + (1.0 + c * c * k) * p[2];
    normalize([x0, x1, x2])
}

/// Inverse of [`boost`]: maps `from` to the origin.
pub fn unboost(from: &H2, p: &H2) -> H2 {
    boost(&[from[0], -from[1], -from[2]], p)
}

/// Constant-speed geodesic from `x` (t = 0) to `y` (t = 1).
pub fn geodesic(x: &H2, y: &H2, t: f64) -> H2 {
    if t <= 0.0 {
        return *x;
    }
    if t >= 1.0 {
        return *y;
    }
    geodesic_line(x, y, t)
}

/// Point at parameter `t` on the full geodesic line through `x` and `y`;
/// values outside `[0, 1]` extrapolate.
pub fn geodesic_line(x: &H2, y: &H2, t: f64) -> H2 {
    let d = distance(x, y);
    if d < 1e-9 {
        // Chord interpolation is exact to O(d^3) here.
        return normalize([
            x[0] + t * (y[0] - x[0]),
            x[1] + t * (y[1] - x[1]),
            x[2] + t * (y[2] - x[2]),
        ]);
    }
    let s = d.sinh();
    let a = ((1.0 - t) * d).sinh() / s;
    let b = (t * d).sinh() / s;
    normalize([
        a * x[0] + b * y[0],
        a * x[1] + b * y[1],
        a * x[2] + b * y[2],
    ])
}

/// Reflection in the perpendicular bisector of `a` and `b`, the isometry
/// that swaps them and fixes the bisector pointwise.
pub fn reflect(x: &H2, a: &H2, b: &H2) -> H2 {
    let n = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let nn = minkowski(&n, &n);
    if nn.abs() < 1e-300 {
        return *x;
    }
    let k = 2.0 * minkowski(x, &n) / nn;
    normalize([x[0] - k * n[0], x[1] - k * n[1], x[2] - k * n[2]])
}

/// Poincaré disk coordinates, used by the demo renderer.
pub fn to_poincare(x: &H2) -> [f64; 2] {
    let k = 1.0 / (1.0 + x[0]);
    [x[1] * k, x[2] * k]
}

pub fn from_poincare(u: [f64; 2]) -> H2 {
    let r2 = u[0] * u[0] + u[1] * u[1];
    let k = 1.0 / (1.0 - r2);
    normalize([(1.0 + r2) * k, 2.0 * u[0] * k, 2.0 * u[1] * k])
}
