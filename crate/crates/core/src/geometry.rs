//! Planar primitives: points, convex hulls, perimeters, intersection tests and
//! the rotation used to put an instance in general position.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

/// Relative tolerance for every cost comparison in the crate.
pub const EPS_CMP: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("convex hull of an empty point set")]
    Empty,
    #[error("points {0} and {1} coincide")]
    Duplicate(usize, usize),
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }
    pub fn perp(self) -> Point {
        Point::new(-self.y, self.x)
    }
    pub fn lerp(self, o: Point, t: f64) -> Point {
        self + (o - self) * t
    }
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}
impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}
impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}
impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Twice the signed area of `abc`; positive for a left turn.
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b - a).cross(c - a)
}

/// Tolerant comparison of two costs (relative `EPS_CMP`).
pub fn cmp_cost(a: f64, b: f64) -> Ordering {
    if cost_eq(a, b) {
        Ordering::Equal
    } else if a < b {
        Ordering::Less
    } else {
        Ordering::Greater
    }
}

pub fn cost_eq(a: f64, b: f64) -> bool {
    if a == b {
        return true;
    }
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= EPS_CMP * scale
}

/// `a < b` by more than the comparison tolerance.
pub fn cost_lt(a: f64, b: f64) -> bool {
    cmp_cost(a, b) == Ordering::Less
}

/// Convex polygon with vertices in counterclockwise order; 1 or 2 vertices for
/// degenerate hulls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hull {
    pub vertices: Vec<Point>,
}

impl Hull {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn perimeter(&self) -> f64 {
        perimeter(self)
    }

    /// Closed containment test.
    pub fn contains(&self, p: Point) -> bool {
        let v = &self.vertices;
        match v.len() {
            0 => false,
            1 => v[0] == p,
            2 => on_segment(v[0], v[1], p),
            n => (0..n).all(|i| orient(v[i], v[(i + 1) % n], p) >= 0.0),
        }
    }

    /// Strict interior test (always false for degenerate hulls).
    pub fn contains_strictly(&self, p: Point) -> bool {
        let v = &self.vertices;
        let n = v.len();
        n >= 3 && (0..n).all(|i| orient(v[i], v[(i + 1) % n], p) > 0.0)
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        let m = if n >= 3 { n } else { n.saturating_sub(1) };
        (0..m).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len() as f64;
        let s = self.vertices.iter().fold(Point::default(), |a, &b| a + b);
        s * (1.0 / n)
    }
}

/// Andrew's monotone chain; collinear and duplicate points are dropped.
pub fn convex_hull(points: &[Point]) -> Result<Hull, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::Empty);
    }
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() <= 2 {
        return Ok(Hull { vertices: pts });
    }
    let mut lower: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() == 1 {
        // every point collinear and lower/upper collapsed onto one extreme
        lower.push(*pts.last().unwrap());
    }
    Ok(Hull { vertices: lower })
}

/// Hull perimeter; a two-vertex hull is a doubled segment.
pub fn perimeter(h: &Hull) -> f64 {
    let v = &h.vertices;
    match v.len() {
        0 | 1 => 0.0,
        2 => 2.0 * v[0].dist(v[1]),
        n => (0..n).map(|i| v[i].dist(v[(i + 1) % n])).sum(),
    }
}

/// Perimeter of the hull of `points` (0 for an empty slice).
pub fn hull_perimeter(points: &[Point]) -> f64 {
    convex_hull(points).map(|h| perimeter(&h)).unwrap_or(0.0)
}

pub fn on_segment(a: Point, b: Point, p: Point) -> bool {
    orient(a, b, p) == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

/// Closed segment intersection.
pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(c, d, a) || on_segment(c, d, b) || on_segment(a, b, c) || on_segment(a, b, d)
}

/// Do the closed convex regions share a point?
pub fn hulls_intersect(a: &Hull, b: &Hull) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    if a.vertices.iter().any(|&p| b.contains(p)) || b.vertices.iter().any(|&p| a.contains(p)) {
        return true;
    }
    for (p, q) in a.edges() {
        for (r, s) in b.edges() {
            if segments_intersect(p, q, r, s) {
                return true;
            }
        }
    }
    false
}

/// Does the segment `pq` meet the open interior of the convex polygon `h`?
pub fn segment_crosses_interior(p: Point, q: Point, h: &Hull) -> bool {
    let v = &h.vertices;
    let n = v.len();
    if n < 3 {
        return false;
    }
    // clip the parameter range [0,1] against every edge halfplane (strict)
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let d = q - p;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        let num = orient(a, b, p);
        let den = (b - a).cross(d);
        if den == 0.0 {
            if num <= 0.0 {
                return false;
            }
        } else {
            let t = -num / den;
            if den > 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
        if t0 >= t1 {
            return false;
        }
    }
    let scale = 1e-12;
    t1 - t0 > scale
}

/// Signed area of a simple polygon (positive when counterclockwise).
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| poly[i].cross(poly[(i + 1) % n]))
        .sum::<f64>()
        * 0.5
}

/// Even-odd point-in-polygon test for a simple polygon; boundary counts as inside.
pub fn point_in_polygon(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    if n == 0 {
        return false;
    }
    if n == 1 {
        return poly[0] == p;
    }
    for i in 0..n {
        if on_segment(poly[i], poly[(i + 1) % n], p) {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn polygon_length(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 2 {
        return 0.0;
    }
    (0..n).map(|i| poly[i].dist(poly[(i + 1) % n])).sum()
}

pub fn point_segment_dist(p: Point, a: Point, b: Point) -> f64 {
    let d = b - a;
    let l2 = d.dot(d);
    if l2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(d) / l2).clamp(0.0, 1.0);
    p.dist(a + d * t)
}

/// Distance from `p` to the ray `origin + t·dir`, `t ≥ 0`.
pub fn point_ray_dist(p: Point, origin: Point, dir: Point) -> f64 {
    let t = (p - origin).dot(dir) / dir.dot(dir);
    if t <= 0.0 {
        p.dist(origin)
    } else {
        p.dist(origin + dir * t)
    }
}

/// Axis-aligned bounding box `(min, max)`.
pub fn bbox(points: &[Point]) -> (Point, Point) {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

/// Rotation about the origin, recorded so results can be mapped back.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub angle: f64,
    /// prime `q` with `angle = π/(4q)`; 0 for the identity
    pub prime: u32,
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        angle: 0.0,
        prime: 0,
    };

    pub fn apply(&self, p: Point) -> Point {
        if self.prime == 0 {
            return p;
        }
        let (s, c) = self.angle.sin_cos();
        Point::new(c * p.x - s * p.y, s * p.x + c * p.y)
    }

    pub fn invert(&self, p: Point) -> Point {
        if self.prime == 0 {
            return p;
        }
        let (s, c) = self.angle.sin_cos();
        Point::new(c * p.x + s * p.y, -s * p.x + c * p.y)
    }
}

fn distinct_coords(points: &[Point]) -> bool {
    let (lo, hi) = bbox(points);
    let tol = 1e-9
        * (hi.x - lo.x)
            .abs()
            .max((hi.y - lo.y).abs())
            .max(f64::MIN_POSITIVE);
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    xs.windows(2).all(|w| w[1] - w[0] > tol) && ys.windows(2).all(|w| w[1] - w[0] > tol)
}

fn is_prime(q: u32) -> bool {
    q >= 2 && (2..).take_while(|d| d * d <= q).all(|d| q % d != 0)
}

/// Rotate the instance (if needed) so that no two points share an x- or a
/// y-coordinate. The angle is `π/(4q)` for the first prime `q` that works.
pub fn general_position(points: &[Point]) -> Result<(Vec<Point>, Rotation), GeometryError> {
    for (i, p) in points.iter().enumerate() {
        if !p.is_finite() {
            return Err(GeometryError::NonFinite(i));
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .x
            .total_cmp(&points[b].x)
            .then(points[a].y.total_cmp(&points[b].y))
    });
    for w in order.windows(2) {
        if points[w[0]] == points[w[1]] {
            let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
            return Err(GeometryError::Duplicate(a, b));
        }
    }
    if distinct_coords(points) {
        return Ok((points.to_vec(), Rotation::IDENTITY));
    }
    let mut q = 2u32;
    loop {
        if is_prime(q) {
            let rot = Rotation {
                angle: std::f64::consts::PI / (4.0 * q as f64),
                prime: q,
            };
            let moved: Vec<Point> = points.iter().map(|&p| rot.apply(p)).collect();
            if distinct_coords(&moved) {
                return Ok((moved, rot));
            }
        }
        q += 1;
    }
}
