//! Minimum-cost angle-monotone closed curve through `p` around `x0`.
//!
//! The sweep rotates a ray about `x0` starting at `p`, keeping the ray
//! partitioned into maximal intervals sharing the same `(parent, fixedcost)`.
//! Interval boundaries are never stored as numbers, only as curves that are
//! re-evaluated at the current angle: hull chains, visibility half-lines, or
//! equal-cost hyperbola branches.

use crate::geometry::{
    bbox, convex_hull, cost_eq, cost_lt, hulls_intersect, orient, point_in_polygon,
    point_segment_dist, polygon_area, Hull, Point,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("x0 and p coincide")]
    DegenerateRay,
    #[error("p lies inside cluster {0}")]
    PInsideCluster(usize),
    #[error("p lies inside the center")]
    PInsideCenter,
    #[error("p lies outside the outer limit")]
    POutsideLimit,
    #[error("clusters {0} and {1} have intersecting hulls")]
    Overlap(usize, usize),
    #[error("perturbation {eps} exceeds half the minimum gap {gap}")]
    EpsilonTooLarge { eps: f64, gap: f64 },
    #[error("no feasible curve")]
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveCluster {
    pub points: Vec<Point>,
    /// price paid when the cluster ends up outside the curve
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepProblem {
    pub clusters: Vec<CurveCluster>,
    pub x0: Point,
    pub p: Point,
    /// star-shaped (from `x0`) polygon the curve may not leave
    pub outer: Option<Vec<Point>>,
    /// star-shaped polygon around `x0` the curve must enclose
    pub inner: Option<Vec<Point>>,
    /// clusters glued to `x0`; the center becomes the hull of `x0` and these
    /// (plus anything that hull touches). Ignored when `inner` is given.
    pub forced_in: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PolyKind {
    Center,
    Outer,
    Cluster(usize),
}

#[derive(Clone, Debug)]
pub struct Poly {
    pub kind: PolyKind,
    /// vertex ids, counterclockwise
    pub verts: Vec<usize>,
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Origin {
    P,
    Center,
    Outer,
    /// `point` indexes into the input cluster's point list
    Cluster {
        cluster: usize,
        point: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    P,
    Left,
    Right,
    Far,
    Near,
    CenterV,
    OuterV,
}

/// Instance after the reduction to non-degenerate clusters in general position.
#[derive(Clone, Debug)]
pub struct PerturbedProblem {
    pub x0: Point,
    pub p: Point,
    pub pts: Vec<Point>,
    pub origin: Vec<Origin>,
    pub polys: Vec<Poly>,
    pub eps1: f64,
    pub eps2: f64,
    /// input clusters that are always enclosed (they hold `x0` or sit inside the inner limit)
    pub center_clusters: Vec<usize>,
    /// input clusters outside the outer limit, always charged
    pub outside_clusters: Vec<usize>,
    pub fixed_cost: f64,
    pub n_input_clusters: usize,
    poly_of: Vec<usize>,
    role: Vec<Role>,
    theta: Vec<f64>,
    e: Point,
}

const P_ID: usize = 0;

fn ccw(poly: &mut Vec<Point>) {
    if polygon_area(poly) < 0.0 {
        poly.reverse();
    }
}

fn hull_distance(a: &Hull, b: &Hull) -> f64 {
    if hulls_intersect(a, b) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (x, y) in [(a, b), (b, a)] {
        for &v in &x.vertices {
            if y.len() == 1 {
                best = best.min(v.dist(y.vertices[0]));
            }
            for (s, t) in y.edges() {
                best = best.min(point_segment_dist(v, s, t));
            }
        }
    }
    best
}

fn polygon_boundary_dist(poly: &[Point], q: Point) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_dist(q, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Clusters merged into the center: the forced ones, any cluster holding `x0`,
/// closed under touching the hull of `x0` and the center clusters.
pub fn center_set(problem: &SweepProblem) -> Vec<usize> {
    if problem.inner.is_some() {
        return Vec::new();
    }
    let hulls: Vec<Hull> = problem
        .clusters
        .iter()
        .map(|c| convex_hull(&c.points).unwrap())
        .collect();
    let mut inside = vec![false; hulls.len()];
    for &f in &problem.forced_in {
        inside[f] = true;
    }
    for (i, h) in hulls.iter().enumerate() {
        if h.contains(problem.x0) {
            inside[i] = true;
        }
    }
    if !inside.iter().any(|&b| b) {
        return Vec::new();
    }
    loop {
        let center = center_hull(problem, &inside);
        let mut grew = false;
        for i in 0..hulls.len() {
            if !inside[i] && hulls_intersect(&center, &hulls[i]) {
                inside[i] = true;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    (0..hulls.len()).filter(|&i| inside[i]).collect()
}

fn center_hull(problem: &SweepProblem, inside: &[bool]) -> Hull {
    let mut pts = vec![problem.x0];
    for (i, c) in problem.clusters.iter().enumerate() {
        if inside[i] {
            pts.extend(c.points.iter().copied());
        }
    }
    convex_hull(&pts).unwrap()
}

/// Minimum positive clearance between the objects of the problem.
pub fn min_gap(problem: &SweepProblem) -> Result<f64, CurveError> {
    let hulls: Vec<Hull> = problem
        .clusters
        .iter()
        .map(|c| convex_hull(&c.points).unwrap())
        .collect();
    let cs = center_set(problem);
    let mut inside = vec![false; hulls.len()];
    for &i in &cs {
        inside[i] = true;
    }
    let center = center_hull(problem, &inside);
    let single = |q: Point| Hull { vertices: vec![q] };
    let mut g = f64::INFINITY;
    if !cs.is_empty() {
        let dp = hull_distance(&center, &single(problem.p));
        if dp == 0.0 {
            return Err(CurveError::PInsideCenter);
        }
        g = g.min(dp);
    }
    for i in (0..hulls.len()).filter(|&i| !inside[i]) {
        for j in (i + 1..hulls.len()).filter(|&j| !inside[j]) {
            let d = hull_distance(&hulls[i], &hulls[j]);
            if d == 0.0 {
                return Err(CurveError::Overlap(i, j));
            }
            g = g.min(d);
        }
        let dp = hull_distance(&hulls[i], &single(problem.p));
        if dp == 0.0 {
            return Err(CurveError::PInsideCluster(i));
        }
        g = g.min(dp);
        let dx = hull_distance(&hulls[i], &center);
        if dx > 0.0 {
            g = g.min(dx);
        }
    }
    for lim in [&problem.outer, &problem.inner].into_iter().flatten() {
        for h in &hulls {
            for &v in &h.vertices {
                let d = polygon_boundary_dist(lim, v);
                if d > 0.0 {
                    g = g.min(d);
                }
            }
        }
        g = g.min(polygon_boundary_dist(lim, problem.p));
    }
    g = g.min(problem.p.dist(problem.x0));
    if !(g > 0.0) {
        return Err(CurveError::DegenerateRay);
    }
    Ok(g)
}

fn triangle(v: Point, r: f64, jitter: f64, rng: &mut ChaCha8Rng) -> [Point; 3] {
    let mut out = [Point::default(); 3];
    for (k, o) in out.iter_mut().enumerate() {
        let phi = PI / 2.0 + TAU * k as f64 / 3.0;
        let j = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * jitter;
        *o = v + Point::new(phi.cos(), phi.sin()) * r + j;
    }
    out
}

/// Counterclockwise angle of `v - x0` measured from direction `e`, in `[0, 2π)`.
fn angle_from(e: Point, x0: Point, v: Point) -> f64 {
    let w = v - x0;
    let a = e.cross(w).atan2(e.dot(w));
    if a < 0.0 {
        a + TAU
    } else {
        a
    }
}

/// Replace every input point by a tiny jittered triangle so that every
/// cluster has an interior and no three vertices are collinear.
pub fn perturb(
    problem: &SweepProblem,
    eps: Option<f64>,
    seed: u64,
) -> Result<PerturbedProblem, CurveError> {
    if problem.x0 == problem.p {
        return Err(CurveError::DegenerateRay);
    }
    let gap = min_gap(problem)?;
    let eps1 = match eps {
        Some(e) if e > gap / 2.0 => return Err(CurveError::EpsilonTooLarge { eps: e, gap }),
        Some(e) => e,
        None => gap / 1000.0,
    };
    let eps2 = eps1 / 1000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x0, p) = (problem.x0, problem.p);

    let outer: Vec<Point> = match &problem.outer {
        Some(o) => {
            let mut o = o.clone();
            ccw(&mut o);
            o
        }
        None => {
            let mut all: Vec<Point> = problem
                .clusters
                .iter()
                .flat_map(|c| c.points.iter().copied())
                .collect();
            all.push(x0);
            all.push(p);
            if let Some(inner) = &problem.inner {
                all.extend(inner.iter().copied());
            }
            let (lo, hi) = bbox(&all);
            let m = (hi.x - lo.x).max(hi.y - lo.y).max(1e-9) * 0.25 + 10.0 * eps1;
            vec![
                Point::new(lo.x - m, lo.y - m),
                Point::new(hi.x + m, lo.y - m),
                Point::new(hi.x + m, hi.y + m),
                Point::new(lo.x - m, hi.y + m),
            ]
        }
    };
    if !point_in_polygon(&outer, p) || polygon_boundary_dist(&outer, p) == 0.0 {
        return Err(CurveError::POutsideLimit);
    }

    let mut pts = vec![p];
    let mut origin = vec![Origin::P];
    let mut polys: Vec<Poly> = Vec::new();
    let mut center_clusters = Vec::new();
    let mut outside_clusters = Vec::new();
    let mut fixed_cost = 0.0;

    let glued = center_set(problem);

    // center polygon
    let mut center_verts: Vec<Point> = Vec::new();
    let mut center_origin: Vec<Origin> = Vec::new();
    if let Some(inner) = &problem.inner {
        let mut inner = inner.clone();
        ccw(&mut inner);
        center_origin = vec![Origin::Center; inner.len()];
        center_verts = inner;
    } else if !glued.is_empty() {
        let mut raw = Vec::new();
        let mut raw_o = Vec::new();
        for t in triangle(x0, eps1, eps2, &mut rng) {
            raw.push(t);
            raw_o.push(Origin::Center);
        }
        for &h in &glued {
            for (k, &v) in problem.clusters[h].points.iter().enumerate() {
                for t in triangle(v, eps1, eps2, &mut rng) {
                    raw.push(t);
                    raw_o.push(Origin::Cluster {
                        cluster: h,
                        point: k,
                    });
                }
            }
        }
        let hull = convex_hull(&raw).unwrap();
        for v in hull.vertices {
            let k = raw.iter().position(|&r| r == v).unwrap();
            center_verts.push(v);
            center_origin.push(raw_o[k]);
        }
        center_clusters.extend(glued.iter().copied());
    } else {
        for t in triangle(x0, eps1, eps2, &mut rng) {
            center_verts.push(t);
            center_origin.push(Origin::Center);
        }
    }
    let mut ids = Vec::new();
    for (v, o) in center_verts.iter().zip(center_origin) {
        ids.push(pts.len());
        pts.push(*v);
        origin.push(o);
    }
    polys.push(Poly {
        kind: PolyKind::Center,
        verts: ids,
        cost: 0.0,
    });
    let center_poly_pts = center_verts.clone();

    let mut ids = Vec::new();
    for &v in &outer {
        ids.push(pts.len());
        pts.push(v);
        origin.push(Origin::Outer);
    }
    polys.push(Poly {
        kind: PolyKind::Outer,
        verts: ids,
        cost: 0.0,
    });

    for (ci, c) in problem.clusters.iter().enumerate() {
        if glued.contains(&ci) {
            continue;
        }
        if problem.inner.is_some()
            && c.points
                .iter()
                .any(|&q| point_in_polygon(&center_poly_pts, q))
        {
            center_clusters.push(ci);
            continue;
        }
        if c.points.iter().any(|&q| !point_in_polygon(&outer, q)) {
            outside_clusters.push(ci);
            fixed_cost += c.cost;
            continue;
        }
        let mut raw = Vec::new();
        let mut raw_o = Vec::new();
        for (k, &v) in c.points.iter().enumerate() {
            for t in triangle(v, eps1, eps2, &mut rng) {
                raw.push(t);
                raw_o.push(Origin::Cluster {
                    cluster: ci,
                    point: k,
                });
            }
        }
        let hull = convex_hull(&raw).unwrap();
        let mut ids = Vec::new();
        for v in hull.vertices {
            let k = raw.iter().position(|&r| r == v).unwrap();
            ids.push(pts.len());
            pts.push(v);
            origin.push(raw_o[k]);
        }
        polys.push(Poly {
            kind: PolyKind::Cluster(ci),
            verts: ids,
            cost: c.cost,
        });
    }

    let mut pp = PerturbedProblem {
        x0,
        p,
        pts,
        origin,
        polys,
        eps1,
        eps2,
        center_clusters,
        outside_clusters,
        fixed_cost,
        n_input_clusters: problem.clusters.len(),
        poly_of: Vec::new(),
        role: Vec::new(),
        theta: Vec::new(),
        e: (p - x0) * (1.0 / p.dist(x0)),
    };
    pp.classify();
    Ok(pp)
}

impl PerturbedProblem {
    fn classify(&mut self) {
        let n = self.pts.len();
        self.poly_of = vec![usize::MAX; n];
        self.role = vec![Role::P; n];
        self.theta = self
            .pts
            .iter()
            .map(|&v| angle_from(self.e, self.x0, v))
            .collect();
        self.theta[P_ID] = 0.0;
        for (pi, poly) in self.polys.iter().enumerate() {
            for &v in &poly.verts {
                self.poly_of[v] = pi;
            }
            match poly.kind {
                PolyKind::Center => poly
                    .verts
                    .iter()
                    .for_each(|&v| self.role[v] = Role::CenterV),
                PolyKind::Outer => poly.verts.iter().for_each(|&v| self.role[v] = Role::OuterV),
                PolyKind::Cluster(_) => {
                    let vs = &poly.verts;
                    let m = vs.len();
                    let x0 = self.x0;
                    let pts = &self.pts;
                    let l = (0..m)
                        .find(|&i| {
                            (0..m).all(|j| j == i || orient(x0, pts[vs[i]], pts[vs[j]]) > 0.0)
                        })
                        .expect("cluster polygon must not surround x0");
                    let r = (0..m)
                        .find(|&i| {
                            (0..m).all(|j| j == i || orient(x0, pts[vs[i]], pts[vs[j]]) < 0.0)
                        })
                        .unwrap();
                    let mut i = (l + 1) % m;
                    while i != r {
                        self.role[vs[i]] = Role::Far;
                        i = (i + 1) % m;
                    }
                    let mut i = (r + 1) % m;
                    while i != l {
                        self.role[vs[i]] = Role::Near;
                        i = (i + 1) % m;
                    }
                    self.role[vs[l]] = Role::Left;
                    self.role[vs[r]] = Role::Right;
                }
            }
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.pts.len()
    }

    pub fn angle(&self, v: usize) -> f64 {
        self.theta[v]
    }

    fn dir(&self, theta: f64) -> Point {
        let (s, c) = theta.sin_cos();
        Point::new(c * self.e.x - s * self.e.y, s * self.e.x + c * self.e.y)
    }

    fn cluster_polys(&self) -> impl Iterator<Item = (usize, &Poly)> {
        self.polys
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p.kind, PolyKind::Cluster(_)))
    }

    fn neighbours(&self, v: usize) -> (usize, usize) {
        let poly = &self.polys[self.poly_of[v]];
        let m = poly.verts.len();
        let i = poly.verts.iter().position(|&w| w == v).unwrap();
        (poly.verts[(i + m - 1) % m], poly.verts[(i + 1) % m])
    }

    pub fn poly_points(&self, pi: usize) -> Vec<Point> {
        self.polys[pi].verts.iter().map(|&v| self.pts[v]).collect()
    }
}

/// Real roots of `a x² + b x + c`.
fn quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return vec![];
    }
    if a.abs() <= 1e-14 * scale {
        return if b == 0.0 { vec![] } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        // keep near-tangent roots, they are filtered by the caller
        if disc > -1e-10 * (b * b + (4.0 * a * c).abs()) {
            return vec![-b / (2.0 * a)];
        }
        return vec![];
    }
    let sq = disc.max(0.0).sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut r = Vec::with_capacity(2);
    if q != 0.0 {
        r.push(q / a);
        r.push(c / q);
    } else {
        r.push(-b / (2.0 * a));
    }
    r
}

/// Parameters `λ` with `f1 + |a + λw - u1| = f2 + |a + λw - u2|`.
fn hyperbola_line(a: Point, w: Point, u1: Point, f1: f64, u2: Point, f2: f64) -> Vec<f64> {
    let c = f2 - f1;
    let (a1, a2) = (a - u1, a - u2);
    let k1 = 2.0 * w.dot(u2 - u1);
    let k0 = a1.dot(a1) - a2.dot(a2);
    let scale = a1.norm() + a2.norm() + u1.dist(u2) + f1.abs() + f2.abs();
    let mut cands = if c.abs() <= 1e-13 * scale {
        if k1 == 0.0 {
            vec![]
        } else {
            vec![-k0 / k1]
        }
    } else {
        let m1 = k1 / (2.0 * c);
        let m0 = (k0 / c + c) / 2.0;
        quadratic(
            w.dot(w) - m1 * m1,
            2.0 * w.dot(a1) - 2.0 * m1 * m0,
            a1.dot(a1) - m0 * m0,
        )
    };
    cands.retain(|&l| {
        if !l.is_finite() {
            return false;
        }
        let q = a + w * l;
        let g = f1 + q.dist(u1) - f2 - q.dist(u2);
        g.abs() <= 1e-7 * (scale + q.dist(a))
    });
    cands
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Kind {
    /// points whose cheapest angle-monotone path from `p` ends with an edge from `par`
    Reach { par: usize, fc: f64 },
    /// unreachable
    Bot,
    /// inside a polygon (center, outer exterior, or a cluster)
    Void(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Boundary {
    Near(usize),
    Far(usize),
    Exit(usize),
    /// half-line from `b` pointing away from `a`
    Ray {
        a: usize,
        b: usize,
    },
    /// equal-cost curve between the two neighbouring intervals
    Cost,
}

#[derive(Clone, Copy, Debug)]
enum Geo {
    Line(Point, Point),
    Hyp(Point, f64, Point, f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceEvent {
    pub theta: f64,
    pub event: String,
    pub intervals: Vec<Kind>,
    pub boundaries: Vec<Boundary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveResult {
    pub cost: f64,
    /// cost recomputed from the curve and the charged clusters
    pub recomputed_cost: f64,
    /// closed curve, starting at `p`, counterclockwise around `x0`
    pub curve: Vec<Point>,
    pub curve_origin: Vec<Origin>,
    /// per input cluster: inside (or on) the curve
    pub enclosed: Vec<bool>,
    pub max_intervals: usize,
    pub n_vertices: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEvent>>,
}

pub struct SweepState<'a> {
    pp: &'a PerturbedProblem,
    pub ints: Vec<Kind>,
    pub bds: Vec<Boundary>,
    pub theta: f64,
    pub par: Vec<Option<usize>>,
    pub cost: Vec<f64>,
    pub max_intervals: usize,
    scale: f64,
    trace: Option<Vec<TraceEvent>>,
}

/// Parameters of the crossings of the ray `x0 + s·d` with a closed polygon.
fn ray_polygon_hits(x0: Point, d: Point, poly: &[Point]) -> Vec<(f64, usize)> {
    let m = poly.len();
    let mut hits = Vec::new();
    for i in 0..m {
        let (a, b) = (poly[i], poly[(i + 1) % m]);
        let ab = b - a;
        let den = d.cross(ab);
        if den == 0.0 {
            continue;
        }
        let s = (a - x0).cross(ab) / den;
        let lam = (a - x0).cross(d) / den;
        if (-1e-12..=1.0 + 1e-12).contains(&lam) && s >= 0.0 {
            hits.push((s, i));
        }
    }
    hits
}

fn ray_polygon(x0: Point, d: Point, poly: &[Point]) -> Option<(f64, f64)> {
    let hits = ray_polygon_hits(x0, d, poly);
    if hits.is_empty() {
        return None;
    }
    let lo = hits.iter().map(|h| h.0).fold(f64::INFINITY, f64::min);
    let hi = hits.iter().map(|h| h.0).fold(0.0, f64::max);
    Some((lo, hi))
}

/// Where the ray `x0 + s·d` meets the half-line `b + λ·w`, `λ ≥ 0`.
fn ray_halfline(x0: Point, d: Point, b: Point, w: Point) -> f64 {
    let den = d.cross(w);
    if den == 0.0 {
        return f64::INFINITY;
    }
    let s = (b - x0).cross(w) / den;
    let lam = (b - x0).cross(d) / den;
    if lam < 0.0 || s < 0.0 {
        f64::INFINITY
    } else {
        s
    }
}

fn three_sites(s: [(Point, f64); 3]) -> Vec<Point> {
    let (u0, f0) = s[0];
    let mut m = [[0.0; 2]; 2];
    let mut r0 = [0.0; 2];
    let mut r1 = [0.0; 2];
    for i in 1..3 {
        let (ui, fi) = s[i];
        m[i - 1] = [2.0 * (ui.x - u0.x), 2.0 * (ui.y - u0.y)];
        r0[i - 1] = ui.dot(ui) - u0.dot(u0) - fi * fi + f0 * f0;
        r1[i - 1] = 2.0 * (fi - f0);
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 {
        return vec![];
    }
    let solve = |r: [f64; 2]| {
        Point::new(
            (r[0] * m[1][1] - m[0][1] * r[1]) / det,
            (m[0][0] * r[1] - r[0] * m[1][0]) / det,
        )
    };
    let (q0, q1) = (solve(r0), solve(r1));
    let c0 = q0 - u0;
    let roots = quadratic(
        q1.dot(q1) - 1.0,
        2.0 * (q1.dot(c0) + f0),
        c0.dot(c0) - f0 * f0,
    );
    roots
        .into_iter()
        .filter(|&dd| s.iter().all(|&(_, f)| dd >= f - 1e-9 * dd.abs().max(1.0)))
        .map(|dd| q0 + q1 * dd)
        .collect()
}

fn shadowed(u: Point, t: Point, e0: Point, e1: Point, free_right: bool) -> bool {
    let q = t + (t - u);
    let o = orient(e0, e1, q);
    if free_right {
        o < 0.0
    } else {
        o > 0.0
    }
}

impl<'a> SweepState<'a> {
    pub fn new(pp: &'a PerturbedProblem, trace: bool) -> Self {
        let n = pp.pts.len();
        let scale = pp.pts.iter().map(|&v| v.dist(pp.x0)).fold(0.0, f64::max);
        let mut st = SweepState {
            pp,
            ints: Vec::new(),
            bds: Vec::new(),
            theta: 0.0,
            par: vec![None; n],
            cost: vec![f64::INFINITY; n],
            max_intervals: 0,
            scale,
            trace: trace.then(Vec::new),
        };
        st.cost[P_ID] = 0.0;
        let sp = pp.p.dist(pp.x0);
        let mut crossing: Vec<(f64, usize)> = pp
            .cluster_polys()
            .filter_map(|(pi, _)| {
                ray_polygon(pp.x0, pp.e, &pp.poly_points(pi)).map(|(lo, _)| (lo, pi))
            })
            .collect();
        crossing.sort_by(|a, b| a.0.total_cmp(&b.0));
        st.ints.push(Kind::Void(0));
        for &(s, pi) in &crossing {
            if s < sp {
                st.ints.push(Kind::Bot);
                st.ints.push(Kind::Void(pi));
            }
        }
        st.ints.push(Kind::Reach { par: P_ID, fc: 0.0 });
        for &(s, pi) in &crossing {
            if s > sp {
                st.ints.push(Kind::Void(pi));
                st.ints.push(Kind::Bot);
            }
        }
        st.ints.push(Kind::Void(1));
        for i in 0..st.ints.len() - 1 {
            let b = st
                .natural(st.ints[i], st.ints[i + 1])
                .expect("initial intervals are distinct");
            st.bds.push(b);
        }
        st.max_intervals = st.ints.len();
        st.record("init");
        st
    }

    fn record(&mut self, what: &str) {
        if let Some(tr) = &mut self.trace {
            tr.push(TraceEvent {
                theta: self.theta,
                event: what.to_string(),
                intervals: self.ints.clone(),
                boundaries: self.bds.clone(),
            });
        }
    }

    /// Boundary between two adjacent intervals; `None` when they should merge.
    fn natural(&self, a: Kind, b: Kind) -> Option<Boundary> {
        let pp = self.pp;
        Some(match (a, b) {
            (Kind::Void(0), _) => Boundary::Exit(0),
            (Kind::Void(pi), _) => Boundary::Far(pi),
            (_, Kind::Void(1)) => Boundary::Exit(1),
            (_, Kind::Void(pi)) => Boundary::Near(pi),
            (Kind::Reach { par: ua, fc: fa }, Kind::Reach { par: ub, fc: fb }) => {
                let d = pp.pts[ua].dist(pp.pts[ub]);
                if ua == ub && cost_eq(fa, fb) {
                    return None;
                } else if ua != ub && cost_eq(fb, fa + d) {
                    Boundary::Ray { a: ua, b: ub }
                } else if ua != ub && cost_eq(fa, fb + d) {
                    Boundary::Ray { a: ub, b: ua }
                } else {
                    Boundary::Cost
                }
            }
            (Kind::Bot, Kind::Bot) => return None,
            _ => unreachable!("unreachable intervals only border polygons"),
        })
    }

    fn reach(&self, i: usize) -> (Point, f64) {
        match self.ints[i] {
            Kind::Reach { par, fc } => (self.pp.pts[par], fc),
            k => panic!("interval {i} is {k:?}, not reachable"),
        }
    }

    fn chain(&self, pi: usize, d: Point, theta: f64, far: bool) -> f64 {
        let pp = self.pp;
        let poly = pp.poly_points(pi);
        match ray_polygon(pp.x0, d, &poly) {
            Some((lo, hi)) => {
                if far {
                    hi
                } else {
                    lo
                }
            }
            None => {
                // just outside the angular span: snap to the nearest vertex
                let best = pp.polys[pi]
                    .verts
                    .iter()
                    .min_by(|&&a, &&b| {
                        let da = (pp.theta[a] - theta)
                            .abs()
                            .min(TAU - (pp.theta[a] - theta).abs());
                        let db = (pp.theta[b] - theta)
                            .abs()
                            .min(TAU - (pp.theta[b] - theta).abs());
                        da.total_cmp(&db)
                    })
                    .unwrap();
                pp.pts[*best].dist(pp.x0)
            }
        }
    }

    fn cost_boundary(&self, d: Point, ua: Point, fa: f64, ub: Point, fb: f64) -> f64 {
        let x0 = self.pp.x0;
        let g = |s: f64| {
            let q = x0 + d * s;
            fa + q.dist(ua) - fb - q.dist(ub)
        };
        let slope = |s: f64| {
            let q = x0 + d * s;
            let (qa, qb) = (q - ua, q - ub);
            d.dot(qa) / qa.norm().max(1e-300) - d.dot(qb) / qb.norm().max(1e-300)
        };
        let roots = hyperbola_line(x0, d, ua, fa, ub, fb);
        if let Some(&s) = roots
            .iter()
            .filter(|&&s| s >= 0.0 && slope(s) > 0.0)
            .min_by(|a, b| a.total_cmp(b))
        {
            return s;
        }
        // numeric fallback: first sign change from below to above
        let top = 4.0 * self.scale.max(1e-12);
        let steps = 256;
        let mut prev = (0.0, g(0.0));
        if prev.1 >= 0.0 {
            return 0.0;
        }
        for j in 1..=steps {
            let s = top * j as f64 / steps as f64;
            let v = g(s);
            if v >= 0.0 {
                let (mut lo, mut hi) = (prev.0, s);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return hi;
            }
            prev = (s, v);
        }
        f64::INFINITY
    }

    /// Position along the ray at angle `theta` of boundary `i`.
    pub fn eval(&self, i: usize, theta: f64) -> f64 {
        let pp = self.pp;
        let d = pp.dir(theta);
        match self.bds[i] {
            Boundary::Near(pi) => self.chain(pi, d, theta, false),
            Boundary::Far(pi) | Boundary::Exit(pi) => self.chain(pi, d, theta, true),
            Boundary::Ray { a, b } => ray_halfline(pp.x0, d, pp.pts[b], pp.pts[b] - pp.pts[a]),
            Boundary::Cost => {
                let (ua, fa) = self.reach(i);
                let (ub, fb) = self.reach(i + 1);
                self.cost_boundary(d, ua, fa, ub, fb)
            }
        }
    }

    fn width(&self, k: usize, theta: f64) -> f64 {
        let w = self.eval(k, theta) - self.eval(k - 1, theta);
        if w.is_nan() {
            f64::INFINITY
        } else {
            w
        }
    }

    /// Interval holding the point at distance `s` along the ray at `theta` (linear scan).
    pub fn locate(&self, theta: f64, s: f64) -> usize {
        (0..self.bds.len())
            .find(|&i| s < self.eval(i, theta))
            .unwrap_or(self.bds.len())
    }

    /// Parent and fixed cost for a point at distance `s` along the ray at
    /// `theta`, by binary search over the ordered boundaries.
    pub fn query_parent(&self, theta: f64, s: f64) -> Option<(usize, f64)> {
        let (mut lo, mut hi) = (0, self.bds.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if s < self.eval(mid, theta) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        match self.ints[lo] {
            Kind::Reach { par, fc } => Some((par, fc)),
            _ => None,
        }
    }
}

impl<'a> SweepState<'a> {
    fn index_of_void(&self, pi: usize) -> usize {
        self.ints
            .iter()
            .position(|&k| k == Kind::Void(pi))
            .expect("polygon must be on the ray")
    }

    fn charge_below(&mut self, v: usize, amount: f64) {
        for k in &mut self.ints[..v] {
            if let Kind::Reach { fc, .. } = k {
                *fc += amount;
            }
        }
    }

    /// Settle the vertex `t`: record its parent and update the intervals.
    pub fn insert_vertex(&mut self, t: usize) {
        let pp = self.pp;
        self.theta = pp.theta[t];
        let pt = pp.pts[t];
        match pp.role[t] {
            Role::P => return,
            Role::Left => self.insert_left(t),
            Role::Right => self.insert_right(t),
            Role::Far | Role::CenterV => {
                let (_, next) = pp.neighbours(t);
                let v = if pp.role[t] == Role::Far {
                    self.index_of_void(pp.poly_of[t])
                } else {
                    0
                };
                if let Kind::Reach { par: u, fc } = self.ints[v + 1] {
                    let ct = fc + pp.pts[u].dist(pt);
                    self.par[t] = Some(u);
                    self.cost[t] = ct;
                    if shadowed(pp.pts[u], pt, pt, pp.pts[next], true) {
                        self.ints.insert(v + 1, Kind::Reach { par: t, fc: ct });
                        self.bds.insert(v + 1, Boundary::Ray { a: u, b: t });
                    }
                }
            }
            Role::Near => {
                let (prev, _) = pp.neighbours(t);
                let v = self.index_of_void(pp.poly_of[t]);
                if let Kind::Reach { par: u, fc } = self.ints[v - 1] {
                    let ct = fc + pp.pts[u].dist(pt);
                    self.par[t] = Some(u);
                    self.cost[t] = ct;
                    if shadowed(pp.pts[u], pt, pp.pts[prev], pt, true) {
                        self.ints.insert(v, Kind::Reach { par: t, fc: ct });
                        self.bds.insert(v - 1, Boundary::Ray { a: u, b: t });
                    }
                }
            }
            Role::OuterV => {
                let (_, next) = pp.neighbours(t);
                let v = self.ints.len() - 1;
                if let Kind::Reach { par: u, fc } = self.ints[v - 1] {
                    let ct = fc + pp.pts[u].dist(pt);
                    self.par[t] = Some(u);
                    self.cost[t] = ct;
                    if shadowed(pp.pts[u], pt, pt, pp.pts[next], false) {
                        self.ints.insert(v, Kind::Reach { par: t, fc: ct });
                        self.bds.insert(v - 1, Boundary::Ray { a: u, b: t });
                    }
                }
            }
        }
        self.max_intervals = self.max_intervals.max(self.ints.len());
        self.record(&format!("vertex {t}"));
    }

    fn insert_left(&mut self, t: usize) {
        let pp = self.pp;
        let pi = pp.poly_of[t];
        let pt = pp.pts[t];
        let j = self.locate(self.theta, pt.dist(pp.x0));
        match self.ints[j] {
            Kind::Bot => {
                self.ints
                    .splice(j..=j, [Kind::Bot, Kind::Void(pi), Kind::Bot]);
                self.bds
                    .splice(j..j, [Boundary::Near(pi), Boundary::Far(pi)]);
            }
            Kind::Reach { par: u, fc } => {
                let (prev, next) = pp.neighbours(t);
                let ct = fc + pp.pts[u].dist(pt);
                self.par[t] = Some(u);
                self.cost[t] = ct;
                let near = shadowed(pp.pts[u], pt, pp.pts[prev], pt, true);
                let far = shadowed(pp.pts[u], pt, pt, pp.pts[next], true);
                let j_kind = Kind::Reach { par: u, fc };
                let child = Kind::Reach { par: t, fc: ct };
                let ray = Boundary::Ray { a: u, b: t };
                let mut ni = vec![j_kind];
                let mut nb = vec![];
                if near {
                    nb.push(ray);
                    ni.push(child);
                }
                nb.push(Boundary::Near(pi));
                ni.push(Kind::Void(pi));
                nb.push(Boundary::Far(pi));
                if far {
                    ni.push(child);
                    nb.push(ray);
                }
                ni.push(j_kind);
                self.ints.splice(j..=j, ni);
                self.bds.splice(j..j, nb);
            }
            Kind::Void(_) => unreachable!("cluster vertex inside another polygon"),
        }
        let v = self.index_of_void(pi);
        self.charge_below(v, pp.polys[pi].cost);
    }

    fn insert_right(&mut self, t: usize) {
        let pp = self.pp;
        let pt = pp.pts[t];
        let mut v = self.index_of_void(pp.poly_of[t]);
        let option = |k: Kind| match k {
            Kind::Reach { par, fc } => Some((par, fc + pp.pts[par].dist(pt))),
            _ => None,
        };
        let (below, above) = (option(self.ints[v - 1]), option(self.ints[v + 1]));
        let from_below = match (below, above) {
            (None, None) => {
                // ⊥ ∅ ⊥ collapses to a single ⊥
                self.ints.drain(v..=v + 1);
                self.bds.drain(v - 1..=v);
                return;
            }
            (Some(b), Some(a)) => !cost_lt(a.1, b.1),
            (b, _) => b.is_some(),
        };
        let (u, ct) = if from_below {
            below.unwrap()
        } else {
            above.unwrap()
        };
        self.par[t] = Some(u);
        self.cost[t] = ct;
        let tilde = Kind::Reach { par: t, fc: ct };
        self.ints[v] = tilde;
        let x0 = pp.x0;
        let wins = |st: &Self, k: usize, far_bd: usize| {
            let s = st.eval(far_bd, st.theta);
            let q = x0 + pp.dir(st.theta) * s.min(4.0 * st.scale);
            let (w, fw) = st.reach(k);
            cost_lt(ct + pt.dist(q), fw + w.dist(q))
        };
        if from_below {
            self.bds[v - 1] = self
                .natural(self.ints[v - 1], tilde)
                .unwrap_or(Boundary::Cost);
            loop {
                let k = v + 1;
                match self.ints[k] {
                    Kind::Bot => {
                        self.ints.remove(k);
                        self.bds.remove(k);
                    }
                    Kind::Reach { .. } if wins(self, k, k) => {
                        self.ints.remove(k);
                        self.bds.remove(k);
                    }
                    other => {
                        self.bds[v] = self.natural(tilde, other).unwrap_or(Boundary::Cost);
                        break;
                    }
                }
            }
        } else {
            self.bds[v] = self
                .natural(tilde, self.ints[v + 1])
                .unwrap_or(Boundary::Cost);
            loop {
                let k = v - 1;
                match self.ints[k] {
                    Kind::Bot => {
                        self.ints.remove(k);
                        self.bds.remove(k - 1);
                        v -= 1;
                    }
                    Kind::Reach { .. } if wins(self, k, k - 1) => {
                        self.ints.remove(k);
                        self.bds.remove(k - 1);
                        v -= 1;
                    }
                    other => {
                        self.bds[v - 1] = self.natural(other, tilde).unwrap_or(Boundary::Cost);
                        break;
                    }
                }
            }
        }
    }

    /// Remove the reachable interval `k` whose width has shrunk to zero.
    fn annihilate(&mut self, k: usize) {
        self.ints.remove(k);
        self.bds.remove(k);
        match self.natural(self.ints[k - 1], self.ints[k]) {
            Some(b) => self.bds[k - 1] = b,
            None => {
                self.ints.remove(k);
                self.bds.remove(k - 1);
            }
        }
        self.record("annihilate");
    }
}

impl<'a> SweepState<'a> {
    fn geo(&self, i: usize, theta: f64) -> Option<Geo> {
        let pp = self.pp;
        match self.bds[i] {
            Boundary::Near(pi) | Boundary::Far(pi) | Boundary::Exit(pi) => {
                let poly = pp.poly_points(pi);
                let hits = ray_polygon_hits(pp.x0, pp.dir(theta), &poly);
                let far = !matches!(self.bds[i], Boundary::Near(_));
                let best = if far {
                    hits.iter().max_by(|a, b| a.0.total_cmp(&b.0))
                } else {
                    hits.iter().min_by(|a, b| a.0.total_cmp(&b.0))
                }?;
                let (a, b) = (poly[best.1], poly[(best.1 + 1) % poly.len()]);
                Some(Geo::Line(a, b - a))
            }
            Boundary::Ray { a, b } => Some(Geo::Line(pp.pts[b], pp.pts[b] - pp.pts[a])),
            Boundary::Cost => {
                let (ua, fa) = self.reach(i);
                let (ub, fb) = self.reach(i + 1);
                Some(Geo::Hyp(ua, fa, ub, fb))
            }
        }
    }

    /// Angles in the window at which the two boundaries of interval `k` may meet.
    fn crossing_candidates(&self, k: usize, lo: f64, hi: f64) -> Vec<f64> {
        let mid = 0.5 * (lo + hi);
        let (Some(g1), Some(g2)) = (self.geo(k - 1, mid), self.geo(k, mid)) else {
            return vec![];
        };
        let pts: Vec<Point> = match (g1, g2) {
            (Geo::Line(a1, w1), Geo::Line(a2, w2)) => {
                let den = w1.cross(w2);
                if den == 0.0 {
                    vec![]
                } else {
                    vec![a1 + w1 * ((a2 - a1).cross(w2) / den)]
                }
            }
            (Geo::Line(a, w), Geo::Hyp(u1, f1, u2, f2))
            | (Geo::Hyp(u1, f1, u2, f2), Geo::Line(a, w)) => hyperbola_line(a, w, u1, f1, u2, f2)
                .into_iter()
                .map(|l| a + w * l)
                .collect(),
            (Geo::Hyp(u1, f1, u2, f2), Geo::Hyp(_, _, u4, f4)) => {
                three_sites([(u1, f1), (u2, f2), (u4, f4)])
            }
        };
        let e = self.pp.e;
        pts.into_iter()
            .filter(|q| q.is_finite())
            .map(|q| angle_from(e, self.pp.x0, q))
            .filter(|&a| a > lo && a <= hi)
            .collect()
    }

    /// First angle in `(lo, hi]` at which interval `k` has non-positive width.
    fn first_zero(&self, k: usize, lo: f64, hi: f64) -> Option<f64> {
        const SAMPLES: usize = 12;
        if hi <= lo {
            return None;
        }
        let span = hi - lo;
        let mut angles: Vec<f64> = (1..=SAMPLES)
            .map(|j| lo + span * j as f64 / SAMPLES as f64)
            .collect();
        for c in self.crossing_candidates(k, lo, hi) {
            angles.push(c);
            angles.push((c + 1e-9 * span.max(1e-6)).min(hi));
        }
        angles.sort_by(|a, b| a.total_cmp(b));
        let mut prev = lo;
        for a in angles {
            if self.width(k, a) <= 0.0 {
                let (mut l, mut h) = (prev, a);
                for _ in 0..200 {
                    if h - l <= 1e-15 * h.max(1.0) {
                        break;
                    }
                    let m = 0.5 * (l + h);
                    if self.width(k, m) <= 0.0 {
                        h = m;
                    } else {
                        l = m;
                    }
                }
                return Some(h);
            }
            prev = a;
        }
        None
    }

    /// Earliest annihilation strictly after the current angle and not after `limit`.
    pub fn next_annihilation(&self, limit: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for k in 1..self.ints.len() - 1 {
            if !matches!(self.ints[k], Kind::Reach { .. }) {
                continue;
            }
            let chains =
                |b: Boundary| matches!(b, Boundary::Near(_) | Boundary::Far(_) | Boundary::Exit(_));
            if chains(self.bds[k - 1]) && chains(self.bds[k]) {
                continue;
            }
            if let Some(a) = self.first_zero(k, self.theta, limit) {
                if best.map_or(true, |(b, _)| a < b) {
                    best = Some((a, k));
                }
            }
        }
        best
    }

    /// Rotate the ray to `limit`, removing intervals as they vanish.
    pub fn advance_to(&mut self, limit: f64) {
        while let Some((a, k)) = self.next_annihilation(limit) {
            self.theta = a;
            self.annihilate(k);
        }
        self.theta = limit;
        loop {
            let dead = (1..self.ints.len() - 1).find(|&k| {
                matches!(self.ints[k], Kind::Reach { .. }) && self.width(k, limit) <= 0.0
            });
            match dead {
                Some(k) => self.annihilate(k),
                None => break,
            }
        }
    }

    pub fn into_trace(self) -> Option<Vec<TraceEvent>> {
        self.trace
    }
}

/// Run the sweep on an already perturbed instance.
pub fn solve_perturbed(pp: &PerturbedProblem, trace: bool) -> Result<CurveResult, CurveError> {
    let mut order: Vec<usize> = (0..pp.pts.len())
        .filter(|&v| pp.role[v] != Role::P)
        .collect();
    // equal angles: a polygon opens before its chains and closes after them
    let rank = |v: usize| match pp.role[v] {
        Role::Left => 0,
        Role::Right => 2,
        _ => 1,
    };
    order.sort_by(|&a, &b| {
        pp.theta[a]
            .total_cmp(&pp.theta[b])
            .then(rank(a).cmp(&rank(b)))
    });
    let mut st = SweepState::new(pp, trace);
    for &v in &order {
        st.advance_to(pp.theta[v]);
        st.insert_vertex(v);
    }
    st.advance_to(TAU);
    let sp = pp.p.dist(pp.x0);
    let j = st.locate(TAU, sp);
    let Kind::Reach { par: last, fc } = st.ints[j] else {
        return Err(CurveError::Infeasible);
    };
    if last == P_ID {
        return Err(CurveError::Infeasible);
    }
    let cost = fc + pp.pts[last].dist(pp.p) + pp.fixed_cost;

    let mut chain = vec![];
    let mut u = last;
    while u != P_ID {
        chain.push(u);
        if chain.len() > pp.pts.len() {
            return Err(CurveError::Infeasible);
        }
        u = st.par[u].ok_or(CurveError::Infeasible)?;
    }
    chain.push(P_ID);
    chain.reverse();
    let curve: Vec<Point> = chain.iter().map(|&v| pp.pts[v]).collect();
    let curve_origin: Vec<Origin> = chain.iter().map(|&v| pp.origin[v]).collect();

    let tol = pp.eps2 * 1e-3;
    let mut enclosed = vec![false; pp.n_input_clusters];
    let mut recomputed = crate::geometry::polygon_length(&curve) + pp.fixed_cost;
    for &c in &pp.center_clusters {
        enclosed[c] = true;
    }
    for (_, poly) in pp.cluster_polys() {
        let PolyKind::Cluster(c) = poly.kind else {
            unreachable!()
        };
        let outside = poly.verts.iter().any(|&v| {
            let q = pp.pts[v];
            !point_in_polygon(&curve, q) && polygon_boundary_dist(&curve, q) > tol
        });
        enclosed[c] = !outside;
        if outside {
            recomputed += poly.cost;
        }
    }
    let max_intervals = st.max_intervals;
    Ok(CurveResult {
        cost,
        recomputed_cost: recomputed,
        curve,
        curve_origin,
        enclosed,
        max_intervals,
        n_vertices: pp.pts.len(),
        trace: st.into_trace(),
    })
}

/// Perturb and solve. The returned curve lives in perturbed coordinates;
/// `enclosed` refers to the input clusters.
pub fn solve_best_curve(problem: &SweepProblem, seed: u64) -> Result<CurveResult, CurveError> {
    let pp = perturb(problem, None, seed)?;
    solve_perturbed(&pp, false)
}
