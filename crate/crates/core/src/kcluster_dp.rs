//! Minimum perimeter sum with exactly `k` clusters: a dynamic program over
//! grid boxes. A subproblem fixes a box, the hull edges crossing its border,
//! the number of hull pieces inside and whether the box lies inside a hull.
//! It is solved by splitting the box along a grid line and joining the two
//! halves. The program runs top-down and memoises only reachable subproblems.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{convex_hull, general_position, orient, point_in_polygon, point_segment_dist, GeometryError, Point};
use crate::oracle::Partition;

pub const HELP_PER_GAP: u32 = 19_999;
const HELP_DIV: f64 = 20_000.0;
/// Preferred separator position within a gap.
pub const MID_HELP: u32 = 10_000;
pub const DEFAULT_BUDGET: usize = 2_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("k = {k} out of range for {n} points")]
    BadK { k: usize, n: usize },
    #[error("node budget of {0} subproblems exceeded")]
    BudgetExceeded(usize),
    #[error("{0} edges of the border set cross one box side")]
    NotCompact(usize),
    #[error("malformed solution: {0}")]
    Malformed(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Axis {
    X,
    Y,
}

/// A grid line. Main lines pass through a point and sit formally on one side
/// of it; help lines subdivide the gap between consecutive coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum LineRef {
    /// through the point of the given rank; `plus` = formally right of / above it
    Main { rank: u32, plus: bool },
    /// `j`-th of the help lines after coordinate rank `gap`
    Help { gap: u32, j: u32 },
}

#[derive(Clone, Debug)]
pub struct LineGrid {
    /// sorted coordinates
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// per point, the rank of its coordinate
    pub x_rank: Vec<u32>,
    pub y_rank: Vec<u32>,
    /// numeric stand-in for the formal side of a main line
    mu: [f64; 2],
}

/// Main and help lines of a point set with pairwise distinct coordinates.
pub fn build_grid(points: &[Point]) -> Result<LineGrid, DpError> {
    let rank = |key: fn(&Point) -> f64| -> Result<(Vec<f64>, Vec<u32>, f64), DpError> {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| key(&points[a]).total_cmp(&key(&points[b])));
        let cs: Vec<f64> = order.iter().map(|&i| key(&points[i])).collect();
        let mut r = vec![0u32; points.len()];
        for (k, &i) in order.iter().enumerate() {
            r[i] = k as u32;
        }
        let mut gap = f64::INFINITY;
        for w in cs.windows(2) {
            if w[1] <= w[0] {
                return Err(DpError::Geometry(GeometryError::Duplicate(0, 0)));
            }
            gap = gap.min(w[1] - w[0]);
        }
        if !gap.is_finite() {
            gap = 1.0;
        }
        Ok((cs, r, gap / (4.0 * HELP_DIV)))
    };
    let (xs, x_rank, mx) = rank(|p| p.x)?;
    let (ys, y_rank, my) = rank(|p| p.y)?;
    Ok(LineGrid { xs, ys, x_rank, y_rank, mu: [mx, my] })
}

impl LineGrid {
    pub fn n(&self) -> usize {
        self.xs.len()
    }

    fn cs(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.xs,
            Axis::Y => &self.ys,
        }
    }

    pub fn gaps(&self, axis: Axis) -> usize {
        self.cs(axis).len().saturating_sub(1)
    }

    pub fn main_lines(&self, axis: Axis) -> Vec<LineRef> {
        (0..self.cs(axis).len() as u32)
            .flat_map(|rank| [LineRef::Main { rank, plus: false }, LineRef::Main { rank, plus: true }])
            .collect()
    }

    /// `c_g + (c_{g+1} − c_g)·j / 20000`
    pub fn help_coord(&self, axis: Axis, gap: u32, j: u32) -> f64 {
        let c = self.cs(axis);
        let (a, b) = (c[gap as usize], c[gap as usize + 1]);
        a + (b - a) / HELP_DIV * j as f64
    }

    /// Exact position: coordinate plus the formal side (−1 before a point, +1 after).
    pub fn key(&self, axis: Axis, l: LineRef) -> (f64, i8) {
        match l {
            LineRef::Main { rank, plus } => (self.cs(axis)[rank as usize], if plus { 1 } else { -1 }),
            LineRef::Help { gap, j } => (self.help_coord(axis, gap, j), 0),
        }
    }

    pub fn cmp(&self, axis: Axis, a: LineRef, b: LineRef) -> Ordering {
        let (ka, kb) = (self.key(axis, a), self.key(axis, b));
        ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1))
    }

    /// Numeric coordinate for intersection tests; the formal side of a main
    /// line becomes an offset well below the spacing of help lines.
    pub fn coord(&self, axis: Axis, l: LineRef) -> f64 {
        let (c, side) = self.key(axis, l);
        let mu = self.mu[if axis == Axis::X { 0 } else { 1 }];
        c + side as f64 * mu
    }

    pub fn outer_box(&self) -> GridBox {
        let last = self.n() as u32 - 1;
        GridBox {
            l: LineRef::Main { rank: 0, plus: false },
            r: LineRef::Main { rank: last, plus: true },
            b: LineRef::Main { rank: 0, plus: false },
            t: LineRef::Main { rank: last, plus: true },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct GridBox {
    pub l: LineRef,
    pub r: LineRef,
    pub b: LineRef,
    pub t: LineRef,
}

/// Box sides in counterclockwise order starting at the bottom-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Bottom = 0,
    Right = 1,
    Top = 2,
    Left = 3,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn w(&self) -> f64 {
        self.x1 - self.x0
    }
    pub fn h(&self) -> f64 {
        self.y1 - self.y0
    }
    pub fn perimeter(&self) -> f64 {
        2.0 * (self.w() + self.h())
    }
    pub fn contains(&self, p: Point) -> bool {
        self.x0 < p.x && p.x < self.x1 && self.y0 < p.y && p.y < self.y1
    }
    /// Start of each side along the boundary, counterclockwise from the bottom-left corner.
    pub fn side_start(&self, s: usize) -> f64 {
        let (w, h) = (self.w(), self.h());
        [0.0, w, w + h, 2.0 * w + h, 2.0 * (w + h)][s]
    }
    fn pos(&self, side: usize, q: Point) -> f64 {
        let (w, h) = (self.w(), self.h());
        match side {
            0 => (q.x - self.x0).clamp(0.0, w),
            1 => w + (q.y - self.y0).clamp(0.0, h),
            2 => w + h + (self.x1 - q.x).clamp(0.0, w),
            _ => 2.0 * w + h + (self.y1 - q.y).clamp(0.0, h),
        }
    }
    fn corner(&self, c: usize) -> Point {
        match c % 4 {
            0 => Point::new(self.x0, self.y0),
            1 => Point::new(self.x1, self.y0),
            2 => Point::new(self.x1, self.y1),
            _ => Point::new(self.x0, self.y1),
        }
    }
}

impl GridBox {
    pub fn rect(&self, g: &LineGrid) -> Rect {
        Rect {
            x0: g.coord(Axis::X, self.l),
            x1: g.coord(Axis::X, self.r),
            y0: g.coord(Axis::Y, self.b),
            y1: g.coord(Axis::Y, self.t),
        }
    }
    /// `w(B)` with main lines at their exact coordinates.
    pub fn width(&self, g: &LineGrid) -> f64 {
        g.key(Axis::X, self.r).0 - g.key(Axis::X, self.l).0
    }
    pub fn height(&self, g: &LineGrid) -> f64 {
        g.key(Axis::Y, self.t).0 - g.key(Axis::Y, self.b).0
    }
    /// No grid line strictly between opposite sides.
    pub fn is_elementary(&self) -> bool {
        adjacent(self.l, self.r) && adjacent(self.b, self.t)
    }
}

/// Are `a < b` consecutive grid lines?
fn adjacent(a: LineRef, b: LineRef) -> bool {
    use LineRef::*;
    match (a, b) {
        (Main { rank: r1, plus: false }, Main { rank: r2, plus: true }) => r1 == r2,
        (Main { rank, plus: true }, Help { gap, j: 1 }) => rank == gap,
        (Help { gap: g1, j: j1 }, Help { gap: g2, j: j2 }) => g1 == g2 && j2 == j1 + 1,
        (Help { gap, j }, Main { rank, plus: false }) => j == HELP_PER_GAP && rank == gap + 1,
        _ => false,
    }
}

/// Oriented segment `tail → head` of two input points, id `tail·n + head`.
pub type EdgeId = u16;

/// Where an edge meets a box boundary.
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub pos: f64,
    pub enter: bool,
    pub side: usize,
    pub at: Point,
    pub edge: EdgeId,
}

/// The point set with its grid, after rotating into general position.
#[derive(Clone, Debug)]
pub struct Instance {
    pub pts: Vec<Point>,
    pub grid: LineGrid,
    /// nearly collinear triples were broken up by a tiny perturbation
    pub perturbed: bool,
}

/// Relative size of the perturbation applied to nearly collinear inputs.
pub const PERTURB: f64 = 1e-10;

fn extent(pts: &[Point]) -> f64 {
    let (lo, hi) = crate::geometry::bbox(pts);
    (hi.x - lo.x).max(hi.y - lo.y).max(f64::MIN_POSITIVE)
}

fn nearly_collinear(pts: &[Point]) -> bool {
    let tol = 1e-12 * extent(pts).powi(2);
    let n = pts.len();
    (0..n).any(|a| (a + 1..n).any(|b| (b + 1..n).any(|c| orient(pts[a], pts[b], pts[c]).abs() <= tol)))
}

impl Instance {
    pub fn new(points: &[Point]) -> Result<Instance, DpError> {
        let (mut pts, _) = general_position(points)?;
        let mut perturbed = false;
        if nearly_collinear(&pts) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
            let base = pts.clone();
            let mut amp = PERTURB * extent(&base);
            for _ in 0..20 {
                pts = base.iter().map(|p| Point::new(p.x + rng.gen_range(-amp..amp), p.y + rng.gen_range(-amp..amp))).collect();
                if !nearly_collinear(&pts) {
                    break;
                }
                amp *= 2.0;
            }
            perturbed = true;
        }
        let grid = build_grid(&pts)?;
        Ok(Instance { pts, grid, perturbed })
    }

    pub fn n(&self) -> usize {
        self.pts.len()
    }

    pub fn edge(&self, tail: usize, head: usize) -> EdgeId {
        (tail * self.n() + head) as EdgeId
    }

    pub fn ends(&self, e: EdgeId) -> (usize, usize) {
        let n = self.n();
        (e as usize / n, e as usize % n)
    }

    pub fn points_in(&self, r: &Rect) -> Vec<usize> {
        (0..self.n()).filter(|&i| r.contains(self.pts[i])).collect()
    }

    /// Parameter range inside `r` of the segment of `e` taken from its lower
    /// to its higher endpoint id, with the side at each end (`None` where the
    /// segment starts or ends inside). Working on this orientation makes `pq`
    /// and `qp` hit the boundary at bit-identical points.
    fn clip(&self, e: EdgeId, r: &Rect) -> Option<(f64, Option<usize>, f64, Option<usize>)> {
        let (tail, head) = self.ends(e);
        let (a, b) = (self.pts[tail.min(head)], self.pts[tail.max(head)]);
        let d = b - a;
        let ps = [-d.x, d.x, -d.y, d.y];
        let qs = [a.x - r.x0, r.x1 - a.x, a.y - r.y0, r.y1 - a.y];
        const SIDE: [usize; 4] = [3, 1, 0, 2];
        let (mut t0, mut s0, mut t1, mut s1) = (0.0f64, None, 1.0f64, None);
        for k in 0..4 {
            let (p, q) = (ps[k], qs[k]);
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
                continue;
            }
            let t = q / p;
            if p < 0.0 {
                if t > t0 {
                    t0 = t;
                    s0 = Some(SIDE[k]);
                }
            } else if t < t1 {
                t1 = t;
                s1 = Some(SIDE[k]);
            }
        }
        (t1 - t0 > 1e-12).then_some((t0, s0, t1, s1))
    }

    pub fn meets_interior(&self, e: EdgeId, r: &Rect) -> bool {
        self.clip(e, r).is_some()
    }

    /// Length of the part of `e` inside `r`.
    pub fn clipped_len(&self, e: EdgeId, r: &Rect) -> f64 {
        let (tail, head) = self.ends(e);
        self.clip(e, r).map_or(0.0, |(t0, _, t1, _)| (t1 - t0) * self.pts[tail].dist(self.pts[head]))
    }

    /// Boundary crossings of `e`, tagged entering or exiting.
    pub fn hits(&self, e: EdgeId, r: &Rect) -> Vec<Hit> {
        let (tail, head) = self.ends(e);
        let (lo, hi) = (tail.min(head), tail.max(head));
        let mut out = Vec::new();
        if let Some((t0, s0, t1, s1)) = self.clip(e, r) {
            let at = |t: f64| self.pts[lo].lerp(self.pts[hi], t);
            let first = s0.filter(|_| t0 > 0.0).map(|s| (s, at(t0)));
            let last = s1.filter(|_| t1 < 1.0).map(|s| (s, at(t1)));
            let (enter, exit) = if tail < head { (first, last) } else { (last, first) };
            if let Some((side, at)) = enter {
                out.push(Hit { pos: r.pos(side, at), enter: true, side, at, edge: e });
            }
            if let Some((side, at)) = exit {
                out.push(Hit { pos: r.pos(side, at), enter: false, side, at, edge: e });
            }
        }
        out
    }

    /// All crossings of an edge set, counterclockwise; at equal positions an
    /// exit comes before an entry.
    pub fn border_hits(&self, m: &[EdgeId], r: &Rect) -> Vec<Hit> {
        let mut hs: Vec<Hit> = m.iter().flat_map(|&e| self.hits(e, r)).collect();
        hs.sort_by(|a, b| a.pos.total_cmp(&b.pos).then(a.enter.cmp(&b.enter)));
        hs
    }

    /// Edges of `m` that meet both the boundary and the interior of `r`.
    pub fn border_set(&self, m: &[EdgeId], r: &Rect) -> Vec<EdgeId> {
        m.iter().copied().filter(|&e| !self.hits(e, r).is_empty()).collect()
    }

    /// Interior of one edge crossed by another? Reversed copies (two-point
    /// hulls) and shared endpoints do not count.
    pub fn edges_cross(&self, e: EdgeId, f: EdgeId) -> bool {
        let (a, b) = self.ends(e);
        let (c, d) = self.ends(f);
        if a == c || a == d || b == c || b == d {
            return false;
        }
        let (pa, pb, pc, pd) = (self.pts[a], self.pts[b], self.pts[c], self.pts[d]);
        let o1 = orient(pa, pb, pc);
        let o2 = orient(pa, pb, pd);
        let o3 = orient(pc, pd, pa);
        let o4 = orient(pc, pd, pb);
        o1 * o2 < 0.0 && o3 * o4 < 0.0
    }
}

pub fn is_alternating(hits: &[Hit]) -> bool {
    hits.len() % 2 == 0 && (0..hits.len()).all(|i| hits[i].enter != hits[(i + 1) % hits.len()].enter)
}

/// Coverage status just after (`after = true`) or just before boundary position `x`.
fn covered_at(hits: &[Hit], x: f64, after: bool, delta: bool) -> bool {
    if hits.is_empty() {
        return delta;
    }
    let last = hits.iter().rev().find(|h| if after { h.pos <= x } else { h.pos < x }).or(hits.last()).unwrap();
    !last.enter
}

/// Two bits per corner (bottom-left, bottom-right, top-right, top-left): bit
/// `2c` is the coverage just counterclockwise of corner `c`, bit `2c + 1`
/// just clockwise of it.
pub fn corner_bits(hits: &[Hit], r: &Rect, delta: bool) -> u8 {
    let mut bits = 0u8;
    for c in 0..4 {
        let x = r.side_start(c);
        if covered_at(hits, x, true, delta) {
            bits |= 1 << (2 * c);
        }
        let xb = if c == 0 { r.perimeter() } else { x };
        if covered_at(hits, xb, false, delta) {
            bits |= 1 << (2 * c + 1);
        }
    }
    bits
}

/// Number of edges crossing the open side `s`.
pub fn side_count(hits: &[Hit], s: Side) -> usize {
    hits.iter().filter(|h| h.side == s as usize).count()
}

/// Closed form of the cut number from the crossings on `s` and the coverage
/// of its two ends.
pub fn cut_number_closed(m_s: usize, start_covered: bool, end_covered: bool) -> Result<usize, DpError> {
    match m_s {
        0..=2 if m_s == 2 && start_covered && end_covered => Ok(2),
        0 if !start_covered && !end_covered => Ok(0),
        0..=2 => Ok(1),
        _ => Err(DpError::NotCompact(m_s)),
    }
}

/// Cut number of a subproblem on side `s`, by the closed form.
pub fn cut_number(hits: &[Hit], r: &Rect, s: Side, delta: bool) -> Result<usize, DpError> {
    if delta {
        return Ok(1);
    }
    let bits = corner_bits(hits, r, delta);
    let c = s as usize;
    let start = bits >> (2 * c) & 1 == 1;
    let end = bits >> (2 * ((c + 1) % 4) + 1) & 1 == 1;
    cut_number_closed(side_count(hits, s), start, end)
}

/// Cut number by definition: covered boundary intervals (from an exit to the
/// next entry) meeting the open side `s`. A zero-length interval counts.
pub fn cut_number_general(hits: &[Hit], r: &Rect, s: Side, delta: bool) -> usize {
    let m = hits.len();
    if delta || m == 0 {
        return delta as usize;
    }
    let (a, b) = (r.side_start(s as usize), r.side_start(s as usize + 1));
    let meets = |u: f64, v: f64| if u == v { a < u && u < b } else { u.max(a) < v.min(b) };
    (0..m)
        .filter(|&i| !hits[i].enter)
        .filter(|&i| {
            let (u, v) = (hits[i].pos, hits[(i + 1) % m].pos);
            if i + 1 < m {
                meets(u, v)
            } else {
                meets(u, r.perimeter()) || meets(0.0, v)
            }
        })
        .count()
}

fn corner_polygon(r: &Rect) -> Vec<Point> {
    (0..4).map(|c| r.corner(c)).collect()
}

fn scale_of(r: &Rect) -> f64 {
    r.w().abs().max(r.h().abs()).max(f64::MIN_POSITIVE)
}

/// Every vertex on or left of every edge (zero-area polygons pass).
fn is_convex_ccw(poly: &[Point], scale: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let len = a.dist(b);
        len <= 1e-12 * scale || poly.iter().all(|&c| orient(a, b, c) >= -1e-12 * len * scale)
    })
}

fn strictly_inside(poly: &[Point], q: Point, scale: f64) -> bool {
    let n = poly.len();
    let mut proper = 0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let len = a.dist(b);
        if len <= 1e-12 * scale {
            continue;
        }
        if orient(a, b, q) <= 1e-12 * len * scale {
            return false;
        }
        proper += 1;
    }
    proper >= 3
}

/// A set of hull edges restricted to a rectangle.
#[derive(Clone, Debug, Default)]
pub struct Covering {
    /// coverage polygon (counterclockwise) of each cycle meeting the rectangle
    pub pieces: Vec<Vec<Point>>,
    /// points inside that are neither hull vertices nor covered: singleton clusters
    pub uncovered: Vec<usize>,
    /// `Φ_B`: length of the edges inside the rectangle
    pub phi: f64,
}

impl Covering {
    /// Number of clusters meeting the rectangle.
    pub fn kappa(&self) -> usize {
        self.pieces.len() + self.uncovered.len()
    }
}

/// Checks that `edges` restricted to `r` is a covering and returns it: the
/// boundary crossings alternate, the chains through inside points turn left,
/// no edges cross, every traced piece is convex and no vertex lies inside a
/// foreign piece. `delta` says whether `r` is covered when no edge meets it.
pub fn trace_covering(inst: &Instance, edges: &[EdgeId], r: &Rect, delta: bool) -> Result<Covering, String> {
    let pts = &inst.pts;
    let n = inst.n();
    let scale = scale_of(r);
    let inside = inst.points_in(r);
    let is_in = |i: usize| r.contains(pts[i]);
    let mut edges: Vec<EdgeId> = edges.iter().copied().filter(|&e| inst.meets_interior(e, r)).collect();
    edges.sort_unstable();
    if edges.windows(2).any(|w| w[0] == w[1]) {
        return Err("repeated edge".into());
    }
    for (i, &e) in edges.iter().enumerate() {
        if let Some(&f) = edges[i + 1..].iter().find(|&&f| inst.edges_cross(e, f)) {
            return Err(format!("edges {e} and {f} cross"));
        }
    }
    let mut succ = vec![None; n];
    let mut pred = vec![None; n];
    for &e in &edges {
        let (a, b) = inst.ends(e);
        if a == b {
            return Err("degenerate edge".into());
        }
        if is_in(a) && succ[a].replace(b).is_some() {
            return Err(format!("two edges leave {a}"));
        }
        if is_in(b) && pred[b].replace(a).is_some() {
            return Err(format!("two edges enter {b}"));
        }
    }
    for &p in &inside {
        match (pred[p], succ[p]) {
            (None, None) => {}
            (Some(a), Some(b)) if a == b || orient(pts[a], pts[p], pts[b]) > 0.0 => {}
            (Some(_), Some(_)) => return Err(format!("right turn at {p}")),
            _ => return Err(format!("chain ends at {p}")),
        }
    }

    let hits = inst.border_hits(&edges, r);
    if !is_alternating(&hits) {
        return Err("border crossings do not alternate".into());
    }
    let m = hits.len();
    let exit_of: HashMap<EdgeId, usize> = (0..m).filter(|&i| !hits[i].enter).map(|i| (hits[i].edge, i)).collect();
    let mut seen = vec![false; m];
    let mut used = HashSet::new();
    let mut pieces = Vec::new();
    if edges.is_empty() && delta {
        pieces.push(corner_polygon(r));
    }
    for start in 0..m {
        if !hits[start].enter || seen[start] {
            continue;
        }
        let mut poly = Vec::new();
        let mut i = start;
        loop {
            seen[i] = true;
            poly.push(hits[i].at);
            let mut e = hits[i].edge;
            let mut steps = 0;
            loop {
                used.insert(e);
                let h = inst.ends(e).1;
                if !is_in(h) {
                    break;
                }
                poly.push(pts[h]);
                e = inst.edge(h, succ[h].ok_or("chain stops inside")?);
                steps += 1;
                if steps > n {
                    return Err("chain does not leave the box".into());
                }
            }
            let x = *exit_of.get(&e).ok_or("chain without exit")?;
            if seen[x] {
                return Err("crossing visited twice".into());
            }
            seen[x] = true;
            poly.push(hits[x].at);
            let j = (x + 1) % m;
            let (u, v) = (hits[x].pos, hits[j].pos);
            if j > x {
                poly.extend((1..4).filter(|&c| u < r.side_start(c) && r.side_start(c) < v).map(|c| r.corner(c)));
            } else {
                poly.extend((1..4).filter(|&c| u < r.side_start(c)).map(|c| r.corner(c)));
                poly.push(r.corner(0));
                poly.extend((1..4).filter(|&c| r.side_start(c) < v).map(|c| r.corner(c)));
            }
            if j == start {
                break;
            }
            if seen[j] {
                return Err("pieces interleave".into());
            }
            i = j;
        }
        pieces.push(poly);
    }
    if seen.iter().any(|s| !s) {
        return Err("crossing not on any piece".into());
    }
    for &p in &inside {
        let Some(mut q) = succ[p] else { continue };
        if used.contains(&inst.edge(p, q)) {
            continue;
        }
        let mut poly = vec![pts[p]];
        let mut cur = p;
        while q != p {
            if !is_in(q) || poly.len() > n {
                return Err("inner cycle leaves the box".into());
            }
            used.insert(inst.edge(cur, q));
            poly.push(pts[q]);
            cur = q;
            q = succ[q].ok_or("open inner chain")?;
        }
        used.insert(inst.edge(cur, p));
        pieces.push(poly);
    }
    if let Some(bad) = pieces.iter().position(|poly| !is_convex_ccw(poly, scale)) {
        return Err(format!("piece {bad} is not convex"));
    }
    let mut uncovered = Vec::new();
    for &q in &inside {
        let covering = pieces.iter().filter(|poly| strictly_inside(poly, pts[q], scale)).count();
        match (succ[q].is_some(), covering) {
            (true, 0) | (false, 1) => {}
            (false, 0) => uncovered.push(q),
            (true, _) => return Err(format!("vertex {q} lies inside another piece")),
            (false, _) => return Err(format!("{q} covered twice")),
        }
    }
    let phi = edges.iter().map(|&e| inst.clipped_len(e, r)).sum();
    Ok(Covering { pieces, uncovered, phi })
}

/// Cut number `Θ` of the state `(m, delta)` of box `r` on side `s`.
pub fn theta(inst: &Instance, r: &Rect, m: &[EdgeId], s: Side, delta: bool) -> usize {
    cut_number_general(&inst.border_hits(m, r), r, s, delta)
}

// ---------------------------------------------------------------------------
// subproblems and splits

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Subproblem {
    pub bx: GridBox,
    /// border set, sorted
    pub m: Vec<EdgeId>,
    pub k: usize,
    pub delta: bool,
}

impl Subproblem {
    pub fn is_special(&self) -> bool {
        self.delta && self.m.is_empty() && self.k == 1
    }

    /// Canonical byte encoding. Each of the lines l, r, b, t is
    /// `[tag u8][a u32][b u32]` with tag 0 = main (a = rank, b = side bit) and
    /// tag 1 = help (a = gap, b = j); then `|M|` as u16, the sorted edge ids as
    /// u16, `k'` as u16 and `δ` as u8. Integers are little endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(41 + 2 * self.m.len());
        for l in [self.bx.l, self.bx.r, self.bx.b, self.bx.t] {
            let (tag, a, b) = match l {
                LineRef::Main { rank, plus } => (0u8, rank, plus as u32),
                LineRef::Help { gap, j } => (1u8, gap, j),
            };
            out.push(tag);
            out.extend(a.to_le_bytes());
            out.extend(b.to_le_bytes());
        }
        out.extend((self.m.len() as u16).to_le_bytes());
        for e in &self.m {
            out.extend(e.to_le_bytes());
        }
        out.extend((self.k as u16).to_le_bytes());
        out.push(self.delta as u8);
        out
    }
}

/// A vertical (`Axis::X`) or horizontal (`Axis::Y`) separator line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Separator {
    pub axis: Axis,
    pub line: LineRef,
}

impl GridBox {
    /// `(B_l, B_r)`: left and right part, or upper and lower part.
    pub fn split(&self, s: Separator) -> (GridBox, GridBox) {
        match s.axis {
            Axis::X => (GridBox { r: s.line, ..*self }, GridBox { l: s.line, ..*self }),
            Axis::Y => (GridBox { b: s.line, ..*self }, GridBox { t: s.line, ..*self }),
        }
    }

    pub fn contains_line(&self, g: &LineGrid, s: Separator) -> bool {
        let (lo, hi) = match s.axis {
            Axis::X => (self.l, self.r),
            Axis::Y => (self.b, self.t),
        };
        g.cmp(s.axis, lo, s.line) == Ordering::Less && g.cmp(s.axis, s.line, hi) == Ordering::Less
    }
}

/// Sides of `B_l` and `B_r` lying on a separator.
pub fn separator_sides(axis: Axis) -> (Side, Side) {
    match axis {
        Axis::X => (Side::Right, Side::Left),
        Axis::Y => (Side::Bottom, Side::Top),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SeparatorPolicy {
    /// one balanced separator per box; enough for an exact answer
    #[default]
    Single,
    /// every mid-gap line between consecutive points of the box, on both axes
    All,
}

#[derive(Clone, Copy, Debug)]
pub struct DpOptions {
    /// maximum number of memoised states
    pub budget: usize,
    /// only compact subproblems: at most two edges per box side and across a separator
    pub compact: bool,
    /// prune crossing edges that give a point two successors or a right turn
    pub strict: bool,
    pub separators: SeparatorPolicy,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions { budget: DEFAULT_BUDGET, compact: false, strict: true, separators: SeparatorPolicy::Single }
    }
}

/// Separators of a box: mid-gap help lines between consecutive points of the box.
pub fn separators(inst: &Instance, bx: &GridBox, policy: SeparatorPolicy) -> Vec<Separator> {
    let inside = inst.points_in(&bx.rect(&inst.grid));
    if inside.len() < 2 {
        return Vec::new();
    }
    let per_axis = |axis: Axis| -> (f64, Vec<Separator>) {
        let rank = |i: usize| match axis {
            Axis::X => inst.grid.x_rank[i],
            Axis::Y => inst.grid.y_rank[i],
        };
        let mut rs: Vec<u32> = inside.iter().map(|&i| rank(i)).collect();
        rs.sort_unstable();
        let cs = inst.grid.cs(axis);
        let spread = cs[*rs.last().unwrap() as usize] - cs[rs[0] as usize];
        let seps = rs.windows(2).map(|w| Separator { axis, line: LineRef::Help { gap: w[0], j: clear_j(inst, bx, axis, w[0]) } }).collect();
        (spread, seps)
    };
    let (sx, vx) = per_axis(Axis::X);
    let (sy, vy) = per_axis(Axis::Y);
    match policy {
        SeparatorPolicy::All => vx.into_iter().chain(vy).collect(),
        SeparatorPolicy::Single => {
            let v = if sx >= sy { vx } else { vy };
            vec![v[(v.len() - 1) / 2]]
        }
    }
}

/// Help line closest to the middle of the gap whose ends on the box boundary
/// (the new box corners) stay clear of every segment between two points.
/// Mid-gap lines on both axes meet exactly on the segment joining two points
/// that are consecutive in both coordinates, so the plain midpoint would put
/// such segments through a corner.
fn clear_j(inst: &Instance, bx: &GridBox, axis: Axis, gap: u32) -> u32 {
    let g = &inst.grid;
    let r = bx.rect(g);
    let (lo, hi) = (g.xs[0].min(g.ys[0]), g.xs[g.n() - 1].max(g.ys[g.n() - 1]));
    let tol = 1e-9 * (hi - lo).abs().max(1.0);
    let n = inst.n();
    let clear = |j: u32| {
        let c = g.help_coord(axis, gap, j);
        let ends = match axis {
            Axis::X => [Point::new(c, r.y0), Point::new(c, r.y1)],
            Axis::Y => [Point::new(r.x0, c), Point::new(r.x1, c)],
        };
        (0..n).all(|a| {
            (a + 1..n).all(|b| ends.iter().all(|&q| point_segment_dist(q, inst.pts[a], inst.pts[b]) > tol))
        })
    };
    (0..MID_HELP)
        .flat_map(|d| [MID_HELP + d, MID_HELP - d])
        .filter(|&j| (1..=HELP_PER_GAP).contains(&j))
        .find(|&j| clear(j))
        .unwrap_or(MID_HELP)
}

/// A way to cut a subproblem along a separator, before choosing `k'_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitShape {
    /// new edges crossing the separator
    pub cross: Vec<EdgeId>,
    pub left: (Vec<EdgeId>, bool),
    pub right: (Vec<EdgeId>, bool),
    pub theta: usize,
}

fn turn_ok(pts: &[Point], a: usize, p: usize, b: usize) -> bool {
    a == b || orient(pts[a], pts[p], pts[b]) > 0.0
}

/// All compatible child states for box `bx` with border set `m` cut along `sep`.
pub fn split_shapes(inst: &Instance, bx: &GridBox, m: &[EdgeId], delta: bool, sep: Separator, opts: &DpOptions) -> Vec<SplitShape> {
    if delta {
        return if m.is_empty() {
            vec![SplitShape { cross: vec![], left: (vec![], true), right: (vec![], true), theta: 1 }]
        } else {
            vec![]
        };
    }
    let g = &inst.grid;
    let pts = &inst.pts;
    let (bl, br) = bx.split(sep);
    let (rl, rr) = (bl.rect(g), br.rect(g));
    let (sl, sr) = separator_sides(sep.axis);
    let inside = inst.points_in(&bx.rect(g));
    let c = g.coord(sep.axis, sep.line);
    let (left, right): (Vec<usize>, Vec<usize>) = inside.iter().partition(|&&i| match sep.axis {
        Axis::X => pts[i].x < c,
        Axis::Y => pts[i].y > c,
    });
    let candidates: Vec<EdgeId> = left
        .iter()
        .flat_map(|&a| right.iter().flat_map(move |&b| [(a, b), (b, a)]))
        .map(|(a, b)| inst.edge(a, b))
        .filter(|&e| m.iter().all(|&f| !inst.edges_cross(e, f)))
        .collect();
    let already = m.iter().filter(|&&e| inst.meets_interior(e, &rl) && inst.meets_interior(e, &rr)).count();

    let n = inst.n();
    let mut succ = vec![None; n];
    let mut pred = vec![None; n];
    for &e in m {
        let (a, b) = inst.ends(e);
        succ[a] = Some(b);
        pred[b] = Some(a);
    }

    let mut out = Vec::new();
    let mut chosen = Vec::new();
    let mut emit = |x: &[EdgeId]| {
        let mut all: Vec<EdgeId> = m.iter().chain(x).copied().collect();
        all.sort_unstable();
        let ml: Vec<EdgeId> = all.iter().copied().filter(|&e| inst.meets_interior(e, &rl)).collect();
        let mr: Vec<EdgeId> = all.iter().copied().filter(|&e| inst.meets_interior(e, &rr)).collect();
        let (hl, hr) = (inst.border_hits(&ml, &rl), inst.border_hits(&mr, &rr));
        if !is_alternating(&hl) || !is_alternating(&hr) {
            return;
        }
        if opts.compact && Side::ALL.iter().any(|&s| side_count(&hl, s) > 2 || side_count(&hr, s) > 2) {
            return;
        }
        let mut cross = x.to_vec();
        cross.sort_unstable();
        let tl = cut_number_general(&hl, &rl, sl, false);
        let tr = cut_number_general(&hr, &rr, sr, false);
        if tl == tr {
            out.push(SplitShape { cross: cross.clone(), left: (ml.clone(), false), right: (mr.clone(), false), theta: tl });
        }
        if ml.is_empty() && tr == 1 {
            out.push(SplitShape { cross: cross.clone(), left: (vec![], true), right: (mr.clone(), false), theta: 1 });
        }
        if mr.is_empty() && tl == 1 {
            out.push(SplitShape { cross, left: (ml, false), right: (vec![], true), theta: 1 });
        }
    };

    fn dfs(
        i: usize,
        cands: &[EdgeId],
        ctx: (&Instance, &DpOptions, usize),
        succ: &mut Vec<Option<usize>>,
        pred: &mut Vec<Option<usize>>,
        chosen: &mut Vec<EdgeId>,
        emit: &mut dyn FnMut(&[EdgeId]),
    ) {
        let (inst, opts, already) = ctx;
        if i == cands.len() {
            emit(chosen);
            return;
        }
        dfs(i + 1, cands, ctx, succ, pred, chosen, emit);
        let e = cands[i];
        let (a, b) = inst.ends(e);
        if opts.compact && already + chosen.len() >= 2 {
            return;
        }
        if chosen.iter().any(|&f| f == e || inst.edges_cross(e, f)) {
            return;
        }
        if opts.strict {
            if succ[a].is_some() || pred[b].is_some() {
                return;
            }
            let pts = &inst.pts;
            if pred[a].is_some_and(|z| !turn_ok(pts, z, a, b)) || succ[b].is_some_and(|z| !turn_ok(pts, a, b, z)) {
                return;
            }
        }
        let (sa, pb) = (succ[a], pred[b]);
        succ[a] = Some(b);
        pred[b] = Some(a);
        chosen.push(e);
        dfs(i + 1, cands, ctx, succ, pred, chosen, emit);
        chosen.pop();
        succ[a] = sa;
        pred[b] = pb;
    }

    dfs(0, &candidates, (inst, opts, already), &mut succ, &mut pred, &mut chosen, &mut emit);
    out
}

/// Every compatible pair of child subproblems merging into `sub`, with the
/// crossing edges. `k'_l` ranges over `0..=n` and `k'_r = k' − k'_l + Θ`.
pub fn enumerate_splits(inst: &Instance, sub: &Subproblem, sep: Separator, opts: &DpOptions) -> Vec<(Subproblem, Subproblem, Vec<EdgeId>)> {
    let n = inst.n();
    let (bl, br) = sub.bx.split(sep);
    let mut out = Vec::new();
    for shape in split_shapes(inst, &sub.bx, &sub.m, sub.delta, sep, opts) {
        for kl in 0..=n {
            let Some(kr) = (sub.k + shape.theta).checked_sub(kl).filter(|&kr| kr <= n) else { continue };
            if (shape.left.1 && kl != 1) || (shape.right.1 && kr != 1) {
                continue;
            }
            let l = Subproblem { bx: bl, m: shape.left.0.clone(), k: kl, delta: shape.left.1 };
            let r = Subproblem { bx: br, m: shape.right.0.clone(), k: kr, delta: shape.right.1 };
            out.push((l, r, shape.cross.clone()));
        }
    }
    out
}

/// The unique solution of a subproblem whose box holds at most one point, if any.
pub fn elementary_solution(inst: &Instance, sub: &Subproblem) -> Option<Covering> {
    let r = sub.bx.rect(&inst.grid);
    if inst.points_in(&r).len() > 1 || (sub.delta && !sub.m.is_empty()) {
        return None;
    }
    if sub.m.iter().any(|&e| inst.hits(e, &r).is_empty()) {
        return None;
    }
    trace_covering(inst, &sub.m, &r, sub.delta).ok().filter(|c| c.kappa() == sub.k)
}

// ---------------------------------------------------------------------------
// dynamic program

#[derive(Clone, Copy, Debug)]
enum Back {
    None,
    Special,
    Base,
    Join { join: usize, kl: usize, kr: usize },
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    cost: f64,
    back: Back,
}

const NONE: Entry = Entry { cost: f64::INFINITY, back: Back::None };

struct State {
    bx: GridBox,
    m: Vec<EdgeId>,
    delta: bool,
    row: Vec<Entry>,
}

struct JoinRec {
    sep: Separator,
    cross: Vec<EdgeId>,
    left: usize,
    right: usize,
    theta: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DpStats {
    pub states: usize,
    pub base_cases: usize,
    pub split_shapes: usize,
}

/// Memoised top-down solver; one run yields the optimum for every `k`.
pub struct DpSolver {
    pub inst: Instance,
    pub opts: DpOptions,
    states: Vec<State>,
    memo: HashMap<(GridBox, Vec<EdgeId>, bool), usize>,
    joins: Vec<JoinRec>,
    root: Option<usize>,
    pub stats: DpStats,
}

impl DpSolver {
    pub fn new(points: &[Point], opts: DpOptions) -> Result<DpSolver, DpError> {
        let n = points.len();
        if n == 0 || n * n > EdgeId::MAX as usize {
            return Err(DpError::BadK { k: 0, n });
        }
        Ok(DpSolver {
            inst: Instance::new(points)?,
            opts,
            states: Vec::new(),
            memo: HashMap::new(),
            joins: Vec::new(),
            root: None,
            stats: DpStats::default(),
        })
    }

    /// Solves `⟨B₀, ∅, ·, F⟩`; returns the optimum for `k = 1..=n` (index `k − 1`).
    pub fn solve_all(&mut self) -> Result<Vec<f64>, DpError> {
        let root = match self.root {
            Some(r) => r,
            None => {
                let r = self.solve(self.inst.grid.outer_box(), Vec::new(), false)?;
                self.root = Some(r);
                r
            }
        };
        Ok(self.states[root].row[1..].iter().map(|e| e.cost).collect())
    }

    fn solve(&mut self, bx: GridBox, m: Vec<EdgeId>, delta: bool) -> Result<usize, DpError> {
        let key = (bx, m, delta);
        if let Some(&id) = self.memo.get(&key) {
            return Ok(id);
        }
        let (bx, m, delta) = key;
        if self.states.len() >= self.opts.budget {
            return Err(DpError::BudgetExceeded(self.opts.budget));
        }
        let n = self.inst.n();
        let mut row = vec![NONE; n + 1];
        let r = bx.rect(&self.inst.grid);
        if delta {
            row[1] = Entry { cost: 0.0, back: Back::Special };
        } else if self.inst.points_in(&r).len() <= 1 {
            self.stats.base_cases += 1;
            if let Ok(cov) = trace_covering(&self.inst, &m, &r, false) {
                if cov.kappa() <= n {
                    row[cov.kappa()] = Entry { cost: cov.phi, back: Back::Base };
                }
            }
        } else {
            for sep in separators(&self.inst, &bx, self.opts.separators) {
                let (bl, br) = bx.split(sep);
                for shape in split_shapes(&self.inst, &bx, &m, false, sep, &self.opts) {
                    self.stats.split_shapes += 1;
                    let l = self.solve(bl, shape.left.0, shape.left.1)?;
                    let rr = self.solve(br, shape.right.0, shape.right.1)?;
                    let mut join = None;
                    for kl in 0..=n {
                        let cl = self.states[l].row[kl].cost;
                        if !cl.is_finite() {
                            continue;
                        }
                        for kr in 0..=n {
                            let cr = self.states[rr].row[kr].cost;
                            let Some(k) = (kl + kr).checked_sub(shape.theta).filter(|&k| k <= n) else { continue };
                            if !cr.is_finite() || cl + cr >= row[k].cost {
                                continue;
                            }
                            let join = *join.get_or_insert_with(|| {
                                self.joins.push(JoinRec { sep, cross: shape.cross.clone(), left: l, right: rr, theta: shape.theta });
                                self.joins.len() - 1
                            });
                            row[k] = Entry { cost: cl + cr, back: Back::Join { join, kl, kr } };
                        }
                    }
                }
            }
        }
        let id = self.states.len();
        self.states.push(State { bx, m: m.clone(), delta, row });
        self.memo.insert((bx, m, delta), id);
        self.stats.states = self.states.len();
        Ok(id)
    }

    /// The solution DAG for `k` clusters, if the root row has one.
    pub fn dag(&mut self, k: usize) -> Result<Option<SolutionDag>, DpError> {
        let n = self.inst.n();
        if k == 0 || k > n {
            return Err(DpError::BadK { k, n });
        }
        self.solve_all()?;
        let root = self.root.unwrap();
        if !self.states[root].row[k].cost.is_finite() {
            return Ok(None);
        }
        let mut dag = SolutionDag { nodes: Vec::new(), root: 0 };
        let mut seen = HashMap::new();
        dag.root = self.build(root, k, &mut dag, &mut seen)?;
        Ok(Some(dag))
    }

    fn build(&self, state: usize, k: usize, dag: &mut SolutionDag, seen: &mut HashMap<(usize, usize), usize>) -> Result<usize, DpError> {
        if let Some(&id) = seen.get(&(state, k)) {
            return Ok(id);
        }
        let st = &self.states[state];
        let sub = Subproblem { bx: st.bx, m: st.m.clone(), k, delta: st.delta };
        let entry = st.row[k];
        let id = match entry.back {
            Back::None => return Err(DpError::Malformed(format!("no entry for k' = {k}"))),
            Back::Special | Back::Base => {
                let r = st.bx.rect(&self.inst.grid);
                let cov = elementary_solution(&self.inst, &sub)
                    .ok_or_else(|| DpError::Malformed("base case without solution".into()))?;
                let corners = corner_bits(&self.inst.border_hits(&st.m, &r), &r, st.delta);
                let kind = if sub.is_special() {
                    NodeKind::Special
                } else {
                    NodeKind::Base { edges: st.m.clone(), loop_at: cov.uncovered.first().copied() }
                };
                dag.nodes.push(DagNode { sub, cost: entry.cost, corners, kind });
                dag.nodes.len() - 1
            }
            Back::Join { join, kl, kr } => {
                let jr = &self.joins[join];
                let l = self.build(jr.left, kl, dag, seen)?;
                let r = self.build(jr.right, kr, dag, seen)?;
                merge_solutions(dag, l, r, jr.sep, jr.cross.clone(), jr.theta, sub)?
            }
        };
        seen.insert((state, k), id);
        Ok(id)
    }

    /// Optimal clustering into `k` clusters, as indices into the input points.
    pub fn clustering(&mut self, k: usize) -> Result<Option<(f64, Vec<Vec<usize>>)>, DpError> {
        let Some(dag) = self.dag(k)? else { return Ok(None) };
        let clusters = extract_clustering(&self.inst, &dag)?;
        Ok(Some((dag.nodes[dag.root].cost, clusters)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum NodeKind {
    Special,
    Base { edges: Vec<EdgeId>, loop_at: Option<usize> },
    Join { left: usize, right: usize, sep: Separator, cross: Vec<EdgeId>, theta: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DagNode {
    pub sub: Subproblem,
    pub cost: f64,
    pub corners: u8,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolutionDag {
    pub nodes: Vec<DagNode>,
    pub root: usize,
}

/// Corner bits of a box from those of its two halves.
pub fn merge_corner_bits(left: u8, right: u8, axis: Axis) -> u8 {
    let pick = |bits: u8, c: usize| bits & (0b11 << (2 * c));
    match axis {
        // left half: bottom-left and top-left corners
        Axis::X => pick(left, 0) | pick(right, 1) | pick(right, 2) | pick(left, 3),
        // upper half: top-right and top-left corners
        Axis::Y => pick(right, 0) | pick(right, 1) | pick(left, 2) | pick(left, 3),
    }
}

/// Joins two child nodes across `sep` into a node for `parent`.
pub fn merge_solutions(
    dag: &mut SolutionDag,
    left: usize,
    right: usize,
    sep: Separator,
    cross: Vec<EdgeId>,
    theta: usize,
    parent: Subproblem,
) -> Result<usize, DpError> {
    let (l, r) = (&dag.nodes[left], &dag.nodes[right]);
    if (l.sub.bx, r.sub.bx) != parent.bx.split(sep) {
        return Err(DpError::Malformed("children do not tile the box".into()));
    }
    if l.sub.k + r.sub.k != parent.k + theta || (l.sub.delta && r.sub.delta) != parent.delta {
        return Err(DpError::Malformed("incompatible children".into()));
    }
    let node = DagNode {
        cost: l.cost + r.cost,
        corners: merge_corner_bits(l.corners, r.corners, sep.axis),
        kind: NodeKind::Join { left, right, sep, cross, theta },
        sub: parent,
    };
    dag.nodes.push(node);
    Ok(dag.nodes.len() - 1)
}

/// Edges and loops of the nodes reachable from the root.
pub fn dag_edges(dag: &SolutionDag) -> (Vec<EdgeId>, Vec<usize>) {
    let mut edges = HashSet::new();
    let mut loops = Vec::new();
    let mut stack = vec![dag.root];
    let mut seen = HashSet::new();
    while let Some(i) = stack.pop() {
        if !seen.insert(i) {
            continue;
        }
        match &dag.nodes[i].kind {
            NodeKind::Special => {}
            NodeKind::Base { edges: es, loop_at } => {
                edges.extend(es.iter().copied());
                loops.extend(*loop_at);
            }
            NodeKind::Join { left, right, cross, .. } => {
                edges.extend(cross.iter().copied());
                stack.push(*left);
                stack.push(*right);
            }
        }
    }
    let mut edges: Vec<EdgeId> = edges.into_iter().collect();
    edges.sort_unstable();
    loops.sort_unstable();
    loops.dedup();
    (edges, loops)
}

/// Clusters of the solution stored in `dag`: one per cycle and per loop;
/// points on no cycle join the cycle whose hull contains them.
pub fn extract_clustering(inst: &Instance, dag: &SolutionDag) -> Result<Vec<Vec<usize>>, DpError> {
    let n = inst.n();
    let (edges, loops) = dag_edges(dag);
    let mut succ = vec![None; n];
    let mut indeg = vec![0; n];
    for &e in &edges {
        let (a, b) = inst.ends(e);
        if succ[a].replace(b).is_some() {
            return Err(DpError::Malformed(format!("two edges leave {a}")));
        }
        indeg[b] += 1;
    }
    let mut owner = vec![usize::MAX; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for p in 0..n {
        if succ[p].is_none() || owner[p] != usize::MAX {
            continue;
        }
        let mut cyc = vec![p];
        owner[p] = clusters.len();
        let mut q = succ[p].unwrap();
        while q != p {
            if owner[q] != usize::MAX || indeg[q] != 1 {
                return Err(DpError::Malformed(format!("edges at {q} do not form a cycle")));
            }
            owner[q] = clusters.len();
            cyc.push(q);
            q = succ[q].ok_or_else(|| DpError::Malformed(format!("open chain at {q}")))?;
        }
        clusters.push(cyc);
    }
    let polys: Vec<Vec<Point>> = clusters.iter().map(|c| c.iter().map(|&i| inst.pts[i]).collect()).collect();
    for &p in &loops {
        if owner[p] != usize::MAX {
            return Err(DpError::Malformed(format!("loop at vertex {p}")));
        }
        owner[p] = clusters.len();
        clusters.push(vec![p]);
    }
    for p in 0..n {
        if owner[p] != usize::MAX {
            continue;
        }
        let c = polys
            .iter()
            .position(|poly| poly.len() >= 3 && point_in_polygon(poly, inst.pts[p]))
            .ok_or_else(|| DpError::Malformed(format!("point {p} not covered")))?;
        clusters[c].push(p);
    }
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort();
    if clusters.len() != dag.nodes[dag.root].sub.k {
        return Err(DpError::Malformed("cluster count differs from k".into()));
    }
    Ok(clusters)
}

#[derive(Clone, Debug, Serialize)]
pub struct KClusterResult {
    pub k: usize,
    pub clusters: Vec<Vec<usize>>,
    /// value found by the program
    pub cost: f64,
    /// perimeter sum of the extracted clusters
    pub perimeter_sum: f64,
    pub stats: DpStats,
}

/// Minimum perimeter sum over clusterings of `points` into `k` clusters.
pub fn run_dp(points: &[Point], k: usize, opts: DpOptions) -> Result<KClusterResult, DpError> {
    if k == 0 || k > points.len() {
        return Err(DpError::BadK { k, n: points.len() });
    }
    let mut solver = DpSolver::new(points, opts)?;
    result_for(&mut solver, points, k)
}

/// `run_dp` for every `k = 1..=n` from a single table.
pub fn run_dp_all(points: &[Point], opts: DpOptions) -> Result<Vec<KClusterResult>, DpError> {
    let mut solver = DpSolver::new(points, opts)?;
    (1..=points.len()).map(|k| result_for(&mut solver, points, k)).collect()
}

fn result_for(solver: &mut DpSolver, points: &[Point], k: usize) -> Result<KClusterResult, DpError> {
    let (cost, clusters) = solver
        .clustering(k)?
        .ok_or_else(|| DpError::Malformed(format!("no solution with {k} clusters")))?;
    let perimeter_sum = Partition::new(points, clusters.clone(), 0.0).cost;
    Ok(KClusterResult { k, clusters, cost, perimeter_sum, stats: solver.stats })
}

// ---------------------------------------------------------------------------
// clusterings seen through boxes

/// Counterclockwise hull edges of a clustering; a two-point cluster gives
/// both orientations of its segment and a singleton gives nothing.
pub fn signature_edges(inst: &Instance, clusters: &[Vec<usize>]) -> Vec<EdgeId> {
    let mut out = Vec::new();
    for c in clusters.iter().filter(|c| c.len() >= 2) {
        let pts: Vec<Point> = c.iter().map(|&i| inst.pts[i]).collect();
        let Ok(hull) = convex_hull(&pts) else { continue };
        let idx: Vec<usize> = hull.vertices.iter().map(|v| c[pts.iter().position(|p| p == v).unwrap()]).collect();
        for i in 0..idx.len() {
            out.push(inst.edge(idx[i], idx[(i + 1) % idx.len()]));
        }
    }
    out.sort_unstable();
    out
}

/// Border set and `δ` of box `bx` under a clustering with hull edges `edges`.
pub fn restrict(inst: &Instance, clusters: &[Vec<usize>], edges: &[EdgeId], bx: &GridBox) -> (Vec<EdgeId>, bool) {
    let r = bx.rect(&inst.grid);
    let m: Vec<EdgeId> = edges.iter().copied().filter(|&e| !inst.hits(e, &r).is_empty()).collect();
    let any_inside = edges.iter().any(|&e| inst.meets_interior(e, &r));
    let center = Point::new((r.x0 + r.x1) / 2.0, (r.y0 + r.y1) / 2.0);
    let delta = !any_inside
        && clusters.iter().filter(|c| c.len() >= 3).any(|c| {
            let pts: Vec<Point> = c.iter().map(|&i| inst.pts[i]).collect();
            convex_hull(&pts).is_ok_and(|h| h.contains(center))
        });
    (m, delta)
}

/// `Φ_B`: length of `edges` inside the box.
pub fn phi_in_box(inst: &Instance, edges: &[EdgeId], bx: &GridBox) -> f64 {
    let r = bx.rect(&inst.grid);
    edges.iter().map(|&e| inst.clipped_len(e, &r)).sum()
}

/// Edges crossing each open side (bottom, right, top, left).
pub fn side_crossings(inst: &Instance, edges: &[EdgeId], bx: &GridBox) -> [usize; 4] {
    let r = bx.rect(&inst.grid);
    let mut seen: [HashSet<EdgeId>; 4] = Default::default();
    for e in edges {
        for h in inst.hits(*e, &r) {
            seen[h.side].insert(canonical(inst, h.edge));
        }
    }
    seen.map(|s| s.len())
}

/// A segment and its reverse count as one edge when crossing a side.
fn canonical(inst: &Instance, e: EdgeId) -> EdgeId {
    let (a, b) = inst.ends(e);
    inst.edge(a.min(b), a.max(b))
}

/// Distinct segments of `edges` meeting the box interior.
pub fn edges_meeting(inst: &Instance, edges: &[EdgeId], bx: &GridBox) -> usize {
    let r = bx.rect(&inst.grid);
    edges.iter().filter(|&&e| inst.meets_interior(e, &r)).map(|&e| canonical(inst, e)).collect::<HashSet<_>>().len()
}

/// Each side crossed by at most two edges.
pub fn box_invariant(inst: &Instance, edges: &[EdgeId], bx: &GridBox) -> bool {
    side_crossings(inst, edges, bx).iter().all(|&c| c <= 2)
}

/// Grid lines strictly inside `bx` that represent every combinatorially
/// distinct separator position for `edges`: the lines nearest to each point
/// coordinate and to each crossing of an edge with the two box sides
/// perpendicular to the separator.
pub fn candidate_lines(inst: &Instance, edges: &[EdgeId], bx: &GridBox, axis: Axis) -> Vec<Separator> {
    let g = &inst.grid;
    let r = bx.rect(g);
    let cs = g.cs(axis);
    let n = cs.len();
    let along = |p: Point| if axis == Axis::X { (p.x, p.y) } else { (p.y, p.x) };
    let (o0, o1) = if axis == Axis::X { (r.y0, r.y1) } else { (r.x0, r.x1) };
    let mut crit: Vec<f64> = cs.to_vec();
    for &e in edges {
        let (a, b) = inst.ends(e);
        let ((ua, va), (ub, vb)) = (along(inst.pts[a]), along(inst.pts[b]));
        for o in [o0, o1] {
            if (va - o) * (vb - o) < 0.0 {
                crit.push(ua + (o - va) / (vb - va) * (ub - ua));
            }
        }
    }
    let mut lines = Vec::new();
    let help = |gap: usize, j: i64| -> LineRef {
        match j {
            j if j <= 0 => LineRef::Main { rank: gap as u32, plus: true },
            j if j >= HELP_DIV as i64 => LineRef::Main { rank: gap as u32 + 1, plus: false },
            j => LineRef::Help { gap: gap as u32, j: j as u32 },
        }
    };
    for v in crit {
        match cs.iter().position(|&c| c == v) {
            Some(rank) => {
                lines.push(LineRef::Main { rank: rank as u32, plus: false });
                lines.push(LineRef::Main { rank: rank as u32, plus: true });
                if rank > 0 {
                    lines.push(help(rank - 1, HELP_PER_GAP as i64));
                }
                if rank + 1 < n {
                    lines.push(help(rank, 1));
                }
            }
            None => {
                let Some(gap) = cs.windows(2).position(|w| w[0] < v && v < w[1]) else { continue };
                let j = ((v - cs[gap]) / (cs[gap + 1] - cs[gap]) * HELP_DIV).floor() as i64;
                lines.push(help(gap, j));
                lines.push(help(gap, j + 1));
            }
        }
    }
    lines.sort_by(|&a, &b| g.cmp(axis, a, b));
    lines.dedup();
    lines.into_iter().map(|line| Separator { axis, line }).filter(|&s| bx.contains_line(g, s)).collect()
}

/// A separator crossed by at most two of `edges` whose halves both satisfy
/// the box invariant; the one closest to the middle of the box.
pub fn good_separator(inst: &Instance, edges: &[EdgeId], bx: &GridBox) -> Option<Separator> {
    let g = &inst.grid;
    let r = bx.rect(g);
    let mut best: Option<(f64, Separator)> = None;
    for axis in [Axis::X, Axis::Y] {
        let mid = if axis == Axis::X { (r.x0 + r.x1) / 2.0 } else { (r.y0 + r.y1) / 2.0 };
        let span = if axis == Axis::X { r.w() } else { r.h() };
        for s in candidate_lines(inst, edges, bx, axis) {
            let (bl, br) = bx.split(s);
            if box_invariant(inst, edges, &bl) && box_invariant(inst, edges, &br) {
                let off = (g.coord(axis, s.line) - mid).abs() / span;
                if best.is_none_or(|(o, _)| off < o) {
                    best = Some((off, s));
                }
            }
        }
    }
    best.map(|(_, s)| s)
}

/// Follows good separators from the outer box down to boxes holding at most
/// one point and meeting at most two edges. Elementary boxes reached on the
/// way must meet at most two edges. Returns the number of boxes examined.
pub fn check_box_split(inst: &Instance, edges: &[EdgeId], max_depth: usize) -> Result<usize, String> {
    fn go(inst: &Instance, edges: &[EdgeId], bx: GridBox, depth: usize, count: &mut usize) -> Result<(), String> {
        *count += 1;
        if !box_invariant(inst, edges, &bx) {
            return Err(format!("{bx:?} violates the box invariant"));
        }
        let met = edges_meeting(inst, edges, &bx);
        if bx.is_elementary() {
            return if met <= 2 { Ok(()) } else { Err(format!("elementary {bx:?} meets {met} edges")) };
        }
        if met <= 2 && inst.points_in(&bx.rect(&inst.grid)).len() <= 1 {
            return Ok(());
        }
        if depth == 0 {
            return Err(format!("{bx:?} not resolved"));
        }
        let s = good_separator(inst, edges, &bx).ok_or_else(|| format!("{bx:?} has no good separator"))?;
        let (bl, br) = bx.split(s);
        go(inst, edges, bl, depth - 1, count)?;
        go(inst, edges, br, depth - 1, count)
    }
    let mut count = 0;
    go(inst, edges, inst.grid.outer_box(), max_depth, &mut count)?;
    Ok(count)
}
