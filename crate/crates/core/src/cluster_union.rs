//! Optimal cluster unions of a hull-disjoint partition: around a given
//! interior point, and spanning two far-apart cells.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::best_curve::{perturb, solve_perturbed, CurveCluster, CurveError, Origin, SweepProblem};
use crate::geometry::{
    bbox, convex_hull, cost_eq, cost_lt, hull_perimeter, hulls_intersect, point_in_polygon,
    orient, point_ray_dist, point_segment_dist, Hull, Point,
};
use crate::oracle::Partition;

#[derive(Debug, Error, PartialEq)]
pub enum UnionError {
    #[error("center point is not finite")]
    BadCenter,
    #[error("cells must be disjoint and not adjacent")]
    Cells,
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Clusters with pairwise disjoint hulls; `costs[i] = η + h(clusters[i])`.
#[derive(Clone, Debug)]
pub struct MergerPartition {
    pub points: Vec<Point>,
    pub clusters: Vec<Vec<usize>>,
    pub hulls: Vec<Hull>,
    pub costs: Vec<f64>,
    pub eta: f64,
}

impl MergerPartition {
    pub fn new(points: &[Point], clusters: Vec<Vec<usize>>, eta: f64) -> MergerPartition {
        let mut clusters: Vec<Vec<usize>> = clusters
            .into_iter()
            .map(|mut c| {
                c.sort_unstable();
                c.dedup();
                c
            })
            .collect();
        clusters.sort();
        let hulls: Vec<Hull> = clusters
            .iter()
            .map(|c| convex_hull(&c.iter().map(|&i| points[i]).collect::<Vec<_>>()).unwrap())
            .collect();
        let costs = hulls.iter().map(|h| eta + h.perimeter()).collect();
        MergerPartition {
            points: points.to_vec(),
            clusters,
            hulls,
            costs,
            eta,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    fn cluster_points(&self, c: usize) -> impl Iterator<Item = Point> + '_ {
        self.clusters[c].iter().map(|&i| self.points[i])
    }

    /// Cost of the partition after replacing the clusters in `sel` (and `extra`)
    /// by their union.
    pub fn union_cost(&self, sel: &[usize], extra: Option<Point>) -> f64 {
        let mut pts: Vec<Point> = sel.iter().flat_map(|&c| self.cluster_points(c)).collect();
        pts.extend(extra);
        let rest: f64 = (0..self.len())
            .filter(|c| !sel.contains(c))
            .map(|c| self.costs[c])
            .sum();
        if pts.is_empty() {
            return rest;
        }
        rest + self.eta + hull_perimeter(&pts)
    }

    /// The partition `cl[sel]`.
    pub fn apply(&self, sel: &[usize]) -> Partition {
        let mut out: Vec<Vec<usize>> = Vec::new();
        let mut merged = Vec::new();
        for (c, members) in self.clusters.iter().enumerate() {
            if sel.contains(&c) {
                merged.extend(members.iter().copied());
            } else {
                out.push(members.clone());
            }
        }
        if !merged.is_empty() {
            out.push(merged);
        }
        Partition::new(&self.points, out, self.eta)
    }
}

/// Unite the partitions and keep merging clusters whose hulls intersect.
/// The inputs may cover overlapping point sets. The result is the finest hull-disjoint coarsening, so it does not depend on
/// the order of the inputs.
pub fn merge_partitions(points: &[Point], parts: &[Vec<Vec<usize>>], eta: f64) -> MergerPartition {
    let mut groups: Vec<Vec<usize>> = parts
        .iter()
        .flatten()
        .filter(|c| !c.is_empty())
        .cloned()
        .collect();
    let mut hulls: Vec<Hull> = groups
        .iter()
        .map(|c| convex_hull(&c.iter().map(|&i| points[i]).collect::<Vec<_>>()).unwrap())
        .collect();
    'outer: loop {
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                if hulls_intersect(&hulls[i], &hulls[j]) {
                    let g = groups.swap_remove(j);
                    hulls.swap_remove(j);
                    groups[i].extend(g);
                    hulls[i] =
                        convex_hull(&groups[i].iter().map(|&k| points[k]).collect::<Vec<_>>())
                            .unwrap();
                    continue 'outer;
                }
            }
        }
        break;
    }
    MergerPartition::new(points, groups, eta)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GoodRay {
    pub origin: Point,
    /// unit direction
    pub dir: Point,
    /// smallest distance from an input point to the ray
    pub clearance: f64,
    /// landmark spacing
    pub delta: f64,
    /// landmarks are `origin + dir * i * delta` for `1 <= i <= max_index`
    pub max_index: u64,
}

impl GoodRay {
    pub fn landmark(&self, i: u64) -> Point {
        self.origin + self.dir * (i as f64 * self.delta)
    }

    /// Positive on the left of the ray.
    pub fn side(&self, q: Point) -> f64 {
        self.dir.cross(q - self.origin)
    }
}

/// Ray from `x0` through the widest angular gap between the points; among the
/// gap bisectors the one with the largest clearance is returned.
pub fn find_good_ray(x0: Point, points: &[Point], eta: f64) -> GoodRay {
    let others: Vec<Point> = points.iter().copied().filter(|&q| q != x0).collect();
    let n = points.len().max(2) as f64;
    let mut angles: Vec<f64> = others
        .iter()
        .map(|&q| (q.y - x0.y).atan2(q.x - x0.x))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup();
    let mut dirs = Vec::new();
    if angles.is_empty() {
        dirs.push(0.0);
    }
    for k in 0..angles.len() {
        let a = angles[k];
        let b = if k + 1 < angles.len() {
            angles[k + 1]
        } else {
            angles[0] + std::f64::consts::TAU
        };
        dirs.push((a + b) / 2.0);
    }
    let clearance = |d: Point| {
        others
            .iter()
            .map(|&q| point_ray_dist(q, x0, d))
            .fold(f64::INFINITY, f64::min)
    };
    let (dir, clear) = dirs
        .into_iter()
        .map(|t| Point::new(t.cos(), t.sin()))
        .map(|d| (d, clearance(d)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let reach = others.iter().map(|q| q.dist(x0)).fold(0.0, f64::max) + eta;
    let scale = reach.max(x0.x.abs()).max(x0.y.abs()).max(1.0);
    // η/n⁷, kept well above the rounding noise of the coordinates
    let delta = (eta / n.powi(7)).max(scale * 1e-9);
    let max_index = ((reach / delta).ceil() as u64).max(1);
    GoodRay {
        origin: x0,
        dir,
        clearance: clear,
        delta,
        max_index,
    }
}

pub type WeightedPoint = (Point, f64);

/// A line through `a` with direction `d`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Line {
    pub a: Point,
    pub d: Point,
}

impl Line {
    fn side(&self, q: Point, tol: f64) -> i8 {
        let s = self.d.cross(q - self.a);
        if s.abs() <= tol {
            0
        } else if s > 0.0 {
            1
        } else {
            -1
        }
    }

    fn meet(&self, o: &Line) -> Option<Point> {
        let den = self.d.cross(o.d);
        if den.abs() < 1e-300 {
            return None;
        }
        let t = (o.a - self.a).cross(o.d) / den;
        Some(self.a + self.d * t)
    }
}

fn line_tol(l: &Line, pts: &[WeightedPoint]) -> f64 {
    let scale = pts
        .iter()
        .map(|(p, _)| (*p - l.a).norm())
        .fold(0.0, f64::max);
    1e-12 * scale.max(1e-300) * l.d.norm()
}

/// Weights (above, on, below) of the line.
fn split_weights(l: &Line, pts: &[WeightedPoint], tol: f64) -> (f64, f64, f64) {
    let mut out = (0.0, 0.0, 0.0);
    for &(p, w) in pts {
        match l.side(p, tol) {
            1 => out.0 += w,
            0 => out.1 += w,
            _ => out.2 += w,
        }
    }
    out
}

pub fn bisects(l: &Line, pts: &[WeightedPoint]) -> bool {
    let tol = line_tol(l, pts);
    let (up, on, down) = split_weights(l, pts, tol);
    let total = up + on + down;
    (up - down).abs() <= on + 1e-12 * total
}

fn candidate_lines(all: &[WeightedPoint]) -> Vec<Line> {
    let mut out = Vec::new();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let d = all[j].0 - all[i].0;
            if d.norm() > 0.0 {
                out.push(Line { a: all[i].0, d });
            }
        }
    }
    // through one point, at and between consecutive critical directions
    for &(c, _) in all {
        let mut crit: Vec<f64> = all
            .iter()
            .filter(|(q, _)| *q != c)
            .map(|(q, _)| {
                (q.y - c.y)
                    .atan2(q.x - c.x)
                    .rem_euclid(std::f64::consts::PI)
            })
            .collect();
        crit.push(0.0);
        crit.sort_by(f64::total_cmp);
        crit.dedup();
        for k in 0..crit.len() {
            let next = if k + 1 < crit.len() {
                crit[k + 1]
            } else {
                crit[0] + std::f64::consts::PI
            };
            let t = (crit[k] + next) / 2.0;
            out.push(Line {
                a: c,
                d: Point::new(t.cos(), t.sin()),
            });
        }
    }
    out
}

/// A line bisecting both weighted sets, chosen among the lines through two
/// input points and the lines through one input point at critical slopes.
/// Prefers little weight on the line, then an even split of the rest.
pub fn weighted_ham_sandwich(a: &[WeightedPoint], b: &[WeightedPoint]) -> Line {
    let all: Vec<WeightedPoint> = a.iter().chain(b).copied().collect();
    let mut best: Option<(Line, f64, f64)> = None;
    for l in candidate_lines(&all) {
        if !(bisects(&l, a) && bisects(&l, b)) {
            continue;
        }
        let (up, on, down) = split_weights(&l, &all, line_tol(&l, &all));
        let bal = up.min(down);
        let better = match &best {
            None => true,
            Some((_, bon, bbal)) => {
                on < *bon - 1e-12 || (on <= *bon + 1e-12 && bal > *bbal + 1e-12)
            }
        };
        if better {
            best = Some((l, on, bal));
        }
    }
    match best {
        Some((l, _, _)) => l,
        // only reachable with empty input
        None => Line {
            a: all.first().map(|p| p.0).unwrap_or_default(),
            d: Point::new(1.0, 0.0),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CenterpointPath {
    /// weighted median on a line carrying at least the heavy-line threshold
    HeavyLine,
    /// vertical median line crossed with a ham-sandwich cut of its two sides
    HamSandwich,
}

fn median_on_line(l: &Line, pts: &[WeightedPoint], tol: f64) -> Point {
    let mut on: Vec<(f64, Point, f64)> = pts
        .iter()
        .filter(|(p, _)| l.side(*p, tol) == 0)
        .map(|&(p, w)| ((p - l.a).dot(l.d), p, w))
        .collect();
    on.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = on.iter().map(|x| x.2).sum();
    let mut acc = 0.0;
    for &(_, p, w) in &on {
        acc += w;
        if acc >= total / 2.0 {
            return p;
        }
    }
    l.a
}

/// Point deep inside the weighted set. `heavy` is the heavy-line threshold
/// (`(L_min + η) / 100` for the tube search).
pub fn approximate_centerpoint(pts: &[WeightedPoint], heavy: f64) -> (Point, CenterpointPath) {
    let total: f64 = pts.iter().map(|x| x.1).sum();
    let mut by_x: Vec<WeightedPoint> = pts.to_vec();
    by_x.sort_by(|a, b| a.0.x.total_cmp(&b.0.x));
    // vertical line with at most half the weight strictly on either side,
    // placed between two points when the split is exact
    let mut acc = 0.0;
    let mut u = by_x.last().map(|p| p.0.x).unwrap_or(0.0);
    for (k, &(p, w)) in by_x.iter().enumerate() {
        acc += w;
        if acc >= total / 2.0 {
            u = p.x;
            if (acc - total / 2.0).abs() <= 1e-12 * total && k + 1 < by_x.len() {
                u = (p.x + by_x[k + 1].0.x) / 2.0;
            }
            break;
        }
    }
    let lv = Line {
        a: Point::new(u, 0.0),
        d: Point::new(0.0, 1.0),
    };
    let on_v: f64 = pts.iter().filter(|(p, _)| p.x == u).map(|x| x.1).sum();
    if on_v >= heavy {
        return (median_on_line(&lv, pts, 0.0), CenterpointPath::HeavyLine);
    }
    let left: Vec<WeightedPoint> = pts.iter().copied().filter(|(p, _)| p.x < u).collect();
    let right: Vec<WeightedPoint> = pts.iter().copied().filter(|(p, _)| p.x > u).collect();
    if left.is_empty() || right.is_empty() {
        return (median_on_line(&lv, pts, 0.0), CenterpointPath::HeavyLine);
    }
    let ls = weighted_ham_sandwich(&left, &right);
    let tol = line_tol(&ls, pts);
    let (_, on_s, _) = split_weights(&ls, pts, tol);
    if on_s >= heavy {
        return (median_on_line(&ls, pts, tol), CenterpointPath::HeavyLine);
    }
    match ls.meet(&lv) {
        Some(p) => (p, CenterpointPath::HamSandwich),
        None => (median_on_line(&lv, pts, 0.0), CenterpointPath::HeavyLine),
    }
}

/// Smallest weight in an open halfplane bounded by a line through `c`,
/// sampled over `steps` directions.
pub fn min_halfplane_weight(c: Point, pts: &[WeightedPoint], steps: usize) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..steps {
        let t = std::f64::consts::PI * k as f64 / steps as f64;
        let l = Line {
            a: c,
            d: Point::new(t.cos(), t.sin()),
        };
        let tol = line_tol(&l, pts);
        let (up, _, down) = split_weights(&l, pts, tol);
        best = best.min(up).min(down);
    }
    best
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum Strategy {
    /// anchored search for small inputs, landmark recursion otherwise
    #[default]
    Auto,
    /// landmark recursion only down to the base size
    Landmarks,
    /// one best curve per hull vertex
    Anchored,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UnionOptions {
    pub strategy: Strategy,
    pub seed: u64,
    /// spanning search: always run the probe and tube stages, even when
    /// starting once from every cluster in the first cell is cheaper
    pub probe_all: bool,
}

/// Axis line and dominating points of one tube step.
#[derive(Clone, Debug, Serialize)]
pub struct TubeRecord {
    pub axis_point: Point,
    pub axis_dir: Point,
    pub half_width: f64,
    pub dominating: Vec<Point>,
}

#[derive(Clone, Debug, Serialize)]
pub struct UnionResult {
    /// indices into the merger's clusters
    pub selected: Vec<usize>,
    pub cost: f64,
    pub sweeps: usize,
    pub tubes: Vec<TubeRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Inside,
    On,
    Outside,
}

#[derive(Clone, Debug)]
struct Curve {
    enclosed: Vec<bool>,
    poly: Vec<Point>,
    origin: Vec<Origin>,
    tol: f64,
}

impl Curve {
    fn side(&self, q: Point) -> Side {
        let n = self.poly.len();
        let d = (0..n)
            .map(|i| point_segment_dist(q, self.poly[i], self.poly[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min);
        if d <= self.tol {
            Side::On
        } else if point_in_polygon(&self.poly, q) {
            Side::Inside
        } else {
            Side::Outside
        }
    }
}

type Key = ((u64, u64), Vec<usize>, Vec<usize>);

const BASE_ANCHORS: usize = 6;
/// below this many anchors one sweep per anchor beats the landmark search
const AUTO_ANCHORED: usize = 48;
const MAX_DEPTH: usize = 40;

struct Search<'a> {
    cl: &'a MergerPartition,
    x0: Point,
    seed: u64,
    strategy: Strategy,
    nudge: f64,
    cluster_of: Vec<usize>,
    cache: HashMap<Key, Option<Curve>>,
    candidates: Vec<BTreeSet<usize>>,
    tubes: Vec<TubeRecord>,
    sweeps: usize,
}

fn curve_problem(
    cl: &MergerPartition,
    x0: Point,
    p: Point,
    fin: &BTreeSet<usize>,
    fout: &BTreeSet<usize>,
) -> SweepProblem {
    let clusters = (0..cl.len())
        .map(|c| CurveCluster {
            points: cl.cluster_points(c).collect(),
            cost: if fout.contains(&c) { 0.0 } else { cl.costs[c] },
        })
        .collect();
    SweepProblem {
        clusters,
        x0,
        p,
        outer: None,
        inner: None,
        forced_in: fin.iter().copied().collect(),
    }
}

fn compute_curve(
    cl: &MergerPartition,
    x0: Point,
    p: Point,
    fin: &BTreeSet<usize>,
    fout: &BTreeSet<usize>,
    seed: u64,
) -> Result<Option<Curve>, UnionError> {
    let problem = curve_problem(cl, x0, p, fin, fout);
    let pp = match perturb(&problem, None, seed) {
        Ok(pp) => pp,
        Err(
            CurveError::PInsideCluster(_) | CurveError::PInsideCenter | CurveError::DegenerateRay,
        ) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    match solve_perturbed(&pp, false) {
        Ok(r) => Ok(Some(Curve {
            enclosed: r.enclosed,
            poly: r.curve,
            origin: r.curve_origin,
            tol: 4.0 * pp.eps1,
        })),
        Err(CurveError::Infeasible) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Clusters that every union containing `x0` and `fin` must contain.
fn closure(cl: &MergerPartition, x0: Point, fin: &BTreeSet<usize>) -> BTreeSet<usize> {
    let problem = curve_problem(cl, x0, x0, fin, &BTreeSet::new());
    crate::best_curve::center_set(&problem)
        .into_iter()
        .chain(fin.iter().copied())
        .collect()
}

impl<'a> Search<'a> {
    fn new(cl: &'a MergerPartition, x0: Point, opts: UnionOptions) -> Self {
        let mut all = cl.points.clone();
        all.push(x0);
        let (lo, hi) = bbox(&all);
        // largest step taken off a hull vertex; keeps the detour cost negligible
        let nudge = 1e-6 * (hi - lo).norm().max(cl.eta).max(1e-12);
        let mut cluster_of = vec![usize::MAX; cl.points.len()];
        for (c, members) in cl.clusters.iter().enumerate() {
            for &i in members {
                cluster_of[i] = c;
            }
        }
        Search {
            cl,
            x0,
            seed: opts.seed,
            strategy: opts.strategy,
            nudge,
            cluster_of,
            cache: HashMap::new(),
            candidates: Vec::new(),
            tubes: Vec::new(),
            sweeps: 0,
        }
    }

    fn key(p: Point, fin: &BTreeSet<usize>, fout: &BTreeSet<usize>) -> Key {
        (
            (p.x.to_bits(), p.y.to_bits()),
            fin.iter().copied().collect(),
            fout.iter().copied().collect(),
        )
    }

    fn record(&mut self, c: &Curve, fin: &BTreeSet<usize>, fout: &BTreeSet<usize>) {
        let s: BTreeSet<usize> = (0..self.cl.len())
            .filter(|i| (c.enclosed[*i] || fin.contains(i)) && !fout.contains(i))
            .collect();
        self.candidates.push(s);
    }

    fn curve(
        &mut self,
        p: Point,
        fin: &BTreeSet<usize>,
        fout: &BTreeSet<usize>,
    ) -> Result<Option<Curve>, UnionError> {
        let key = Self::key(p, fin, fout);
        if let Some(c) = self.cache.get(&key) {
            return Ok(c.clone());
        }
        self.sweeps += 1;
        let c = compute_curve(self.cl, self.x0, p, fin, fout, self.seed)?;
        if let Some(c) = &c {
            self.record(c, fin, fout);
        }
        self.cache.insert(key, c.clone());
        Ok(c)
    }

    fn center_hull(&self, fin: &BTreeSet<usize>) -> Hull {
        let mut pts = vec![self.x0];
        for &c in fin {
            pts.extend(self.cl.cluster_points(c));
        }
        convex_hull(&pts).unwrap()
    }

    /// Step size off `q`: small against the distance to everything except
    /// cluster `own` (and the center, when `own` is part of it).
    fn step(&self, q: Point, own: Option<usize>, fin: &BTreeSet<usize>, center: &Hull) -> f64 {
        let single = Hull { vertices: vec![q] };
        let mut d = f64::INFINITY;
        for c in 0..self.cl.len() {
            if Some(c) != own && !fin.contains(&c) {
                d = d.min(hull_gap(&single, &self.cl.hulls[c]));
            }
        }
        if own.map_or(true, |c| !fin.contains(&c)) {
            let g = hull_gap(&single, center);
            if g > 0.0 {
                d = d.min(g);
            }
        }
        self.nudge.min(0.01 * d)
    }

    /// Point just outside `q`, away from `x0`; `None` if it can't be a hull vertex.
    fn anchor_point(&self, i: usize, fin: &BTreeSet<usize>, center: &Hull) -> Option<Point> {
        let q = self.cl.points[i];
        let c = self.cluster_of[i];
        if q == self.x0 || !self.cl.hulls[c].vertices.contains(&q) {
            return None;
        }
        if heads_into(self.x0, q, &self.cl.hulls[c]) {
            return None;
        }
        let d = q - self.x0;
        let a = q + d * (self.step(q, Some(c), fin, center) / d.norm());
        if a == q || center.contains(a) || self.cl.hulls.iter().any(|h| h.contains(a)) {
            return None;
        }
        Some(a)
    }

    fn anchored(
        &mut self,
        anchors: &[usize],
        fin: &BTreeSet<usize>,
        fout: &BTreeSet<usize>,
    ) -> Result<(), UnionError> {
        let center = self.center_hull(fin);
        let pts: Vec<Point> = anchors
            .iter()
            .filter(|&&i| !fout.contains(&self.cluster_of[i]))
            .filter_map(|&i| self.anchor_point(i, fin, &center))
            .filter(|&a| !self.cache.contains_key(&Self::key(a, fin, fout)))
            .collect();
        let (cl, x0, seed) = (self.cl, self.x0, self.seed);
        let got: Vec<(Point, Result<Option<Curve>, UnionError>)> = pts
            .par_iter()
            .map(|&a| (a, compute_curve(cl, x0, a, fin, fout, seed)))
            .collect();
        for (a, r) in got {
            let c = r?;
            self.sweeps += 1;
            if let Some(c) = &c {
                self.record(c, fin, fout);
            }
            self.cache.insert(Self::key(a, fin, fout), c);
        }
        Ok(())
    }

    /// Landmark `i`, pushed past any hull the ray runs through.
    fn landmark(&self, ray: &GoodRay, i: u64, fin: &BTreeSet<usize>, center: &Hull) -> Point {
        let mut t = i as f64 * ray.delta;
        for _ in 0..=self.cl.len() + 1 {
            let q = ray.origin + ray.dir * t;
            if center.contains(q) {
                let e = exit_param(ray.origin, ray.dir, center).max(t);
                let ep = ray.origin + ray.dir * e;
                t = e + self.step(ep, fin.iter().next().copied(), fin, center);
                continue;
            }
            match (0..self.cl.len()).find(|&c| self.cl.hulls[c].contains(q)) {
                Some(c) => {
                    let e = exit_param(ray.origin, ray.dir, &self.cl.hulls[c]).max(t);
                    let ep = ray.origin + ray.dir * e;
                    t = e + self.step(ep, Some(c), fin, center);
                }
                None => return q,
            }
        }
        ray.origin + ray.dir * t
    }

    fn outside_count(&self, c: &Option<Curve>, anchors: &[usize]) -> usize {
        match c {
            Some(c) => anchors
                .iter()
                .filter(|&&i| c.side(self.cl.points[i]) == Side::Outside)
                .count(),
            None => anchors.len(),
        }
    }

    fn recurse(
        &mut self,
        mut anchors: Vec<usize>,
        fin: BTreeSet<usize>,
        fout: BTreeSet<usize>,
        depth: usize,
    ) -> Result<(), UnionError> {
        let fin = closure(self.cl, self.x0, &fin);
        anchors.retain(|&i| !fout.contains(&self.cluster_of[i]));
        if anchors.len() <= BASE_ANCHORS || depth >= MAX_DEPTH {
            return self.anchored(&anchors, &fin, &fout);
        }
        let n = anchors.len();
        let pts: Vec<Point> = anchors.iter().map(|&i| self.cl.points[i]).collect();
        let ray = find_good_ray(self.x0, &pts, self.cl.eta);
        let center = self.center_hull(&fin);

        // smallest landmark whose curve leaves at most half the anchors outside
        let (mut lo, mut hi) = (1u64, ray.max_index);
        let top = self.landmark(&ray, hi, &fin, &center);
        let c_top = self.curve(top, &fin, &fout)?;
        if self.outside_count(&c_top, &anchors) * 2 > n {
            return self.anchored(&anchors, &fin, &fout);
        }
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let q = self.landmark(&ray, mid, &fin, &center);
            let c = self.curve(q, &fin, &fout)?;
            if self.outside_count(&c, &anchors) * 2 <= n {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let x_star = self.landmark(&ray, lo, &fin, &center);
        let x_prev = if lo > 1 {
            self.landmark(&ray, lo - 1, &fin, &center)
        } else {
            self.x0
        };
        let c_out = self
            .curve(x_star, &fin, &fout)?
            .expect("landmark curve exists");
        let c_in = if lo > 1 {
            self.curve(x_prev, &fin, &fout)?
        } else {
            None
        };

        let (inner, outer) =
            self.tube_stage(&anchors, &ray, x_prev, x_star, c_in, c_out, &fin, &fout)?;

        // either the optimum stays inside `inner` or it contains `outer`
        let mut branches = Vec::new();
        {
            let keep: Vec<usize> = anchors
                .iter()
                .copied()
                .filter(|&i| match &inner {
                    Some(c) => c.side(self.cl.points[i]) != Side::Outside,
                    None => fin.contains(&self.cluster_of[i]),
                })
                .collect();
            let mut out = fout.clone();
            if let Some(c) = &inner {
                out.extend((0..self.cl.len()).filter(|&k| !c.enclosed[k] && !fin.contains(&k)));
            } else {
                out.extend((0..self.cl.len()).filter(|k| !fin.contains(k)));
            }
            branches.push((keep, fin.clone(), out));
        }
        {
            let keep: Vec<usize> = anchors
                .iter()
                .copied()
                .filter(|&i| outer.side(self.cl.points[i]) != Side::Inside)
                .collect();
            let mut f = fin.clone();
            f.extend((0..self.cl.len()).filter(|&k| outer.enclosed[k] && !fout.contains(&k)));
            branches.push((keep, f, fout.clone()));
        }
        for (keep, f, o) in branches {
            if keep.len() >= n {
                self.anchored(&keep, &closure(self.cl, self.x0, &f), &o)?;
            } else {
                self.recurse(keep, f, o, depth + 1)?;
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn tube_stage(
        &mut self,
        anchors: &[usize],
        ray: &GoodRay,
        x_prev: Point,
        x_star: Point,
        c_in: Option<Curve>,
        c_out: Curve,
        fin: &BTreeSet<usize>,
        fout: &BTreeSet<usize>,
    ) -> Result<(Option<Curve>, Curve), UnionError> {
        let n = anchors.len();
        let cp = |o: &Origin| match *o {
            Origin::Cluster { cluster, point } => {
                Some(self.cl.points[self.cl.clusters[cluster][point]])
            }
            _ => None,
        };
        let v = c_out.origin.iter().skip(1).find_map(cp);
        let u = c_out.origin.iter().skip(1).rev().find_map(cp);
        let (Some(u), Some(v)) = (u, v) else {
            return Ok((c_in, c_out));
        };
        let unit = |d: Point| {
            if d.norm() > 0.0 {
                d * (1.0 / d.norm())
            } else {
                d
            }
        };
        let b = unit(u - x_star) + unit(v - x_star);
        let axis_dir = if b.norm() > 1e-12 {
            unit(b.perp())
        } else {
            ray.dir
        };
        let half = self.cl.eta / 2.0;
        let axis_dist = |q: Point| axis_dir.cross(q - x_prev).abs();
        let mut record = TubeRecord {
            axis_point: x_prev,
            axis_dir,
            half_width: half,
            dominating: Vec::new(),
        };

        let mut inner = c_in;
        let mut outer = c_out;
        for right in [true, false] {
            let inner_now = inner.clone();
            let mut pts: Vec<usize> = anchors
                .iter()
                .copied()
                .filter(|&i| {
                    let q = self.cl.points[i];
                    axis_dist(q) < half && outer.side(q) == Side::Inside
                })
                .filter(|&i| match &inner_now {
                    Some(c) => c.side(self.cl.points[i]) == Side::Outside,
                    None => true,
                })
                .filter(|&i| (ray.side(self.cl.points[i]) < 0.0) == right)
                .collect();
            let seg = |i: &usize| point_segment_dist(self.cl.points[*i], x_prev, x_star);
            pts.sort_by(|a, b| seg(a).total_cmp(&seg(b)));
            if pts.is_empty() {
                continue;
            }
            let f: BTreeSet<usize> = match &inner {
                Some(c) => fin
                    .iter()
                    .copied()
                    .chain((0..self.cl.len()).filter(|&k| c.enclosed[k] && !fout.contains(&k)))
                    .collect(),
                None => fin.clone(),
            };
            let f = closure(self.cl, self.x0, &f);
            let o: BTreeSet<usize> = fout
                .iter()
                .copied()
                .chain((0..self.cl.len()).filter(|&k| !outer.enclosed[k] && !f.contains(&k)))
                .collect();
            let center = self.center_hull(&f);
            let curve_at = |s: &mut Self, i: usize| -> Result<Option<Curve>, UnionError> {
                match s.anchor_point(i, &f, &center) {
                    Some(a) => s.curve(a, &f, &o),
                    None => Ok(None),
                }
            };
            // smallest j whose curve leaves at most half the anchors outside
            let (mut lo, mut hi) = (0usize, pts.len());
            while lo < hi {
                let mid = (lo + hi) / 2;
                let c = curve_at(self, pts[mid])?;
                if c.is_some() && self.outside_count(&c, anchors) * 2 <= n {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            let new_outer = if lo < pts.len() {
                curve_at(self, pts[lo])?
            } else {
                None
            };
            let new_inner = if lo > 0 {
                curve_at(self, pts[lo - 1])?
            } else {
                None
            };
            if lo < pts.len() {
                record.dominating.push(self.cl.points[pts[lo]]);
            }
            if lo > 0 {
                record.dominating.push(self.cl.points[pts[lo - 1]]);
            }
            if let Some(c) = new_outer {
                outer = c;
            }
            if let Some(c) = new_inner {
                inner = Some(c);
            }
        }
        self.tubes.push(record);
        Ok((inner, outer))
    }
}

/// Largest ray parameter at which the ray from `o` along `d` leaves `h`.
fn exit_param(o: Point, d: Point, h: &Hull) -> f64 {
    let mut best: f64 = 0.0;
    let vs = &h.vertices;
    for k in 0..vs.len() {
        let (a, b) = (vs[k], vs[(k + 1) % vs.len()]);
        let e = b - a;
        let den = d.cross(e);
        if den.abs() < 1e-300 {
            for v in [a, b] {
                best = best.max((v - o).dot(d));
            }
            continue;
        }
        let t = (a - o).cross(e) / den;
        let s = (a - o).cross(d) / den;
        if (-1e-12..=1.0 + 1e-12).contains(&s) {
            best = best.max(t);
        }
    }
    if vs.len() == 1 {
        best = best.max((vs[0] - o).dot(d));
    }
    best
}

fn hull_gap(a: &Hull, b: &Hull) -> f64 {
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

/// Add clusters that do not raise the cost, drop clusters whose removal
/// lowers it.
fn improve(
    cl: &MergerPartition,
    mut s: BTreeSet<usize>,
    fixed: &BTreeSet<usize>,
    extra: Option<Point>,
) -> BTreeSet<usize> {
    let cost = |s: &BTreeSet<usize>| cl.union_cost(&s.iter().copied().collect::<Vec<_>>(), extra);
    let mut cur = cost(&s);
    for _ in 0..4 * cl.len() + 4 {
        let mut changed = false;
        for c in 0..cl.len() {
            if s.contains(&c) {
                continue;
            }
            s.insert(c);
            let v = cost(&s);
            if cost_lt(v, cur) || cost_eq(v, cur) {
                cur = cur.min(v);
                changed = true;
            } else {
                s.remove(&c);
            }
        }
        for c in s.clone() {
            if fixed.contains(&c) {
                continue;
            }
            s.remove(&c);
            let v = cost(&s);
            if cost_lt(v, cur) && !cost_eq(v, cur) {
                cur = v;
                changed = true;
            } else {
                s.insert(c);
            }
        }
        if !changed {
            break;
        }
    }
    s
}

fn pick_best(
    cl: &MergerPartition,
    cands: &[BTreeSet<usize>],
    extra: Option<Point>,
) -> Option<(BTreeSet<usize>, f64)> {
    let mut best: Option<(BTreeSet<usize>, f64)> = None;
    for s in cands {
        let v = cl.union_cost(&s.iter().copied().collect::<Vec<_>>(), extra);
        let better = match &best {
            None => true,
            Some((bs, bv)) => {
                (cost_lt(v, *bv) && !cost_eq(v, *bv)) || (cost_eq(v, *bv) && s.len() > bs.len())
            }
        };
        if better {
            best = Some((s.clone(), v));
        }
    }
    best
}

/// Cheapest union `cl[S ∪ {x0}]`, largest among the cheapest.
pub fn optimal_union_with_center(
    cl: &MergerPartition,
    x0: Point,
    opts: UnionOptions,
) -> Result<UnionResult, UnionError> {
    if !x0.is_finite() {
        return Err(UnionError::BadCenter);
    }
    let mut search = Search::new(cl, x0, opts);
    let f0 = closure(cl, x0, &BTreeSet::new());
    search.candidates.push(f0.clone());
    let anchors: Vec<usize> = (0..cl.points.len())
        .filter(|&i| search.cluster_of[i] != usize::MAX)
        .collect();
    match search.strategy {
        Strategy::Auto if anchors.len() < AUTO_ANCHORED => {
            search.anchored(&anchors, &f0, &BTreeSet::new())?
        }
        Strategy::Anchored => search.anchored(&anchors, &f0, &BTreeSet::new())?,
        Strategy::Landmarks | Strategy::Auto => {
            search.recurse(anchors, f0.clone(), BTreeSet::new(), 0)?
        }
    }
    let (best, _) =
        pick_best(cl, &search.candidates, Some(x0)).expect("the closure is a candidate");
    let best = improve(cl, best, &f0, Some(x0));
    let selected: Vec<usize> = best.into_iter().collect();
    let cost = cl.union_cost(&selected, Some(x0));
    Ok(UnionResult {
        selected,
        cost,
        sweeps: search.sweeps,
        tubes: search.tubes,
    })
}

/// Axis-parallel square cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rect {
    pub lo: Point,
    pub hi: Point,
}

/// Does the ray from `x0` through hull vertex `q` continue into the (closed)
/// hull? Decided on the input coordinates, since the pushed-out point itself
/// picks up rounding.
fn heads_into(x0: Point, q: Point, h: &Hull) -> bool {
    let v = &h.vertices;
    let Some(i) = v.iter().position(|&w| w == q) else { return false };
    match v.len() {
        1 => false,
        2 => {
            let w = v[1 - i];
            orient(x0, q, w) == 0.0 && (w - q).dot(q - x0) > 0.0
        }
        n => orient(x0, q, v[(i + 1) % n]) <= 0.0 && orient(x0, q, v[(i + n - 1) % n]) >= 0.0,
    }
}

impl Rect {
    pub fn contains(&self, q: Point) -> bool {
        self.lo.x <= q.x && q.x <= self.hi.x && self.lo.y <= q.y && q.y <= self.hi.y
    }

    fn map(&self, f: impl Fn(Point) -> Point) -> Rect {
        let a = f(self.lo);
        let b = f(self.hi);
        Rect {
            lo: Point::new(a.x.min(b.x), a.y.min(b.y)),
            hi: Point::new(a.x.max(b.x), a.y.max(b.y)),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub enum Spanning {
    Found(UnionResult),
    /// no union reaching both cells is at least as cheap as the partition itself
    NoSpanningUnion,
}

pub const ALPHA: usize = 100;

#[derive(Clone, Debug, Default, Serialize)]
pub struct SpanningStats {
    pub probes: usize,
    pub probes_pruned: usize,
    pub with_center_calls: usize,
    pub centerpoint_calls: usize,
    pub tube_fallbacks: usize,
    /// searched from each cluster in the first cell instead of the probes
    pub per_cluster: bool,
}

fn y_at(a: Point, b: Point, x: f64) -> f64 {
    if b.x == a.x {
        return a.y.max(b.y);
    }
    a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x)
}

fn spread(top: Point, bottom: Point, k: usize) -> Vec<Point> {
    (0..k)
        .map(|i| top.lerp(bottom, i as f64 / (k - 1) as f64))
        .collect()
}

fn tri_perimeter(a: Point, b: Point, c: Point) -> f64 {
    a.dist(b) + b.dist(c) + c.dist(a)
}

/// Cheapest union of clusters with points in both cells, provided it is no
/// worse than leaving the partition as it is.
pub fn optimal_union_without_center(
    cl: &MergerPartition,
    g1: Rect,
    g2: Rect,
    opts: UnionOptions,
) -> Result<(Spanning, SpanningStats), UnionError> {
    let mut stats = SpanningStats::default();
    // orient: g1 strictly left of g2 along the axis with the larger gap, g1 not lower
    let gx = (g2.lo.x - g1.hi.x).max(g1.lo.x - g2.hi.x);
    let gy = (g2.lo.y - g1.hi.y).max(g1.lo.y - g2.hi.y);
    if gx <= 0.0 && gy <= 0.0 {
        return Err(UnionError::Cells);
    }
    let rot = |q: Point| if gx >= gy { q } else { Point::new(q.y, -q.x) };
    let (mut a, mut b) = (g1.map(rot), g2.map(rot));
    let mut swap = false;
    if a.lo.x > b.lo.x {
        std::mem::swap(&mut a, &mut b);
        swap = true;
    }
    let flip = a.hi.y < b.hi.y;
    let tf = |q: Point| {
        let r = rot(q);
        if flip {
            Point::new(r.x, -r.y)
        } else {
            r
        }
    };
    let (g1t, g2t) = {
        let (x, y) = if swap { (g2, g1) } else { (g1, g2) };
        (x.map(tf), y.map(tf))
    };
    let points: Vec<Point> = cl.points.iter().map(|&q| tf(q)).collect();
    let tcl = MergerPartition {
        points,
        ..cl.clone()
    };
    let tcl = MergerPartition::new(&tcl.points, tcl.clusters, cl.eta);

    let touch = |r: &Rect| -> Vec<usize> {
        (0..tcl.len())
            .filter(|&c| tcl.clusters[c].iter().any(|&i| r.contains(tcl.points[i])))
            .collect()
    };
    let (t1, t2) = (touch(&g1t), touch(&g2t));
    if t1.is_empty() || t2.is_empty() {
        return Ok((Spanning::NoSpanningUnion, stats));
    }
    let in1: Vec<Point> = tcl
        .points
        .iter()
        .copied()
        .filter(|q| g1t.contains(*q))
        .collect();
    let in2: Vec<Point> = tcl
        .points
        .iter()
        .copied()
        .filter(|q| g2t.contains(*q))
        .collect();
    // a spanning union saves at most η per merged cluster plus the old perimeters
    let budget =
        (tcl.len() as f64 - 1.0) * tcl.eta + tcl.costs.iter().map(|c| c - tcl.eta).sum::<f64>();
    let span = in1
        .iter()
        .flat_map(|&p| in2.iter().map(move |&q| 2.0 * p.dist(q)))
        .fold(f64::INFINITY, f64::min);
    if span > budget * (1.0 + 1e-9) {
        return Ok((Spanning::NoSpanningUnion, stats));
    }

    let is_spanning = |s: &[usize]| {
        s.len() >= 2 && s.iter().any(|c| t1.contains(c)) && s.iter().any(|c| t2.contains(c))
    };
    let mut cands: Vec<BTreeSet<usize>> = Vec::new();
    let mut tried: BTreeSet<usize> = BTreeSet::new();
    let mut sweeps = 0;

    let run_centers = |centers: Vec<Point>,
                       stats: &mut SpanningStats|
     -> Result<(Vec<BTreeSet<usize>>, usize), UnionError> {
        stats.with_center_calls += centers.len();
        let got: Vec<Result<UnionResult, UnionError>> = centers
            .par_iter()
            .enumerate()
            .map(|(k, &p)| {
                optimal_union_with_center(
                    &tcl,
                    p,
                    UnionOptions {
                        seed: opts.seed ^ k as u64,
                        ..opts
                    },
                )
            })
            .collect();
        let mut out = Vec::new();
        let mut sw = 0;
        for r in got {
            let r = r?;
            sw += r.sweeps;
            out.push(r.selected.into_iter().collect());
        }
        Ok((out, sw))
    };

    // probes on the vertical segment halfway between the cells
    let xm = (g1t.hi.x + g2t.lo.x) / 2.0;
    let top = Point::new(
        xm,
        y_at(
            Point::new(g1t.hi.x, g1t.hi.y),
            Point::new(g2t.hi.x, g2t.hi.y),
            xm,
        ),
    );
    let bottom = Point::new(xm, y_at(g1t.lo, g2t.lo, xm));
    let mut centers = Vec::new();
    for p in spread(top, bottom, 2 * ALPHA) {
        stats.probes += 1;
        let lb = in1
            .iter()
            .flat_map(|&a| in2.iter().map(move |&b| tri_perimeter(p, a, b)))
            .fold(f64::INFINITY, f64::min);
        if lb > budget * (1.0 + 1e-9) {
            stats.probes_pruned += 1;
            continue;
        }
        match (0..tcl.len()).find(|&c| tcl.hulls[c].contains(p)) {
            Some(c) if tried.contains(&c) => continue,
            Some(c) => {
                tried.insert(c);
                centers.push(p);
            }
            None => centers.push(p),
        }
    }
    if !opts.probe_all && t1.len() <= centers.len() {
        // every spanning union contains one of these clusters
        stats.per_cluster = true;
        let starts = t1.iter().map(|&c| tcl.points[tcl.clusters[c][0]]).collect();
        tried.extend(t1.iter().copied());
        centers = starts;
    }
    let (c, sw) = run_centers(centers, &mut stats)?;
    cands.extend(c);
    sweeps += sw;

    // thin unions missing every probe lie in a tube between I_l and I_r
    let todo: Vec<usize> = t1.iter().copied().filter(|c| !tried.contains(c)).collect();
    if !todo.is_empty() {
        let side = (g1t.hi.x - g1t.lo.x).max(g2t.hi.x - g2t.lo.x);
        let tr1 = g1t.hi;
        let bl1 = g1t.lo;
        let tr2 = g2t.hi;
        let bl2 = g2t.lo;
        let xl = g1t.lo.x;
        let xr = g2t.hi.x;
        let il = spread(
            Point::new(xl, y_at(bl2, tr1, xl)),
            Point::new(xl, y_at(bl2, bl1, xl)),
            4 * ALPHA,
        );
        let ir = spread(
            Point::new(xr, y_at(tr1, tr2, xr)),
            Point::new(xr, y_at(tr1, bl2, xr)),
            4 * ALPHA,
        );
        let height = 8.0 * side / ALPHA as f64;
        let steps = |v: &[Point]| {
            let s = v[0].dist(v[1]);
            if s > 0.0 {
                ((height / s).floor() as usize).min(v.len() - 1)
            } else {
                v.len() - 1
            }
        };
        let (ml, mr) = (steps(&il), steps(&ir));
        let verts: Vec<Vec<Point>> = tcl.hulls.iter().map(|h| h.vertices.clone()).collect();
        let inside = |quad: &[Point], c: usize| verts[c].iter().all(|&q| point_in_polygon(quad, q));
        let mut pending: BTreeSet<usize> = todo.iter().copied().collect();
        let mut fallback: Vec<usize> = Vec::new();
        let mut probe_points: Vec<Point> = Vec::new();
        'tubes: for j in 0..il.len() {
            for k in 0..ir.len() {
                if pending.is_empty() {
                    break 'tubes;
                }
                let quad = [
                    il[j],
                    ir[k],
                    ir[(k + mr).min(ir.len() - 1)],
                    il[(j + ml).min(il.len() - 1)],
                ];
                let here: Vec<usize> = pending
                    .iter()
                    .copied()
                    .filter(|&c| inside(&quad, c))
                    .collect();
                if here.is_empty() || !t2.iter().any(|&c| inside(&quad, c)) {
                    continue;
                }
                let contained: Vec<usize> = (0..tcl.len()).filter(|&c| inside(&quad, c)).collect();
                let per = (0..4).map(|i| quad[i].dist(quad[(i + 1) % 4])).sum::<f64>();
                let l_min = per - 20.0 * side / ALPHA as f64;
                let weights: Vec<WeightedPoint> = contained
                    .iter()
                    .map(|&c| (tcl.hulls[c].centroid(), tcl.costs[c]))
                    .collect();
                let w: f64 = weights.iter().map(|x| x.1).sum();
                if l_min >= 0.999 * per && w >= l_min + tcl.eta {
                    stats.centerpoint_calls += 1;
                    let (p, _) = approximate_centerpoint(&weights, (l_min + tcl.eta) / 100.0);
                    probe_points.push(p);
                }
                // the centerpoint is a shortcut; every cluster that fits is still tried
                for c in here {
                    pending.remove(&c);
                    fallback.push(c);
                }
            }
        }
        stats.tube_fallbacks += fallback.len();
        probe_points.extend(fallback.iter().map(|&c| tcl.hulls[c].vertices[0]));
        let (c, sw) = run_centers(probe_points, &mut stats)?;
        cands.extend(c);
        sweeps += sw;
    }

    let spanning: Vec<BTreeSet<usize>> = cands
        .into_iter()
        .filter(|s| is_spanning(&s.iter().copied().collect::<Vec<_>>()))
        .collect();
    match pick_best(&tcl, &spanning, None) {
        Some((s, v)) if cost_lt(v, tcl.total_cost()) || cost_eq(v, tcl.total_cost()) => {
            let selected: Vec<usize> = s.into_iter().collect();
            Ok((
                Spanning::Found(UnionResult {
                    selected,
                    cost: v,
                    sweeps,
                    tubes: Vec::new(),
                }),
                stats,
            ))
        }
        _ => Ok((Spanning::NoSpanningUnion, stats)),
    }
}
