#![allow(dead_code)]

use fence_core::cluster_union::{bisects, merge_partitions, Line, MergerPartition, Rect, WeightedPoint};
use fence_core::best_curve::{CurveCluster, PerturbedProblem, PolyKind, SweepProblem};
use fence_core::geometry::{
    convex_hull, cost_eq, cost_lt, point_in_polygon, point_segment_dist, segment_crosses_interior, Hull, Point,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};

/// Cheapest angle-monotone closed polygon through `p`, found by depth-first
/// enumeration of every increasing-angle vertex sequence.
pub fn curve_oracle(pp: &PerturbedProblem) -> Option<f64> {
    let n = pp.pts.len();
    let mut order: Vec<usize> = (1..n).collect();
    order.sort_by(|&a, &b| pp.angle(a).total_cmp(&pp.angle(b)));
    let blockers: Vec<Hull> = pp
        .polys
        .iter()
        .filter(|p| p.kind != PolyKind::Outer)
        .map(|p| Hull {
            vertices: p.verts.iter().map(|&v| pp.pts[v]).collect(),
        })
        .collect();
    let outer: Vec<Point> = pp.polys[1].verts.iter().map(|&v| pp.pts[v]).collect();
    let ok = |a: Point, b: Point| {
        blockers.iter().all(|h| !segment_crosses_interior(a, b, h))
            && point_in_polygon(&outer, a.lerp(b, 0.5))
    };
    let mut best: Option<f64> = None;
    let mut path = vec![0usize];
    fn dfs(
        pp: &PerturbedProblem,
        order: &[usize],
        from: usize,
        len: f64,
        path: &mut Vec<usize>,
        ok: &dyn Fn(Point, Point) -> bool,
        best: &mut Option<f64>,
    ) {
        let last = *path.last().unwrap();
        let la = if last == 0 { 0.0 } else { pp.angle(last) };
        // close the curve
        if TAU - la < PI && la > 0.0 && ok(pp.pts[last], pp.p) {
            let curve: Vec<Point> = path.iter().map(|&v| pp.pts[v]).collect();
            let total = len + pp.pts[last].dist(pp.p) + charged(pp, &curve);
            if best.map_or(true, |b| total < b) {
                *best = Some(total);
            }
        }
        for i in from..order.len() {
            let v = order[i];
            let a = pp.angle(v);
            if a - la >= PI {
                break;
            }
            if a <= la || !ok(pp.pts[last], pp.pts[v]) {
                continue;
            }
            path.push(v);
            dfs(
                pp,
                order,
                i + 1,
                len + pp.pts[last].dist(pp.pts[v]),
                path,
                ok,
                best,
            );
            path.pop();
        }
    }
    dfs(pp, &order, 0, 0.0, &mut path, &ok, &mut best);
    best
}

pub fn charged(pp: &PerturbedProblem, curve: &[Point]) -> f64 {
    let tol = pp.eps2 * 1e-3;
    let mut total = pp.fixed_cost;
    for poly in &pp.polys {
        if let PolyKind::Cluster(_) = poly.kind {
            let out = poly.verts.iter().any(|&v| {
                let q = pp.pts[v];
                !point_in_polygon(curve, q) && boundary_dist(curve, q) > tol
            });
            if out {
                total += poly.cost;
            }
        }
    }
    total
}

fn boundary_dist(poly: &[Point], q: Point) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_dist(q, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Random instance with `k` small disjoint clusters in the unit square.
pub fn random_curve_problem(seed: u64, k: usize, max_pts: usize) -> SweepProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut clusters: Vec<CurveCluster> = Vec::new();
        let mut hulls: Vec<Hull> = Vec::new();
        let mut tries = 0;
        while clusters.len() < k && tries < 200 {
            tries += 1;
            let c = Point::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let m = rng.gen_range(1..=max_pts);
            let pts: Vec<Point> = (0..m)
                .map(|_| c + Point::new(rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12)))
                .collect();
            let h = convex_hull(&pts).unwrap();
            if hulls
                .iter()
                .any(|o| fence_core::geometry::hulls_intersect(o, &h))
            {
                continue;
            }
            hulls.push(h);
            clusters.push(CurveCluster {
                points: pts,
                cost: rng.gen_range(0.0..1.5),
            });
        }
        let x0 = Point::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let p = Point::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        if hulls.iter().any(|h| h.contains(p)) || x0.dist(p) < 0.05 {
            continue;
        }
        return SweepProblem {
            clusters,
            x0,
            p,
            outer: None,
            inner: None,
            forced_in: vec![],
        };
    }
}

// ---------------------------------------------------------------- cluster unions

/// Best union containing `x0`, by trying every subset; the largest among ties.
pub fn union_oracle(cl: &MergerPartition, x0: Point) -> (Vec<usize>, f64) {
    let l = cl.len();
    assert!(l <= 12);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for mask in 0u32..1 << l {
        let s: Vec<usize> = (0..l).filter(|i| mask >> i & 1 == 1).collect();
        let v = cl.union_cost(&s, Some(x0));
        let better = match &best {
            None => true,
            Some((bs, bv)) => {
                (cost_lt(v, *bv) && !cost_eq(v, *bv)) || (cost_eq(v, *bv) && s.len() > bs.len())
            }
        };
        if better {
            best = Some((s, v));
        }
    }
    best.unwrap()
}

pub fn random_merger(seed: u64, n: usize) -> (MergerPartition, Point) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point> = (0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect();
    let eta = rng.gen_range(0.05..0.8);
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    for i in idx {
        if !clusters.is_empty() && rng.gen_bool(0.35) {
            let k = rng.gen_range(0..clusters.len());
            clusters[k].push(i);
        } else {
            clusters.push(vec![i]);
        }
    }
    let cl = merge_partitions(&points, &[clusters], eta);
    let x0 = Point::new(rng.gen(), rng.gen());
    (cl, x0)
}

/// Cheapest union of at least two clusters, if it is no worse than `cl`
/// itself, and whether it touches both cells.
pub fn union_oracle_no_center(cl: &MergerPartition, g1: &Rect, g2: &Rect) -> Option<(f64, bool)> {
    let touch = |r: &Rect, c: usize| cl.clusters[c].iter().any(|&i| r.contains(cl.points[i]));
    let l = cl.len();
    let mut best: Option<(f64, bool)> = None;
    for mask in 0u32..1 << l {
        let s: Vec<usize> = (0..l).filter(|i| mask >> i & 1 == 1).collect();
        if s.len() < 2 {
            continue;
        }
        let spanning = s.iter().any(|&c| touch(g1, c)) && s.iter().any(|&c| touch(g2, c));
        let v = cl.union_cost(&s, None);
        let better = match best {
            None => true,
            Some((b, bs)) => {
                (cost_lt(v, b) && !cost_eq(v, b)) || (cost_eq(v, b) && spanning && !bs)
            }
        };
        if better {
            best = Some((v, spanning));
        }
    }
    best.filter(|&(b, _)| cost_lt(b, cl.total_cost()) || cost_eq(b, cl.total_cost()))
}

pub fn cell(x: f64, y: f64, side: f64) -> Rect {
    Rect {
        lo: Point::new(x, y),
        hi: Point::new(x + side, y + side),
    }
}

/// Points along a horizontal line placed between two consecutive probes.
pub fn thin_chain(x_from: f64, x_to: f64, y: f64, k: usize) -> Vec<Point> {
    (0..k)
        .map(|i| {
            Point::new(
                x_from + (x_to - x_from) * i as f64 / (k - 1) as f64,
                y + 1e-7 * (i % 2) as f64,
            )
        })
        .collect()
}

pub fn exhaustive_bisector_exists(a: &[WeightedPoint], b: &[WeightedPoint]) -> bool {
    let all: Vec<WeightedPoint> = a.iter().chain(b).copied().collect();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let l = Line {
                a: all[i].0,
                d: all[j].0 - all[i].0,
            };
            if bisects(&l, a) && bisects(&l, b) {
                return true;
            }
        }
    }
    false
}
