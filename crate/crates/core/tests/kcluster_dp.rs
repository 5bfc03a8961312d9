use fence_core::geometry::{cost_eq, hull_perimeter, Point};
use fence_core::kcluster_dp::*;
use fence_core::oracle::brute_kcluster_opt;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(seed: u64, n: usize) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Point::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0))).collect()
}

fn ends(inst: &Instance, m: &[EdgeId]) -> Vec<(usize, usize)> {
    m.iter().map(|&e| inst.ends(e)).collect()
}

fn help(gap: u32, j: u32) -> LineRef {
    LineRef::Help { gap, j }
}

// ---------------------------------------------------------------- grid

#[test]
fn grid_of_one_point() {
    let g = build_grid(&[Point::new(1.0, 2.0)]).unwrap();
    assert_eq!(g.main_lines(Axis::X).len(), 2);
    assert_eq!(g.main_lines(Axis::Y).len(), 2);
    assert_eq!(g.gaps(Axis::X), 0);
    assert_eq!(g.gaps(Axis::Y), 0);
}

#[test]
fn grid_of_two_points() {
    let g = build_grid(&[Point::new(0.0, 5.0), Point::new(3.0, 1.0)]).unwrap();
    assert_eq!(g.gaps(Axis::X), 1);
    assert_eq!(g.help_coord(Axis::X, 0, 1), 3.0 / 20000.0);
    assert_eq!(g.help_coord(Axis::X, 0, 19999), 3.0 * 19999.0 / 20000.0);
    assert_eq!(g.help_coord(Axis::Y, 0, 10000), 3.0);
}

#[test]
fn help_lines_split_gaps_evenly() {
    let pts = random_points(3, 6);
    let g = build_grid(&pts).unwrap();
    let mut xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    for gap in 0..5 {
        for j in [1u32, 7, 10000, 19998, 19999] {
            let want = xs[gap] + (xs[gap + 1] - xs[gap]) / 20000.0 * j as f64;
            assert!((g.help_coord(Axis::X, gap as u32, j) - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        let step = (xs[gap + 1] - xs[gap]) / 20000.0;
        assert!((g.help_coord(Axis::X, gap as u32, 2) - g.help_coord(Axis::X, gap as u32, 1) - step).abs() < 1e-12);
    }
}

#[test]
fn main_lines_sit_beside_their_point() {
    let pts = vec![Point::new(0.0, 0.0), Point::new(1.0, 2.0)];
    let g = build_grid(&pts).unwrap();
    let minus = LineRef::Main { rank: 1, plus: false };
    let plus = LineRef::Main { rank: 1, plus: true };
    assert_eq!(g.cmp(Axis::X, minus, plus), std::cmp::Ordering::Less);
    assert_eq!(g.cmp(Axis::X, help(0, 19999), minus), std::cmp::Ordering::Less);
    assert!(g.coord(Axis::X, minus) < 1.0 && 1.0 < g.coord(Axis::X, plus));
    assert!(g.coord(Axis::X, help(0, 19999)) < g.coord(Axis::X, minus));
    // the box between the two main lines of a point is elementary and holds it
    let bx = GridBox { l: minus, r: plus, b: LineRef::Main { rank: 1, plus: false }, t: LineRef::Main { rank: 1, plus: true } };
    assert!(bx.is_elementary());
    assert!(bx.rect(&g).contains(pts[1]));
    assert!(!g.outer_box().is_elementary());
}

// ---------------------------------------------------------------- cut numbers

#[test]
fn cut_number_closed_form_cases() {
    assert_eq!(cut_number_closed(2, true, true), Ok(2));
    assert_eq!(cut_number_closed(0, false, false), Ok(0));
    assert_eq!(cut_number_closed(0, true, true), Ok(1));
    assert_eq!(cut_number_closed(1, true, false), Ok(1));
    assert_eq!(cut_number_closed(2, false, false), Ok(1));
    assert!(cut_number_closed(3, true, true).is_err());
}

/// Triangle through the middle of the outer box, cut by a vertical line.
fn triangle() -> (Instance, Vec<Vec<usize>>, Vec<EdgeId>) {
    let pts = vec![Point::new(0.0, 0.0), Point::new(4.0, 1.0), Point::new(1.0, 3.0)];
    let inst = Instance::new(&pts).unwrap();
    let clusters = vec![vec![0, 1, 2]];
    let edges = signature_edges(&inst, &clusters);
    (inst, clusters, edges)
}

#[test]
fn cut_number_on_boxes() {
    let (inst, clusters, edges) = triangle();
    let outer = inst.grid.outer_box();
    // special subproblems
    let r = outer.rect(&inst.grid);
    for s in Side::ALL {
        assert_eq!(cut_number(&[], &r, s, true), Ok(1));
        assert_eq!(cut_number(&[], &r, s, false), Ok(0));
    }
    // the right part of a vertical cut: the triangle enters through its left side
    let sep = Separator { axis: Axis::X, line: help(1, 10000) };
    let (bl, br) = outer.split(sep);
    for bx in [bl, br] {
        let (m, delta) = restrict(&inst, &clusters, &edges, &bx);
        let r = bx.rect(&inst.grid);
        let hits = inst.border_hits(&m, &r);
        assert_eq!(m.len(), 2, "{:?}", ends(&inst, &m));
        for s in Side::ALL {
            let closed = cut_number(&hits, &r, s, delta).unwrap();
            assert_eq!(closed, cut_number_general(&hits, &r, s, delta));
        }
    }
    let (sl, sr) = separator_sides(Axis::X);
    let (ml, _) = restrict(&inst, &clusters, &edges, &bl);
    let rl = bl.rect(&inst.grid);
    assert_eq!(theta(&inst, &rl, &ml, sl, false), 1);
    assert_eq!(theta(&inst, &rl, &ml, Side::Left, false), 0);
    let (mr, _) = restrict(&inst, &clusters, &edges, &br);
    assert_eq!(theta(&inst, &br.rect(&inst.grid), &mr, sr, false), 1);
}

#[test]
fn fully_covered_side_has_cut_number_one() {
    // a box strictly inside a big triangle, cut so that one half meets no edge
    let pts = vec![Point::new(0.0, 0.0), Point::new(10.0, 0.5), Point::new(4.0, 9.0), Point::new(4.5, 3.0), Point::new(5.5, 3.5)];
    let inst = Instance::new(&pts).unwrap();
    let clusters = vec![vec![0, 1, 2, 3, 4]];
    let edges = signature_edges(&inst, &clusters);
    let g = &inst.grid;
    let (rx, ry) = (g.x_rank[3], g.y_rank[3]);
    let bx = GridBox {
        l: LineRef::Main { rank: rx, plus: false },
        r: LineRef::Main { rank: rx, plus: true },
        b: LineRef::Main { rank: ry, plus: false },
        t: LineRef::Main { rank: ry, plus: true },
    };
    let (m, delta) = restrict(&inst, &clusters, &edges, &bx);
    assert!(m.is_empty() && delta);
    let r = bx.rect(g);
    for s in Side::ALL {
        assert_eq!(cut_number(&[], &r, s, delta), Ok(1));
    }
    assert_eq!(corner_bits(&[], &r, true), 0xff);
}

// ---------------------------------------------------------------- elementary solutions

#[test]
fn elementary_single_point_is_a_loop() {
    let inst = Instance::new(&[Point::new(0.0, 0.0), Point::new(3.0, 2.0)]).unwrap();
    let g = &inst.grid;
    let bx = GridBox { r: help(0, 10000), t: help(0, 10000), ..g.outer_box() };
    let sub = Subproblem { bx, m: vec![], k: 1, delta: false };
    let cov = elementary_solution(&inst, &sub).unwrap();
    assert_eq!(cov.uncovered.len(), 1);
    assert_eq!(cov.phi, 0.0);
    assert!(elementary_solution(&inst, &Subproblem { k: 0, ..sub.clone() }).is_none());
    assert!(elementary_solution(&inst, &Subproblem { k: 2, ..sub }).is_none());
}

#[test]
fn elementary_empty_box() {
    let inst = Instance::new(&[Point::new(0.0, 0.0), Point::new(3.0, 2.0)]).unwrap();
    let g = &inst.grid;
    // upper-left quarter holds no point
    let bx = GridBox { r: help(0, 10000), b: help(0, 10000), ..g.outer_box() };
    let sub = Subproblem { bx, m: vec![], k: 0, delta: false };
    let cov = elementary_solution(&inst, &sub).unwrap();
    assert_eq!(cov.kappa(), 0);
    let special = Subproblem { k: 1, delta: true, ..sub };
    assert!(special.is_special());
    assert_eq!(elementary_solution(&inst, &special).unwrap().kappa(), 1);
}

#[test]
fn elementary_two_edges_through_a_point() {
    let (inst, clusters, edges) = triangle();
    let g = &inst.grid;
    // box around the apex (rank 2 in y) cut off below the middle
    let p = 2;
    let bx = GridBox { b: help(1, 10000), ..g.outer_box() };
    let r = bx.rect(g);
    assert_eq!(inst.points_in(&r), vec![p]);
    let (m, delta) = restrict(&inst, &clusters, &edges, &bx);
    assert_eq!(m.len(), 2);
    let sub = Subproblem { bx, m: m.clone(), k: 1, delta };
    let cov = elementary_solution(&inst, &sub).expect("the two hull edges at the apex are a solution");
    assert!(cov.uncovered.is_empty());
    assert_eq!(cov.pieces.len(), 1);
    // reversing the chain gives a right turn: no solution
    let rev: Vec<EdgeId> = m.iter().map(|&e| {
        let (a, b) = inst.ends(e);
        inst.edge(b, a)
    }).collect();
    assert!(elementary_solution(&inst, &Subproblem { m: rev, ..sub.clone() }).is_none());
    // one edge alone leaves the chain open
    assert!(elementary_solution(&inst, &Subproblem { m: m[..1].to_vec(), ..sub }).is_none());
}

// ---------------------------------------------------------------- merging

fn base_node(inst: &Instance, sub: Subproblem) -> DagNode {
    let r = sub.bx.rect(&inst.grid);
    let cov = elementary_solution(inst, &sub).unwrap();
    DagNode {
        cost: cov.phi,
        corners: corner_bits(&inst.border_hits(&sub.m, &r), &r, sub.delta),
        kind: NodeKind::Base { edges: sub.m.clone(), loop_at: cov.uncovered.first().copied() },
        sub,
    }
}

#[test]
fn merge_empty_and_loop() {
    let inst = Instance::new(&[Point::new(0.0, 0.0), Point::new(3.0, 2.0)]).unwrap();
    let outer = inst.grid.outer_box();
    let sep = Separator { axis: Axis::Y, line: help(0, 10000) };
    let top = GridBox { b: help(0, 10000), ..outer };
    let split = GridBox { r: help(0, 10000), ..outer };
    let (upper_left, lower_left) = split.split(sep);
    let mut dag = SolutionDag { nodes: vec![], root: 0 };
    // upper left: empty; lower left: the loop at point 0
    dag.nodes.push(base_node(&inst, Subproblem { bx: upper_left, m: vec![], k: 0, delta: false }));
    dag.nodes.push(base_node(&inst, Subproblem { bx: lower_left, m: vec![], k: 1, delta: false }));
    let id = merge_solutions(&mut dag, 0, 1, sep, vec![], 0, Subproblem { bx: split, m: vec![], k: 1, delta: false }).unwrap();
    assert_eq!(dag.nodes[id].sub.k, 1);
    assert_eq!(dag.nodes[id].cost, 0.0);
    // top half: an empty left part and the loop at point 1 on the right
    let (a, b) = top.split(Separator { axis: Axis::X, line: help(0, 10000) });
    dag.nodes.push(base_node(&inst, Subproblem { bx: a, m: vec![], k: 0, delta: false }));
    dag.nodes.push(base_node(&inst, Subproblem { bx: b, m: vec![], k: 1, delta: false }));
    let (ia, ib) = (dag.nodes.len() - 2, dag.nodes.len() - 1);
    let sep_x = Separator { axis: Axis::X, line: help(0, 10000) };
    assert!(merge_solutions(&mut dag, ia, ib, sep_x, vec![], 0, Subproblem { bx: top, m: vec![], k: 0, delta: false }).is_err());
    let id = merge_solutions(&mut dag, ia, ib, sep_x, vec![], 0, Subproblem { bx: top, m: vec![], k: 1, delta: false }).unwrap();
    assert_eq!(dag.nodes[id].sub.k, 1);
}

#[test]
fn merging_two_border_pieces_drops_one_cluster() {
    let (inst, clusters, edges) = triangle();
    let outer = inst.grid.outer_box();
    let sep = Separator { axis: Axis::X, line: help(1, 10000) };
    let (bl, br) = outer.split(sep);
    let rl = bl.rect(&inst.grid);
    let rr = br.rect(&inst.grid);
    let (ml, _) = restrict(&inst, &clusters, &edges, &bl);
    let (mr, _) = restrict(&inst, &clusters, &edges, &br);
    let cl = trace_covering(&inst, &edges, &rl, false).unwrap();
    let cr = trace_covering(&inst, &edges, &rr, false).unwrap();
    let (sl, sr) = separator_sides(Axis::X);
    let t = theta(&inst, &rl, &ml, sl, false);
    assert_eq!(t, theta(&inst, &rr, &mr, sr, false));
    assert_eq!((cl.kappa(), cr.kappa(), t), (1, 1, 1));
    let whole = trace_covering(&inst, &edges, &outer.rect(&inst.grid), false).unwrap();
    assert_eq!(whole.kappa(), cl.kappa() + cr.kappa() - t);
    assert!((whole.phi - cl.phi - cr.phi).abs() < 1e-12);
    assert!((whole.phi - hull_perimeter(&inst.pts)).abs() < 1e-12);
}

#[test]
fn corner_bits_of_halves_merge() {
    for seed in 0..30 {
        let pts = random_points(seed, 5);
        let mut s = DpSolver::new(&pts, DpOptions::default()).unwrap();
        for k in 1..=5 {
            let dag = s.dag(k).unwrap().unwrap();
            for node in &dag.nodes {
                let r = node.sub.bx.rect(&s.inst.grid);
                let want = corner_bits(&s.inst.border_hits(&node.sub.m, &r), &r, node.sub.delta);
                assert_eq!(node.corners, want, "seed {seed} k {k}");
                if let NodeKind::Join { left, right, .. } = node.kind {
                    assert_eq!(node.cost, dag.nodes[left].cost + dag.nodes[right].cost);
                }
            }
        }
    }
}

// ---------------------------------------------------------------- splits

#[test]
fn special_subproblems_split_into_special_halves() {
    let (inst, _, _) = triangle();
    let outer = inst.grid.outer_box();
    let sub = Subproblem { bx: outer, m: vec![], k: 1, delta: true };
    let sep = separators(&inst, &outer, SeparatorPolicy::Single)[0];
    let splits = enumerate_splits(&inst, &sub, sep, &DpOptions::default());
    assert_eq!(splits.len(), 1);
    let (l, r, x) = &splits[0];
    assert!(l.is_special() && r.is_special() && x.is_empty());
}

#[test]
fn split_without_crossing_edges_adds_cluster_counts() {
    let (inst, _, _) = triangle();
    let outer = inst.grid.outer_box();
    let sep = Separator { axis: Axis::X, line: help(1, 10000) };
    for k in 0..=3 {
        let sub = Subproblem { bx: outer, m: vec![], k, delta: false };
        let plain: Vec<_> = enumerate_splits(&inst, &sub, sep, &DpOptions::default())
            .into_iter()
            .filter(|(_, _, x)| x.is_empty())
            .collect();
        assert!(!plain.is_empty() || k == 0);
        for (l, r, _) in plain {
            // without crossing edges both sides are uncovered along the separator
            assert!(l.m.is_empty() && r.m.is_empty() && !l.delta && !r.delta);
            assert_eq!(l.k + r.k, k);
        }
    }
}

/// All pairs of child subproblems over every border set, filtered by the
/// merge conditions.
fn split_oracle(inst: &Instance, sub: &Subproblem, sep: Separator, compact: bool) -> Vec<(Subproblem, Subproblem, Vec<EdgeId>)> {
    let n = inst.n();
    let g = &inst.grid;
    let (bl, br) = sub.bx.split(sep);
    let (rl, rr) = (bl.rect(g), br.rect(g));
    let (sl, sr) = separator_sides(sep.axis);
    let inside = inst.points_in(&sub.bx.rect(g));
    let c = g.coord(sep.axis, sep.line);
    let left_of = |i: usize| if sep.axis == Axis::X { inst.pts[i].x < c } else { inst.pts[i].y > c };
    let all: Vec<EdgeId> = (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b))).map(|(a, b)| inst.edge(a, b)).collect();
    let border = |r: &fence_core::kcluster_dp::Rect| -> Vec<EdgeId> { all.iter().copied().filter(|&e| !inst.hits(e, r).is_empty()).collect() };
    let (el, er) = (border(&rl), border(&rr));
    let subsets = |es: &[EdgeId]| -> Vec<Vec<EdgeId>> {
        (0..1u32 << es.len())
            .map(|mask| {
                let mut v: Vec<EdgeId> = (0..es.len()).filter(|i| mask >> i & 1 == 1).map(|i| es[i]).collect();
                v.sort_unstable();
                v
            })
            .collect()
    };
    let mut out = Vec::new();
    for ml in subsets(&el) {
        for mr in subsets(&er) {
            let mut x: Vec<EdgeId> = ml.iter().chain(&mr).copied().filter(|e| !sub.m.contains(e)).collect();
            x.sort_unstable();
            x.dedup();
            let ok_x = x.iter().all(|&e| {
                let (a, b) = inst.ends(e);
                inside.contains(&a) && inside.contains(&b) && left_of(a) != left_of(b)
            });
            if !ok_x {
                continue;
            }
            let mut union: Vec<EdgeId> = sub.m.iter().chain(&x).copied().collect();
            union.sort_unstable();
            let want_l: Vec<EdgeId> = union.iter().copied().filter(|&e| inst.meets_interior(e, &rl)).collect();
            let want_r: Vec<EdgeId> = union.iter().copied().filter(|&e| inst.meets_interior(e, &rr)).collect();
            if want_l != ml || want_r != mr {
                continue;
            }
            if x.iter().enumerate().any(|(i, &e)| x[i + 1..].iter().chain(&sub.m).any(|&f| inst.edges_cross(e, f))) {
                continue;
            }
            let (hl, hr) = (inst.border_hits(&ml, &rl), inst.border_hits(&mr, &rr));
            if !is_alternating(&hl) || !is_alternating(&hr) {
                continue;
            }
            if compact {
                let crossing = ml.iter().filter(|e| mr.contains(e)).count();
                if crossing > 2 || Side::ALL.iter().any(|&s| side_count(&hl, s) > 2 || side_count(&hr, s) > 2) {
                    continue;
                }
            }
            for dl in [false, true] {
                for dr in [false, true] {
                    if (dl && dr) || (dl && !ml.is_empty()) || (dr && !mr.is_empty()) {
                        continue;
                    }
                    let tl = if dl { 1 } else { cut_number_general(&hl, &rl, sl, false) };
                    let tr = if dr { 1 } else { cut_number_general(&hr, &rr, sr, false) };
                    if tl != tr {
                        continue;
                    }
                    for kl in 0..=n {
                        for kr in 0..=n {
                            if kl + kr != sub.k + tl || (dl && kl != 1) || (dr && kr != 1) {
                                continue;
                            }
                            out.push((
                                Subproblem { bx: bl, m: ml.clone(), k: kl, delta: dl },
                                Subproblem { bx: br, m: mr.clone(), k: kr, delta: dr },
                                x.clone(),
                            ));
                        }
                    }
                }
            }
        }
    }
    out
}

#[test]
fn split_count_matches_exhaustive_filter() {
    let pts = vec![Point::new(0.0, 0.0), Point::new(2.0, 1.2), Point::new(0.7, 3.0)];
    let inst = Instance::new(&pts).unwrap();
    let outer = inst.grid.outer_box();
    let opts = DpOptions { strict: false, compact: true, ..DpOptions::default() };
    let key = |v: &(Subproblem, Subproblem, Vec<EdgeId>)| (v.0.encode(), v.1.encode(), v.2.clone());
    let mut total = 0;
    for sep in separators(&inst, &outer, SeparatorPolicy::All) {
        for k in 0..=3 {
            let sub = Subproblem { bx: outer, m: vec![], k, delta: false };
            let mut got: Vec<_> = enumerate_splits(&inst, &sub, sep, &opts).iter().map(key).collect();
            let mut want: Vec<_> = split_oracle(&inst, &sub, sep, true).iter().map(key).collect();
            got.sort();
            want.sort();
            assert_eq!(got.len(), want.len(), "{sep:?} k {k}");
            assert_eq!(got, want);
            total += got.len();
        }
    }
    assert!(total > 20, "{total}");
}

#[test]
fn split_count_with_a_border_set() {
    // second level: the half of a triangle, split again
    let pts = vec![Point::new(0.0, 0.0), Point::new(4.0, 1.0), Point::new(1.0, 3.0), Point::new(1.5, 1.1)];
    let inst = Instance::new(&pts).unwrap();
    let clusters = vec![vec![0, 1, 2, 3]];
    let edges = signature_edges(&inst, &clusters);
    let outer = inst.grid.outer_box();
    let sep = separators(&inst, &outer, SeparatorPolicy::All)
        .into_iter()
        .find(|s| s.axis == Axis::X && inst.points_in(&outer.split(*s).0.rect(&inst.grid)).len() == 3)
        .unwrap();
    let bl = outer.split(sep).0;
    let (m, delta) = restrict(&inst, &clusters, &edges, &bl);
    assert!(!m.is_empty());
    let opts = DpOptions { strict: false, compact: true, ..DpOptions::default() };
    let key = |v: &(Subproblem, Subproblem, Vec<EdgeId>)| (v.0.encode(), v.1.encode(), v.2.clone());
    for inner in separators(&inst, &bl, SeparatorPolicy::All) {
        for k in 0..=4 {
            let sub = Subproblem { bx: bl, m: m.clone(), k, delta };
            let mut got: Vec<_> = enumerate_splits(&inst, &sub, inner, &opts).iter().map(key).collect();
            let mut want: Vec<_> = split_oracle(&inst, &sub, inner, true).iter().map(key).collect();
            got.sort();
            want.sort();
            assert_eq!(got, want, "{inner:?} k {k}");
        }
    }
}

#[test]
fn encoding_layout() {
    let sub = Subproblem {
        bx: GridBox {
            l: LineRef::Main { rank: 0, plus: false },
            r: help(2, 10000),
            b: LineRef::Main { rank: 1, plus: true },
            t: help(0, 1),
        },
        m: vec![7, 3],
        k: 2,
        delta: false,
    };
    let mut want = vec![0u8, 0, 0, 0, 0, 0, 0, 0, 0];
    want.extend([1, 2, 0, 0, 0, 0x10, 0x27, 0, 0]);
    want.extend([0, 1, 0, 0, 0, 1, 0, 0, 0]);
    want.extend([1, 0, 0, 0, 0, 1, 0, 0, 0]);
    want.extend([2, 0, 7, 0, 3, 0, 2, 0, 0]);
    assert_eq!(sub.encode(), want);
}

// ---------------------------------------------------------------- whole program

#[test]
fn extreme_k() {
    for seed in 0..20 {
        let n = 2 + seed as usize % 6;
        let pts = random_points(100 + seed, n);
        let all = run_dp_all(&pts, DpOptions::default()).unwrap();
        assert_eq!(all[n - 1].cost, 0.0);
        assert_eq!(all[n - 1].clusters.len(), n);
        assert!(cost_eq(all[0].cost, hull_perimeter(&pts)));
        assert_eq!(all[0].clusters, vec![(0..n).collect::<Vec<_>>()]);
    }
}

#[test]
fn single_k_entry_point() {
    let pts = random_points(5, 5);
    let r = run_dp(&pts, 2, DpOptions::default()).unwrap();
    let (_, want) = brute_kcluster_opt(&pts, 2).unwrap();
    assert!(cost_eq(r.cost, want));
    assert_eq!(r.clusters.len(), 2);
    assert!(matches!(run_dp(&pts, 0, DpOptions::default()), Err(DpError::BadK { .. })));
    assert!(matches!(run_dp(&pts, 6, DpOptions::default()), Err(DpError::BadK { .. })));
}

#[test]
fn random_instances_match_oracle() {
    let mut checked = 0;
    for seed in 0..150u64 {
        let n = 2 + seed as usize % 5;
        let pts = random_points(seed, n);
        let all = run_dp_all(&pts, DpOptions::default()).unwrap();
        for r in &all {
            let (part, want) = brute_kcluster_opt(&pts, r.k).unwrap();
            assert!(cost_eq(r.cost, want), "seed {seed} k {}: {} vs {want} ({:?})", r.k, r.cost, part.clusters);
            // the extracted clustering costs what the table says
            assert!(cost_eq(r.perimeter_sum, r.cost), "seed {seed} k {}", r.k);
            assert_eq!(r.clusters.len(), r.k);
            checked += 1;
        }
    }
    assert!(checked > 500);
}

#[test]
fn separator_policies_agree() {
    for seed in 0..25u64 {
        let pts = random_points(500 + seed, 5);
        let a = run_dp_all(&pts, DpOptions::default()).unwrap();
        let b = run_dp_all(&pts, DpOptions { separators: SeparatorPolicy::All, ..DpOptions::default() }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(cost_eq(x.cost, y.cost), "seed {seed} k {}", x.k);
        }
        assert!(b[0].stats.states >= a[0].stats.states);
    }
}

#[test]
fn compact_mode_never_beats_the_optimum() {
    for seed in 0..25u64 {
        let pts = random_points(700 + seed, 5);
        let opts = DpOptions { compact: true, separators: SeparatorPolicy::All, ..DpOptions::default() };
        let mut s = DpSolver::new(&pts, opts).unwrap();
        let costs = s.solve_all().unwrap();
        for (i, c) in costs.iter().enumerate() {
            let (_, want) = brute_kcluster_opt(&pts, i + 1).unwrap();
            assert!(!c.is_finite() || cost_eq(*c, want) || *c > want, "seed {seed} k {}", i + 1);
        }
    }
}

#[test]
fn degenerate_inputs_are_perturbed() {
    // a 3x3 lattice: axis-parallel and diagonal collinear triples
    let pts: Vec<Point> = (0..9).map(|i| Point::new((i % 3) as f64, (i / 3) as f64)).collect();
    let pts = &pts[..7];
    let mut s = DpSolver::new(pts, DpOptions::default()).unwrap();
    assert!(s.inst.perturbed);
    let costs = s.solve_all().unwrap();
    for k in 1..=pts.len() {
        let (_, want) = brute_kcluster_opt(pts, k).unwrap();
        assert!((costs[k - 1] - want).abs() <= 1e-8 * want.max(1.0), "k {k}: {} vs {want}", costs[k - 1]);
    }
    assert!(!Instance::new(&random_points(1, 6)).unwrap().perturbed);
}

#[test]
fn budget_is_reported() {
    let pts = random_points(9, 6);
    let opts = DpOptions { budget: 10, ..DpOptions::default() };
    assert_eq!(run_dp(&pts, 2, opts).unwrap_err(), DpError::BudgetExceeded(10));
}

#[test]
fn stored_solutions_are_coverings() {
    for seed in 0..20u64 {
        let pts = random_points(300 + seed, 5);
        let mut s = DpSolver::new(&pts, DpOptions::default()).unwrap();
        for k in 1..=5 {
            let dag = s.dag(k).unwrap().unwrap();
            for (i, node) in dag.nodes.iter().enumerate() {
                let sub_dag = SolutionDag { nodes: dag.nodes.clone(), root: i };
                let (edges, loops) = dag_edges(&sub_dag);
                let r = node.sub.bx.rect(&s.inst.grid);
                let cov = trace_covering(&s.inst, &edges, &r, node.sub.delta).unwrap();
                assert_eq!(cov.kappa(), node.sub.k, "seed {seed} k {k} node {i}");
                assert_eq!(cov.uncovered, loops);
                assert!((cov.phi - node.cost).abs() <= 1e-9 * node.cost.max(1.0));
                assert_eq!(inst_border(&s.inst, &edges, &r), node.sub.m);
            }
        }
    }
}

fn inst_border(inst: &Instance, edges: &[EdgeId], r: &fence_core::kcluster_dp::Rect) -> Vec<EdgeId> {
    inst.border_set(edges, r)
}

#[test]
fn extraction_of_loops_only() {
    let pts = random_points(2, 4);
    let mut s = DpSolver::new(&pts, DpOptions::default()).unwrap();
    let dag = s.dag(4).unwrap().unwrap();
    assert_eq!(extract_clustering(&s.inst, &dag).unwrap(), vec![vec![0], vec![1], vec![2], vec![3]]);
    let (edges, loops) = dag_edges(&dag);
    assert!(edges.is_empty());
    assert_eq!(loops, vec![0, 1, 2, 3]);
}

// ---------------------------------------------------------------- structure of optima

#[test]
fn optima_respect_the_structural_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..30u64 {
        let n = 3 + seed as usize % 4;
        let pts = random_points(900 + seed, n);
        let inst = Instance::new(&pts).unwrap();
        let k = 1 + seed as usize % n;
        let (part, _) = brute_kcluster_opt(&pts, k).unwrap();
        let edges = signature_edges(&inst, &part.clusters);
        for _ in 0..50 {
            let bx = random_box(&inst, &mut rng);
            let g = &inst.grid;
            let bound = 2.0 * bx.width(g) + 2.0 * bx.height(g);
            assert!(phi_in_box(&inst, &edges, &bx) <= bound * (1.0 + 1e-9), "seed {seed}");
            let (_, delta) = restrict(&inst, &part.clusters, &edges, &bx);
            let cov = trace_covering(&inst, &edges, &bx.rect(g), delta).unwrap();
            let singles: Vec<usize> = inst
                .points_in(&bx.rect(g))
                .into_iter()
                .filter(|i| part.clusters.iter().any(|c| c == &vec![*i]))
                .collect();
            assert_eq!(cov.uncovered, singles);
        }
        check_box_split(&inst, &edges, 64).unwrap();
    }
}

fn random_line(g: &LineGrid, axis: Axis, rng: &mut ChaCha8Rng) -> LineRef {
    let n = g.n() as u32;
    if rng.gen_bool(0.3) {
        LineRef::Main { rank: rng.gen_range(0..n), plus: rng.gen() }
    } else {
        let _ = axis;
        LineRef::Help { gap: rng.gen_range(0..n - 1), j: rng.gen_range(1..=HELP_PER_GAP) }
    }
}

fn random_box(inst: &Instance, rng: &mut ChaCha8Rng) -> GridBox {
    let g = &inst.grid;
    let pair = |axis: Axis, rng: &mut ChaCha8Rng| loop {
        let (a, b) = (random_line(g, axis, rng), random_line(g, axis, rng));
        match g.cmp(axis, a, b) {
            std::cmp::Ordering::Less => return (a, b),
            std::cmp::Ordering::Greater => return (b, a),
            _ => {}
        }
    };
    let (l, r) = pair(Axis::X, rng);
    let (b, t) = pair(Axis::Y, rng);
    GridBox { l, r, b, t }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn closed_and_general_cut_numbers_agree(seed in 0u64..10_000, n in 3usize..7, k in 1usize..4) {
        let pts = random_points(seed, n);
        let inst = Instance::new(&pts).unwrap();
        let k = k.min(n);
        let (part, _) = brute_kcluster_opt(&pts, k).unwrap();
        let edges = signature_edges(&inst, &part.clusters);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let bx = random_box(&inst, &mut rng);
            let (m, delta) = restrict(&inst, &part.clusters, &edges, &bx);
            let r = bx.rect(&inst.grid);
            let hits = inst.border_hits(&m, &r);
            for s in Side::ALL {
                if side_count(&hits, s) <= 2 {
                    prop_assert_eq!(cut_number(&hits, &r, s, delta).unwrap(), cut_number_general(&hits, &r, s, delta));
                }
            }
        }
    }

    #[test]
    fn cost_does_not_increase_with_k(seed in 0u64..10_000, n in 2usize..7) {
        let pts = random_points(seed, n);
        let costs = DpSolver::new(&pts, DpOptions::default()).unwrap().solve_all().unwrap();
        for w in costs.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
    }
}
