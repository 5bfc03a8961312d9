mod common;

use common::{cell, exhaustive_bisector_exists, random_merger, thin_chain, union_oracle, union_oracle_no_center};
use fence_core::cluster_union::Strategy;
use fence_core::cluster_union::*;
use fence_core::geometry::{cost_eq, Point};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_with_center(strategy: Strategy, seeds: std::ops::Range<u64>, n: usize) {
    let mut mismatches = Vec::new();
    for seed in seeds {
        let (cl, x0) = random_merger(seed, n);
        if cl.len() > 12 {
            continue;
        }
        let got = optimal_union_with_center(
            &cl,
            x0,
            UnionOptions {
                strategy,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let (want, cost) = union_oracle(&cl, x0);
        assert!((got.cost - cl.union_cost(&got.selected, Some(x0))).abs() < 1e-12);
        if !cost_eq(got.cost, cost) || got.selected != want {
            mismatches.push((seed, got.cost, cost, got.selected, want));
        }
    }
    assert!(mismatches.is_empty(), "{strategy:?}: {mismatches:?}");
}

#[test]
fn with_center_anchored_matches_oracle() {
    check_with_center(Strategy::Anchored, 0..40, 9);
}

#[test]
fn with_center_landmarks_match_oracle() {
    check_with_center(Strategy::Landmarks, 100..140, 14);
}

#[test]
fn with_center_auto_matches_oracle() {
    check_with_center(Strategy::Auto, 200..230, 12);
}

/// Checks the search on instances where every improving union must reach
/// both cells; returns `None` for instances that break that premise.
fn check_spanning(
    cl: &MergerPartition,
    g1: Rect,
    g2: Rect,
    seed: u64,
    probe_all: bool,
) -> Option<SpanningStats> {
    let want = union_oracle_no_center(cl, &g1, &g2);
    if matches!(want, Some((_, false))) {
        return None;
    }
    let (got, stats) = optimal_union_without_center(
        cl,
        g1,
        g2,
        UnionOptions {
            strategy: Strategy::Auto,
            seed,
            probe_all,
        },
    )
    .unwrap();
    match (&got, want) {
        (Spanning::NoSpanningUnion, None) => {}
        (Spanning::Found(r), Some((w, _))) => {
            assert!(cost_eq(r.cost, w), "seed {seed}: {} vs {}", r.cost, w);
            assert!(cost_eq(r.cost, cl.union_cost(&r.selected, None)));
        }
        _ => panic!("seed {seed}: got {got:?}, want {want:?}"),
    }
    Some(stats)
}

#[test]
fn without_center_matches_spanning_oracle() {
    let mut found = 0;
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 10;
        let points: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.gen_range(0.0..3.0), rng.gen_range(0.0..1.0)))
            .collect();
        let eta = rng.gen_range(0.3..2.5);
        let singles: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let cl = merge_partitions(&points, &[singles], eta);
        // alternate between horizontal and vertical layouts
        let (cl, g1, g2) = if seed % 2 == 0 {
            (cl, cell(0.0, 0.0, 1.0), cell(2.0, 0.0, 1.0))
        } else {
            let pts: Vec<Point> = cl.points.iter().map(|p| Point::new(p.y, p.x)).collect();
            (
                MergerPartition::new(&pts, cl.clusters.clone(), eta),
                cell(0.0, 2.0, 1.0),
                cell(0.0, 0.0, 1.0),
            )
        };
        if check_spanning(&cl, g1, g2, seed, seed % 3 == 0).is_some()
            && union_oracle_no_center(&cl, &g1, &g2).is_some()
        {
            found += 1;
        }
    }
    assert!(found >= 5, "only {found} instances with a spanning union");
}

#[test]
fn without_center_no_spanning_union() {
    let points = vec![
        Point::new(0.5, 0.5),
        Point::new(10.5, 0.5),
        Point::new(0.2, 0.2),
    ];
    let cl = merge_partitions(&points, &[vec![vec![0, 2], vec![1]]], 0.1);
    let (got, _) = optimal_union_without_center(
        &cl,
        cell(0.0, 0.0, 1.0),
        cell(10.0, 0.0, 1.0),
        UnionOptions::default(),
    )
    .unwrap();
    assert!(matches!(got, Spanning::NoSpanningUnion));
    // empty second cell
    let (got, _) = optimal_union_without_center(
        &cl,
        cell(0.0, 0.0, 1.0),
        cell(5.0, 0.0, 1.0),
        UnionOptions::default(),
    )
    .unwrap();
    assert!(matches!(got, Spanning::NoSpanningUnion));
    assert!(optimal_union_without_center(
        &cl,
        cell(0.0, 0.0, 1.0),
        cell(1.0, 0.0, 1.0),
        UnionOptions::default()
    )
    .is_err());
}

#[test]
fn thin_bridge_missing_all_probes() {
    let g1 = cell(0.0, 0.0, 1.0);
    let g2 = cell(3.0, 0.0, 1.0);
    // probes on x = 2 run from y = 1 down to y = 0 in steps of 1/199
    let step = 1.0 / (2 * ALPHA - 1) as f64;
    let y = 0.5 + step * 0.5;
    let mut points = thin_chain(0.5, 3.5, y, 6);
    points.push(Point::new(0.2, 0.9));
    points.push(Point::new(3.8, 0.1));
    let singles: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let cl = merge_partitions(&points, &[singles], 2.0);
    let stats = check_spanning(&cl, g1, g2, 7, true).expect("chain is the only improving union");
    assert!(stats.tube_fallbacks > 0);
    let (got, stats) = optimal_union_without_center(&cl, g1, g2, UnionOptions::default()).unwrap();
    assert!(stats.per_cluster);
    assert!(matches!(got, Spanning::Found(_)));
}

#[test]
fn thin_bridge_between_distant_small_cells_uses_centerpoint() {
    let side = 0.01;
    let g1 = cell(0.0, 0.0, side);
    let g2 = cell(3.0, 0.0, side);
    let step = side / (2 * ALPHA - 1) as f64;
    let y = side / 2.0 + step * 0.5;
    let points = thin_chain(side / 2.0, 3.0 + side / 2.0, y, 7);
    let singles: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let cl = merge_partitions(&points, &[singles], 2.0);
    let stats = check_spanning(&cl, g1, g2, 11, true).expect("chain is the only improving union");
    assert!(stats.centerpoint_calls > 0, "{stats:?}");
}

#[test]
fn merger_of_disjoint_partitions_is_their_union() {
    let points = vec![
        Point::new(0.0, 0.0),
        Point::new(1.0, 0.0),
        Point::new(5.0, 5.0),
        Point::new(6.0, 5.0),
    ];
    let m = merge_partitions(&points, &[vec![vec![0, 1]], vec![vec![2, 3]]], 1.0);
    assert_eq!(m.clusters, vec![vec![0, 1], vec![2, 3]]);
    // crossing segments merge
    let points = vec![
        Point::new(0.0, 0.0),
        Point::new(1.0, 1.0),
        Point::new(0.0, 1.0),
        Point::new(1.0, 0.0),
    ];
    let m = merge_partitions(&points, &[vec![vec![0, 1]], vec![vec![2, 3]]], 1.0);
    assert_eq!(m.clusters, vec![vec![0, 1, 2, 3]]);
}

#[test]
fn merger_ignores_input_order() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 14;
        let points: Vec<Point> = (0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect();
        let mut parts: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            if i > 0 && rng.gen_bool(0.4) {
                parts.last_mut().unwrap().push(i);
            } else {
                parts.push(vec![i]);
            }
        }
        let a = merge_partitions(&points, &[parts.clone()], 0.5);
        parts.shuffle(&mut rng);
        for p in parts.iter_mut() {
            p.shuffle(&mut rng);
        }
        let b = merge_partitions(&points, &[parts], 0.5);
        assert_eq!(a.clusters, b.clusters);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert!(!fence_core::geometry::hulls_intersect(
                    &a.hulls[i],
                    &a.hulls[j]
                ));
            }
        }
    }
}

#[test]
fn with_center_small_examples() {
    // nothing but the center
    let points = vec![Point::new(0.0, 0.0)];
    let cl = merge_partitions(&points, &[vec![vec![0]]], 1.0);
    let r = optimal_union_with_center(&cl, Point::new(0.0, 0.0), UnionOptions::default()).unwrap();
    assert_eq!(r.selected, vec![0]);
    // heavy cluster next to x0, tiny η: merging only adds perimeter
    let points = vec![
        Point::new(1.0, 0.0),
        Point::new(2.0, 0.0),
        Point::new(2.0, 1.0),
        Point::new(1.0, 1.0),
    ];
    let cl = merge_partitions(&points, &[vec![vec![0, 1, 2, 3]]], 1e-3);
    let r = optimal_union_with_center(&cl, Point::new(0.5, 0.5), UnionOptions::default()).unwrap();
    assert!(r.selected.is_empty());
    assert_eq!(union_oracle(&cl, Point::new(0.5, 0.5)).0, r.selected);
    // five clusters around x0, huge η: take everything
    let points: Vec<Point> = (0..5)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 5.0;
            Point::new(a.cos(), a.sin())
        })
        .collect();
    let cl = merge_partitions(&points, &[(0..5).map(|i| vec![i]).collect()], 100.0);
    let r = optimal_union_with_center(&cl, Point::new(0.0, 0.0), UnionOptions::default()).unwrap();
    assert_eq!(r.selected, vec![0, 1, 2, 3, 4]);
    assert_eq!(union_oracle(&cl, Point::new(0.0, 0.0)).0, r.selected);
}

#[test]
fn tube_points_lie_near_the_axis() {
    let mut seen = 0;
    for seed in 500..560 {
        let (cl, x0) = random_merger(seed, 18);
        let r = optimal_union_with_center(
            &cl,
            x0,
            UnionOptions {
                strategy: Strategy::Landmarks,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        for t in &r.tubes {
            for &d in &t.dominating {
                seen += 1;
                assert!(t.axis_dir.cross(d - t.axis_point).abs() < t.half_width);
            }
        }
    }
    assert!(seen > 0);
}

#[test]
fn ham_sandwich_examples() {
    let a = vec![(Point::new(0.0, 0.0), 1.0)];
    let b = vec![(Point::new(2.0, 1.0), 3.0)];
    let l = weighted_ham_sandwich(&a, &b);
    assert!(bisects(&l, &a) && bisects(&l, &b));
    assert!(
        l.d.cross(Point::new(2.0, 1.0) - l.a).abs() < 1e-12
            && l.d.cross(Point::new(0.0, 0.0) - l.a).abs() < 1e-12
    );
    let a = vec![(Point::new(-1.0, 1.0), 1.0), (Point::new(1.0, 1.0), 1.0)];
    let b = vec![(Point::new(-1.0, -1.0), 1.0), (Point::new(1.0, -1.0), 1.0)];
    let l = weighted_ham_sandwich(&a, &b);
    assert!(bisects(&l, &a) && bisects(&l, &b));
}

#[test]
fn ham_sandwich_random_sets() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let na = rng.gen_range(1..20);
        let nb = rng.gen_range(1..=40 - na);
        let mut gen = |k: usize| -> Vec<WeightedPoint> {
            (0..k)
                .map(|_| (Point::new(rng.gen(), rng.gen()), rng.gen_range(0.1..3.0)))
                .collect()
        };
        let a = gen(na);
        let b = gen(nb);
        let l = weighted_ham_sandwich(&a, &b);
        assert!(bisects(&l, &a) && bisects(&l, &b), "seed {seed}");
        assert!(exhaustive_bisector_exists(&a, &b), "seed {seed}");
    }
}

#[test]
fn centerpoint_examples() {
    let pts = vec![(Point::new(0.3, 0.7), 5.0)];
    assert_eq!(approximate_centerpoint(&pts, 0.05).0, Point::new(0.3, 0.7));
    let sq: Vec<WeightedPoint> = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        .iter()
        .map(|&(x, y)| (Point::new(x, y), 1.0))
        .collect();
    let (c, _) = approximate_centerpoint(&sq, 1e9);
    assert!(min_halfplane_weight(c, &sq, 3600) >= 4.0 / 5.0);
}

#[test]
fn centerpoint_random_weighted_points() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<WeightedPoint> = (0..30)
            .map(|_| (Point::new(rng.gen(), rng.gen()), rng.gen_range(0.5..1.5)))
            .collect();
        let w: f64 = pts.iter().map(|x| x.1).sum();
        let w_max = pts.iter().map(|x| x.1).fold(0.0, f64::max);
        // with the heavy-line shortcut
        let (c, path) = approximate_centerpoint(&pts, w / 100.0);
        if path == CenterpointPath::HeavyLine {
            assert!(pts.iter().any(|p| p.0 == c));
        }
        // without it: each quadrant keeps W/4 minus what sits on the two lines
        let (c, path) = approximate_centerpoint(&pts, f64::INFINITY);
        assert_eq!(path, CenterpointPath::HamSandwich);
        assert!(
            min_halfplane_weight(c, &pts, 3600) >= w / 4.0 - 3.0 * w_max,
            "seed {seed}"
        );
    }
}

#[test]
fn centerpoint_with_light_points_passes_fifth_predicate() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<WeightedPoint> = (0..400)
            .map(|_| (Point::new(rng.gen(), rng.gen()), rng.gen_range(0.5..1.5)))
            .collect();
        let w: f64 = pts.iter().map(|x| x.1).sum();
        let (c, path) = approximate_centerpoint(&pts, w / 100.0);
        assert_eq!(path, CenterpointPath::HamSandwich, "seed {seed}");
        assert!(
            min_halfplane_weight(c, &pts, 3600) >= w / 5.0,
            "seed {seed}"
        );
    }
}

#[test]
fn good_ray_examples() {
    let x0 = Point::new(0.0, 0.0);
    let eta = 1.0;
    let one = [Point::new(1.0, 0.0)];
    let r = find_good_ray(x0, &one, eta);
    assert!(r.clearance >= eta / 4.0);
    let circle: Vec<Point> = (0..12)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 12.0;
            Point::new(2.0 * a.cos(), 2.0 * a.sin())
        })
        .collect();
    let r = find_good_ray(x0, &circle, eta);
    assert!(r.clearance >= eta / 144.0);
    // a fan of nearly collinear points
    let fan: Vec<Point> = (0..15)
        .map(|i| Point::new(1.0 + i as f64, 0.01 * i as f64 - 0.07))
        .collect();
    let r = find_good_ray(x0, &fan, eta);
    assert!(r.clearance >= eta / 225.0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..Default::default() })]
    #[test]
    fn good_ray_clears_points(seed in 0u64..1000, n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = 0.5;
        // pairwise distances at least η/2 around x0
        let mut pts: Vec<Point> = Vec::new();
        while pts.len() < n {
            let q = Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            if q.norm() >= eta / 2.0 && pts.iter().all(|p| p.dist(q) >= eta / 2.0) {
                pts.push(q);
            }
        }
        let r = find_good_ray(Point::new(0.0, 0.0), &pts, eta);
        let m = (n + 1) as f64;
        prop_assert!(r.clearance >= eta / (m * m));
    }
}

#[test]
#[ignore]
fn stress_landmarks() {
    let n: usize = std::env::var("N")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(16);
    let mut tubes = 0;
    let mut bad = 0;
    for seed in 1000..1300 {
        let (cl, x0) = random_merger(seed, n);
        if cl.len() > 12 {
            continue;
        }
        let got = optimal_union_with_center(
            &cl,
            x0,
            UnionOptions {
                strategy: Strategy::Landmarks,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        tubes += got.tubes.len();
        let (want, cost) = union_oracle(&cl, x0);
        if !cost_eq(got.cost, cost) || got.selected != want {
            bad += 1;
            println!(
                "seed {seed}: {} vs {} {:?} {:?}",
                got.cost, cost, got.selected, want
            );
        }
    }
    println!("tubes {tubes} bad {bad}");
    assert_eq!(bad, 0);
}
