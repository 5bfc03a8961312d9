//! Unit-disk fencing: independent subinstances, then the quadtree levels
//! bottom-up. Every basic polyomino of a level is solved from the solutions
//! one level below, splitting non-basic pieces at two far-apart cells and
//! repairing the merged solution with a spanning cluster union.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cluster_union::{
    merge_partitions, optimal_union_without_center, MergerPartition, Rect, Spanning, UnionError,
    UnionOptions,
};
use crate::decompose::{
    basic_kind, basic_polyominoes, build_quadtree, choose_split_cells, split_independent, Cell,
    DecomposeError, Polyomino, Quadtree,
};
use crate::geometry::{cost_eq, cost_lt, hull_perimeter, Point};
use crate::oracle::{maximal_optimal_partition, FencingInstance, OracleError, Partition};

/// Subinstances up to this size go straight to the exhaustive solver.
pub const BYPASS_MAX: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum FencingError {
    #[error("polyomino at level {level} is not a leaf (leaf level {leaf})")]
    NotLeaf { level: u32, leaf: u32 },
    #[error("no solution for basic polyomino {0:?}")]
    Missing(Vec<Cell>),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Union(#[from] UnionError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FencingOptions {
    /// run the pipeline even on tiny subinstances
    pub force_pipeline: bool,
    pub union: UnionOptions,
}

/// Clusters as sorted global index lists.
pub type Clusters = Vec<Vec<usize>>;

/// Maximal optimal partitions of the basic polyominoes of one level.
#[derive(Clone, Debug, Default)]
pub struct LevelSolutions {
    pub level: u32,
    pub by_cells: HashMap<Vec<Cell>, Clusters>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PipelineStats {
    pub subinstances: usize,
    pub bypassed: usize,
    pub levels: u32,
    pub basic_polyominoes: usize,
    pub split_steps: usize,
    pub spanning_unions: usize,
}

impl PipelineStats {
    fn add(&mut self, o: &PipelineStats) {
        self.subinstances += o.subinstances;
        self.bypassed += o.bypassed;
        self.levels = self.levels.max(o.levels);
        self.basic_polyominoes += o.basic_polyominoes;
        self.split_steps += o.split_steps;
        self.spanning_unions += o.spanning_unions;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterRecord {
    pub points: Vec<usize>,
    pub perimeter: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FencingResult {
    pub eta: f64,
    pub clusters: Vec<ClusterRecord>,
    pub cost: f64,
    pub stats: PipelineStats,
}

impl FencingResult {
    pub fn partition(&self, points: &[Point]) -> Partition {
        Partition::new(
            points,
            self.clusters.iter().map(|c| c.points.clone()).collect(),
            self.eta,
        )
    }
}

fn sorted(mut c: Clusters) -> Clusters {
    for x in c.iter_mut() {
        x.sort_unstable();
    }
    c.retain(|x| !x.is_empty());
    c.sort();
    c
}

/// A leaf basic polyomino is too small to be split: everything in it is one cluster.
pub fn solve_leaf_polyomino(tree: &Quadtree, p: &Polyomino) -> Result<Clusters, FencingError> {
    if p.level != tree.levels {
        return Err(FencingError::NotLeaf {
            level: p.level,
            leaf: tree.levels,
        });
    }
    let pts = p.points(tree);
    Ok(if pts.is_empty() { vec![] } else { vec![pts] })
}

pub fn cell_rect(tree: &Quadtree, level: u32, c: Cell) -> Rect {
    let s = tree.cell_side(level);
    let lo = Point::new(
        tree.origin.x + c.0 as f64 * s,
        tree.origin.y + c.1 as f64 * s,
    );
    Rect {
        lo,
        hi: Point::new(lo.x + s, lo.y + s),
    }
}

/// Solves convex polyominoes of one level from that level's basic solutions.
pub struct SubpolyominoSolver<'a> {
    pub points: &'a [Point],
    pub tree: &'a Quadtree,
    pub basic: &'a LevelSolutions,
    pub eta: f64,
    pub opts: UnionOptions,
    memo: HashMap<Vec<usize>, Clusters>,
    pub stats: PipelineStats,
}

impl<'a> SubpolyominoSolver<'a> {
    pub fn new(
        points: &'a [Point],
        tree: &'a Quadtree,
        basic: &'a LevelSolutions,
        eta: f64,
        opts: UnionOptions,
    ) -> Self {
        SubpolyominoSolver {
            points,
            tree,
            basic,
            eta,
            opts,
            memo: HashMap::new(),
            stats: PipelineStats::default(),
        }
    }

    fn points_of(&self, cells: &[Cell]) -> Vec<usize> {
        let mut v: Vec<usize> = cells
            .iter()
            .filter_map(|&c| self.tree.node(self.basic.level, c))
            .flat_map(|n| n.points.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }

    /// The cell's rectangle, grown to cover the points the quadtree filed
    /// under it: a point on the far boundary can sit an ulp outside
    /// `origin + (c + 1)·side`.
    fn cell_region(&self, level: u32, c: Cell) -> Rect {
        let mut r = cell_rect(self.tree, level, c);
        for &i in self.tree.node(level, c).map_or(&[][..], |n| &n.points[..]) {
            let q = self.points[i];
            r.lo = Point::new(r.lo.x.min(q.x), r.lo.y.min(q.y));
            r.hi = Point::new(r.hi.x.max(q.x), r.hi.y.max(q.y));
        }
        r
    }

    /// Replace `cl` by its best union touching both cells, if there is one.
    fn span(&mut self, cl: MergerPartition, g1: Cell, g2: Cell) -> Result<Clusters, FencingError> {
        let level = self.basic.level;
        let (r1, r2) = (self.cell_region(level, g1), self.cell_region(level, g2));
        let (res, _) = optimal_union_without_center(&cl, r1, r2, self.opts)?;
        Ok(match res {
            Spanning::Found(u) => {
                self.stats.spanning_unions += 1;
                cl.apply(&u.selected).clusters
            }
            Spanning::NoSpanningUnion => cl.clusters,
        })
    }

    /// Maximal optimal partition of the points in a convex polyomino.
    pub fn solve(&mut self, cells: &[Cell]) -> Result<Clusters, FencingError> {
        let pts = self.points_of(cells);
        if pts.is_empty() {
            return Ok(vec![]);
        }
        if let Some(c) = self.memo.get(&pts) {
            return Ok(c.clone());
        }
        let mut cells = cells.to_vec();
        cells.sort_unstable();
        let out = if basic_kind(&cells).is_some() {
            self.basic
                .by_cells
                .get(&cells)
                .cloned()
                .ok_or_else(|| FencingError::Missing(cells.clone()))?
        } else {
            self.stats.split_steps += 1;
            let (g1, g2) = choose_split_cells(&cells)?;
            let without =
                |g: Cell| -> Vec<Cell> { cells.iter().copied().filter(|&c| c != g).collect() };
            let c1 = self.solve(&without(g1))?;
            let c2 = self.solve(&without(g2))?;
            let s1 = self.solve(&[g1])?;
            let s2 = self.solve(&[g2])?;
            let eta = self.eta;
            let cl3 = merge_partitions(self.points, &[s1, s2], eta);
            let c3 = self.span(cl3, g1, g2)?;
            let cl = merge_partitions(self.points, &[c1, c2, c3], eta);
            self.span(cl, g1, g2)?
        };
        let out = sorted(out);
        self.memo.insert(pts, out.clone());
        Ok(out)
    }
}

/// Solve the non-basic polyomino `cells` of `basic.level`.
pub fn solve_subpolyomino(
    points: &[Point],
    tree: &Quadtree,
    cells: &[Cell],
    basic: &LevelSolutions,
    eta: f64,
    opts: UnionOptions,
) -> Result<Clusters, FencingError> {
    SubpolyominoSolver::new(points, tree, basic, eta, opts).solve(cells)
}

/// Solutions for every basic polyomino of `level`, from those of `level + 1`.
pub fn solve_level(
    points: &[Point],
    tree: &Quadtree,
    level: u32,
    below: Option<&LevelSolutions>,
    eta: f64,
    opts: UnionOptions,
) -> Result<(LevelSolutions, PipelineStats), FencingError> {
    let polys = basic_polyominoes(tree, level);
    let solved: Vec<Result<(Vec<Cell>, Clusters, PipelineStats), FencingError>> = polys
        .par_iter()
        .map(|p| match below {
            None => Ok((
                p.cells.clone(),
                solve_leaf_polyomino(tree, p)?,
                PipelineStats::default(),
            )),
            Some(b) => {
                let mut s = SubpolyominoSolver::new(points, tree, b, eta, opts);
                let c = s.solve(&p.children_cells())?;
                Ok((p.cells.clone(), c, s.stats))
            }
        })
        .collect();
    let mut out = LevelSolutions {
        level,
        by_cells: HashMap::new(),
    };
    let mut stats = PipelineStats {
        basic_polyominoes: polys.len(),
        ..Default::default()
    };
    for r in solved {
        let (cells, c, st) = r?;
        stats.add(&st);
        out.by_cells.insert(cells, c);
    }
    Ok((out, stats))
}

/// Merge pairs of clusters while that does not raise the cost.
pub fn merge_greedily(points: &[Point], eta: f64, clusters: Clusters) -> Clusters {
    let mut cl = clusters;
    let h = |c: &[usize]| hull_perimeter(&c.iter().map(|&i| points[i]).collect::<Vec<_>>());
    let mut per: Vec<f64> = cl.iter().map(|c| h(c)).collect();
    'outer: loop {
        for i in 0..cl.len() {
            for j in i + 1..cl.len() {
                let mut u = cl[i].clone();
                u.extend_from_slice(&cl[j]);
                let hu = h(&u);
                let apart = 2.0 * eta + per[i] + per[j];
                let joined = eta + hu;
                if cost_lt(joined, apart) || cost_eq(joined, apart) {
                    cl.swap_remove(j);
                    per.swap_remove(j);
                    cl[i] = u;
                    per[i] = hu;
                    continue 'outer;
                }
            }
        }
        break;
    }
    sorted(cl)
}

fn solve_subinstance(
    inst: &FencingInstance,
    sub: &crate::decompose::Subinstance,
    opts: FencingOptions,
) -> Result<(Clusters, PipelineStats), FencingError> {
    let mut stats = PipelineStats {
        subinstances: 1,
        ..Default::default()
    };
    if sub.points.len() <= BYPASS_MAX && !opts.force_pipeline {
        stats.bypassed = 1;
        let local: Vec<Point> = sub.points.iter().map(|&i| inst.points[i]).collect();
        let p = maximal_optimal_partition(&local, inst.eta)?;
        let c = p
            .clusters
            .into_iter()
            .map(|c| c.into_iter().map(|k| sub.points[k]).collect())
            .collect();
        return Ok((sorted(c), stats));
    }
    let tree = build_quadtree(&inst.points, sub)?;
    stats.levels = tree.levels;
    let mut below: Option<LevelSolutions> = None;
    for level in (1..=tree.levels).rev() {
        let (sol, st) = solve_level(
            &inst.points,
            &tree,
            level,
            below.as_ref(),
            inst.eta,
            opts.union,
        )?;
        stats.add(&st);
        below = Some(sol);
    }
    let root = below.expect("at least one level");
    let c = root
        .by_cells
        .get(&vec![(0, 0)])
        .cloned()
        .ok_or(FencingError::Missing(vec![(0, 0)]))?;
    Ok((c, stats))
}

/// Minimum-cost fencing of all points; the returned partition is the maximal optimal one.
pub fn solve_unit_disk_fencing(
    inst: &FencingInstance,
    opts: FencingOptions,
) -> Result<FencingResult, FencingError> {
    let subs = split_independent(inst);
    let parts: Vec<Result<(Clusters, PipelineStats), FencingError>> = subs
        .par_iter()
        .map(|s| solve_subinstance(inst, s, opts))
        .collect();
    let mut all = Vec::new();
    let mut stats = PipelineStats::default();
    for r in parts {
        let (c, st) = r?;
        // greedy merging only ever joins clusters of the same subinstance
        all.extend(merge_greedily(&inst.points, inst.eta, c));
        stats.add(&st);
    }
    let clusters: Vec<ClusterRecord> = sorted(all)
        .into_iter()
        .map(|c| {
            let perimeter = hull_perimeter(&c.iter().map(|&i| inst.points[i]).collect::<Vec<_>>());
            ClusterRecord {
                points: c,
                perimeter,
            }
        })
        .collect();
    let cost = clusters.iter().map(|c| inst.eta + c.perimeter).sum();
    Ok(FencingResult {
        eta: inst.eta,
        clusters,
        cost,
        stats,
    })
}
