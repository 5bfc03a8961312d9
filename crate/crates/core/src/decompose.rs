//! Independent subinstances, the cell quadtree, and polyomino enumeration.

use crate::geometry::{bbox, Point};
use crate::oracle::FencingInstance;
use serde::Serialize;
use std::collections::{BTreeSet, HashMap, HashSet};
use thiserror::Error;

pub const MAX_LEVELS: u32 = 64;

#[derive(Debug, Error, PartialEq)]
pub enum DecomposeError {
    #[error("leaf size not reached within {MAX_LEVELS} levels")]
    TooDeep,
    #[error("polyomino is basic, it has no split cells")]
    Basic,
    #[error("polyomino is not convex")]
    NotConvex,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Subinstance {
    /// indices into the parent instance
    pub points: Vec<usize>,
    pub lo: Point,
    pub hi: Point,
    pub eta: f64,
}

impl Subinstance {
    pub fn side(&self) -> f64 {
        (self.hi.x - self.lo.x).max(self.hi.y - self.lo.y)
    }
}

fn cut_gaps(points: &[Point], set: &[usize], thresh: f64, by_x: bool) -> Vec<Vec<usize>> {
    let key = |i: usize| if by_x { points[i].x } else { points[i].y };
    let mut s = set.to_vec();
    s.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    let mut parts = vec![vec![s[0]]];
    for w in s.windows(2) {
        if key(w[1]) - key(w[0]) > thresh {
            parts.push(vec![]);
        }
        parts.last_mut().unwrap().push(w[1]);
    }
    parts
}

/// Split along coordinate gaps larger than `|S|·η/2`; clusters of an
/// optimal partition never straddle such a gap.
pub fn split_independent(inst: &FencingInstance) -> Vec<Subinstance> {
    let pts = &inst.points;
    let mut out = Vec::new();
    if pts.is_empty() {
        return out;
    }
    let mut stack = vec![(0..pts.len()).collect::<Vec<_>>()];
    while let Some(set) = stack.pop() {
        let thresh = set.len() as f64 * inst.eta / 2.0;
        let by_x = cut_gaps(pts, &set, thresh, true);
        if by_x.len() > 1 {
            stack.extend(by_x);
            continue;
        }
        let by_y = cut_gaps(pts, &set, thresh, false);
        if by_y.len() > 1 {
            stack.extend(by_y);
            continue;
        }
        let mut set = set;
        set.sort_unstable();
        let sel: Vec<Point> = set.iter().map(|&i| pts[i]).collect();
        let (lo, hi) = bbox(&sel);
        out.push(Subinstance {
            points: set,
            lo,
            hi,
            eta: inst.eta,
        });
    }
    out.sort_by_key(|s| s.points[0]);
    out
}

/// Cell `(ix, iy)` of some level; `iy` grows upwards.
pub type Cell = (i64, i64);

#[derive(Clone, Debug, Serialize)]
pub struct Node {
    pub level: u32,
    pub cell: Cell,
    pub points: Vec<usize>,
    pub children: Vec<usize>,
    /// non-empty cells of the same level sharing an edge or a corner
    pub neighbours: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Quadtree {
    pub origin: Point,
    pub side: f64,
    pub levels: u32,
    pub nodes: Vec<Node>,
    #[serde(skip)]
    pub index: HashMap<(u32, Cell), usize>,
    /// per point, its leaf cell
    pub leaf_cell: Vec<Cell>,
}

impl Quadtree {
    pub fn cell_side(&self, level: u32) -> f64 {
        self.side / f64::powi(2.0, level as i32 - 1)
    }

    pub fn grid(&self, level: u32) -> i64 {
        1i64 << (level - 1)
    }

    pub fn cell_of(&self, point: usize, level: u32) -> Cell {
        let (x, y) = self.leaf_cell[point];
        let k = self.levels - level;
        (x >> k, y >> k)
    }

    pub fn node(&self, level: u32, cell: Cell) -> Option<&Node> {
        self.index.get(&(level, cell)).map(|&i| &self.nodes[i])
    }

    pub fn nodes_at(&self, level: u32) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.level == level)
    }

    /// Descend from the root to the leaf holding `q`.
    pub fn descend(&self, q: Point) -> Option<usize> {
        let mut cur = *self.index.get(&(1, (0, 0)))?;
        let leaf = self.locate(q);
        for level in 2..=self.levels {
            let k = self.levels - level;
            let want = (leaf.0 >> k, leaf.1 >> k);
            cur = *self.nodes[cur]
                .children
                .iter()
                .find(|&&c| self.nodes[c].cell == want)?;
        }
        Some(cur)
    }

    /// Leaf cell of `q`; a cell owns its right and bottom edges.
    pub fn locate(&self, q: Point) -> Cell {
        let leaf = self.cell_side(self.levels);
        let n = self.grid(self.levels);
        let ux = ((q.x - self.origin.x) / leaf).ceil() as i64 - 1;
        let uy = ((q.y - self.origin.y) / leaf).floor() as i64;
        (ux.clamp(0, n - 1), uy.clamp(0, n - 1))
    }
}

/// Quadtree over the subinstance with leaves of side exactly `η/8`,
/// `η/8 · 2^(L-1)` being the smallest such side covering the bounding box.
pub fn build_quadtree(points: &[Point], sub: &Subinstance) -> Result<Quadtree, DecomposeError> {
    let leaf = sub.eta / 8.0;
    let need = sub.side();
    let mut levels = 1u32;
    let mut side = leaf;
    while side < need {
        side *= 2.0;
        levels += 1;
        if levels > MAX_LEVELS {
            return Err(DecomposeError::TooDeep);
        }
    }
    let mut tree = Quadtree {
        origin: sub.lo,
        side,
        levels,
        nodes: Vec::new(),
        index: HashMap::new(),
        leaf_cell: vec![(0, 0); points.len()],
    };
    for &i in &sub.points {
        tree.leaf_cell[i] = tree.locate(points[i]);
    }
    for level in 1..=levels {
        for &i in &sub.points {
            let cell = tree.cell_of(i, level);
            let id = match tree.index.get(&(level, cell)) {
                Some(&id) => id,
                None => {
                    let id = tree.nodes.len();
                    tree.nodes.push(Node {
                        level,
                        cell,
                        points: vec![],
                        children: vec![],
                        neighbours: vec![],
                    });
                    tree.index.insert((level, cell), id);
                    if level > 1 {
                        let parent = tree.index[&(level - 1, (cell.0 >> 1, cell.1 >> 1))];
                        tree.nodes[parent].children.push(id);
                    }
                    id
                }
            };
            tree.nodes[id].points.push(i);
        }
    }
    for id in 0..tree.nodes.len() {
        let (level, (x, y)) = (tree.nodes[id].level, tree.nodes[id].cell);
        let mut nb = vec![];
        for dx in -1..=1 {
            for dy in -1..=1 {
                if (dx, dy) != (0, 0) {
                    if let Some(&j) = tree.index.get(&(level, (x + dx, y + dy))) {
                        nb.push(j);
                    }
                }
            }
        }
        tree.nodes[id].neighbours = nb;
    }
    Ok(tree)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum PolyominoKind {
    Monomino,
    Domino,
    LTromino,
    SquareTetromino,
    Subpolyomino,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Polyomino {
    pub level: u32,
    /// sorted
    pub cells: Vec<Cell>,
    pub kind: PolyominoKind,
}

/// Offsets of the basic shapes, each anchored at its lower-left bounding corner.
const BASIC_SHAPES: [(&[Cell], PolyominoKind); 8] = [
    (&[(0, 0)], PolyominoKind::Monomino),
    (&[(0, 0), (1, 0)], PolyominoKind::Domino),
    (&[(0, 0), (0, 1)], PolyominoKind::Domino),
    (&[(0, 0), (1, 0), (0, 1)], PolyominoKind::LTromino),
    (&[(0, 0), (1, 0), (1, 1)], PolyominoKind::LTromino),
    (&[(0, 0), (0, 1), (1, 1)], PolyominoKind::LTromino),
    (&[(1, 0), (0, 1), (1, 1)], PolyominoKind::LTromino),
    (
        &[(0, 0), (1, 0), (0, 1), (1, 1)],
        PolyominoKind::SquareTetromino,
    ),
];

/// The 21 basic polyominoes containing `c`.
pub fn basic_shapes_containing(c: Cell) -> Vec<(Vec<Cell>, PolyominoKind)> {
    let mut out = Vec::new();
    for (shape, kind) in BASIC_SHAPES {
        for &(ax, ay) in shape {
            let mut cells: Vec<Cell> = shape
                .iter()
                .map(|&(x, y)| (c.0 + x - ax, c.1 + y - ay))
                .collect();
            cells.sort_unstable();
            out.push((cells, kind));
        }
    }
    out
}

/// Every non-empty basic polyomino of a level, once each. Shapes sticking
/// out of the root square are skipped.
pub fn basic_polyominoes(tree: &Quadtree, level: u32) -> Vec<Polyomino> {
    let n = tree.grid(level);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut at_level: Vec<&Node> = tree.nodes_at(level).collect();
    at_level.sort_by_key(|nd| nd.cell);
    for node in at_level {
        for (cells, kind) in basic_shapes_containing(node.cell) {
            if cells
                .iter()
                .any(|&(x, y)| x < 0 || y < 0 || x >= n || y >= n)
            {
                continue;
            }
            if seen.insert(cells.clone()) {
                out.push(Polyomino { level, cells, kind });
            }
        }
    }
    out
}

impl Polyomino {
    pub fn points(&self, tree: &Quadtree) -> Vec<usize> {
        let mut pts: Vec<usize> = self
            .cells
            .iter()
            .filter_map(|&c| tree.node(self.level, c))
            .flat_map(|n| n.points.iter().copied())
            .collect();
        pts.sort_unstable();
        pts
    }

    pub fn nodes<'t>(&self, tree: &'t Quadtree) -> Vec<&'t Node> {
        self.cells
            .iter()
            .filter_map(|&c| tree.node(self.level, c))
            .collect()
    }

    /// Cells of the next level covering this polyomino.
    pub fn children_cells(&self) -> Vec<Cell> {
        let mut out: Vec<Cell> = self
            .cells
            .iter()
            .flat_map(|&(x, y)| {
                [
                    (2 * x, 2 * y),
                    (2 * x + 1, 2 * y),
                    (2 * x, 2 * y + 1),
                    (2 * x + 1, 2 * y + 1),
                ]
            })
            .collect();
        out.sort_unstable();
        out
    }
}

pub fn is_connected(cells: &[Cell]) -> bool {
    if cells.is_empty() {
        return false;
    }
    let set: HashSet<Cell> = cells.iter().copied().collect();
    let mut seen = HashSet::from([cells[0]]);
    let mut stack = vec![cells[0]];
    while let Some((x, y)) = stack.pop() {
        for q in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            if set.contains(&q) && seen.insert(q) {
                stack.push(q);
            }
        }
    }
    seen.len() == set.len()
}

/// Connected, and every row and column meets it in one run.
pub fn is_convex(cells: &[Cell]) -> bool {
    if !is_connected(cells) {
        return false;
    }
    let mut rows: HashMap<i64, Vec<i64>> = HashMap::new();
    let mut cols: HashMap<i64, Vec<i64>> = HashMap::new();
    for &(x, y) in cells {
        rows.entry(y).or_default().push(x);
        cols.entry(x).or_default().push(y);
    }
    rows.values().chain(cols.values()).all(|v| {
        let (lo, hi) = (v.iter().min().unwrap(), v.iter().max().unwrap());
        (hi - lo + 1) as usize == v.len()
    })
}

pub fn basic_kind(cells: &[Cell]) -> Option<PolyominoKind> {
    let mut c = cells.to_vec();
    c.sort_unstable();
    let (mx, my) = (c.iter().map(|p| p.0).min()?, c.iter().map(|p| p.1).min()?);
    let norm: Vec<Cell> = c.iter().map(|&(x, y)| (x - mx, y - my)).collect();
    BASIC_SHAPES
        .iter()
        .find(|(s, _)| {
            let mut s = s.to_vec();
            s.sort_unstable();
            s == norm
        })
        .map(|(_, k)| *k)
}

/// All convex polyominoes made of cells from `region`.
pub fn subpolyominoes(region: &[Cell]) -> Vec<Vec<Cell>> {
    assert!(region.len() <= 20, "region too large to enumerate");
    let mut out = Vec::new();
    for mask in 1u32..(1 << region.len()) {
        let cells: Vec<Cell> = (0..region.len())
            .filter(|&i| mask >> i & 1 == 1)
            .map(|i| region[i])
            .collect();
        if is_convex(&cells) {
            out.push(cells);
        }
    }
    out
}

/// Shape class under translation, rotation and reflection.
pub fn canonical_shape(cells: &[Cell]) -> Vec<Cell> {
    (0..8)
        .map(|t| {
            let mut q: Vec<Cell> = cells
                .iter()
                .map(|&(x, y)| {
                    let (mut x, mut y) = if t & 1 == 1 { (y, x) } else { (x, y) };
                    if t & 2 == 2 {
                        x = -x;
                    }
                    if t & 4 == 4 {
                        y = -y;
                    }
                    (x, y)
                })
                .collect();
            let (mx, my) = (
                q.iter().map(|p| p.0).min().unwrap(),
                q.iter().map(|p| p.1).min().unwrap(),
            );
            for p in &mut q {
                *p = (p.0 - mx, p.1 - my);
            }
            q.sort_unstable();
            q
        })
        .min()
        .unwrap()
}

fn neighbouring(a: Cell, b: Cell) -> bool {
    (a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1
}

fn gap(a: i64, b: i64) -> i64 {
    ((a - b).abs() - 1).max(0)
}

/// The split cells of a non-basic convex polyomino: non-neighbouring,
/// each removable without losing convexity, and extreme along the axis
/// of the larger separation.
pub fn choose_split_cells(cells: &[Cell]) -> Result<(Cell, Cell), DecomposeError> {
    if basic_kind(cells).is_some() {
        return Err(DecomposeError::Basic);
    }
    if !is_convex(cells) {
        return Err(DecomposeError::NotConvex);
    }
    let removable = |c: Cell| {
        let rest: Vec<Cell> = cells.iter().copied().filter(|&d| d != c).collect();
        is_convex(&rest)
    };
    let xs: BTreeSet<i64> = cells.iter().map(|c| c.0).collect();
    let ys: BTreeSet<i64> = cells.iter().map(|c| c.1).collect();
    let (w, h) = (xs.len(), ys.len());
    // candidates at the two ends of one axis: extreme in their line
    let ends = |horizontal: bool| -> (Vec<Cell>, Vec<Cell>) {
        let (first, last) = if horizontal {
            (*xs.first().unwrap(), *xs.last().unwrap())
        } else {
            (*ys.last().unwrap(), *ys.first().unwrap())
        };
        let pick = |line: i64| -> Vec<Cell> {
            let mut v: Vec<Cell> = cells
                .iter()
                .copied()
                .filter(|c| if horizontal { c.0 == line } else { c.1 == line })
                .collect();
            v.sort_by_key(|c| if horizontal { c.1 } else { c.0 });
            let mut ends = vec![v[0]];
            if v.len() > 1 {
                ends.push(*v.last().unwrap());
            }
            ends
        };
        (pick(first), pick(last))
    };
    let mut axes = vec![w >= h];
    axes.push(w < h);
    for horizontal in axes {
        let (g1s, g2s) = ends(horizontal);
        for &g1 in &g1s {
            for &g2 in &g2s {
                let (dx, dy) = (gap(g1.0, g2.0), gap(g1.1, g2.1));
                let dominant = if horizontal { dx >= dy } else { dy >= dx };
                if !neighbouring(g1, g2) && dominant && removable(g1) && removable(g2) {
                    return Ok((g1, g2));
                }
            }
        }
    }
    unreachable!("every non-basic convex polyomino has split cells")
}
