//! Exhaustive solvers over all set partitions. Nothing here is clever on
//! purpose: everything else in the crate is checked against these.

use crate::geometry::{convex_hull, cost_eq, perimeter, GeometryError, Hull, Point};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FENCING_CAP: usize = 12;
pub const KCLUSTER_CAP: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("instance of {n} points exceeds the brute-force cap of {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("cluster budget k={k} outside 1..={n}")]
    BadK { k: usize, n: usize },
    #[error("opening cost must be positive and finite, got {0}")]
    BadEta(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FencingInstance {
    pub points: Vec<Point>,
    pub eta: f64,
}

impl FencingInstance {
    pub fn new(points: Vec<Point>, eta: f64) -> Result<Self, OracleError> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(OracleError::BadEta(eta));
        }
        Ok(FencingInstance { points, eta })
    }
}

/// Clusters as sorted index lists, ordered by their smallest index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub clusters: Vec<Vec<usize>>,
    #[serde(skip)]
    pub hulls: Vec<Hull>,
    pub cost: f64,
}

impl Partition {
    /// Build from arbitrary clusters; `eta = 0` gives the plain perimeter sum.
    pub fn new(points: &[Point], clusters: Vec<Vec<usize>>, eta: f64) -> Partition {
        let mut clusters: Vec<Vec<usize>> =
            clusters.into_iter().filter(|c| !c.is_empty()).collect();
        for c in clusters.iter_mut() {
            c.sort_unstable();
            c.dedup();
        }
        clusters.sort();
        let hulls: Vec<Hull> = clusters
            .iter()
            .map(|c| {
                let pts: Vec<Point> = c.iter().map(|&i| points[i]).collect();
                convex_hull(&pts).expect("nonempty cluster")
            })
            .collect();
        let cost = hulls.iter().map(|h| eta + perimeter(h)).sum();
        Partition {
            clusters,
            hulls,
            cost,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Cluster label of every point (labels follow cluster order).
    pub fn labels(&self, n: usize) -> Vec<usize> {
        let mut lab = vec![usize::MAX; n];
        for (ci, c) in self.clusters.iter().enumerate() {
            for &i in c {
                lab[i] = ci;
            }
        }
        lab
    }

    pub fn same_sets(&self, other: &Partition) -> bool {
        self.clusters == other.clusters
    }
}

/// Restricted-growth strings of length `n` in lexicographic order.
pub struct RgsIter {
    a: Vec<u8>,
    m: Vec<u8>,
    done: bool,
}

impl Iterator for RgsIter {
    type Item = Vec<u8>;
    fn next(&mut self) -> Option<Vec<u8>> {
        if self.done {
            return None;
        }
        let out = self.a.clone();
        self.done = !advance_rgs(&mut self.a, &mut self.m);
        Some(out)
    }
}

/// `m[i]` = max(a[0..i]) so that `a[i] ≤ m[i] + 1`.
fn advance_rgs(a: &mut [u8], m: &mut [u8]) -> bool {
    let n = a.len();
    if n <= 1 {
        return false;
    }
    let mut i = n - 1;
    while i >= 1 {
        if a[i] <= m[i] {
            a[i] += 1;
            let top = m[i].max(a[i]);
            for j in i + 1..n {
                a[j] = 0;
                m[j] = top;
            }
            return true;
        }
        i -= 1;
    }
    false
}

pub fn enumerate_partitions(n: usize) -> Result<RgsIter, OracleError> {
    if n > FENCING_CAP {
        return Err(OracleError::TooLarge {
            n,
            cap: FENCING_CAP,
        });
    }
    Ok(RgsIter {
        a: vec![0; n],
        m: vec![0; n],
        done: n == 0,
    })
}

/// Perimeter of the hull of every subset, indexed by bitmask.
pub fn subset_perimeters(points: &[Point]) -> Vec<f64> {
    let n = points.len();
    let mut tab = vec![0.0; 1 << n];
    let mut buf = Vec::with_capacity(n);
    for (mask, slot) in tab.iter_mut().enumerate().skip(1) {
        buf.clear();
        buf.extend((0..n).filter(|i| mask >> i & 1 == 1).map(|i| points[i]));
        *slot = perimeter(&convex_hull(&buf).unwrap());
    }
    tab
}

fn rgs_to_clusters(rgs: &[u8]) -> Vec<Vec<usize>> {
    let k = rgs.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &b) in rgs.iter().enumerate() {
        out[b as usize].push(i);
    }
    out
}

/// Minimum of `eta·blocks + Σ h` over partitions with at most `max_blocks` blocks.
/// Ties (within the comparison tolerance of the minimum) go to fewer blocks,
/// then to the lexicographically smallest restricted-growth string.
fn exhaustive(points: &[Point], eta: f64, max_blocks: usize) -> (Vec<u8>, f64) {
    let n = points.len();
    let tab = subset_perimeters(points);
    let mut masks = vec![0usize; n];
    let mut cost_of = |rgs: &[u8]| -> Option<(f64, usize)> {
        let k = rgs.iter().copied().max().unwrap() as usize + 1;
        if k > max_blocks {
            return None;
        }
        masks[..k].iter_mut().for_each(|m| *m = 0);
        for (i, &b) in rgs.iter().enumerate() {
            masks[b as usize] |= 1 << i;
        }
        Some((
            eta * k as f64 + masks[..k].iter().map(|&m| tab[m]).sum::<f64>(),
            k,
        ))
    };
    let fresh = || RgsIter {
        a: vec![0; n],
        m: vec![0; n],
        done: n == 0,
    };
    let mut best = f64::INFINITY;
    for rgs in fresh() {
        if let Some((c, _)) = cost_of(&rgs) {
            best = best.min(c);
        }
    }
    // second pass: among near-minimal, fewest blocks, then first in lex order
    let mut pick: Option<(Vec<u8>, usize)> = None;
    for rgs in fresh() {
        if let Some((c, k)) = cost_of(&rgs) {
            if cost_eq(c, best) && pick.as_ref().is_none_or(|(_, bk)| k < *bk) {
                pick = Some((rgs, k));
            }
        }
    }
    (pick.unwrap().0, best)
}

pub fn brute_fencing_opt(inst: &FencingInstance) -> Result<(Partition, f64), OracleError> {
    let n = inst.points.len();
    if n > FENCING_CAP {
        return Err(OracleError::TooLarge {
            n,
            cap: FENCING_CAP,
        });
    }
    if n == 0 {
        return Ok((
            Partition {
                clusters: vec![],
                hulls: vec![],
                cost: 0.0,
            },
            0.0,
        ));
    }
    let (rgs, _) = exhaustive(&inst.points, inst.eta, n);
    let p = Partition::new(&inst.points, rgs_to_clusters(&rgs), inst.eta);
    let c = p.cost;
    Ok((p, c))
}

pub fn brute_kcluster_opt(points: &[Point], k: usize) -> Result<(Partition, f64), OracleError> {
    let n = points.len();
    if n > KCLUSTER_CAP {
        return Err(OracleError::TooLarge {
            n,
            cap: KCLUSTER_CAP,
        });
    }
    if k == 0 || k > n {
        return Err(OracleError::BadK { k, n });
    }
    let (rgs, _) = exhaustive(points, 0.0, k);
    let p = Partition::new(points, rgs_to_clusters(&rgs), 0.0);
    let c = p.cost;
    Ok((p, c))
}

/// Is `{A}` itself an optimal partition of `A`?
pub fn is_indivisible(points: &[Point], eta: f64) -> Result<bool, OracleError> {
    let n = points.len();
    if n > FENCING_CAP {
        return Err(OracleError::TooLarge {
            n,
            cap: FENCING_CAP,
        });
    }
    if n <= 1 {
        return Ok(true);
    }
    let tab = subset_perimeters(points);
    let whole = eta + tab[(1 << n) - 1];
    let mut masks = vec![0usize; n];
    for rgs in enumerate_partitions(n)?.skip(1) {
        let k = rgs.iter().copied().max().unwrap() as usize + 1;
        masks[..k].iter_mut().for_each(|m| *m = 0);
        for (i, &b) in rgs.iter().enumerate() {
            masks[b as usize] |= 1 << i;
        }
        let c = eta * k as f64 + masks[..k].iter().map(|&m| tab[m]).sum::<f64>();
        if crate::geometry::cost_lt(c, whole) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn maximal_optimal_partition(points: &[Point], eta: f64) -> Result<Partition, OracleError> {
    let inst = FencingInstance::new(points.to_vec(), eta)?;
    Ok(brute_fencing_opt(&inst)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bell_numbers() {
        let counts: Vec<usize> = (0..=7)
            .map(|n| enumerate_partitions(n).unwrap().count())
            .collect();
        assert_eq!(counts, vec![0, 1, 2, 5, 15, 52, 203, 877]);
        assert!(enumerate_partitions(13).is_err());
    }

    #[test]
    fn rgs_are_distinct_and_valid() {
        let all: Vec<Vec<u8>> = enumerate_partitions(5).unwrap().collect();
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), all.len());
        assert_eq!(sorted, all);
        for r in &all {
            let mut mx = 0u8;
            assert_eq!(r[0], 0);
            for &x in &r[1..] {
                assert!(x <= mx + 1);
                mx = mx.max(x);
            }
        }
    }

    #[test]
    fn small_fencing() {
        let inst = FencingInstance::new(vec![Point::new(0.0, 0.0)], 1.0).unwrap();
        let (p, c) = brute_fencing_opt(&inst).unwrap();
        assert_eq!(p.clusters, vec![vec![0]]);
        assert_eq!(c, 1.0);
        let inst =
            FencingInstance::new(vec![Point::new(0.0, 0.0), Point::new(0.1, 0.0)], 1.0).unwrap();
        let (p, c) = brute_fencing_opt(&inst).unwrap();
        assert_eq!(p.len(), 1);
        assert!((c - 1.2).abs() < 1e-12);
    }

    #[test]
    fn tie_goes_to_coarser() {
        // η + 2d = 2η exactly at d = η/2
        let pts = vec![Point::new(0.0, 0.0), Point::new(0.5, 0.0)];
        let p = maximal_optimal_partition(&pts, 1.0).unwrap();
        assert_eq!(p.clusters, vec![vec![0, 1]]);
        let pts = vec![Point::new(0.0, 0.0), Point::new(0.5001, 0.0)];
        assert_eq!(maximal_optimal_partition(&pts, 1.0).unwrap().len(), 2);
    }

    #[test]
    fn indivisibility() {
        let two = |d: f64| vec![Point::new(0.0, 0.0), Point::new(d, 0.0)];
        assert!(is_indivisible(&two(0.0)[..1], 1.0).unwrap());
        assert!(!is_indivisible(&two(10.0), 1.0).unwrap());
        assert!(is_indivisible(&two(0.25), 1.0).unwrap());
    }

    #[test]
    fn kcluster_extremes() {
        let pts: Vec<Point> = [(0.0, 0.0), (1.0, 0.2), (0.3, 1.1), (2.0, 2.0)]
            .iter()
            .map(|&(x, y)| Point::new(x, y))
            .collect();
        assert_eq!(brute_kcluster_opt(&pts, 4).unwrap().1, 0.0);
        let h = crate::geometry::hull_perimeter(&pts);
        assert!((brute_kcluster_opt(&pts, 1).unwrap().1 - h).abs() < 1e-12);
        assert!(brute_kcluster_opt(&pts, 0).is_err());
    }
}
