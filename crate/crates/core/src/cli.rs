//! `fence` command line: instance I/O, solver selection, result records and
//! SVG drawings.

use std::f64::consts::{PI, TAU};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster_union::UnionOptions;
use crate::disk_fencing::{solve_unit_disk_fencing, FencingOptions};
use crate::geometry::{bbox, convex_hull, cost_eq, hull_perimeter, Point};
use crate::kcluster_dp::{run_dp_all, DpError, DpOptions, DEFAULT_BUDGET};
use crate::oracle::{brute_fencing_opt, brute_kcluster_opt, maximal_optimal_partition, FencingInstance, Partition};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "fence", about = "Exact fencing of planar point sets")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// minimise η·#clusters + Σ hull perimeters
    SolveFencing {
        input: PathBuf,
        /// opening cost; overrides the value in the input file
        #[arg(long)]
        eta: Option<f64>,
        /// run the full pipeline even on tiny subinstances
        #[arg(long)]
        force_pipeline: bool,
        #[command(flatten)]
        common: Common,
    },
    /// minimise Σ hull perimeters over clusterings into k clusters
    SolveKcluster {
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// maximum number of dynamic-program states
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        #[command(flatten)]
        common: Common,
    },
    /// compare the solvers against brute force on random instances
    Verify {
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 8)]
        n_max: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// worker threads (0: one per core)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Budget(DpError),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Write { .. } => EXIT_INPUT,
            CliError::Budget(_) => EXIT_BUDGET,
            CliError::Verify(_) => EXIT_VERIFY,
        }
    }
}

/// Points plus the optional parameter carried by the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl InputFile {
    pub fn to_points(&self) -> Vec<Point> {
        self.points.iter().map(|&[x, y]| Point::new(x, y)).collect()
    }
}

/// JSON object, or CSV rows `x,y` (a non-numeric first row is a header).
pub fn parse_instance(text: &str) -> Result<InputFile, CliError> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| CliError::Input(format!("bad JSON instance: {e}")));
    }
    let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("bad CSV: {e}")))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let nums: Result<Vec<f64>, _> = rec.iter().take(2).map(str::parse::<f64>).collect();
        match nums {
            Ok(v) if v.len() == 2 => points.push([v[0], v[1]]),
            _ if i == 0 => continue,
            _ => return Err(CliError::Input(format!("CSV row {}: expected `x,y`", i + 1))),
        }
    }
    Ok(InputFile { points, ..InputFile::default() })
}

pub fn read_instance(path: &Path) -> Result<InputFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_instance(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterOut {
    pub points: Vec<usize>,
    pub perimeter: f64,
}

/// What `solve-*` prints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub mode: String,
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub clusters: Vec<ClusterOut>,
    pub cost: f64,
    pub stats: serde_json::Value,
}

impl ResultRecord {
    /// Cost recomputed from the hulls of the recorded clusters.
    pub fn recomputed_cost(&self) -> f64 {
        let pts: Vec<Point> = self.points.iter().map(|&[x, y]| Point::new(x, y)).collect();
        let clusters = self.clusters.iter().map(|c| c.points.clone()).collect();
        Partition::new(&pts, clusters, self.eta.unwrap_or(0.0)).cost
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("records serialise")
    }
}

fn cluster_outs(points: &[Point], clusters: &[Vec<usize>]) -> Vec<ClusterOut> {
    clusters
        .iter()
        .map(|c| ClusterOut {
            points: c.clone(),
            perimeter: hull_perimeter(&c.iter().map(|&i| points[i]).collect::<Vec<_>>()),
        })
        .collect()
}

fn raw(points: &[Point]) -> Vec<[f64; 2]> {
    points.iter().map(|p| [p.x, p.y]).collect()
}

pub fn solve_fencing_record(points: &[Point], eta: f64, opts: FencingOptions) -> Result<ResultRecord, CliError> {
    let inst = FencingInstance::new(points.to_vec(), eta).map_err(|e| CliError::Input(e.to_string()))?;
    let res = solve_unit_disk_fencing(&inst, opts).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(ResultRecord {
        mode: "fencing".into(),
        points: raw(points),
        eta: Some(eta),
        k: None,
        clusters: res.clusters.iter().map(|c| ClusterOut { points: c.points.clone(), perimeter: c.perimeter }).collect(),
        cost: res.cost,
        stats: serde_json::to_value(res.stats).expect("stats serialise"),
    })
}

pub fn solve_kcluster_record(points: &[Point], k: usize, opts: DpOptions) -> Result<ResultRecord, CliError> {
    if k == 0 || k > points.len() {
        return Err(CliError::Input(format!("k = {k} outside 1..={}", points.len())));
    }
    let all = run_dp_all(points, opts).map_err(|e| match e {
        DpError::BudgetExceeded(_) => CliError::Budget(e),
        e => CliError::Input(e.to_string()),
    })?;
    let r = &all[k - 1];
    Ok(ResultRecord {
        mode: "kcluster".into(),
        points: raw(points),
        eta: None,
        k: Some(k),
        clusters: cluster_outs(points, &r.clusters),
        // the program may have run on perturbed coordinates; report the input's
        cost: r.perimeter_sum,
        stats: serde_json::to_value(r.stats).expect("stats serialise"),
    })
}

// ---------------------------------------------------------------------------
// drawings

/// Circular arc, counterclockwise from `start` through `sweep` radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arc {
    pub center: Point,
    pub radius: f64,
    pub start: f64,
    pub sweep: f64,
}

impl Arc {
    pub fn at(&self, t: f64) -> Point {
        let a = self.start + self.sweep * t;
        self.center + Point::new(a.cos(), a.sin()) * self.radius
    }
}

/// Boundary of a hull grown by a disk: offset edges joined by arcs around
/// the hull vertices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundedCurve {
    pub segments: Vec<(Point, Point)>,
    pub arcs: Vec<Arc>,
}

impl RoundedCurve {
    pub fn length(&self) -> f64 {
        self.segments.iter().map(|(a, b)| a.dist(*b)).sum::<f64>()
            + self.arcs.iter().map(|a| a.radius * a.sweep).sum::<f64>()
    }
}

/// Rounded curve at distance `radius` around the hull of `pts`: a circle for
/// one point, a stadium for two.
pub fn rounded_curve(pts: &[Point], radius: f64) -> RoundedCurve {
    let Ok(hull) = convex_hull(pts) else { return RoundedCurve::default() };
    let v = hull.vertices;
    if v.len() == 1 {
        return RoundedCurve { segments: vec![], arcs: vec![Arc { center: v[0], radius, start: 0.0, sweep: TAU }] };
    }
    let m = v.len();
    let normal = |i: usize| {
        let d = v[(i + 1) % m] - v[i];
        (d.y.atan2(d.x) - PI / 2.0).rem_euclid(TAU)
    };
    let mut curve = RoundedCurve::default();
    for i in 0..m {
        let a = normal(i);
        let off = Point::new(a.cos(), a.sin()) * radius;
        curve.segments.push((v[i] + off, v[(i + 1) % m] + off));
        let next = normal((i + 1) % m);
        let sweep = (next - a).rem_euclid(TAU);
        // two antiparallel normals (a segment) turn by exactly π
        let sweep = if m == 2 { PI } else { sweep };
        curve.arcs.push(Arc { center: v[(i + 1) % m], radius, start: a, sweep });
    }
    curve
}

fn fmt(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// Deterministic SVG: points, cluster hulls and, for fencing results, the
/// hulls grown by radius `η/(2π)`.
pub fn render_svg(rec: &ResultRecord) -> String {
    let pts: Vec<Point> = rec.points.iter().map(|&[x, y]| Point::new(x, y)).collect();
    let radius = rec.eta.map_or(0.0, |eta| eta / TAU);
    let (lo, hi) = if pts.is_empty() { (Point::new(0.0, 0.0), Point::new(1.0, 1.0)) } else { bbox(&pts) };
    let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-9);
    let pad = radius + 0.05 * span;
    let (x0, y0, w, h) = (lo.x - pad, -(hi.y + pad), hi.x - lo.x + 2.0 * pad, hi.y - lo.y + 2.0 * pad);
    let dot = 0.006 * span;
    let stroke = 0.003 * span;
    let p = |q: Point| format!("{} {}", fmt(q.x), fmt(-q.y));
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}">"#, fmt(x0), fmt(y0), fmt(w), fmt(h));
    for (ci, c) in rec.clusters.iter().enumerate() {
        let cp: Vec<Point> = c.points.iter().map(|&i| pts[i]).collect();
        let _ = writeln!(s, r#"<g id="cluster-{ci}">"#);
        if rec.eta.is_some() {
            let curve = rounded_curve(&cp, radius);
            let d = svg_path(&curve, &p);
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="steelblue" stroke-width="{}"/>"#, d.trim_end(), fmt(stroke));
        }
        if cp.len() >= 2 {
            let hull = convex_hull(&cp).expect("non-empty cluster");
            let list: Vec<String> = hull.vertices.iter().map(|&q| p(q).replace(' ', ",")).collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="none" stroke="black" stroke-width="{}"/>"#, list.join(" "), fmt(stroke));
        }
        for &q in &cp {
            let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="{}"/>"#, fmt(q.x), fmt(-q.y), fmt(dot));
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

/// Closed path data; arcs turn counterclockwise in the plane, which is the
/// clockwise sweep flag once y is mirrored.
fn svg_path(curve: &RoundedCurve, p: &impl Fn(Point) -> String) -> String {
    let mut d = String::new();
    for (i, arc) in curve.arcs.iter().enumerate() {
        let r = fmt(arc.radius);
        match curve.segments.get(i) {
            Some(&(a, b)) => {
                if i == 0 {
                    let _ = write!(d, "M {} ", p(a));
                }
                let _ = write!(d, "L {} A {r} {r} 0 {} 0 {} ", p(b), (arc.sweep > PI) as u8, p(arc.at(1.0)));
            }
            None => {
                let (from, mid) = (arc.at(0.0), arc.at(0.5));
                let _ = write!(d, "M {} A {r} {r} 0 1 0 {} A {r} {r} 0 1 0 {} ", p(from), p(mid), p(from));
            }
        }
    }
    d.push('Z');
    d
}

pub fn emit_svg(rec: &ResultRecord, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, render_svg(rec)).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

// ---------------------------------------------------------------------------
// verification

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub fencing_trials: usize,
    pub fencing_mismatches: usize,
    pub kcluster_trials: usize,
    pub kcluster_mismatches: usize,
    pub budget_exceeded: usize,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.fencing_mismatches == 0 && self.kcluster_mismatches == 0 && self.budget_exceeded == 0
    }
}

/// Largest instance handed to the dynamic program during verification.
pub const VERIFY_DP_MAX: usize = 6;

/// Random instances against brute force: the forced fencing pipeline for
/// `n ≤ n_max` and the k-cluster program (every k) for `n ≤ min(n_max, 6)`.
pub fn verify_oracle(n_max: usize, trials: usize, seed: u64, budget: usize) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = VerifyReport::default();
    let n_max = n_max.clamp(2, crate::oracle::FENCING_CAP);
    for t in 0..trials {
        let n = rng.gen_range(2..=n_max);
        let pts: Vec<Point> = (0..n).map(|_| Point::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0))).collect();
        let eta = [0.1, 1.0, 10.0][t % 3] * 10.0 / 4.0;
        let opts = FencingOptions { force_pipeline: true, union: UnionOptions { seed, ..UnionOptions::default() } };
        rep.fencing_trials += 1;
        match fencing_matches(&pts, eta, opts) {
            Ok(true) => {}
            Ok(false) => {
                rep.fencing_mismatches += 1;
                rep.failures.push(format!("fencing trial {t}: n={n} eta={eta}"));
            }
            Err(e) => {
                rep.fencing_mismatches += 1;
                rep.failures.push(format!("fencing trial {t}: {e}"));
            }
        }
        if n <= n_max.min(VERIFY_DP_MAX) {
            rep.kcluster_trials += 1;
            match run_dp_all(&pts, DpOptions { budget, ..DpOptions::default() }) {
                Ok(all) => {
                    let bad = all.iter().any(|r| {
                        brute_kcluster_opt(&pts, r.k).map_or(true, |(_, want)| !cost_eq(r.cost, want) || !cost_eq(r.perimeter_sum, want))
                    });
                    if bad {
                        rep.kcluster_mismatches += 1;
                        rep.failures.push(format!("kcluster trial {t}: n={n}"));
                    }
                }
                Err(DpError::BudgetExceeded(_)) => rep.budget_exceeded += 1,
                Err(e) => {
                    rep.kcluster_mismatches += 1;
                    rep.failures.push(format!("kcluster trial {t}: {e}"));
                }
            }
        }
    }
    rep
}

/// Pipeline cost equals brute force and the partitions agree after both are
/// normalised to the maximal optimal partition.
pub fn fencing_matches(pts: &[Point], eta: f64, opts: FencingOptions) -> Result<bool, String> {
    let inst = FencingInstance::new(pts.to_vec(), eta).map_err(|e| e.to_string())?;
    let got = solve_unit_disk_fencing(&inst, opts).map_err(|e| e.to_string())?;
    let (_, want) = brute_fencing_opt(&inst).map_err(|e| e.to_string())?;
    if !cost_eq(got.cost, want) {
        return Ok(false);
    }
    let maximal = maximal_optimal_partition(pts, eta).map_err(|e| e.to_string())?;
    Ok(got.partition(pts).same_sets(&maximal))
}

// ---------------------------------------------------------------------------

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn execute(cmd: Cmd) -> Result<String, CliError> {
    match cmd {
        Cmd::SolveFencing { input, eta, force_pipeline, common } => {
            let file = read_instance(&input)?;
            let eta = eta.or(file.eta).ok_or_else(|| CliError::Input("no η given (use --eta or an \"eta\" field)".into()))?;
            let opts = FencingOptions { force_pipeline, union: UnionOptions { seed: common.seed, ..UnionOptions::default() } };
            let pts = file.to_points();
            let rec = with_threads(common.threads, || solve_fencing_record(&pts, eta, opts))??;
            if let Some(path) = &common.svg {
                emit_svg(&rec, path)?;
            }
            Ok(rec.to_json())
        }
        Cmd::SolveKcluster { input, k, budget, common } => {
            let file = read_instance(&input)?;
            let k = k.or(file.k).ok_or_else(|| CliError::Input("no k given (use --k or a \"k\" field)".into()))?;
            let pts = file.to_points();
            let opts = DpOptions { budget, ..DpOptions::default() };
            let rec = with_threads(common.threads, || solve_kcluster_record(&pts, k, opts))??;
            if let Some(path) = &common.svg {
                emit_svg(&rec, path)?;
            }
            Ok(rec.to_json())
        }
        Cmd::Verify { oracle, n_max, trials, budget, common } => {
            if !oracle {
                return Err(CliError::Input("verify needs --oracle".into()));
            }
            let rep = with_threads(common.threads, || verify_oracle(n_max, trials, common.seed, budget))?;
            let json = serde_json::to_string_pretty(&rep).expect("report serialises");
            if rep.passed() {
                Ok(json)
            } else {
                println!("{json}");
                Err(CliError::Verify(format!(
                    "{} fencing and {} k-cluster mismatches, {} over budget",
                    rep.fencing_mismatches, rep.kcluster_mismatches, rep.budget_exceeded
                )))
            }
        }
    }
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.cmd) {
        Ok(out) => {
            println!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("fence: {e}");
            e.exit_code()
        }
    }
}
