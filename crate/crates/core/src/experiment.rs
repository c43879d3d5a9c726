//! Batch experiments described by a flat `key = value` file.
//!
//! ```text
//! # one data source
//! input = data/docs.mtx          # or: generator = generic | lowrank | hd | sparse
//! size = 400                     # or rows = .. and cols = ..
//! density = 0.001                # sparse generator only
//! ranks = 10, 15
//! algos = projbcd, manbcd, bcd   # or all (projbcd, manbcd, bcd, rgd)
//! inits = all                    # svd, fs, fsl, fsr
//! budget = 40                    # seconds per (algo, init)
//! seeds = 1, 2, 3                # or samples = 3 for seeds 1..=3
//! variants = none, both          # optional: none, extrapolation, rescaling, both
//! output = results/run           # writes run.csv and run.json
//! ```
//!
//! Optional solver keys: `max_iters`, `tol`, `tau`, `kw`, `kh`, `beta0`, `label`.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::baselines::{bcd, scaled_gd, SCALED_GD_ETA};
use crate::error::{Error, Result};
use crate::init::{initialize, InitKind};
use crate::io::read_matrix;
use crate::matrix::MatrixHandle;
use crate::metrics::{best_indices, q_star, r_star, r_star_from_curve, tsvd_error_curve, CompressionReport};
use crate::solver::{manbcd, projbcd, rgd_standard, IterationRecord, RunRecord, SolverConfig};
use crate::synthetic::{gen_sparse_uniform, gen_synthetic, SyntheticKind};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "HADFACT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algo {
    ProjBcd,
    ManBcd,
    Bcd,
    Rgd,
    ScaledGd,
}

impl Algo {
    /// The set run for `all`; scaled gradient descent has to be asked for by name.
    pub const DEFAULT: [Algo; 4] = [Algo::ProjBcd, Algo::ManBcd, Algo::Bcd, Algo::Rgd];

    pub fn name(&self) -> &'static str {
        match self {
            Algo::ProjBcd => "projbcd",
            Algo::ManBcd => "manbcd",
            Algo::Bcd => "bcd",
            Algo::Rgd => "rgd",
            Algo::ScaledGd => "scaledgd",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Algo>> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Self::DEFAULT.to_vec());
        }
        s.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.trim().parse()).collect()
    }

    /// Whether the solver needs `X` as a dense array.
    pub fn needs_dense(&self) -> bool {
        matches!(self, Algo::Bcd | Algo::Rgd | Algo::ScaledGd)
    }

    /// Starting configuration, before any user overrides.
    pub fn default_config(&self) -> SolverConfig {
        match self {
            Algo::Bcd => SolverConfig::bcd_default(),
            _ => SolverConfig::default(),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "projbcd" => Ok(Algo::ProjBcd),
            "manbcd" => Ok(Algo::ManBcd),
            "bcd" => Ok(Algo::Bcd),
            "rgd" | "standard" => Ok(Algo::Rgd),
            "scaledgd" => Ok(Algo::ScaledGd),
            other => Err(Error::InvalidArgument(format!(
                "unknown algorithm `{other}` (expected projbcd, manbcd, bcd, rgd, scaledgd or all)"
            ))),
        }
    }
}

/// Runs one solver from one set of initial factors.
pub fn run_algo(x: &MatrixHandle, algo: Algo, r: usize, init: &crate::HadamardFactors, cfg: &SolverConfig) -> Result<RunRecord> {
    match algo {
        Algo::ProjBcd => projbcd(x, r, init, cfg),
        Algo::ManBcd => manbcd(x, r, init, cfg),
        Algo::Bcd => bcd(x, r, init, cfg),
        Algo::Rgd => rgd_standard(x, r, init, cfg),
        Algo::ScaledGd => scaled_gd(x, r, init, cfg, SCALED_GD_ETA, true),
    }
}

/// Extrapolation and rescaling switches for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Plain,
    Extrapolation,
    Rescaling,
    Both,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Plain, Variant::Extrapolation, Variant::Rescaling, Variant::Both];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Plain => "none",
            Variant::Extrapolation => "extrapolation",
            Variant::Rescaling => "rescaling",
            Variant::Both => "both",
        }
    }

    pub fn apply(&self, cfg: &mut SolverConfig) {
        cfg.use_extrapolation = matches!(self, Variant::Extrapolation | Variant::Both);
        cfg.use_rescaling = matches!(self, Variant::Rescaling | Variant::Both);
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Variant::Plain),
            "extrapolation" => Ok(Variant::Extrapolation),
            "rescaling" => Ok(Variant::Rescaling),
            "both" => Ok(Variant::Both),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synthetic { kind: SyntheticKind, rows: usize, cols: usize },
    Sparse { rows: usize, cols: usize, density: f64 },
}

impl DataSource {
    pub fn label(&self) -> String {
        match self {
            DataSource::File(p) => p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            DataSource::Synthetic { kind, rows, cols } => format!("{kind}-{rows}x{cols}"),
            DataSource::Sparse { rows, cols, density } => format!("sparse-{rows}x{cols}-{density}"),
        }
    }

    /// Generates or reads the data; the seed only matters for generated data.
    pub fn load(&self, seed: u64, rank: usize) -> Result<MatrixHandle> {
        match self {
            DataSource::File(p) => read_matrix(p),
            DataSource::Synthetic { kind, rows, cols } => {
                Ok(MatrixHandle::Dense(gen_synthetic(*kind, *rows, *cols, rank, seed)))
            }
            DataSource::Sparse { rows, cols, density } => {
                Ok(MatrixHandle::Sparse(gen_sparse_uniform(*rows, *cols, *density, seed)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub label: Option<String>,
    pub source: DataSource,
    pub ranks: Vec<usize>,
    pub algos: Vec<Algo>,
    pub inits: Vec<InitKind>,
    pub variants: Vec<Variant>,
    pub budget: f64,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub tau: Option<f64>,
    pub k_w: Option<usize>,
    pub k_h: Option<usize>,
    pub beta0: Option<f64>,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(source: DataSource, ranks: Vec<usize>, algos: Vec<Algo>, budget: f64) -> Self {
        ExperimentSpec {
            label: None,
            source,
            ranks,
            algos,
            inits: InitKind::ALL.to_vec(),
            variants: Vec::new(),
            budget,
            max_iters: None,
            tol: None,
            tau: None,
            k_w: None,
            k_h: None,
            beta0: None,
            seeds: vec![1],
            output: None,
        }
    }

    pub fn dataset_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.source.label())
    }

    /// Solver configuration for one algorithm and ablation variant.
    pub fn config(&self, algo: Algo, variant: Option<Variant>) -> SolverConfig {
        let mut cfg = algo.default_config();
        cfg.time_limit = self.budget;
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.k_w {
            cfg.k_w = v;
        }
        if let Some(v) = self.k_h {
            cfg.k_h = v;
        }
        if let Some(v) = self.beta0 {
            cfg.extrapolation[0] = v;
        }
        if let Some(v) = variant {
            v.apply(&mut cfg);
        }
        cfg
    }

    /// Parses the `key = value` format; errors carry the offending line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: HashMap<String, (usize, String)> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: no, msg: format!("expected `key = value`, found `{line}`") })?;
            let key = key.trim().to_ascii_lowercase();
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Parse { line: no, msg: format!("unknown key `{key}`") });
            }
            if let Some((first, _)) = entries.get(&key) {
                return Err(Error::Parse { line: no, msg: format!("`{key}` already set on line {first}") });
            }
            entries.insert(key, (no, value.trim().to_string()));
        }
        if entries.is_empty() {
            return Err(Error::Parse { line: 0, msg: "empty experiment spec".into() });
        }
        let last_line = text.lines().count().max(1);
        let field = |k: &str| entries.get(k).map(|(no, v)| (*no, v.as_str()));
        let need = |k: &str| field(k).ok_or_else(|| Error::Parse { line: last_line, msg: format!("missing required key `{k}`") });

        let source = match (field("input"), field("generator")) {
            (Some(_), Some((no, _))) => {
                return Err(Error::Parse { line: no, msg: "give either `input` or `generator`, not both".into() })
            }
            (None, None) => {
                return Err(Error::Parse { line: last_line, msg: "missing data source (`input` or `generator`)".into() })
            }
            (Some((_, path)), None) => DataSource::File(PathBuf::from(path)),
            (None, Some((no, g))) => {
                let (rows, cols) = match (field("size"), field("rows"), field("cols")) {
                    (Some(s), None, None) => {
                        let v = parse_value::<usize>(s)?;
                        (v, v)
                    }
                    (None, Some(r), Some(c)) => (parse_value::<usize>(r)?, parse_value::<usize>(c)?),
                    _ => {
                        return Err(Error::Parse { line: no, msg: "generated data needs `size` or both `rows` and `cols`".into() })
                    }
                };
                if rows == 0 || cols == 0 {
                    return Err(Error::Parse { line: no, msg: "matrix dimensions must be positive".into() });
                }
                if g.eq_ignore_ascii_case("sparse") {
                    let density = parse_value::<f64>(need("density")?)?;
                    DataSource::Sparse { rows, cols, density }
                } else {
                    let kind = g.parse::<SyntheticKind>().map_err(|e| Error::Parse { line: no, msg: e.to_string() })?;
                    DataSource::Synthetic { kind, rows, cols }
                }
            }
        };

        let ranks = parse_list::<usize>(need("ranks").or_else(|_| need("rank"))?)?;
        if let Some(&bad) = ranks.iter().find(|&&r| r == 0) {
            let (no, _) = field("ranks").or(field("rank")).expect("present");
            return Err(Error::Parse { line: no, msg: format!("rank {bad} must be positive") });
        }
        let algos = {
            let (no, v) = need("algos")?;
            Algo::parse_list(v).map_err(|e| Error::Parse { line: no, msg: e.to_string() })?
        };
        let inits = match field("inits") {
            Some((no, v)) => InitKind::parse_list(v).map_err(|e| Error::Parse { line: no, msg: e.to_string() })?,
            None => InitKind::ALL.to_vec(),
        };
        let variants = match field("variants") {
            Some((no, v)) => v
                .split(',')
                .map(|p| p.parse::<Variant>())
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Parse { line: no, msg: e.to_string() })?,
            None => Vec::new(),
        };
        let budget = parse_value::<f64>(need("budget")?)?;
        if !(budget > 0.0) {
            return Err(Error::Parse { line: field("budget").expect("present").0, msg: "budget must be positive".into() });
        }
        let seeds = match (field("seeds"), field("samples")) {
            (Some(_), Some((no, _))) => {
                return Err(Error::Parse { line: no, msg: "give either `seeds` or `samples`, not both".into() })
            }
            (Some(s), None) => parse_list::<u64>(s)?,
            (None, Some(s)) => (1..=parse_value::<u64>(s)?).collect(),
            (None, None) => vec![1],
        };
        Ok(ExperimentSpec {
            label: field("label").map(|(_, v)| v.to_string()),
            source,
            ranks,
            algos,
            inits,
            variants,
            budget,
            max_iters: field("max_iters").map(parse_value).transpose()?,
            tol: field("tol").map(parse_value).transpose()?,
            tau: field("tau").map(parse_value).transpose()?,
            k_w: field("kw").map(parse_value).transpose()?,
            k_h: field("kh").map(parse_value).transpose()?,
            beta0: field("beta0").map(parse_value).transpose()?,
            seeds,
            output: field("output").map(|(_, v)| PathBuf::from(v)),
        })
    }
}

const KEYS: [&str; 22] = [
    "label", "input", "generator", "size", "rows", "cols", "density", "rank", "ranks", "algos", "inits", "variants", "budget",
    "max_iters", "tol", "tau", "kw", "kh", "beta0", "seeds", "samples", "output",
];

fn parse_value<T: FromStr>((no, v): (usize, &str)) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse { line: no, msg: format!("cannot parse `{}`", v.trim()) })
}

fn parse_list<T: FromStr>((no, v): (usize, &str)) -> Result<Vec<T>> {
    let out = v
        .split(',')
        .map(|p| parse_value((no, p)))
        .collect::<Result<Vec<T>>>()?;
    if out.is_empty() {
        return Err(Error::Parse { line: no, msg: "empty list".into() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub dataset: String,
    pub seed: u64,
    pub rank: usize,
    pub algo: String,
    pub init: String,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExperimentOutcome {
    pub reports: Vec<CompressionReport>,
    pub traces: Vec<TraceRecord>,
}

impl ExperimentOutcome {
    pub fn extend(&mut self, other: ExperimentOutcome) {
        self.reports.extend(other.reports);
        self.traces.extend(other.traces);
    }

    /// Writes `<prefix>.csv` (one row per report) and `<prefix>.json` (reports and traces).
    pub fn write(&self, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
        if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let csv_path = prefix.with_extension("csv");
        let json_path = prefix.with_extension("json");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        for r in &self.reports {
            w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        let file = std::io::BufWriter::new(std::fs::File::create(&json_path)?);
        serde_json::to_writer_pretty(file, self).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok((csv_path, json_path))
    }
}

/// Worker count: `HADFACT_THREADS` if set, otherwise the available parallelism.
pub fn worker_threads() -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(avail)
}

struct Cell {
    rank: usize,
    algo: Algo,
    variant: Option<Variant>,
    init: InitKind,
}

impl Cell {
    fn label(&self) -> String {
        match self.variant {
            Some(v) => format!("{}[{}]", self.algo, v.name()),
            None => self.algo.to_string(),
        }
    }
}

fn empty_report(dataset: &str, seed: u64, algo: String, init: &str, rank: usize) -> CompressionReport {
    CompressionReport {
        dataset: dataset.to_string(),
        seed,
        algo,
        init: init.to_string(),
        rank,
        rel_error: f64::NAN,
        elapsed: 0.0,
        iterations: 0,
        stop: String::new(),
        r_star: None,
        r_star_capped: false,
        q_star: None,
        best_init: false,
        error: None,
    }
}

/// Runs every `(seed, rank, algo, variant, init)` cell of the spec.
///
/// Failures of single cells (unreadable data, unavailable initializations,
/// solver errors) are recorded in the report instead of aborting the batch.
pub fn run_experiment(spec: &ExperimentSpec) -> ExperimentOutcome {
    let dataset = spec.dataset_label();
    let mut outcome = ExperimentOutcome::default();
    if spec.algos.is_empty() {
        return outcome;
    }
    let variants: Vec<Option<Variant>> =
        if spec.variants.is_empty() { vec![None] } else { spec.variants.iter().copied().map(Some).collect() };

    for &seed in &spec.seeds {
        for &rank in &spec.ranks {
            let x = match spec.source.load(seed, rank) {
                Ok(x) => x,
                Err(e) => {
                    let mut rep = empty_report(&dataset, seed, "-".into(), "-", rank);
                    rep.error = Some(format!("data: {e}"));
                    outcome.reports.push(rep);
                    continue;
                }
            };
            let curve = (2 * rank <= x.rows().min(x.cols()))
                .then(|| tsvd_error_curve(&x, x.rows().min(x.cols())).ok())
                .flatten();

            let mut cells = Vec::new();
            for &algo in &spec.algos {
                for &variant in &variants {
                    for &init in &spec.inits {
                        cells.push(Cell { rank, algo, variant, init });
                    }
                }
            }
            let results = run_cells(&x, spec, &cells);

            let mut group_start = outcome.reports.len();
            for (k, (cell, res)) in cells.iter().zip(results).enumerate() {
                let mut rep = empty_report(&dataset, seed, cell.label(), cell.init.name(), rank);
                match res {
                    Ok(rec) => {
                        rep.rel_error = rec.best_error;
                        rep.elapsed = rec.elapsed;
                        rep.iterations = rec.iterations;
                        rep.stop = rec.stop.as_str().to_string();
                        match &curve {
                            Some(c) => {
                                if let Some(rs) = r_star_from_curve(c, rank, rec.best_error, c.len() - 1) {
                                    rep.r_star = Some(rs.value);
                                    rep.r_star_capped = rs.capped;
                                    rep.q_star = Some(q_star(rs.value, rank));
                                }
                            }
                            None => {
                                if let Ok(rs) = r_star(&x, rank, rec.best_error) {
                                    rep.r_star = Some(rs.value);
                                    rep.r_star_capped = rs.capped;
                                    rep.q_star = Some(q_star(rs.value, rank));
                                }
                            }
                        }
                        outcome.traces.push(TraceRecord {
                            dataset: dataset.clone(),
                            seed,
                            rank,
                            algo: cell.label(),
                            init: cell.init.name().to_string(),
                            trace: rec.trace,
                        });
                    }
                    Err(e) => rep.error = Some(e.to_string()),
                }
                outcome.reports.push(rep);
                let last_of_group = k + 1 == cells.len() || cells[k + 1].label() != cell.label();
                if last_of_group {
                    mark_best(&mut outcome.reports[group_start..]);
                    group_start = outcome.reports.len();
                }
            }
            if let Some(c) = &curve {
                let mut rep = empty_report(&dataset, seed, "tsvd".into(), "-", rank);
                rep.rel_error = c[2 * rank];
                rep.r_star = Some(2 * rank);
                rep.q_star = Some(0.0);
                outcome.reports.push(rep);
            }
        }
    }
    outcome
}

fn mark_best(group: &mut [CompressionReport]) {
    let errors: Vec<f64> = group.iter().map(|r| r.rel_error).collect();
    for i in best_indices(&errors) {
        group[i].best_init = true;
    }
}

fn run_cells(x: &MatrixHandle, spec: &ExperimentSpec, cells: &[Cell]) -> Vec<Result<RunRecord>> {
    let run = |cell: &Cell| -> Result<RunRecord> {
        let init = initialize(x, cell.rank, cell.init)?;
        run_algo(x, cell.algo, cell.rank, &init, &spec.config(cell.algo, cell.variant))
    };
    let threads = worker_threads().min(cells.len()).max(1);
    if threads == 1 {
        return cells.iter().map(run).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunRecord>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= cells.len() {
                    break;
                }
                let res = run(&cells[k]);
                slots.lock().expect("result slots")[k] = Some(res);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

/// Ablation over extrapolation and rescaling for the two face-split solvers on uniform data.
pub fn table1_spec(size: usize, samples: u64, budget: f64) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(
        DataSource::Synthetic { kind: SyntheticKind::Generic, rows: size, cols: size },
        vec![10.min(size / 2).max(1)],
        vec![Algo::ManBcd, Algo::ProjBcd],
        budget,
    );
    spec.variants = Variant::ALL.to_vec();
    spec.seeds = (1..=samples).collect();
    spec
}

/// Uniform, low-rank and planted data at ranks 10, 15, 20 (those with `2r <= size`).
///
/// Without an explicit budget, uniform data gets 40 s and the others 100 s per run.
pub fn table2_specs(size: usize, samples: u64, budget: Option<f64>, ranks: Option<Vec<usize>>) -> Vec<ExperimentSpec> {
    let ranks: Vec<usize> = ranks
        .unwrap_or_else(|| vec![10, 15, 20])
        .into_iter()
        .filter(|&r| r >= 1 && 2 * r <= size)
        .collect();
    SyntheticKind::ALL
        .iter()
        .map(|&kind| {
            let default_budget = if kind == SyntheticKind::Generic { 40.0 } else { 100.0 };
            let mut spec = ExperimentSpec::new(
                DataSource::Synthetic { kind, rows: size, cols: size },
                ranks.clone(),
                Algo::DEFAULT.to_vec(),
                budget.unwrap_or(default_budget),
            );
            spec.seeds = (1..=samples).collect();
            spec.label = Some(kind.name().to_string());
            spec
        })
        .collect()
}
