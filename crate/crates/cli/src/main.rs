use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use hadfact::experiment::{run_experiment, table1_spec, table2_specs, Algo, ExperimentOutcome, ExperimentSpec};
use hadfact::init::{initialize, InitKind};
use hadfact::io::{read_matrix, write_hdmat, write_pgm, FileFormat};
use hadfact::metrics::{best_indices, q_star, r_star, tsvd_error_curve};
use hadfact::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INIT_UNAVAILABLE: u8 = 3;

#[derive(Parser)]
#[command(name = "hadfact", version, about = "Rank-r Hadamard decompositions X ≈ (W1 H1ᵀ) ∘ (W2 H2ᵀ)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose one matrix (.mtx, .csv, .hdmat or .pgm).
    Decompose(DecomposeArgs),
    /// Run an experiment spec or one of the synthetic presets.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// Wall-clock budget per (algorithm, initialization) run, in seconds.
    #[arg(long, default_value_t = 60.0)]
    time_limit: f64,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stop once the relative error is at most this value.
    #[arg(long)]
    tol: Option<f64>,
    /// Step size as a fraction of 1/L.
    #[arg(long)]
    tau: Option<f64>,
    /// Inner steps on the W block.
    #[arg(long)]
    kw: Option<usize>,
    /// Inner steps on the H block.
    #[arg(long)]
    kh: Option<usize>,
    /// Initial extrapolation parameter.
    #[arg(long)]
    beta0: Option<f64>,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    rank: usize,
    /// projbcd, manbcd, bcd, rgd, scaledgd, or all.
    #[arg(long, default_value = "projbcd")]
    algo: String,
    /// svd, fs, fsl, fsr, or all.
    #[arg(long, default_value = "all")]
    init: String,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "hadfact-out")]
    output_dir: PathBuf,
    /// Also write the approximation (PGM for image input, HDMAT otherwise).
    #[arg(long)]
    emit_reconstruction: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment spec file.
    #[arg(long, conflicts_with_all = ["table1", "table2"])]
    spec: Option<PathBuf>,
    /// Extrapolation/rescaling ablation on uniform data.
    #[arg(long, conflicts_with = "table2")]
    table1: bool,
    /// Uniform, low-rank and planted synthetic data.
    #[arg(long)]
    table2: bool,
    #[arg(long, default_value_t = 400)]
    size: usize,
    #[arg(long, default_value_t = 10)]
    samples: u64,
    /// First seed for the presets; runs use seeds `seed..seed + samples`.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seconds per run (presets default to 40 s for uniform data and 100 s otherwise).
    #[arg(long)]
    budget: Option<f64>,
    /// Comma-separated ranks for the presets.
    #[arg(long)]
    ranks: Option<String>,
    /// Output prefix; `.csv` and `.json` are appended.
    #[arg(long)]
    output: Option<PathBuf>,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Failure { code, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse { .. } | Error::Io(_) => EXIT_INPUT,
            Error::InitUnavailable { .. } => EXIT_INIT_UNAVAILABLE,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Decompose(args) => decompose(&args),
        Command::Bench(args) => bench(&args),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn decompose(args: &DecomposeArgs) -> Result<(), Failure> {
    let format = FileFormat::from_path(&args.input).map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?;
    if !args.input.is_file() {
        return Err(Failure::new(EXIT_INPUT, format!("input file {} does not exist", args.input.display())));
    }
    let algos = Algo::parse_list(&args.algo).map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?;
    let explicit_all = args.init.trim().eq_ignore_ascii_case("all");
    let inits = InitKind::parse_list(&args.init).map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?;
    let x = read_matrix(&args.input)?;
    let (m, n) = x.shape();
    let r = args.rank;
    if r == 0 || r > m.min(n) {
        return Err(Failure::new(EXIT_INPUT, format!("rank {r} outside 1..={}", m.min(n))));
    }

    let available: Vec<InitKind> = InitKind::ALL
        .iter()
        .copied()
        .filter(|k| !k.needs_square_rank() || r * r <= m.min(n))
        .collect();
    if !explicit_all {
        if let Some(k) = inits.iter().find(|k| !available.contains(k)) {
            let names: Vec<&str> = available.iter().map(|k| k.name()).collect();
            return Err(Failure::new(
                EXIT_INIT_UNAVAILABLE,
                format!(
                    "initialization `{k}` needs r^2 = {} <= min(m, n) = {}; available: {}",
                    r * r,
                    m.min(n),
                    names.join(", ")
                ),
            ));
        }
    }
    let inits: Vec<InitKind> = inits.into_iter().filter(|k| available.contains(k)).collect();

    std::fs::create_dir_all(&args.output_dir).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let mut runs = Vec::new();
    for &algo in &algos {
        let mut cfg = algo.default_config();
        cfg.time_limit = args.solver.time_limit;
        if let Some(v) = args.solver.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = args.solver.tol {
            cfg.tol = v;
        }
        if let Some(v) = args.solver.tau {
            cfg.tau = v;
        }
        if let Some(v) = args.solver.kw {
            cfg.k_w = v;
        }
        if let Some(v) = args.solver.kh {
            cfg.k_h = v;
        }
        if let Some(v) = args.solver.beta0 {
            cfg.extrapolation[0] = v;
        }
        let mut records = Vec::new();
        for &init in &inits {
            let start = initialize(&x, r, init)?;
            let rec = hadfact::experiment::run_algo(&x, algo, r, &start, &cfg)?;
            eprintln!(
                "{algo:>8} {init:<4} error {:.6e} after {} iterations in {:.2} s ({})",
                rec.best_error,
                rec.iterations,
                rec.elapsed,
                rec.stop.as_str()
            );
            records.push((init, rec));
        }
        let errors: Vec<f64> = records.iter().map(|(_, rec)| rec.best_error).collect();
        let best = best_indices(&errors);
        let Some(&first) = best.first() else { continue };
        let (best_init, best_rec) = &records[first];
        let dir = args.output_dir.join(algo.name());
        save_factors(&dir, best_rec)?;
        if args.emit_reconstruction {
            save_reconstruction(&dir, format, best_rec)?;
        }
        let rs = r_star(&x, r, best_rec.best_error).ok();
        let entries: Vec<Value> = records
            .iter()
            .enumerate()
            .map(|(k, (init, rec))| {
                json!({
                    "init": init.name(),
                    "rel_error": rec.best_error,
                    "initial_error": rec.initial_error,
                    "elapsed": rec.elapsed,
                    "iterations": rec.iterations,
                    "accepted_iterations": rec.accepted_iterations,
                    "stop": rec.stop.as_str(),
                    "best": best.contains(&k),
                    "no_accepted_iteration": rec.accepted_iterations == 0,
                })
            })
            .collect();
        runs.push(json!({
            "algo": algo.name(),
            "best_init": best_init.name(),
            "rel_error": best_rec.best_error,
            "r_star": rs.map(|v| v.value),
            "r_star_capped": rs.map(|v| v.capped),
            "q_star": rs.map(|v| q_star(v.value, r)),
            "factors_dir": dir,
            "warning": best_rec.accepted_iterations == 0,
            "runs": entries,
        }));
    }

    let tsvd_2r = (2 * r <= m.min(n))
        .then(|| tsvd_error_curve(&x, 2 * r).ok().map(|c| c[2 * r]))
        .flatten();
    let unavailable: Vec<&str> = InitKind::ALL
        .iter()
        .filter(|k| !available.contains(k))
        .map(|k| k.name())
        .collect();
    let summary = json!({
        "input": args.input,
        "rows": m,
        "cols": n,
        "nnz": x.nnz(),
        "rank": r,
        "time_limit": args.solver.time_limit,
        "tsvd_2r_error": tsvd_2r,
        "unavailable_inits": unavailable,
        "algorithms": runs,
    });
    let path = args.output_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    println!("{}", path.display());
    Ok(())
}

fn save_factors(dir: &Path, rec: &hadfact::RunRecord) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let f = &rec.factors;
    for (name, mat) in [("W1", &f.w1), ("H1", &f.h1), ("W2", &f.w2), ("H2", &f.h2)] {
        let file = std::fs::File::create(dir.join(format!("{name}.hdmat")))
            .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
        write_hdmat(std::io::BufWriter::new(file), mat)?;
    }
    Ok(())
}

fn save_reconstruction(dir: &Path, format: FileFormat, rec: &hadfact::RunRecord) -> Result<(), Failure> {
    let y = rec.factors.assemble();
    if format == FileFormat::Pgm {
        write_pgm(&dir.join("reconstruction.pgm"), &y)?;
    } else {
        let file = std::fs::File::create(dir.join("reconstruction.hdmat"))
            .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
        write_hdmat(std::io::BufWriter::new(file), &y)?;
    }
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<(), Failure> {
    let ranks = match &args.ranks {
        Some(s) => Some(
            s.split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Failure::new(EXIT_INPUT, format!("bad rank list `{s}`")))?,
        ),
        None => None,
    };
    let (mut specs, default_prefix): (Vec<ExperimentSpec>, &str) = if let Some(path) = &args.spec {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(EXIT_INPUT, format!("cannot read {}: {e}", path.display())))?;
        let spec = ExperimentSpec::parse(&text).map_err(|e| Failure::new(EXIT_INPUT, format!("{}: {e}", path.display())))?;
        (vec![spec], "bench")
    } else if args.table1 {
        let mut spec = table1_spec(args.size, args.samples, args.budget.unwrap_or(40.0));
        if let Some(r) = ranks {
            spec.ranks = r;
        }
        (vec![spec], "table1")
    } else if args.table2 {
        (table2_specs(args.size, args.samples, args.budget, ranks), "table2")
    } else {
        return Err(Failure::new(EXIT_INPUT, "give --spec <file>, --table1 or --table2"));
    };

    if args.spec.is_none() {
        for spec in &mut specs {
            spec.seeds = (args.seed..args.seed + args.samples).collect();
        }
    }
    let mut outcome = ExperimentOutcome::default();
    for spec in &specs {
        outcome.extend(run_experiment(spec));
    }
    let prefix = args
        .output
        .clone()
        .or_else(|| specs.first().and_then(|s| s.output.clone()))
        .unwrap_or_else(|| PathBuf::from(default_prefix));
    let (csv_path, json_path) = outcome.write(&prefix)?;
    for rep in outcome.reports.iter().filter(|r| r.best_init || r.algo == "tsvd") {
        println!(
            "{:<20} seed {:<3} r {:<3} {:<22} {:<4} {:>9.4}%  r* {}",
            rep.dataset,
            rep.seed,
            rep.rank,
            rep.algo,
            rep.init,
            100.0 * rep.rel_error,
            rep.r_star.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
        );
    }
    for rep in outcome.reports.iter().filter(|r| r.error.is_some()) {
        eprintln!("{} {} {}: {}", rep.dataset, rep.algo, rep.init, rep.error.as_deref().unwrap_or(""));
    }
    println!("{}\n{}", csv_path.display(), json_path.display());
    Ok(())
}
