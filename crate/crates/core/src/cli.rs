//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::{run_benchmark, Suite};
use crate::driver::{solve_traced, SolverConfig, TraceRecord};
use crate::gen::{generate, GenParams};
use crate::io::{self, CbfModel};
use crate::model::{kkt_error, ConeProblem, SolveStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_LIMIT: i32 = 3;
pub const EXIT_FAILURE: i32 = 4;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_IO: i32 = 66;

#[derive(Debug, Parser)]
#[command(name = "socp-sqp", version, about = "SQP cutting-plane solver for second-order cone programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve an instance (`.cbf` or native JSON).
    Solve {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        /// Primal-dual triple (JSON) to start from.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Try the second-order correction step when the fast step is rejected.
        #[arg(long)]
        enable_soc: bool,
        /// Write one JSON record per iteration to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the final triple (JSON) to this file.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Generate a random instance with a planted solution.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k0: usize,
        #[arg(long)]
        ki: usize,
        #[arg(long)]
        kb: usize,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the planted triple to a separate file.
        #[arg(long)]
        planted: Option<PathBuf>,
    },
    /// Run a benchmark suite on generated instances.
    Bench {
        #[arg(long, value_enum, default_value_t = SuiteArg::Cold)]
        suite: SuiteArg,
        /// Perturbation level (warm) or target KKT error (refine).
        #[arg(long, default_value_t = 1e-3)]
        level: f64,
        /// Comma-separated size classes `NxMxK` (K cones of each activity type).
        #[arg(long, default_value = "200x60x10,200x60x4,200x60x2")]
        sizes: String,
        #[arg(long, default_value_t = 30)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the KKT error of a triple.
    Check { file: PathBuf, triple: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Cold,
    Warm,
    Refine,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Io(PathBuf, std::io::Error),
    Data(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(..) => EXIT_IO,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Data(m) => write!(f, "{m}"),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

struct Loaded {
    problem: ConeProblem,
    cbf: Option<CbfModel>,
}

fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = read(path)?;
    let data = |e: &dyn std::fmt::Display| CliError::Data(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("cbf")) {
        let model = io::parse_cbf(&text).map_err(|e| data(&e))?;
        let problem = io::to_cone_problem(&model).map_err(|e| data(&e))?;
        Ok(Loaded { problem, cbf: Some(model) })
    } else {
        let inst = io::read_instance(&text).map_err(|e| data(&e))?;
        Ok(Loaded { problem: inst.problem, cbf: None })
    }
}

fn status_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Optimal => EXIT_OK,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        SolveStatus::IterationLimit => EXIT_LIMIT,
        SolveStatus::SubproblemFailure => EXIT_FAILURE,
    }
}

fn parse_sizes(spec: &str, seed: u64, density: f64) -> Result<Vec<GenParams>, CliError> {
    spec.split(',')
        .map(|s| {
            let parts: Vec<&str> = s.trim().split('x').collect();
            let nums: Result<Vec<usize>, _> = parts.iter().map(|p| p.parse::<usize>()).collect();
            match nums.as_deref() {
                Ok([n, m, k]) => Ok(GenParams { density, ..GenParams::uniform(*n, *m, *k, seed) }),
                _ => Err(CliError::Usage(format!("invalid size class `{s}` (expected NxMxK)"))),
            }
        })
        .collect()
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    let emit = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match command {
        Command::Solve { file, tol, max_iters, warm_start, enable_soc, trace, solution } => {
            let loaded = load(&file)?;
            let problem = &loaded.problem;
            let config = SolverConfig { tol, max_iters, enable_soc_step: enable_soc, ..SolverConfig::default() };
            config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let start = match &warm_start {
                Some(p) => Some(io::read_triple(&read(p)?, problem).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?),
                None => None,
            };
            let mut trace_out = match &trace {
                Some(p) => Some((p.clone(), BufWriter::new(fs::File::create(p).map_err(|e| CliError::Io(p.clone(), e))?))),
                None => None,
            };
            let mut trace_err = None;
            let mut sink = |r: &TraceRecord| {
                if let Some((p, w)) = trace_out.as_mut() {
                    let line = serde_json::to_string(r).expect("trace record serializes");
                    if let Err(e) = writeln!(w, "{line}") {
                        trace_err.get_or_insert(CliError::Io(p.clone(), e));
                    }
                }
            };
            let report = solve_traced(problem, start.as_ref(), &config, &mut sink)
                .map_err(|e| CliError::Data(e.to_string()))?;
            if let Some((p, mut w)) = trace_out {
                w.flush().map_err(|e| CliError::Io(p, e))?;
            }
            if let Some(e) = trace_err {
                return Err(e);
            }
            let objective = match &loaded.cbf {
                Some(m) => m.original_objective(&report.triple.x),
                None => problem.objective_value(&report.triple.x),
            };
            emit(out, format!("status            {}", report.status));
            emit(out, format!("objective         {objective:.12e}"));
            emit(out, format!("kkt_error         {:.3e}", report.kkt_error));
            emit(out, format!("iterations        {}", report.total_iters));
            emit(out, format!("fast_steps        {}", report.sqp_step_iters));
            emit(out, format!("newton_qps        {}", report.qp_newton_solves));
            emit(out, format!("master_qps        {}", report.qp_master_solves));
            emit(out, format!("correction_qps    {}", report.qp_soc_solves));
            emit(out, format!("final_rho         {:.6e}", report.final_rho));
            if let Some(p) = solution {
                write(&p, &io::write_triple(&report.triple))?;
            }
            Ok(status_code(report.status))
        }
        Command::Generate { n, m, k0, ki, kb, density, seed, out: path, planted } => {
            let params = GenParams { n, m, k0, ki, kb, density, seed };
            let inst = generate(&params).map_err(|e| CliError::Usage(e.to_string()))?;
            write(&path, &io::write_instance(&inst.problem, Some(&inst.planted)))?;
            if let Some(p) = planted {
                write(&p, &io::write_triple(&inst.planted))?;
            }
            emit(out, format!("wrote {} (n={n}, m={m}, cones={}, attempts={})", path.display(), inst.problem.num_cones(), inst.attempts));
            Ok(EXIT_OK)
        }
        Command::Bench { suite, level, sizes, repeats, seed, density, csv } => {
            let params = parse_sizes(&sizes, seed, density)?;
            for p in &params {
                p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            }
            let suite = match suite {
                SuiteArg::Cold => Suite::ColdStart,
                SuiteArg::Warm => Suite::WarmPerturb(level),
                SuiteArg::Refine => Suite::Refine(level),
            };
            let table = run_benchmark(suite, &params, repeats, &SolverConfig::default())
                .map_err(|e| CliError::Data(e.to_string()))?;
            let _ = write!(out, "{}", table.to_text());
            if let Some(p) = csv {
                write(&p, &table.to_csv())?;
            }
            Ok(EXIT_OK)
        }
        Command::Check { file, triple } => {
            let loaded = load(&file)?;
            let t = io::read_triple(&read(&triple)?, &loaded.problem)
                .map_err(|e| CliError::Data(format!("{}: {e}", triple.display())))?;
            let e = kkt_error(&loaded.problem, &t.x, &t.lambda, &t.bound_duals)
                .map_err(|e| CliError::Data(e.to_string()))?;
            emit(out, format!("kkt_error {e:.6e}"));
            Ok(EXIT_OK)
        }
    }
}

/// Runs the CLI on `args` (including the program name), writing normal
/// output to `out` and diagnostics to stderr. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
