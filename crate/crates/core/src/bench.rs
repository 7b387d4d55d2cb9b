//! Benchmark harness: cold starts, warm starts after objective perturbation,
//! and refinement of polluted optimal triples.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{solve, warm_start_from, SolverConfig};
use crate::error::{GenError, SolveError};
use crate::gen::{generate, GenParams, GeneratedInstance};
use crate::model::{classify_cones, kkt_error, PrimalDualTriple, SolveReport, SolveStatus, DIFFERENTIABLE_TOL, EXTREMAL_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    ColdStart,
    /// Perturb 10% of the objective by uniform noise of this magnitude and
    /// warm start from the unperturbed solution.
    WarmPerturb(f64),
    /// Pollute the planted triple to a KKT error near this target and solve
    /// to `REFINE_TOL`.
    Refine(f64),
}

pub const REFINE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Outcome of a single benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub params: GenParams,
    pub status: SolveStatus,
    pub total_iters: usize,
    pub fast_iters: usize,
    pub newton_solves: usize,
    pub master_solves: usize,
    pub initial_kkt: f64,
    pub final_kkt: f64,
    /// Last three values of the KKT history (fewer when the run was short).
    pub tail: Vec<f64>,
    /// Final extremal set equals the planted one.
    pub identified: bool,
    pub model_decrease_violations: usize,
}

impl RunRecord {
    fn from_report(inst: &GeneratedInstance, report: &SolveReport) -> Self {
        let cl = classify_cones(&inst.problem, &report.triple.x, EXTREMAL_TOL, DIFFERENTIABLE_TOL);
        let planted: Vec<usize> = inst
            .activity
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == crate::gen::Activity::Extremal)
            .map(|(j, _)| j)
            .collect();
        let h = &report.kkt_history;
        Self {
            params: inst.params,
            status: report.status,
            total_iters: report.total_iters,
            fast_iters: report.sqp_step_iters,
            newton_solves: report.qp_newton_solves,
            master_solves: report.qp_master_solves,
            initial_kkt: h.first().copied().unwrap_or(report.kkt_error),
            final_kkt: report.kkt_error,
            tail: h[h.len().saturating_sub(3)..].to_vec(),
            identified: cl.extremal() == planted,
            model_decrease_violations: report.model_decrease_violations,
        }
    }

    /// Fraction of iterations that accepted the fast step.
    pub fn fast_ratio(&self) -> f64 {
        if self.total_iters == 0 {
            1.0
        } else {
            self.fast_iters as f64 / self.total_iters as f64
        }
    }
}

/// Aggregate over the runs of one size class, the columns of the cold-start
/// table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    pub k0: usize,
    pub ki: usize,
    pub kb: usize,
    pub runs: usize,
    pub solved: usize,
    pub mean_iters: f64,
    pub mean_fast_iters: f64,
    pub mean_newton: f64,
    pub mean_master: f64,
    pub mean_final_kkt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub suite: Suite,
    pub rows: Vec<BenchRow>,
    pub runs: Vec<RunRecord>,
}

const HEADERS: [&str; 12] =
    ["n", "m", "K0", "KI", "KB", "runs", "solved", "iters", "fast", "newton", "master", "final_kkt"];

impl BenchRow {
    fn cells(&self) -> [String; 12] {
        [
            self.n.to_string(),
            self.m.to_string(),
            self.k0.to_string(),
            self.ki.to_string(),
            self.kb.to_string(),
            self.runs.to_string(),
            self.solved.to_string(),
            format!("{:.2}", self.mean_iters),
            format!("{:.2}", self.mean_fast_iters),
            format!("{:.2}", self.mean_newton),
            format!("{:.2}", self.mean_master),
            format!("{:.2e}", self.mean_final_kkt),
        ]
    }
}

impl BenchTable {
    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 12]> = self.rows.iter().map(BenchRow::cells).collect();
        let widths: Vec<usize> = (0..HEADERS.len())
            .map(|c| cells.iter().map(|r| r[c].len()).chain([HEADERS[c].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, items: &[&str]| {
            let parts: Vec<String> = items.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  "));
        };
        line(&mut out, &HEADERS);
        for r in &cells {
            let refs: Vec<&str> = r.iter().map(String::as_str).collect();
            line(&mut out, &refs);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = HEADERS.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.cells().join(","));
            out.push('\n');
        }
        out
    }
}

/// Perturbs `ceil(n/10)` randomly chosen objective entries by uniform noise
/// in `(−level, level)`.
pub fn perturb_objective(objective: &[f64], level: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = objective.len();
    let mut c = objective.to_vec();
    let count = n.div_ceil(10).min(n);
    for k in sample(rng, n, count) {
        c[k] += rng.gen_range(-level..level);
    }
    c
}

/// Adds noise of magnitude `scale` to the planted cone variables and
/// multipliers.
fn pollute_with(inst: &GeneratedInstance, scale: f64, seed: u64) -> PrimalDualTriple {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = inst.planted.clone();
    for (k, x) in t.x.iter_mut().enumerate() {
        let noise = rng.gen_range(-1.0..1.0) * scale;
        if inst.problem.cone_of(k).is_some() {
            *x += noise;
        }
    }
    for l in t.lambda.iter_mut() {
        *l += rng.gen_range(-1.0..1.0) * scale;
    }
    PrimalDualTriple::from_multipliers(&inst.problem, t.x, t.lambda, t.bound_duals)
}

/// Polluted planted triple whose KKT error lies in `[target, 10·target]`,
/// found by bisection on the noise scale in log space.
pub fn pollute(inst: &GeneratedInstance, target: f64, seed: u64) -> PrimalDualTriple {
    let err = |t: &PrimalDualTriple| {
        kkt_error(&inst.problem, &t.x, &t.lambda, &t.bound_duals).unwrap_or(f64::INFINITY)
    };
    let goal = target * 10f64.sqrt();
    let (mut lo, mut hi) = (-16.0f64, 2.0f64);
    let mut best = pollute_with(inst, 10f64.powf(0.5 * (lo + hi)), seed);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        best = pollute_with(inst, 10f64.powf(mid), seed);
        let e = err(&best);
        if (target..=10.0 * target).contains(&e) {
            break;
        }
        if e < goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best
}

fn run_one(params: &GenParams, suite: Suite, config: &SolverConfig) -> Result<RunRecord, BenchError> {
    let inst = generate(params)?;
    match suite {
        Suite::ColdStart => {
            let r = solve(&inst.problem, None, config)?;
            Ok(RunRecord::from_report(&inst, &r))
        }
        Suite::WarmPerturb(level) => {
            let base = solve(&inst.problem, None, config)?;
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_0bad_cafe);
            let c = perturb_objective(inst.problem.objective(), level, &mut rng);
            let perturbed = inst.problem.with_objective(c).map_err(SolveError::from)?;
            let start = warm_start_from(&base, &perturbed)?;
            let r = solve(&perturbed, Some(&start), config)?;
            let inst = GeneratedInstance { problem: perturbed, ..inst };
            Ok(RunRecord::from_report(&inst, &r))
        }
        Suite::Refine(target) => {
            let start = pollute(&inst, target, params.seed ^ 0xfeed);
            let cfg = SolverConfig { tol: REFINE_TOL, ..config.clone() };
            let r = solve(&inst.problem, Some(&start), &cfg)?;
            Ok(RunRecord::from_report(&inst, &r))
        }
    }
}

fn aggregate(params: &GenParams, runs: &[RunRecord]) -> BenchRow {
    let k = runs.len().max(1) as f64;
    let mean = |f: &dyn Fn(&RunRecord) -> f64| runs.iter().map(f).sum::<f64>() / k;
    BenchRow {
        n: params.n,
        m: params.m,
        k0: params.k0,
        ki: params.ki,
        kb: params.kb,
        runs: runs.len(),
        solved: runs.iter().filter(|r| r.status == SolveStatus::Optimal).count(),
        mean_iters: mean(&|r| r.total_iters as f64),
        mean_fast_iters: mean(&|r| r.fast_iters as f64),
        mean_newton: mean(&|r| r.newton_solves as f64),
        mean_master: mean(&|r| r.master_solves as f64),
        mean_final_kkt: mean(&|r| r.final_kkt),
    }
}

/// Runs `repeats` instances per size class. Instance `i` of a class uses
/// seed `params.seed + i`. Runs execute in parallel; the output order only
/// depends on the inputs.
pub fn run_benchmark(
    suite: Suite,
    params: &[GenParams],
    repeats: usize,
    config: &SolverConfig,
) -> Result<BenchTable, BenchError> {
    let jobs: Vec<GenParams> = params
        .iter()
        .flat_map(|p| (0..repeats as u64).map(move |i| GenParams { seed: p.seed.wrapping_add(i), ..*p }))
        .collect();
    let runs: Vec<RunRecord> = jobs.par_iter().map(|p| run_one(p, suite, config)).collect::<Result<_, _>>()?;
    let rows = params
        .iter()
        .zip(runs.chunks(repeats.max(1)))
        .map(|(p, chunk)| aggregate(p, chunk))
        .collect();
    Ok(BenchTable { suite, rows, runs })
}
