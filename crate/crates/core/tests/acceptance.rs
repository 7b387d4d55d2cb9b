//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

mod common;

use std::f64::consts::SQRT_2;
use std::path::PathBuf;

use common::{brute_force, qp_strategy};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socp_sqp::bench::{pollute, run_benchmark, RunRecord, Suite};
use socp_sqp::cuts::HyperplaneSet;
use socp_sqp::driver::{solve, SolverConfig};
use socp_sqp::gen::{check_activity, generate, nondegeneracy_screen, Activity, GenParams};
use socp_sqp::geometry::{
    bar_norm, cut_value, dual_combination, dual_cone_decompose, grad_residual, hess_residual, phi_certificate,
    residual,
};
use socp_sqp::io::{parse_cbf, read_instance, to_cone_problem, write_instance};
use socp_sqp::model::{kkt_error, Bound, ConeProblem, ConeSpec, Row, SolveStatus};
use socp_sqp::qp::{check_farkas, solve_qp, verify_qp_kkt, QpStatus, KKT_TOL};

// criterion 1
const COLD_RUNS: usize = 30;
const COLD_TOL: f64 = 1e-7;
const COLD_MEAN_ITERS: (f64, f64) = (3.0, 18.0);
const COLD_FAST_RATIO: f64 = 0.6;
// criterion 2
const WARM_SMALL: f64 = 1e-3;
const WARM_SMALL_MEAN: f64 = 2.0;
const WARM_LARGE: f64 = 1e-1;
const WARM_LARGE_MEAN: f64 = 5.0;
// criterion 3
const REFINE_POLLUTION: (f64, f64) = (1e-6, 1e-5);
const REFINE_TOL: f64 = 1e-9;
const REFINE_MAX_ITERS: usize = 3;
const REFINE_SHARE: f64 = 0.9;
// criterion 4
const TAIL_FACTOR: f64 = 10.0;
const TAIL_FLOOR: f64 = 1e-12;
const TAIL_SHARE: f64 = 0.8;
// criterion 6
const FD_STEP: f64 = 1e-6;
const FD_REL_TOL: f64 = 1e-5;
const CUT_SAMPLES: usize = 10_000;
const CUT_TOL: f64 = 1e-12;
const PHI_CASES: usize = 100;
const QP_CASES: usize = 500;
const QP_GAP: f64 = 1e-7;
// criterion 8
const GEN_INSTANCES: usize = 200;
const GEN_KKT: f64 = 1e-8;
// criterion 9
const CBF_TOL: f64 = 1e-5;

struct Outcome {
    results: Vec<(usize, &'static str, bool, String)>,
}

impl Outcome {
    fn record(&mut self, id: usize, name: &'static str, pass: bool, detail: String) {
        println!("criterion {id} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
        self.results.push((id, name, pass, detail));
    }
}

fn mean(runs: &[RunRecord], f: impl Fn(&RunRecord) -> f64) -> f64 {
    runs.iter().map(f).sum::<f64>() / runs.len() as f64
}

fn class(k: usize) -> GenParams {
    GenParams::uniform(200, 60, k, 0)
}

fn cold_start(out: &mut Outcome) -> Vec<RunRecord> {
    let config = SolverConfig { tol: COLD_TOL, ..SolverConfig::default() };
    let mut all = Vec::new();
    let mut pass = true;
    let mut detail = Vec::new();
    for k in [10, 4, 2] {
        let t = run_benchmark(Suite::ColdStart, &[class(k)], COLD_RUNS, &config).unwrap();
        let solved = t.runs.iter().filter(|r| r.status == SolveStatus::Optimal).count();
        let iters = mean(&t.runs, |r| r.total_iters as f64);
        let ratio = mean(&t.runs, |r| r.fast_ratio());
        pass &= solved == COLD_RUNS
            && (COLD_MEAN_ITERS.0..=COLD_MEAN_ITERS.1).contains(&iters)
            && ratio >= COLD_FAST_RATIO;
        detail.push(format!("K={k}: {solved}/{COLD_RUNS} solved, mean iters {iters:.2}, fast ratio {ratio:.2}"));
        println!("{}", t.to_text());
        all.extend(t.runs);
    }
    out.record(1, "cold-start reliability", pass, detail.join("; "));
    all
}

fn warm_start(out: &mut Outcome) -> Vec<RunRecord> {
    let mut pass = true;
    let mut detail = Vec::new();
    let mut all = Vec::new();
    for (level, bound) in [(WARM_SMALL, WARM_SMALL_MEAN), (WARM_LARGE, WARM_LARGE_MEAN)] {
        let t = run_benchmark(Suite::WarmPerturb(level), &[class(10)], COLD_RUNS, &SolverConfig::default()).unwrap();
        let iters = mean(&t.runs, |r| r.total_iters as f64);
        let solved = t.runs.iter().filter(|r| r.status == SolveStatus::Optimal).count();
        pass &= iters <= bound;
        detail.push(format!("level {level:e}: mean iters {iters:.2} (bound {bound}), {solved}/{COLD_RUNS} solved"));
        all.extend(t.runs);
    }
    out.record(2, "warm-start economy", pass, detail.join("; "));
    all
}

fn refinement(out: &mut Outcome) -> Vec<RunRecord> {
    let mut pollution_ok = 0;
    for i in 0..COLD_RUNS as u64 {
        let inst = generate(&GenParams { seed: i, ..class(10) }).unwrap();
        let t = pollute(&inst, REFINE_POLLUTION.0, i ^ 0xfeed);
        let e = kkt_error(&inst.problem, &t.x, &t.lambda, &t.bound_duals).unwrap();
        pollution_ok += (REFINE_POLLUTION.0..=REFINE_POLLUTION.1).contains(&e) as usize;
    }
    let t = run_benchmark(Suite::Refine(REFINE_POLLUTION.0), &[class(10)], COLD_RUNS, &SolverConfig::default()).unwrap();
    let good = t.runs.iter().filter(|r| r.final_kkt <= REFINE_TOL && r.total_iters <= REFINE_MAX_ITERS).count();
    let share = good as f64 / COLD_RUNS as f64;
    out.record(
        3,
        "accuracy refinement",
        pollution_ok == COLD_RUNS && share >= REFINE_SHARE,
        format!(
            "{pollution_ok}/{COLD_RUNS} polluted starts in [{:e}, {:e}]; {good}/{COLD_RUNS} reach {REFINE_TOL:e} within {REFINE_MAX_ITERS} iterations",
            REFINE_POLLUTION.0, REFINE_POLLUTION.1
        ),
    );
    t.runs
}

fn quadratic_tail(out: &mut Outcome, cold: &[RunRecord]) {
    let batch = &cold[..COLD_RUNS];
    let good = batch
        .iter()
        .filter(|r| {
            let t = &r.tail;
            t.len() == 3 && t[0] > t[1] && t[1] > t[2] && t[2] <= (TAIL_FACTOR * t[1] * t[1]).max(TAIL_FLOOR)
        })
        .count();
    let share = good as f64 / batch.len() as f64;
    out.record(4, "quadratic tail", share >= TAIL_SHARE, format!("{good}/{} instances contract quadratically", batch.len()));
}

fn identification(out: &mut Outcome, cold: &[RunRecord]) {
    let solved: Vec<&RunRecord> = cold.iter().filter(|r| r.status == SolveStatus::Optimal).collect();
    let ok = solved.iter().filter(|r| r.identified).count();
    out.record(5, "identification", ok == solved.len() && !solved.is_empty(), format!("{ok}/{} solved instances", solved.len()));
}

fn fd_gradient(x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut p, mut m) = (x.to_vec(), x.to_vec());
            p[i] += FD_STEP;
            m[i] -= FD_STEP;
            (residual(&p) - residual(&m)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    d / b.iter().map(|v| v.abs()).fold(1.0, f64::max)
}

fn property_suites(out: &mut Outcome, runs: &[RunRecord], extra_violations: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut notes = Vec::new();

    // finite differences of gradient and Hessian
    let mut fd_worst: f64 = 0.0;
    for _ in 0..300 {
        let dim = rng.gen_range(2..7);
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
        if bar_norm(&x) < 1e-2 {
            continue;
        }
        let g = grad_residual(&x).unwrap();
        fd_worst = fd_worst.max(rel_gap(&fd_gradient(&x), &g));
        let h = hess_residual(&x).unwrap();
        for i in 0..dim {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += FD_STEP;
            m[i] -= FD_STEP;
            let (gp, gm) = (grad_residual(&p).unwrap(), grad_residual(&m).unwrap());
            let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * FD_STEP)).collect();
            let col: Vec<f64> = (0..dim).map(|r| h[(r, i)]).collect();
            fd_worst = fd_worst.max(rel_gap(&fd, &col));
        }
    }
    let fd_ok = fd_worst <= FD_REL_TOL;
    notes.push(format!("finite differences worst {fd_worst:.1e}"));

    // cut validity on cone samples
    let mut cut_violations = 0;
    for trial in 0..20 {
        let dim = 2 + trial % 6;
        let y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect();
        for _ in 0..CUT_SAMPLES {
            let mut x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            x[0] = bar_norm(&x) * (1.0 + rng.gen_range(0.0..1.0));
            if cut_value(&y, &x).unwrap() > CUT_TOL {
                cut_violations += 1;
            }
        }
    }
    notes.push(format!("{cut_violations} cut violations in {} samples", 20 * CUT_SAMPLES));

    // Φ ≥ 0 implies a dual decomposition
    let mut phi_failures = 0;
    let mut cases = 0;
    while cases < PHI_CASES {
        let dim = rng.gen_range(2..7);
        let y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        if bar_norm(&y) == 0.0 {
            continue;
        }
        let l1: f64 = z[1..].iter().zip(&y[1..]).map(|(a, b)| (a + b).abs()).sum();
        z[0] = l1 + bar_norm(&y) + rng.gen_range(-1.0..2.0);
        if phi_certificate(&z, &y).unwrap() < 0.0 {
            continue;
        }
        cases += 1;
        let mut set = HyperplaneSet::initial(dim).unwrap();
        set.try_add(y);
        let ok = dual_cone_decompose(&z, &set).is_some_and(|d| {
            let back = dual_combination(&set, &d.sigma, d.eta, dim);
            d.sigma.iter().all(|&s| s >= 0.0)
                && d.eta >= 0.0
                && back.iter().zip(&z).all(|(a, b)| (a - b).abs() <= 1e-9)
        });
        phi_failures += !ok as usize;
    }
    notes.push(format!("{phi_failures}/{PHI_CASES} decomposition failures"));

    // QP engine against enumeration, Farkas on every infeasible return
    let mut runner = TestRunner::deterministic();
    let strategy = qp_strategy();
    let (mut qp_bad, mut farkas_bad, mut infeasible) = (0, 0, 0);
    for _ in 0..QP_CASES {
        let qp = strategy.new_tree(&mut runner).unwrap().current();
        let sol = solve_qp(&qp, None);
        let brute = brute_force(&qp);
        match sol.status {
            QpStatus::Optimal => {
                let ok = verify_qp_kkt(&qp, &sol) <= KKT_TOL
                    && brute.is_some_and(|b| (qp.objective(&sol.d) - b).abs() <= QP_GAP * (1.0 + b.abs()));
                qp_bad += !ok as usize;
            }
            QpStatus::Infeasible => {
                infeasible += 1;
                qp_bad += brute.is_some() as usize;
                farkas_bad += !sol.farkas.as_ref().is_some_and(|c| check_farkas(&qp, c).is_ok()) as usize;
            }
            QpStatus::Failed => qp_bad += 1,
        }
    }
    notes.push(format!("{qp_bad}/{QP_CASES} QP mismatches, {farkas_bad}/{infeasible} bad certificates"));

    let violations: usize = runs.iter().map(|r| r.model_decrease_violations).sum::<usize>() + extra_violations;
    notes.push(format!("{violations} model-decrease violations over {} solves", runs.len()));

    let pass = fd_ok && cut_violations == 0 && phi_failures == 0 && qp_bad == 0 && farkas_bad == 0 && violations == 0;
    out.record(6, "property suites", pass, notes.join("; "));
}

fn infeasibility(out: &mut Outcome) -> usize {
    let conflicting = ConeProblem::new(
        vec![1.0, 0.0, 0.0],
        vec![Row::eq(vec![(1, 1.0), (2, 1.0)], 1.0), Row::eq(vec![(1, 1.0), (2, 1.0)], 2.0)],
        vec![Bound::FREE; 3],
        vec![ConeSpec::new(vec![0, 1, 2])],
    )
    .unwrap();
    // x0 = 1 and x1 = 2 leave the cone empty; only the cuts see it
    let empty_cone = ConeProblem::new(
        vec![0.0, 0.0, 1.0],
        vec![Row::eq(vec![(0, 1.0)], 1.0), Row::eq(vec![(1, 1.0)], 2.0)],
        vec![Bound::FREE; 3],
        vec![ConeSpec::new(vec![0, 1, 2])],
    )
    .unwrap();
    let a = solve(&conflicting, None, &SolverConfig::default()).unwrap();
    let b = solve(&empty_cone, None, &SolverConfig::default()).unwrap();
    out.record(
        7,
        "infeasibility",
        a.status == SolveStatus::Infeasible && b.status == SolveStatus::Infeasible,
        format!("conflicting rows: {}; cone emptied by cuts: {}", a.status, b.status),
    );
    a.model_decrease_violations + b.model_decrease_violations
}

fn generator_contract(out: &mut Outcome) {
    let grid = [
        (50, 15, 2, 2, 2),
        (60, 20, 3, 3, 3),
        (80, 20, 2, 4, 3),
        (100, 30, 5, 5, 5),
        (200, 60, 10, 10, 10),
        (200, 60, 4, 4, 4),
        (200, 60, 2, 2, 2),
        (120, 40, 6, 2, 4),
    ];
    let mut bad = 0;
    let mut worst: f64 = 0.0;
    for i in 0..GEN_INSTANCES {
        let (n, m, k0, ki, kb) = grid[i % grid.len()];
        let density = [0.3, 0.5, 1.0][i % 3];
        let params = GenParams { n, m, k0, ki, kb, density, seed: 1000 + i as u64 };
        let inst = generate(&params).unwrap();
        let t = &inst.planted;
        let e = kkt_error(&inst.problem, &t.x, &t.lambda, &t.bound_duals).unwrap();
        worst = worst.max(e);
        let counts = [Activity::Extremal, Activity::Interior, Activity::Boundary]
            .map(|a| inst.activity.iter().filter(|b| **b == a).count());
        let mut ok = e <= GEN_KKT && check_activity(&inst) && nondegeneracy_screen(&inst) && counts == [k0, ki, kb];
        if i % 10 == 0 {
            let again = generate(&params).unwrap();
            ok &= write_instance(&again.problem, Some(&again.planted)) == write_instance(&inst.problem, Some(&inst.planted));
        }
        bad += !ok as usize;
    }
    out.record(
        8,
        "generator contract",
        bad == 0,
        format!("{bad}/{GEN_INSTANCES} instances failed; worst planted kkt_error {worst:.1e}"),
    );
}

fn cbf(out: &mut Outcome) -> usize {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let expected = [
        ("lp_min.cbf", 1.0),
        ("q_var_eq.cbf", SQRT_2),
        ("qr_con.cbf", SQRT_2),
        ("int_relaxed.cbf", std::f64::consts::FRAC_1_SQRT_2),
        ("qr_var_max.cbf", SQRT_2),
        ("two_cones.cbf", 2.0 * SQRT_2),
    ];
    let mut notes = Vec::new();
    let mut pass = true;
    let mut violations = 0;
    for (name, optimum) in expected {
        let text = std::fs::read_to_string(dir.join(name)).unwrap();
        let model = parse_cbf(&text).unwrap();
        let problem = to_cone_problem(&model).unwrap();
        let r = solve(&problem, None, &SolverConfig { tol: CBF_TOL, ..SolverConfig::default() }).unwrap();
        violations += r.model_decrease_violations;
        let obj = model.original_objective(&r.triple.x);
        let back = read_instance(&write_instance(&problem, Some(&r.triple))).unwrap();
        let lossless = back.problem == problem && back.planted.as_ref() == Some(&r.triple);
        let ok = r.status == SolveStatus::Optimal && r.kkt_error <= CBF_TOL && (obj - optimum).abs() <= CBF_TOL && lossless;
        pass &= ok;
        notes.push(format!("{name} {} {:.1e}", r.status, r.kkt_error));
    }
    out.record(9, "CBF fixtures and JSON round trip", pass, notes.join(", "));
    violations
}

#[test]
fn acceptance() {
    let mut out = Outcome { results: Vec::new() };
    let cold = cold_start(&mut out);
    let warm = warm_start(&mut out);
    let refine = refinement(&mut out);
    quadratic_tail(&mut out, &cold);
    identification(&mut out, &cold);
    let mut extra = infeasibility(&mut out);
    generator_contract(&mut out);
    extra += cbf(&mut out);
    let runs: Vec<RunRecord> = cold.into_iter().chain(warm).chain(refine).collect();
    property_suites(&mut out, &runs, extra);

    out.results.sort_by_key(|r| r.0);
    println!("summary:");
    for (id, name, pass, _) in &out.results {
        println!("  {id}. {name}: {}", if *pass { "PASS" } else { "FAIL" });
    }
    let failed: Vec<usize> = out.results.iter().filter(|r| !r.2).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
