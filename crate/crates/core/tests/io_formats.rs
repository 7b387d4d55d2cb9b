//! CBF fixtures, parser robustness, the rotated-cone mapping and JSON
//! round trips.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socp_sqp::driver::{solve, SolverConfig};
use socp_sqp::gen::{generate, GenParams};
use socp_sqp::geometry::residual;
use socp_sqp::io::{parse_cbf, read_instance, to_cone_problem, write_instance};
use socp_sqp::model::{ConeProblem, SolveStatus};

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    std::fs::read_to_string(p).unwrap()
}

const FIXTURES: [(&str, f64); 6] = [
    ("lp_min.cbf", 1.0),
    ("q_var_eq.cbf", std::f64::consts::SQRT_2),
    ("qr_con.cbf", std::f64::consts::SQRT_2),
    ("int_relaxed.cbf", std::f64::consts::FRAC_1_SQRT_2),
    ("qr_var_max.cbf", std::f64::consts::SQRT_2),
    ("two_cones.cbf", 2.0 * std::f64::consts::SQRT_2),
];

#[test]
fn fixtures_solve_to_known_optima() {
    for (name, optimum) in FIXTURES {
        let model = parse_cbf(&fixture(name)).unwrap();
        let problem = to_cone_problem(&model).unwrap();
        let config = SolverConfig { tol: 1e-5, ..SolverConfig::default() };
        let r = solve(&problem, None, &config).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal, "{name}");
        assert!(r.kkt_error <= 1e-5, "{name}");
        let obj = model.original_objective(&r.triple.x);
        assert!((obj - optimum).abs() <= 1e-5, "{name}: {obj} vs {optimum}");
    }
}

#[test]
fn fixtures_cover_features() {
    use socp_sqp::io::cbf::Domain;
    let models: Vec<_> = FIXTURES.iter().map(|(n, _)| parse_cbf(&fixture(n)).unwrap()).collect();
    let has = |d: Domain| models.iter().any(|m| m.var_groups.iter().chain(&m.con_groups).any(|g| g.0 == d));
    assert!(has(Domain::Quad) && has(Domain::RotQuad) && has(Domain::Zero));
    assert!(models.iter().any(|m| !m.integers.is_empty()));
}

/// Truncations, line shuffles and token corruptions must produce errors,
/// never panics.
#[test]
fn parser_survives_fuzz_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let junk = ["-1", "1e400", "nan", "QR", "Q", "VAR", "x", "", "99999999999999999999", "0 0 0 0"];
    let mut parsed = 0;
    let mut rejected = 0;
    let mut run = |text: &str| match parse_cbf(text) {
        Ok(m) => {
            parsed += 1;
            let _ = to_cone_problem(&m);
        }
        Err(_) => rejected += 1,
    };
    for (name, _) in FIXTURES {
        let text = fixture(name);
        let lines: Vec<&str> = text.lines().collect();
        for k in 0..=lines.len() {
            run(&lines[..k].join("\n"));
        }
        for _ in 0..200 {
            let mut l: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
            match rng.gen_range(0..3) {
                0 => l.shuffle(&mut rng),
                1 => {
                    let i = rng.gen_range(0..l.len());
                    let j = rng.gen_range(0..l.len());
                    l.swap(i, j);
                }
                _ => {
                    let i = rng.gen_range(0..l.len());
                    l[i] = junk.choose(&mut rng).unwrap().to_string();
                }
            }
            run(&l.join("\n"));
        }
    }
    assert!(rejected > 0 && parsed > 0);
}

#[test]
fn out_of_range_indices_rejected() {
    let base = fixture("q_var_eq.cbf");
    let bad = base.replace("0 2 1.0", "0 3 1.0");
    assert!(parse_cbf(&bad).is_err());
    let bad = base.replace("0 -2.0", "1 -2.0");
    assert!(parse_cbf(&bad).is_err());
}

/// Values of the fresh variables defined by equality rows `u − e(x) = 0`.
fn extend_point(problem: &ConeProblem, x: &[f64]) -> Vec<f64> {
    let mut full = x.to_vec();
    full.resize(problem.num_vars(), 0.0);
    for row in problem.rows() {
        let &(u, one) = row.coeffs.iter().find(|(j, _)| *j >= x.len()).unwrap();
        assert_eq!(one, 1.0);
        let rest: f64 = row.coeffs.iter().filter(|(j, _)| *j != u).map(|(j, a)| a * full[*j]).sum();
        full[u] = row.rhs - rest;
    }
    full
}

#[test]
fn rotated_mapping_preserves_membership() {
    let model = parse_cbf("VER\n3\nVAR\n4 1\nQR 4\n").unwrap();
    let problem = to_cone_problem(&model).unwrap();
    let cone = &problem.cones()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut inside = 0;
    let mut checked = 0;
    while checked < 10_000 {
        let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lhs = 2.0 * v[0] * v[1];
        let rhs = v[2] * v[2] + v[3] * v[3];
        let member = v[0] >= 0.0 && v[1] >= 0.0 && lhs >= rhs;
        if (lhs - rhs).abs() < 1e-9 || v[0].abs() < 1e-9 || v[1].abs() < 1e-9 {
            continue;
        }
        checked += 1;
        let full = extend_point(&problem, &v);
        let u = cone.gather(&full);
        assert_eq!(residual(&u) <= 0.0, member, "{v:?}");
        inside += member as usize;
    }
    assert!(inside > 500);
}

#[test]
fn generated_instances_round_trip_bitwise() {
    for seed in 0..5 {
        let inst = generate(&GenParams { n: 60, m: 20, k0: 3, ki: 3, kb: 3, density: 0.5, seed }).unwrap();
        let text = write_instance(&inst.problem, Some(&inst.planted));
        let back = read_instance(&text).unwrap();
        assert_eq!(back.problem, inst.problem);
        let t = back.planted.unwrap();
        let bits = |v: &[f64]| v.iter().map(|a| a.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&t.x), bits(&inst.planted.x));
        assert_eq!(bits(&t.lambda), bits(&inst.planted.lambda));
        assert_eq!(bits(&t.z), bits(&inst.planted.z));
        assert_eq!(bits(&t.bound_duals), bits(&inst.planted.bound_duals));
        assert_eq!(write_instance(&back.problem, Some(&t)), text);
    }
}
