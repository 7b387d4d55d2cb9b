//! Subproblem construction, multiplier recovery and solver invariants on
//! generated instances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socp_sqp::cuts::HyperplaneSet;
use socp_sqp::driver::{solve, solve_traced, SolverConfig, TraceRecord};
use socp_sqp::gen::{generate, GenParams};
use socp_sqp::merit::{accept_step, model_decrease, penalty_value};
use socp_sqp::model::{classify_cones, ConeProblem, SolveStatus, DIFFERENTIABLE_TOL, EXTREMAL_TOL};
use socp_sqp::qp::{solve_qp, QpStatus};
use socp_sqp::subproblems::{build_hessian, build_master_qp, build_newton_qp, recover_duals};

struct State {
    problem: ConeProblem,
    x: Vec<f64>,
    mu: Vec<f64>,
    ys: Vec<HyperplaneSet>,
}

/// A random state near the planted solution of a small instance that keeps
/// the linear rows satisfied: some extremal cones are put exactly at the
/// apex, the rest perturbed.
fn random_state(seed: u64) -> State {
    let inst = generate(&GenParams { n: 40, m: 10, k0: 2, ki: 2, kb: 2, density: 0.5, seed }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = inst.planted.x.clone();
    for (j, cone) in inst.problem.cones().iter().enumerate() {
        let apex = j < 2 && rng.gen_bool(0.5);
        for &k in &cone.indices {
            x[k] = if apex { 0.0 } else { x[k] + rng.gen_range(-0.3..0.3) };
        }
    }
    // restore Ax = b by a least-norm correction on the free cone variables
    let free: Vec<usize> = inst.problem.cones()[2..].iter().flat_map(|c| c.indices.clone()).collect();
    let rows = inst.problem.rows();
    let a = DMatrix::<f64>::from_fn(rows.len(), free.len(), |i, k| {
        rows[i].coeffs.iter().filter(|c| c.0 == free[k]).map(|c| c.1).sum()
    });
    let r = DVector::from_iterator(rows.len(), rows.iter().map(|row| row.dot(&x) - row.rhs));
    let w = (&a * a.transpose()).lu().solve(&r).expect("full row rank");
    let corr = a.transpose() * w;
    for (k, &i) in free.iter().enumerate() {
        x[i] -= corr[k];
    }
    let mu = (0..inst.problem.num_cones()).map(|_| rng.gen_range(0.0..5.0)).collect();
    let ys = inst
        .problem
        .cones()
        .iter()
        .map(|c| {
            let mut s = HyperplaneSet::initial(c.dim()).unwrap();
            for _ in 0..rng.gen_range(0..4) {
                s.try_add((0..c.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect());
            }
            s
        })
        .collect();
    State { problem: inst.problem, x, mu, ys }
}

#[test]
fn newton_qp_relaxes_master_qp() {
    for seed in 0..40 {
        let st = random_state(seed);
        let p = &st.problem;
        let cl = classify_cones(p, &st.x, EXTREMAL_TOL, DIFFERENTIABLE_TOL);
        let h = build_hessian(p, &st.mu, &st.x, &cl, 1e12);
        let e_hat: Vec<bool> = (0..p.num_cones()).map(|j| cl.is_extremal(j)).collect();
        let master = build_master_qp(p, &st.x, &h, &st.ys, &cl);
        let newton = build_newton_qp(p, &st.x, &h, &st.ys, &cl, &e_hat);
        for r in &newton.qp.rows {
            let twin = master.qp.rows.iter().find(|m| m.tag == r.tag).expect("newton row present in master");
            assert_eq!(twin.coeffs, r.coeffs);
            assert_eq!(twin.rhs, r.rhs);
        }
        for i in 0..p.num_vars() {
            assert!(newton.qp.lower[i] <= master.qp.lower[i]);
            assert!(newton.qp.upper[i] >= master.qp.upper[i]);
        }
        // hence the optimal values are ordered
        let sm = solve_qp(&master.qp, None);
        let sn = solve_qp(&newton.qp, None);
        if sm.status == QpStatus::Optimal && sn.status == QpStatus::Optimal {
            let (om, on) = (master.qp.objective(&sm.d), newton.qp.objective(&sn.d));
            assert!(on <= om + 1e-8 * (1.0 + om.abs()), "seed {seed}: {on} > {om}");
        }
    }
}

#[test]
fn hessian_is_psd() {
    for seed in 0..40 {
        let st = random_state(seed);
        let cl = classify_cones(&st.problem, &st.x, EXTREMAL_TOL, DIFFERENTIABLE_TOL);
        let h = build_hessian(&st.problem, &st.mu, &st.x, &cl, 1e12);
        let dense = h.to_qp().to_dense(st.problem.num_vars());
        let n = dense.len();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| dense[i][j]);
        let ev = m.clone().symmetric_eigen().eigenvalues;
        assert!(ev.min() >= -1e-9 * m.amax().max(1e-300));
    }
}

#[test]
fn multiplier_recovery_reconstructs_duals() {
    let mut solved = 0;
    for seed in 0..40 {
        let st = random_state(seed);
        let p = &st.problem;
        let cl = classify_cones(p, &st.x, EXTREMAL_TOL, DIFFERENTIABLE_TOL);
        let h = build_hessian(p, &st.mu, &st.x, &cl, 1e12);
        let master = build_master_qp(p, &st.x, &h, &st.ys, &cl);
        let sol = solve_qp(&master.qp, None);
        if sol.status != QpStatus::Optimal {
            continue;
        }
        solved += 1;
        let hd = h.mul(&sol.d);
        let step = recover_duals(p, &master, &sol, &st.ys, sol.d.clone(), &hd);
        // ẑ from its definition, independently of the recovery code
        let mut z = p.implied_cone_dual(&step.lambda_hat, &step.bound_duals);
        z.iter_mut().zip(&hd).for_each(|(a, b)| *a += b);
        let scale = 1.0 + z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for cone in p.cones() {
            for &k in &cone.indices {
                assert!((z[k] - step.z_hat[k]).abs() <= 1e-9 * scale);
            }
        }
        assert!(step.reconstruction_error <= 1e-9 * scale, "{:e}", step.reconstruction_error);
        assert!(step.mu_hat.iter().all(|&m| m >= 0.0));
        // once ρ exceeds the dual heads, the model cannot increase
        let rho = 2.0 * step.max_head(p) + 1.0;
        let md = model_decrease(p, &st.x, &step.d, rho, &cl);
        let outside: f64 = p
            .cones()
            .iter()
            .enumerate()
            .filter(|(j, _)| !cl.is_differentiable(*j))
            .map(|(_, c)| step.z_hat[c.head()].abs() * socp_sqp::geometry::residual(&c.gather(&st.x)).max(0.0))
            .sum();
        assert!(md <= 1e-9 * (1.0 + rho) + outside, "seed {seed}: model change {md:e}");
    }
    assert!(solved >= 30, "only {solved} master QPs solved");
}

#[test]
fn acceptance_implies_decrease() {
    for seed in 0..40 {
        let st = random_state(seed);
        let p = &st.problem;
        let cl = classify_cones(p, &st.x, EXTREMAL_TOL, DIFFERENTIABLE_TOL);
        let h = build_hessian(p, &st.mu, &st.x, &cl, 1e12);
        let master = build_master_qp(p, &st.x, &h, &st.ys, &cl);
        let sol = solve_qp(&master.qp, None);
        if sol.status != QpStatus::Optimal {
            continue;
        }
        for rho in [1.0, 10.0, 100.0] {
            let md = model_decrease(p, &st.x, &sol.d, rho, &cl);
            if md < -1e-8 && accept_step(p, &st.x, &sol.d, rho, &cl, 1e-6) {
                let trial: Vec<f64> = st.x.iter().zip(&sol.d).map(|(a, b)| a + b).collect();
                assert!(penalty_value(p, &trial, rho) < penalty_value(p, &st.x, rho));
            }
        }
    }
}

#[test]
fn solver_invariants_on_generated_instances() {
    for seed in 0..10 {
        let inst = generate(&GenParams { n: 60, m: 20, k0: 3, ki: 3, kb: 3, density: 0.5, seed }).unwrap();
        let mut records: Vec<TraceRecord> = Vec::new();
        let config = SolverConfig::default();
        let report = solve_traced(&inst.problem, None, &config, &mut |r| records.push(r.clone())).unwrap();
        assert_eq!(report.status, SolveStatus::Optimal, "seed {seed}");
        assert!(report.kkt_error <= config.tol);
        assert_eq!(report.model_decrease_violations, 0);
        assert!(records.windows(2).all(|w| w[1].rho >= w[0].rho), "ρ decreased");
        for r in &records {
            assert!(r.linear_violation <= 1e-9, "iterate violates rows by {:e}", r.linear_violation);
            assert!(r.min_head >= -1e-9);
            assert!(r.min_mu >= 0.0);
            assert!(r.inner_iterations <= config.max_inner_iters);
        }
        let k = records.len();
        if k >= 3 {
            assert!(records[k - 3..].iter().all(|r| r.rho == records[k - 1].rho), "ρ still moving");
        }
        // identical inputs, identical outputs
        let again = solve(&inst.problem, None, &config).unwrap();
        assert_eq!(again.triple, report.triple);
        assert_eq!(again.kkt_history, report.kkt_history);
    }
}
