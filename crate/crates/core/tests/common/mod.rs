//! Shared oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use socp_sqp::model::Sense;
use socp_sqp::qp::{HessianBlock, QpHessian, QpProblem, QpRow};

/// Linear constraint `aᵀd ≤ b` (or `=`) in dense form.
pub struct DenseCon {
    pub a: Vec<f64>,
    pub b: f64,
    pub eq: bool,
}

pub fn dense_constraints(qp: &QpProblem) -> Vec<DenseCon> {
    let n = qp.n;
    let mut out = Vec::new();
    for r in &qp.rows {
        let mut a = vec![0.0; n];
        for &(i, v) in &r.coeffs {
            a[i] += v;
        }
        out.push(DenseCon { a, b: r.rhs, eq: r.sense == Sense::Eq });
    }
    for i in 0..n {
        let mut a = vec![0.0; n];
        a[i] = -1.0;
        out.push(DenseCon { a: a.clone(), b: -qp.lower[i], eq: false });
        a[i] = 1.0;
        out.push(DenseCon { a, b: qp.upper[i], eq: false });
    }
    out
}

/// Minimum over every face: solve the equality-constrained QP for each
/// subset of at most `n` constraints (equalities always included) and keep
/// the best feasible stationary point.
pub fn brute_force(qp: &QpProblem) -> Option<f64> {
    let n = qp.n;
    let cons = dense_constraints(qp);
    let eqs: Vec<usize> = (0..cons.len()).filter(|&c| cons[c].eq).collect();
    let ineqs: Vec<usize> = (0..cons.len()).filter(|&c| !cons[c].eq).collect();
    let h = qp.hessian.to_dense(n);
    let mut best: Option<f64> = None;
    let total = ineqs.len();
    let mut subset: Vec<usize> = Vec::new();
    fn rec(
        start: usize,
        total: usize,
        limit: usize,
        subset: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        visit(subset);
        if subset.len() == limit {
            return;
        }
        for i in start..total {
            subset.push(i);
            rec(i + 1, total, limit, subset, visit);
            subset.pop();
        }
    }
    let limit = n.saturating_sub(eqs.len());
    let mut visit = |s: &[usize]| {
        let active: Vec<usize> = eqs.iter().copied().chain(s.iter().map(|&i| ineqs[i])).collect();
        let k = active.len();
        let dim = n + k;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for i in 0..n {
            for j in 0..n {
                kkt[(i, j)] = h[i][j];
            }
            rhs[i] = -qp.g[i];
        }
        for (c, &ci) in active.iter().enumerate() {
            for i in 0..n {
                kkt[(i, n + c)] = cons[ci].a[i];
                kkt[(n + c, i)] = cons[ci].a[i];
            }
            rhs[n + c] = cons[ci].b;
        }
        let Some(sol) = kkt.clone().full_piv_lu().solve(&rhs) else { return };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            return;
        }
        let d: Vec<f64> = sol.iter().take(n).copied().collect();
        for c in &cons {
            let act: f64 = c.a.iter().zip(&d).map(|(a, x)| a * x).sum::<f64>() - c.b;
            if act > 1e-9 || (c.eq && act < -1e-9) {
                return;
            }
        }
        let obj = qp.objective(&d);
        if best.is_none_or(|b| obj < b) {
            best = Some(obj);
        }
    };
    rec(0, total, limit, &mut subset, &mut visit);
    best
}

pub fn qp_strategy() -> impl Strategy<Value = QpProblem> {
    (1usize..=6, 0usize..=6).prop_flat_map(|(n, m)| {
        (
            Just(n),
            prop::collection::vec(-2.0f64..2.0, n * n),
            0usize..=n,
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec((prop::collection::vec(-2.0f64..2.0, n), -2.0f64..2.0, 0u8..4), m),
            prop::collection::vec(0.2f64..3.0, n),
        )
    })
    .prop_map(|(n, f, rank, g, rows, box_)| {
        // H = FᵀF with F restricted to `rank` rows, hence PSD and often singular
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = (0..rank).map(|r| f[r * n + i] * f[r * n + j]).sum();
            }
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(t, (a, b, s))| QpRow {
                coeffs: a.into_iter().enumerate().collect(),
                rhs: b,
                sense: if s == 0 { Sense::Eq } else { Sense::Le },
                tag: t as u64,
            })
            .collect();
        QpProblem {
            n,
            hessian: QpHessian {
                blocks: vec![HessianBlock { indices: (0..n).collect(), values: h }],
                diagonal_shift: 0.0,
            },
            g,
            rows,
            lower: box_.iter().map(|v| -v).collect(),
            upper: box_,
        }
    })
}
