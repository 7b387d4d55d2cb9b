//! Dense convex QP engine.
//!
//! Solves
//!
//! ```text
//!     minimize    ½dᵀHd + gᵀd
//!     subject to  a_iᵀd ≤ b_i  (LE rows),  a_iᵀd = b_i  (EQ rows),  l ≤ d ≤ u
//! ```
//!
//! with a primal active-set method on an updating QR factorization of the
//! working-set normals. Multiplier conventions: stationarity reads
//! `Hd + g + Σ λ_i a_i + β = 0`, with `λ_i ≥ 0` on LE rows and `β` signed
//! (positive on an active upper bound, negative on an active lower bound).

mod active_set;
pub mod qr;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{norm_inf, Sense};

pub use active_set::EngineOptions;

/// Acceptance threshold on the unscaled KKT residual of an optimal solution.
pub const KKT_TOL: f64 = 1e-9;
/// Diagonal perturbation used by the second fallback attempt.
pub const REGULARIZATION: f64 = 1e-7;

/// Dense symmetric block on a subset of variables (row-major values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianBlock {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Block-sparse symmetric PSD matrix plus a multiple of the identity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QpHessian {
    pub blocks: Vec<HessianBlock>,
    pub diagonal_shift: f64,
}

impl QpHessian {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn identity() -> Self {
        Self { blocks: Vec::new(), diagonal_shift: 1.0 }
    }

    /// `out += H v`.
    pub fn mul_add(&self, v: &[f64], out: &mut [f64]) {
        for b in &self.blocks {
            let m = b.indices.len();
            for (r, &i) in b.indices.iter().enumerate() {
                let row = &b.values[r * m..(r + 1) * m];
                out[i] += row.iter().zip(&b.indices).map(|(h, &j)| h * v[j]).sum::<f64>();
            }
        }
        if self.diagonal_shift != 0.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o += self.diagonal_shift * x;
            }
        }
    }

    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.mul_add(v, &mut out);
        out
    }

    pub fn quad(&self, v: &[f64]) -> f64 {
        self.mul(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.values.iter())
            .fold(self.diagonal_shift.abs(), |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self, n: usize) -> Vec<Vec<f64>> {
        let mut h = vec![vec![0.0; n]; n];
        for b in &self.blocks {
            let m = b.indices.len();
            for (r, &i) in b.indices.iter().enumerate() {
                for (c, &j) in b.indices.iter().enumerate() {
                    h[i][j] += b.values[r * m + c];
                }
            }
        }
        for (i, row) in h.iter_mut().enumerate() {
            row[i] += self.diagonal_shift;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub sense: Sense,
    /// Caller-chosen identity used to carry working sets between related QPs.
    pub tag: u64,
}

impl QpRow {
    #[inline]
    pub fn dot(&self, d: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, a)| a * d[i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub n: usize,
    pub hessian: QpHessian,
    pub g: Vec<f64>,
    pub rows: Vec<QpRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    /// A problem with no rows and free variables.
    pub fn unconstrained(hessian: QpHessian, g: Vec<f64>) -> Self {
        let n = g.len();
        Self {
            n,
            hessian,
            g,
            rows: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn objective(&self, d: &[f64]) -> f64 {
        0.5 * self.hessian.quad(d) + self.g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Failed,
}

/// Weights `y` on the rows and signed weights on the bounds such that the
/// combination `Σ y_i a_i + Σ β_j e_j` vanishes while the combined
/// right-hand side is negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarkasCertificate {
    pub rows: Vec<f64>,
    pub bounds: Vec<f64>,
}

/// Working set expressed through row tags and bound indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WarmStart {
    pub row_tags: Vec<u64>,
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub d: Vec<f64>,
    pub row_duals: Vec<f64>,
    pub bound_duals: Vec<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub farkas: Option<FarkasCertificate>,
    pub iterations: usize,
    /// diagonal perturbation the reported solution is optimal for
    pub regularization: f64,
    pub working_set: WarmStart,
    pub message: Option<String>,
}

impl QpSolution {
    pub(crate) fn failed(n: usize, m: usize, msg: impl Into<String>) -> Self {
        Self {
            d: vec![0.0; n],
            row_duals: vec![0.0; m],
            bound_duals: vec![0.0; n],
            status: QpStatus::Failed,
            kkt_residual: f64::INFINITY,
            farkas: None,
            iterations: 0,
            regularization: 0.0,
            working_set: WarmStart::default(),
            message: Some(msg.into()),
        }
    }
}

/// Solves the QP, running the fallback chain on failure: the primary solve,
/// then `H + 1e-7·I`, then a cold start with Bland pivoting in reverse order.
pub fn solve_qp(qp: &QpProblem, warm: Option<&WarmStart>) -> QpSolution {
    if let Err(msg) = validate(qp) {
        return QpSolution::failed(qp.n, qp.rows.len(), msg);
    }
    let mut iterations = 0;
    let first = active_set::solve(qp, warm, &EngineOptions::default());
    iterations += first.iterations;
    if first.status != QpStatus::Failed {
        return first;
    }
    // a regularized unbounded QP has a finite but meaningless solution
    let unbounded = first.message.as_deref().is_some_and(|m| m.contains(active_set::UNBOUNDED));
    let mut second = if unbounded {
        first.clone()
    } else {
        let mut reg = qp.clone();
        reg.hessian.diagonal_shift += REGULARIZATION;
        active_set::solve(&reg, warm, &EngineOptions::default())
    };
    if !unbounded {
        iterations += second.iterations;
    }
    if second.status != QpStatus::Failed {
        second.regularization = REGULARIZATION;
        second.iterations = iterations;
        return second;
    }
    let opts = EngineOptions { bland: true, reverse_order: true };
    let mut third = active_set::solve(qp, None, &opts);
    iterations += third.iterations;
    third.iterations = iterations;
    if third.status == QpStatus::Failed {
        let msg = format!(
            "{}; regularized: {}; cold: {}",
            first.message.unwrap_or_default(),
            second.message.unwrap_or_default(),
            third.message.clone().unwrap_or_default()
        );
        third.message = Some(msg);
    }
    third
}

fn validate(qp: &QpProblem) -> Result<(), String> {
    let n = qp.n;
    if qp.g.len() != n || qp.lower.len() != n || qp.upper.len() != n {
        return Err("dimension mismatch".into());
    }
    for b in &qp.hessian.blocks {
        let m = b.indices.len();
        if b.values.len() != m * m || b.indices.iter().any(|&i| i >= n) {
            return Err("malformed Hessian block".into());
        }
        for r in 0..m {
            for c in 0..r {
                let (x, y) = (b.values[r * m + c], b.values[c * m + r]);
                if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                    return Err("Hessian block is not symmetric".into());
                }
            }
        }
    }
    for row in &qp.rows {
        if row.coeffs.iter().any(|&(i, _)| i >= n) {
            return Err("row index out of range".into());
        }
    }
    for i in 0..n {
        if qp.lower[i] > qp.upper[i] || qp.lower[i].is_nan() || qp.upper[i].is_nan() {
            return Err(format!("invalid bounds on variable {i}"));
        }
    }
    Ok(())
}

/// Scaled KKT residual of a QP solution. Stationarity is measured relative
/// to the largest term entering it, primal feasibility relative to the size
/// of `d` and the right-hand sides, complementarity relative to both.
pub fn kkt_residual(qp: &QpProblem, d: &[f64], row_duals: &[f64], bound_duals: &[f64]) -> f64 {
    let dmax = norm_inf(d);
    let mut stat = qp.hessian.mul(d);
    let mut dual_scale = norm_inf(&stat).max(norm_inf(&qp.g)).max(norm_inf(bound_duals));
    let mut primal_scale = dmax;
    for (s, g) in stat.iter_mut().zip(&qp.g) {
        *s += g;
    }
    for (row, &l) in qp.rows.iter().zip(row_duals) {
        let amax = row.coeffs.iter().fold(0.0_f64, |m, &(_, a)| m.max(a.abs()));
        dual_scale = dual_scale.max(amax * l.abs());
        primal_scale = primal_scale.max(row.rhs.abs()).max(amax * dmax);
    }
    let ps = 1.0 + primal_scale;
    let ds = 1.0 + dual_scale;
    let mut err: f64 = 0.0;
    for (row, &l) in qp.rows.iter().zip(row_duals) {
        for &(i, a) in &row.coeffs {
            stat[i] += a * l;
        }
        let act = row.dot(d) - row.rhs;
        match row.sense {
            Sense::Le => {
                err = err.max(act.max(0.0) / ps).max((-l).max(0.0) / ds);
            }
            Sense::Eq => err = err.max(act.abs() / ps),
        }
        err = err.max((act * l).abs() / (ps * ds));
    }
    for i in 0..qp.n {
        let b = bound_duals[i];
        stat[i] += b;
        err = err.max((qp.lower[i] - d[i]) / ps).max((d[i] - qp.upper[i]) / ps);
        if b != 0.0 {
            let bound = if b > 0.0 { qp.upper[i] } else { qp.lower[i] };
            let c = if bound.is_finite() { ((d[i] - bound) * b).abs() } else { b.abs() };
            err = err.max(c / (ps * ds));
        }
    }
    stat.iter().fold(err, |m, v| m.max(v.abs() / ds))
}

/// Independent KKT check of a returned solution.
pub fn verify_qp_kkt(qp: &QpProblem, sol: &QpSolution) -> f64 {
    let mut q = qp.clone();
    q.hessian.diagonal_shift += sol.regularization;
    kkt_residual(&q, &sol.d, &sol.row_duals, &sol.bound_duals)
}

/// Verifies a Farkas certificate; returns the combined right-hand side when
/// it proves infeasibility.
pub fn check_farkas(qp: &QpProblem, cert: &FarkasCertificate) -> Result<f64, String> {
    if cert.rows.len() != qp.rows.len() || cert.bounds.len() != qp.n {
        return Err("certificate dimension mismatch".into());
    }
    let mut comb = vec![0.0; qp.n];
    let mut rhs = 0.0;
    let mut scale: f64 = 0.0;
    for (row, &y) in qp.rows.iter().zip(&cert.rows) {
        if row.sense == Sense::Le && y < 0.0 {
            return Err("negative weight on an inequality row".into());
        }
        if y != 0.0 {
            for &(i, a) in &row.coeffs {
                comb[i] += y * a;
                scale = scale.max((y * a).abs());
            }
            rhs += y * row.rhs;
        }
    }
    for (i, &b) in cert.bounds.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let bound = if b > 0.0 { qp.upper[i] } else { qp.lower[i] };
        if !bound.is_finite() {
            return Err(format!("weight on missing bound of variable {i}"));
        }
        comb[i] += b;
        rhs += b * bound;
    }
    let resid = comb.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if resid > 1e-9 * scale.max(1.0) {
        return Err(format!("combination does not vanish (residual {resid:e})"));
    }
    if rhs >= -1e-10 {
        return Err(format!("combined right-hand side {rhs:e} is not negative"));
    }
    Ok(rhs)
}

/// Maps row tags to row indices; the first row wins on repeated tags.
pub(crate) fn tag_index(qp: &QpProblem) -> HashMap<u64, usize> {
    let mut map = HashMap::with_capacity(qp.rows.len());
    for (i, r) in qp.rows.iter().enumerate() {
        map.entry(r.tag).or_insert(i);
    }
    map
}
