//! Assembly of the step-finding QPs and recovery of the SOCP multiplier
//! estimates from their solutions.
//!
//! All three QP families share one builder: at a base point `x` each cone is
//! represented by any combination of its linearization
//! `r(x_j) + ∇r(x_j)ᵀd_j ≤ 0`, its full cut set `∇r(y)ᵀ(x_j + d_j) ≤ 0` and
//! the head bound `x_{j0} + d_{j0} ≥ 0`.

use crate::cuts::HyperplaneSet;
use crate::geometry::{bar_norm, grad_residual, hess_residual, residual};
use crate::model::{ConeClasses, ConeProblem};
use crate::qp::{HessianBlock, QpHessian, QpProblem, QpRow, QpSolution, QpStatus};

const TAG_SHIFT: u32 = 60;
const TAG_LINEAR: u64 = 0;
const TAG_LINEARIZATION: u64 = 1;
const TAG_CUT: u64 = 2;

fn tag_linear(i: usize) -> u64 {
    (TAG_LINEAR << TAG_SHIFT) | i as u64
}

fn tag_linearization(j: usize) -> u64 {
    (TAG_LINEARIZATION << TAG_SHIFT) | j as u64
}

fn tag_cut(j: usize, l: usize) -> u64 {
    (TAG_CUT << TAG_SHIFT) | ((j as u64) << 32) | l as u64
}

/// `Σ_{j∈D} μ_j ∇²r(x_j)`, stored per cone on the barred indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SqpHessian {
    pub blocks: Vec<HessianBlock>,
    pub mu: Vec<f64>,
    /// factor applied by the rescaling (1 when unscaled)
    pub scale: f64,
    pub scaled: bool,
    /// spectral norm before rescaling
    pub norm: f64,
}

impl SqpHessian {
    pub fn zero(num_cones: usize) -> Self {
        Self { blocks: Vec::new(), mu: vec![0.0; num_cones], scale: 1.0, scaled: false, norm: 0.0 }
    }

    pub fn to_qp(&self) -> QpHessian {
        QpHessian { blocks: self.blocks.clone(), diagonal_shift: 0.0 }
    }

    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for b in &self.blocks {
            let m = b.indices.len();
            for (r, &i) in b.indices.iter().enumerate() {
                out[i] += (0..m).map(|c| b.values[r * m + c] * v[b.indices[c]]).sum::<f64>();
            }
        }
        out
    }
}

/// Builds the Hessian and rescales it to spectral norm `c_h` when larger.
///
/// The barred block of `∇²r` has eigenvalues `1/‖x̄‖` (multiplicity `n_j−2`)
/// and `0`, so the norm of the block-diagonal sum is exact.
pub fn build_hessian(
    problem: &ConeProblem,
    mu: &[f64],
    x: &[f64],
    classes: &ConeClasses,
    c_h: f64,
) -> SqpHessian {
    let mut blocks = Vec::new();
    let mut norm: f64 = 0.0;
    for (j, cone) in problem.cones().iter().enumerate() {
        if !classes.is_differentiable(j) || mu[j] <= 0.0 || cone.dim() < 3 {
            continue;
        }
        let xj = cone.gather(x);
        let Ok(h) = hess_residual(&xj) else { continue };
        norm = norm.max(mu[j] / bar_norm(&xj));
        let m = cone.dim() - 1;
        let mut values = Vec::with_capacity(m * m);
        for r in 1..=m {
            for c in 1..=m {
                values.push(mu[j] * h[(r, c)]);
            }
        }
        blocks.push(HessianBlock { indices: cone.indices[1..].to_vec(), values });
    }
    let mut scale = 1.0;
    let scaled = norm > c_h;
    if scaled {
        scale = c_h / norm;
        for b in &mut blocks {
            b.values.iter_mut().for_each(|v| *v *= scale);
        }
    }
    SqpHessian { blocks, mu: mu.to_vec(), scale, scaled, norm }
}

/// Which constraints represent a cone in a subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConeMode {
    pub linearization: bool,
    pub cuts: bool,
    pub head_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOrigin {
    Linear(usize),
    Linearization(usize),
    Cut { cone: usize, generator: usize },
}

/// A subproblem together with the meaning of its rows.
#[derive(Debug, Clone)]
pub struct ConeQp {
    pub qp: QpProblem,
    pub origins: Vec<RowOrigin>,
    /// variables whose QP lower bound is the cone head bound
    pub head_owned: Vec<bool>,
    /// base point of the linearization
    pub base: Vec<f64>,
    pub modes: Vec<ConeMode>,
}

fn build_cone_qp(
    problem: &ConeProblem,
    base: &[f64],
    g: Vec<f64>,
    hess: &SqpHessian,
    ys: &[HyperplaneSet],
    modes: Vec<ConeMode>,
) -> ConeQp {
    let n = problem.num_vars();
    let mut rows = Vec::new();
    let mut origins = Vec::new();
    for (i, row) in problem.rows().iter().enumerate() {
        rows.push(QpRow {
            coeffs: row.coeffs.clone(),
            rhs: row.rhs - row.dot(base),
            sense: row.sense,
            tag: tag_linear(i),
        });
        origins.push(RowOrigin::Linear(i));
    }
    let mut lower: Vec<f64> = problem.bounds().iter().zip(base).map(|(b, x)| b.lower - x).collect();
    let upper: Vec<f64> = problem.bounds().iter().zip(base).map(|(b, x)| b.upper - x).collect();
    let mut head_owned = vec![false; n];
    let mut xj = Vec::new();
    for (j, cone) in problem.cones().iter().enumerate() {
        let mode = modes[j];
        cone.gather_into(base, &mut xj);
        if mode.linearization {
            if let Ok(grad) = grad_residual(&xj) {
                rows.push(QpRow {
                    coeffs: cone.indices.iter().copied().zip(grad).collect(),
                    rhs: -residual(&xj),
                    sense: crate::model::Sense::Le,
                    tag: tag_linearization(j),
                });
                origins.push(RowOrigin::Linearization(j));
            }
        }
        if mode.cuts {
            for l in 0..ys[j].len() {
                let normal = ys[j].normal(l);
                let at_base: f64 = normal.iter().zip(&xj).map(|(a, b)| a * b).sum();
                rows.push(QpRow {
                    coeffs: cone.indices.iter().copied().zip(normal).collect(),
                    rhs: -at_base,
                    sense: crate::model::Sense::Le,
                    tag: tag_cut(j, l),
                });
                origins.push(RowOrigin::Cut { cone: j, generator: l });
            }
        }
        if mode.head_bound {
            let h = cone.head();
            let head_lb = -base[h];
            if head_lb >= lower[h] {
                lower[h] = head_lb;
                head_owned[h] = true;
            }
        }
    }
    // a head bound tighter than the variable's upper bound leaves an empty box;
    // keep the box consistent and let the row structure report infeasibility
    for i in 0..n {
        if lower[i] > upper[i] {
            lower[i] = upper[i];
        }
    }
    let qp = QpProblem { n, hessian: hess.to_qp(), g, rows, lower, upper };
    ConeQp { qp, origins, head_owned, base: base.to_vec(), modes }
}

/// The cutting-plane QP: every cone gets its cuts and head bound, and
/// differentiable cones additionally their linearization.
pub fn build_master_qp(
    problem: &ConeProblem,
    x: &[f64],
    hess: &SqpHessian,
    ys: &[HyperplaneSet],
    classes: &ConeClasses,
) -> ConeQp {
    let modes = (0..problem.num_cones())
        .map(|j| ConeMode { linearization: classes.is_differentiable(j), cuts: true, head_bound: true })
        .collect();
    build_cone_qp(problem, x, problem.objective().to_vec(), hess, ys, modes)
}

/// The fast NLP-SQP QP: linearizations on differentiable cones, cuts only on
/// the cones in `e_hat`, head bounds on the rest of the differentiable cones.
pub fn build_newton_qp(
    problem: &ConeProblem,
    x: &[f64],
    hess: &SqpHessian,
    ys: &[HyperplaneSet],
    classes: &ConeClasses,
    e_hat: &[bool],
) -> ConeQp {
    let modes = (0..problem.num_cones()).map(|j| newton_mode(classes, e_hat, j)).collect();
    build_cone_qp(problem, x, problem.objective().to_vec(), hess, ys, modes)
}

fn newton_mode(classes: &ConeClasses, e_hat: &[bool], j: usize) -> ConeMode {
    let diff = classes.is_differentiable(j);
    ConeMode {
        linearization: diff,
        cuts: e_hat[j],
        head_bound: e_hat[j] || diff,
    }
}

/// The second-order correction QP in the variable `s`, re-linearized at
/// `x + d_s`. Its objective is the model at `d_s + s` up to a constant.
pub fn build_soc_qp(
    problem: &ConeProblem,
    x: &[f64],
    d_s: &[f64],
    hess: &SqpHessian,
    ys: &[HyperplaneSet],
    classes: &ConeClasses,
    e_hat: &[bool],
) -> ConeQp {
    let base: Vec<f64> = x.iter().zip(d_s).map(|(a, b)| a + b).collect();
    let mut g = problem.objective().to_vec();
    for (gi, hi) in g.iter_mut().zip(hess.mul(d_s)) {
        *gi += hi;
    }
    let modes = (0..problem.num_cones()).map(|j| newton_mode(classes, e_hat, j)).collect();
    build_cone_qp(problem, &base, g, hess, ys, modes)
}

/// Multiplier estimates recovered from a subproblem solution.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub d: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    /// signed multipliers of the problem's own variable bounds
    pub bound_duals: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub nu_hat: Vec<Vec<f64>>,
    pub eta_hat: Vec<f64>,
    /// `c + Hd + Aᵀλ̂ + β̂`
    pub z_hat: Vec<f64>,
    /// `c + Aᵀλ̂ + β̂`
    pub z_check: Vec<f64>,
    /// `‖ẑ_j − (−μ̂_j∇r(x_j) + ν̂_j)‖∞` over the cones
    pub reconstruction_error: f64,
    pub qp_status: QpStatus,
}

impl StepResult {
    /// `‖ẑ_{J,0}‖∞`.
    pub fn max_head(&self, problem: &ConeProblem) -> f64 {
        problem.cones().iter().map(|c| self.z_hat[c.head()].abs()).fold(0.0, f64::max)
    }
}

/// Splits the QP multipliers into row, bound, linearization and cut parts.
///
/// `d` is the step from the linearization point of `sub` (for the correction
/// QP this is `d_s + s` measured from the original iterate); `h_d` is `H d`.
pub fn recover_duals(
    problem: &ConeProblem,
    sub: &ConeQp,
    sol: &QpSolution,
    ys: &[HyperplaneSet],
    d: Vec<f64>,
    h_d: &[f64],
) -> StepResult {
    let n = problem.num_vars();
    let p = problem.num_cones();
    let mut lambda_hat = vec![0.0; problem.num_rows()];
    let mut mu_hat = vec![0.0; p];
    let mut nu_hat: Vec<Vec<f64>> = problem.cones().iter().map(|c| vec![0.0; c.dim()]).collect();
    let mut eta_hat = vec![0.0; p];
    let mut lin_grad: Vec<Option<Vec<f64>>> = vec![None; p];
    for (r, origin) in sub.origins.iter().enumerate() {
        let y = sol.row_duals[r];
        match *origin {
            RowOrigin::Linear(i) => lambda_hat[i] = y,
            RowOrigin::Linearization(j) => {
                mu_hat[j] = y;
                lin_grad[j] = grad_residual(&problem.cones()[j].gather(&sub.base)).ok();
            }
            RowOrigin::Cut { cone, generator } => {
                if y != 0.0 {
                    let normal = ys[cone].normal(generator);
                    for (v, a) in nu_hat[cone].iter_mut().zip(normal) {
                        *v -= y * a;
                    }
                }
            }
        }
    }
    let mut bound_duals = vec![0.0; n];
    for i in 0..n {
        let b = sol.bound_duals[i];
        if b < 0.0 && sub.head_owned[i] {
            let j = problem.cone_of(i).expect("head bound on a cone variable");
            eta_hat[j] = -b;
            nu_hat[j][0] += -b;
        } else {
            bound_duals[i] = b;
        }
    }
    let z_check = problem.implied_cone_dual(&lambda_hat, &bound_duals);
    let z_hat: Vec<f64> = z_check.iter().zip(h_d).map(|(a, b)| a + b).collect();
    let mut err: f64 = 0.0;
    for (j, cone) in problem.cones().iter().enumerate() {
        for (k, &i) in cone.indices.iter().enumerate() {
            let mut v = nu_hat[j][k];
            if let Some(g) = &lin_grad[j] {
                v -= mu_hat[j] * g[k];
            }
            err = err.max((z_hat[i] - v).abs());
        }
    }
    StepResult {
        d,
        lambda_hat,
        bound_duals,
        mu_hat,
        nu_hat,
        eta_hat,
        z_hat,
        z_check,
        reconstruction_error: err,
        qp_status: sol.status,
    }
}

/// Multiplier update for the Hessian after a cutting-plane step:
///
/// * `j ∈ D_next ∩ D_curr`: `μ̂_j − ∇r(x_j)ᵀν̂_j/‖∇r(x_j)‖²`
/// * `j ∈ D_next ∖ D_curr`: `−∇r(x_j^{next})ᵀν̂_j/‖∇r(x_j^{next})‖²`
/// * otherwise `0`; the result is clamped at zero.
pub fn update_mu(
    problem: &ConeProblem,
    mu_hat: &[f64],
    nu_hat: &[Vec<f64>],
    x_next: &[f64],
    x_curr: &[f64],
    d_next: &ConeClasses,
    d_curr: &ConeClasses,
) -> Vec<f64> {
    problem
        .cones()
        .iter()
        .enumerate()
        .map(|(j, cone)| {
            if !d_next.is_differentiable(j) {
                return 0.0;
            }
            let (base, at) = if d_curr.is_differentiable(j) {
                (mu_hat[j], cone.gather(x_curr))
            } else {
                (0.0, cone.gather(x_next))
            };
            let Ok(g) = grad_residual(&at) else { return 0.0 };
            let gn: f64 = g.iter().map(|v| v * v).sum();
            let gv: f64 = g.iter().zip(&nu_hat[j]).map(|(a, b)| a * b).sum();
            (base - gv / gn).max(0.0)
        })
        .collect()
}
