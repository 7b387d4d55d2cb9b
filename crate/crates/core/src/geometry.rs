//! Second-order cone geometry.
//!
//! A cone point is a slice `x = (x0, x̄)` whose first entry is the head. The
//! cone residual is `r(x) = ‖x̄‖ − x0`; it is negative in the interior, zero on
//! the boundary and positive outside (for `x0 ≥ 0`).

use nalgebra::{DMatrix, DVector};

use crate::cuts::HyperplaneSet;
use crate::error::GeometryError;
use crate::qp::{self, HessianBlock, QpHessian, QpProblem, QpStatus};

/// Slack used by membership tests at unit scale.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;

#[inline]
pub fn bar_norm(x: &[f64]) -> f64 {
    x[1..].iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub fn residual(x: &[f64]) -> f64 {
    bar_norm(x) - x[0]
}

/// `∇r(x) = (−1, x̄/‖x̄‖)`.
pub fn grad_residual(x: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let nb = bar_norm(x);
    if nb == 0.0 {
        return Err(GeometryError::NonDifferentiable);
    }
    let mut g = Vec::with_capacity(x.len());
    g.push(-1.0);
    g.extend(x[1..].iter().map(|v| v / nb));
    Ok(g)
}

/// Hessian of the residual: zero head row/column, barred block
/// `I/‖x̄‖ − x̄x̄ᵀ/‖x̄‖³`.
pub fn hess_residual(x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
    let nb = bar_norm(x);
    if nb == 0.0 {
        return Err(GeometryError::NonDifferentiable);
    }
    let n = x.len();
    let nb3 = nb * nb * nb;
    let mut h = DMatrix::zeros(n, n);
    for i in 1..n {
        for k in 1..n {
            let id = if i == k { 1.0 / nb } else { 0.0 };
            h[(i, k)] = id - x[i] * x[k] / nb3;
        }
    }
    Ok(h)
}

/// `∇r(y)ᵀx = ȳᵀx̄/‖ȳ‖ − x0`: the cut generated by `y`, evaluated at `x`.
///
/// Only the direction of `ȳ` matters, so generators with a negative head
/// (added from dual points) are accepted.
pub fn cut_value(y: &[f64], x: &[f64]) -> Result<f64, GeometryError> {
    let nb = bar_norm(y);
    if nb == 0.0 {
        return Err(GeometryError::InvalidGenerator);
    }
    let s: f64 = y[1..].iter().zip(&x[1..]).map(|(a, b)| a * b).sum();
    Ok(s / nb - x[0])
}

/// Whether `x` lies in the polyhedral outer approximation generated by `set`.
pub fn in_outer_cone(x: &[f64], set: &HyperplaneSet) -> bool {
    if x[0] < -MEMBERSHIP_SLACK {
        return false;
    }
    set.generators()
        .iter()
        .all(|y| cut_value(y, x).map_or(true, |v| v <= MEMBERSHIP_SLACK))
}

/// `Φ(z, y) = z0 − ‖z̄ + ȳ‖₁ − ‖ȳ‖`. A nonnegative value certifies that `z`
/// lies in the dual of the outer approximation generated by `±e_i` and `y`.
pub fn phi_certificate(z: &[f64], y: &[f64]) -> Result<f64, GeometryError> {
    let nb = bar_norm(y);
    if nb == 0.0 {
        return Err(GeometryError::InvalidGenerator);
    }
    let l1: f64 = z[1..].iter().zip(&y[1..]).map(|(a, b)| (a + b).abs()).sum();
    Ok(z[0] - l1 - nb)
}

/// Weights expressing `z = −Σ σ_l ∇r(y_l) + η e₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualDecomposition {
    pub sigma: Vec<f64>,
    pub eta: f64,
    /// `‖z − (−Σ σ_l ∇r(y_l) + η e₀)‖∞`
    pub residual: f64,
}

/// Reconstructs `−Σ σ_l ∇r(y_l) + η e₀`.
pub fn dual_combination(set: &HyperplaneSet, sigma: &[f64], eta: f64, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = eta;
    for (y, &s) in set.generators().iter().zip(sigma) {
        if s == 0.0 {
            continue;
        }
        if let Ok(g) = grad_residual(y) {
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi -= s * gi;
            }
        }
    }
    v
}

/// Searches for nonnegative weights writing `z` as an element of the dual of
/// the outer approximation. Solves a nonnegative least-squares problem with
/// the QP engine, then polishes on the detected support.
pub fn dual_cone_decompose(z: &[f64], set: &HyperplaneSet) -> Option<DualDecomposition> {
    let dim = z.len();
    let gens = set.generators();
    let nvar = gens.len() + 1;
    // columns of G: −∇r(y_l) for each generator, then e₀
    let mut g_cols: Vec<Vec<f64>> = Vec::with_capacity(nvar);
    for y in gens {
        let g = grad_residual(y).ok()?;
        g_cols.push(g.iter().map(|v| -v).collect());
    }
    let mut e0 = vec![0.0; dim];
    e0[0] = 1.0;
    g_cols.push(e0);

    let gmat = DMatrix::from_fn(dim, nvar, |i, l| g_cols[l][i]);
    let gram = gmat.transpose() * &gmat;
    let zvec = DVector::from_column_slice(z);
    let mut lin = -(gmat.transpose() * &zvec);
    // a tiny price on the cut weights makes the head direction preferred when
    // the representation is not unique
    for l in 0..gens.len() {
        lin[l] += 1e-10;
    }
    let qp = QpProblem {
        n: nvar,
        hessian: QpHessian {
            blocks: vec![HessianBlock {
                indices: (0..nvar).collect(),
                values: gram.transpose().as_slice().to_vec(),
            }],
            diagonal_shift: 0.0,
        },
        g: lin.as_slice().to_vec(),
        rows: Vec::new(),
        lower: vec![0.0; nvar],
        upper: vec![f64::INFINITY; nvar],
    };
    let sol = qp::solve_qp(&qp, None);
    if sol.status != QpStatus::Optimal {
        return None;
    }
    let mut w: Vec<f64> = sol.d.iter().map(|v| v.max(0.0)).collect();

    // polish: exact least squares on the support
    let support: Vec<usize> = (0..nvar).filter(|&l| w[l] > 1e-12).collect();
    if !support.is_empty() {
        let gs = DMatrix::from_fn(dim, support.len(), |i, c| gmat[(i, support[c])]);
        if let Ok(ws) = gs.clone().svd(true, true).solve(&zvec, 1e-14) {
            if ws.iter().all(|&v| v >= 0.0) {
                let mut cand = vec![0.0; nvar];
                for (c, &l) in support.iter().enumerate() {
                    cand[l] = ws[c];
                }
                if recon_error(&gmat, &cand, z) <= recon_error(&gmat, &w, z) {
                    w = cand;
                }
            }
        }
    }
    let residual = recon_error(&gmat, &w, z);
    if residual > 1e-9 {
        return None;
    }
    let eta = w.pop().unwrap_or(0.0);
    Some(DualDecomposition { sigma: w, eta, residual })
}

fn recon_error(gmat: &DMatrix<f64>, w: &[f64], z: &[f64]) -> f64 {
    let r = gmat * DVector::from_column_slice(w);
    r.iter().zip(z).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}
