//! Exact penalty merit function and the penalty-parameter rule.

use crate::geometry::residual;
use crate::model::{ConeClasses, ConeProblem};

pub const C_DEC: f64 = 1e-6;
pub const C_INC: f64 = 2.0;

/// `Σ_j [r_j(x_j)]⁺`, optionally restricted to a subset of cones.
pub fn cone_violation(problem: &ConeProblem, x: &[f64], only: Option<&ConeClasses>) -> f64 {
    let mut xj = Vec::new();
    problem
        .cones()
        .iter()
        .enumerate()
        .filter(|(j, _)| only.is_none_or(|cl| cl.is_differentiable(*j)))
        .map(|(_, cone)| {
            cone.gather_into(x, &mut xj);
            residual(&xj).max(0.0)
        })
        .sum()
}

/// `φ(x;ρ) = cᵀx + ρ Σ_j [r_j(x_j)]⁺`.
pub fn penalty_value(problem: &ConeProblem, x: &[f64], rho: f64) -> f64 {
    problem.objective_value(x) + rho * cone_violation(problem, x, None)
}

/// Predicted change of the piecewise-linear model, `cᵀd − ρ Σ_{j∈D}[r_j(x_j)]⁺`.
pub fn model_decrease(problem: &ConeProblem, x: &[f64], d: &[f64], rho: f64, classes: &ConeClasses) -> f64 {
    problem.objective_value(d) - rho * cone_violation(problem, x, Some(classes))
}

/// Relaxed sufficient-decrease test:
/// `φ(x+d) − φ(x) − 10·ε·|φ(x)| ≤ c_dec · model_decrease`.
pub fn accept_step(
    problem: &ConeProblem,
    x: &[f64],
    d: &[f64],
    rho: f64,
    classes: &ConeClasses,
    c_dec: f64,
) -> bool {
    let trial: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + b).collect();
    let phi = penalty_value(problem, x, rho);
    let phi_trial = penalty_value(problem, &trial, rho);
    let model = model_decrease(problem, x, d, rho, classes);
    armijo(phi, phi_trial, model, c_dec)
}

/// The acceptance inequality on precomputed values.
pub fn armijo(phi: f64, phi_trial: f64, model: f64, c_dec: f64) -> bool {
    phi_trial - phi - 10.0 * f64::EPSILON * phi.abs() <= c_dec * model
}

/// Keeps `rho_old` if it exceeds the largest dual head, otherwise
/// `c_inc` times that head.
pub fn rho_new(rho_old: f64, max_head: f64, c_inc: f64) -> f64 {
    if rho_old > max_head {
        rho_old
    } else {
        c_inc * max_head
    }
}

/// Penalty parameter with its history of accepted values.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyState {
    pub rho: f64,
    pub history: Vec<(usize, f64)>,
}

impl PenaltyState {
    pub fn new(rho: f64) -> Self {
        Self { rho, history: vec![(0, rho)] }
    }

    pub fn accept(&mut self, iteration: usize, rho: f64) {
        debug_assert!(rho >= self.rho);
        if rho != self.rho {
            self.history.push((iteration, rho));
        }
        self.rho = rho;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify_cones, Bound, ConeSpec, DIFFERENTIABLE_TOL, EXTREMAL_TOL};

    fn problem() -> ConeProblem {
        ConeProblem::new(vec![1.0, 0.0], vec![], vec![Bound::FREE; 2], vec![ConeSpec::new(vec![0, 1])]).unwrap()
    }

    #[test]
    fn penalty_examples() {
        let p = problem();
        assert_eq!(penalty_value(&p, &[1.0, 0.5], 10.0), 1.0);
        assert_eq!(penalty_value(&p, &[1.0, 1.5], 10.0), 6.0);
        assert_eq!(penalty_value(&p, &[1.0, 1.5], 0.0), 1.0);
    }

    #[test]
    fn model_examples() {
        let p = problem();
        let x = [1.0, 1.5];
        let cl = classify_cones(&p, &x, EXTREMAL_TOL, DIFFERENTIABLE_TOL);
        assert_eq!(model_decrease(&p, &x, &[-1.0, 0.0], 10.0, &cl), -6.0);
        let x = [1.0, 0.5];
        assert_eq!(model_decrease(&p, &x, &[-1.0, 0.0], 10.0, &cl), -1.0);
        assert_eq!(model_decrease(&p, &x, &[0.0, 0.0], 10.0, &cl), 0.0);
    }

    #[test]
    fn armijo_examples() {
        assert!(armijo(0.0, -5.0, -6.0, C_DEC));
        assert!(!armijo(0.0, 1.0, -6.0, C_DEC));
        // change hidden in rounding slack
        assert!(armijo(1e3, 1e3 + 1e-13, -1e-7, C_DEC));
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho_new(50.0, 7.0, C_INC), 50.0);
        assert_eq!(rho_new(5.0, 7.0, C_INC), 14.0);
        assert_eq!(rho_new(7.0, 7.0, C_INC), 14.0);
    }
}
