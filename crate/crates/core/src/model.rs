//! Problem and solution data types, cone bookkeeping and the SOCP optimality error.
//!
//! A [`ConeProblem`] is
//!
//! ```text
//!     minimize    cᵀx
//!     subject to  a_iᵀx ≤ b_i   (LE rows)
//!                 a_iᵀx = b_i   (EQ rows)
//!                 l ≤ x ≤ u
//!                 x_j ∈ K_j     for every cone j
//! ```
//!
//! where `x_j` gathers the variables of the cone's index set, with the first
//! index playing the role of the head `x_{j0}`.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::geometry;

/// Threshold on `‖x_j‖∞` below which a cone block counts as the apex.
pub const EXTREMAL_TOL: f64 = 1e-6;
/// Threshold on `‖x̄_j‖` above which the cone residual is treated as differentiable.
pub const DIFFERENTIABLE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "LE")]
    Le,
    #[serde(rename = "EQ")]
    Eq,
}

/// One linear constraint row with sparse coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub sense: Sense,
}

impl Row {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64, sense: Sense) -> Self {
        Self { coeffs, rhs, sense }
    }

    pub fn le(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self::new(coeffs, rhs, Sense::Le)
    }

    pub fn eq(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self::new(coeffs, rhs, Sense::Eq)
    }

    #[inline]
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, a)| a * x[i]).sum()
    }

    /// `a_iᵀx − b_i`.
    #[inline]
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.dot(x) - self.rhs
    }
}

/// Variable bounds; infinite values mean "no bound".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
}

impl Bound {
    pub const FREE: Bound = Bound { lower: f64::NEG_INFINITY, upper: f64::INFINITY };

    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }
}

impl Default for Bound {
    fn default() -> Self {
        Self::FREE
    }
}

/// The variables making up one second-order cone; `indices[0]` is the head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub indices: Vec<usize>,
}

impl ConeSpec {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn head(&self) -> usize {
        self.indices[0]
    }

    /// Copies the cone block of a full-length vector.
    pub fn gather(&self, v: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| v[i]).collect()
    }

    pub fn gather_into(&self, v: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.indices.iter().map(|&i| v[i]));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeProblem {
    num_vars: usize,
    objective: Vec<f64>,
    rows: Vec<Row>,
    bounds: Vec<Bound>,
    cones: Vec<ConeSpec>,
    /// cone index of each variable, if any
    cone_of: Vec<Option<usize>>,
}

impl ConeProblem {
    /// Validates and assembles a problem.
    pub fn new(
        objective: Vec<f64>,
        rows: Vec<Row>,
        bounds: Vec<Bound>,
        cones: Vec<ConeSpec>,
    ) -> Result<Self, ModelError> {
        let n = objective.len();
        if bounds.len() != n {
            return Err(ModelError::Dimension {
                what: "bounds",
                expected: n,
                found: bounds.len(),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(ModelError::IndexOutOfRange { row: i, index: j, num_vars: n });
                }
                if !a.is_finite() {
                    return Err(ModelError::NonFinite("row coefficient"));
                }
            }
            if !row.rhs.is_finite() {
                return Err(ModelError::NonFinite("row right-hand side"));
            }
        }
        if objective.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::NonFinite("objective"));
        }
        for (i, b) in bounds.iter().enumerate() {
            if b.lower.is_nan() || b.upper.is_nan() || b.lower > b.upper {
                return Err(ModelError::InvalidBound(i));
            }
        }
        let mut cone_of = vec![None; n];
        for (j, cone) in cones.iter().enumerate() {
            if cone.dim() < 2 {
                return Err(ModelError::ConeTooSmall { cone: j, dim: cone.dim() });
            }
            for &i in &cone.indices {
                if i >= n {
                    return Err(ModelError::ConeIndexOutOfRange { cone: j, index: i });
                }
                if cone_of[i].is_some() {
                    return Err(ModelError::OverlappingCones { index: i });
                }
                cone_of[i] = Some(j);
            }
        }
        Ok(Self { num_vars: n, objective, rows, bounds, cones, cone_of })
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cones(&self) -> usize {
        self.cones.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    pub fn cones(&self) -> &[ConeSpec] {
        &self.cones
    }

    pub fn cone_of(&self, var: usize) -> Option<usize> {
        self.cone_of[var]
    }

    /// Returns a copy with a different objective vector.
    pub fn with_objective(&self, objective: Vec<f64>) -> Result<Self, ModelError> {
        if objective.len() != self.num_vars {
            return Err(ModelError::Dimension {
                what: "objective",
                expected: self.num_vars,
                found: objective.len(),
            });
        }
        let mut p = self.clone();
        p.objective = objective;
        Ok(p)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }

    /// `c + Aᵀλ + β`: the cone dual implied by row and bound multipliers.
    pub fn implied_cone_dual(&self, lambda: &[f64], bound_duals: &[f64]) -> Vec<f64> {
        let mut z = self.objective.clone();
        for (row, &l) in self.rows.iter().zip(lambda) {
            if l != 0.0 {
                for &(i, a) in &row.coeffs {
                    z[i] += a * l;
                }
            }
        }
        for (zi, &b) in z.iter_mut().zip(bound_duals) {
            *zi += b;
        }
        z
    }

    /// Largest violation of the linear rows and variable bounds at `x`.
    pub fn linear_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for row in &self.rows {
            let a = row.activity(x);
            v = v.max(match row.sense {
                Sense::Le => a.max(0.0),
                Sense::Eq => a.abs(),
            });
        }
        for (b, &xi) in self.bounds.iter().zip(x) {
            v = v.max(b.lower - xi).max(xi - b.upper);
        }
        v
    }

    pub fn check_dims(&self, x: &[f64], lambda: &[f64], bound_duals: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.num_vars {
            return Err(ModelError::Dimension { what: "x", expected: self.num_vars, found: x.len() });
        }
        if lambda.len() != self.rows.len() {
            return Err(ModelError::Dimension {
                what: "lambda",
                expected: self.rows.len(),
                found: lambda.len(),
            });
        }
        if bound_duals.len() != self.num_vars {
            return Err(ModelError::Dimension {
                what: "bound_duals",
                expected: self.num_vars,
                found: bound_duals.len(),
            });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Primal point with row, bound and cone multipliers.
///
/// `bound_duals` is signed: a positive entry belongs to the upper bound, a
/// negative one to the lower bound. `z` is the cone dual and vanishes off the
/// cones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualTriple {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub z: Vec<f64>,
    pub bound_duals: Vec<f64>,
}

impl PrimalDualTriple {
    /// Builds a triple whose cone dual is `c + Aᵀλ + β` restricted to the cones.
    pub fn from_multipliers(
        problem: &ConeProblem,
        x: Vec<f64>,
        lambda: Vec<f64>,
        bound_duals: Vec<f64>,
    ) -> Self {
        let full = problem.implied_cone_dual(&lambda, &bound_duals);
        let z = full
            .iter()
            .enumerate()
            .map(|(i, &v)| if problem.cone_of(i).is_some() { v } else { 0.0 })
            .collect();
        Self { x, lambda, z, bound_duals }
    }

    pub fn check_dims(&self, problem: &ConeProblem) -> Result<(), ModelError> {
        problem.check_dims(&self.x, &self.lambda, &self.bound_duals)?;
        if self.z.len() != problem.num_vars() {
            return Err(ModelError::Dimension {
                what: "z",
                expected: problem.num_vars(),
                found: self.z.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    SubproblemFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::IterationLimit => "iteration_limit",
            SolveStatus::SubproblemFailure => "subproblem_failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub triple: PrimalDualTriple,
    pub kkt_error: f64,
    pub total_iters: usize,
    /// iterations in which the fast (or corrected) NLP-SQP step was accepted
    pub sqp_step_iters: usize,
    pub qp_newton_solves: usize,
    pub qp_master_solves: usize,
    pub qp_soc_solves: usize,
    pub final_rho: f64,
    /// optimality error of the start point followed by one entry per iteration
    pub kkt_history: Vec<f64>,
    /// QP solves whose model decrease came out positive although ρ exceeded the dual heads
    pub model_decrease_violations: usize,
}

/// Per-term breakdown of the SOCP optimality error.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub complementarity: f64,
    pub multiplier_sign: f64,
    /// `|c + Aᵀλ + β|` on variables that belong to no cone
    pub stationarity: f64,
    pub cone_primal: f64,
    pub cone_dual: f64,
    pub cone_complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        [
            self.primal,
            self.complementarity,
            self.multiplier_sign,
            self.stationarity,
            self.cone_primal,
            self.cone_dual,
            self.cone_complementarity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Evaluates every term of the optimality error at `(x, λ, β)`; the cone dual
/// is formed internally as `ž = c + Aᵀλ + β`.
///
/// Bounds are treated as rows `−x_i ≤ −l_i` / `x_i ≤ u_i` whose multipliers
/// are the negative / positive parts of `bound_duals`.
pub fn kkt_residuals(
    problem: &ConeProblem,
    x: &[f64],
    lambda: &[f64],
    bound_duals: &[f64],
) -> Result<KktResiduals, ModelError> {
    problem.check_dims(x, lambda, bound_duals)?;
    let mut res = KktResiduals::default();
    for (row, &l) in problem.rows.iter().zip(lambda) {
        let act = row.activity(x);
        match row.sense {
            Sense::Le => {
                res.primal = res.primal.max(act.max(0.0));
                res.multiplier_sign = res.multiplier_sign.max((-l).max(0.0));
            }
            Sense::Eq => res.primal = res.primal.max(act.abs()),
        }
        res.complementarity = res.complementarity.max((act * l).abs());
    }
    for ((b, &xi), &beta) in problem.bounds.iter().zip(x).zip(bound_duals) {
        res.primal = res.primal.max(b.lower - xi).max(xi - b.upper);
        let (bound, slack) = if beta > 0.0 {
            (b.upper, xi - b.upper)
        } else {
            (b.lower, b.lower - xi)
        };
        if beta != 0.0 {
            let c = if bound.is_finite() { (slack * beta).abs() } else { beta.abs() };
            res.complementarity = res.complementarity.max(c);
        }
    }
    let z = problem.implied_cone_dual(lambda, bound_duals);
    for (i, &zi) in z.iter().enumerate() {
        if problem.cone_of[i].is_none() {
            res.stationarity = res.stationarity.max(zi.abs());
        }
    }
    let mut xj = Vec::new();
    let mut zj = Vec::new();
    for cone in &problem.cones {
        cone.gather_into(x, &mut xj);
        cone.gather_into(&z, &mut zj);
        res.cone_primal = res.cone_primal.max(geometry::residual(&xj).max(0.0));
        res.cone_dual = res.cone_dual.max(geometry::residual(&zj).max(0.0));
        res.cone_complementarity = res.cone_complementarity.max(dot(&xj, &zj).abs());
    }
    Ok(res)
}

/// Violation of the SOCP optimality conditions (max of all residual terms).
pub fn kkt_error(
    problem: &ConeProblem,
    x: &[f64],
    lambda: &[f64],
    bound_duals: &[f64],
) -> Result<f64, ModelError> {
    kkt_residuals(problem, x, lambda, bound_duals).map(|r| r.max())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConeClass {
    /// block is (numerically) the apex
    Extremal,
    /// residual differentiable: barred part nonzero
    Differentiable,
    /// away from the apex but with zero barred part
    NonDifferentiable,
}

/// The pointwise partition of the cones into extremal-active, differentiable
/// and non-differentiable sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConeClasses {
    classes: Vec<ConeClass>,
}

impl ConeClasses {
    pub fn class(&self, j: usize) -> ConeClass {
        self.classes[j]
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn is_extremal(&self, j: usize) -> bool {
        self.classes[j] == ConeClass::Extremal
    }

    pub fn is_differentiable(&self, j: usize) -> bool {
        self.classes[j] == ConeClass::Differentiable
    }

    fn members(&self, c: ConeClass) -> Vec<usize> {
        (0..self.classes.len()).filter(|&j| self.classes[j] == c).collect()
    }

    pub fn extremal(&self) -> Vec<usize> {
        self.members(ConeClass::Extremal)
    }

    pub fn differentiable(&self) -> Vec<usize> {
        self.members(ConeClass::Differentiable)
    }

    pub fn nondifferentiable(&self) -> Vec<usize> {
        self.members(ConeClass::NonDifferentiable)
    }
}

/// Classifies a single cone block.
pub fn classify_block(xj: &[f64], eps_extremal: f64, eps_diff: f64) -> ConeClass {
    if norm_inf(xj) < eps_extremal {
        ConeClass::Extremal
    } else if geometry::bar_norm(xj) > eps_diff {
        ConeClass::Differentiable
    } else {
        ConeClass::NonDifferentiable
    }
}

pub fn classify_cones(
    problem: &ConeProblem,
    x: &[f64],
    eps_extremal: f64,
    eps_diff: f64,
) -> ConeClasses {
    let mut xj = Vec::new();
    let classes = problem
        .cones
        .iter()
        .map(|cone| {
            cone.gather_into(x, &mut xj);
            classify_block(&xj, eps_extremal, eps_diff)
        })
        .collect();
    ConeClasses { classes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_cone_problem(c: Vec<f64>) -> ConeProblem {
        let n = c.len();
        ConeProblem::new(
            c,
            vec![Row::le(vec![(0, 1.0)], 1.0)],
            vec![Bound::FREE; n],
            vec![ConeSpec::new((0..n).collect())],
        )
        .unwrap()
    }

    #[test]
    fn rejects_overlapping_and_small_cones() {
        let err = ConeProblem::new(
            vec![0.0; 3],
            vec![],
            vec![Bound::FREE; 3],
            vec![ConeSpec::new(vec![0, 1]), ConeSpec::new(vec![1, 2])],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::OverlappingCones { index: 1 }));
        let err = ConeProblem::new(vec![0.0; 2], vec![], vec![Bound::FREE; 2], vec![ConeSpec::new(vec![0])])
            .unwrap_err();
        assert!(matches!(err, ModelError::ConeTooSmall { .. }));
        let err = ConeProblem::new(vec![0.0; 2], vec![Row::le(vec![(5, 1.0)], 0.0)], vec![Bound::FREE; 2], vec![])
            .unwrap_err();
        assert!(matches!(err, ModelError::IndexOutOfRange { .. }));
    }

    #[test]
    fn zero_point_reports_dual_cone_violation() {
        // c = (1, 3, 0): r(c) = 3 - 1 = 2
        let p = single_cone_problem(vec![1.0, 3.0, 0.0]);
        let e = kkt_error(&p, &[0.0; 3], &[0.0], &[0.0; 3]).unwrap();
        assert_eq!(e, 2.0);
    }

    #[test]
    fn single_violated_row_dominates() {
        // c in the cone interior, x inside cone, complementarity exact by choosing c = 0
        let p = ConeProblem::new(
            vec![0.0, 0.0],
            vec![Row::le(vec![(0, 1.0)], 1.0)],
            vec![Bound::FREE; 2],
            vec![ConeSpec::new(vec![0, 1])],
        )
        .unwrap();
        let e = kkt_error(&p, &[1.5, 0.0], &[0.0], &[0.0; 2]).unwrap();
        assert_eq!(e, 0.5);
    }

    #[test]
    fn kkt_dimension_mismatch() {
        let p = single_cone_problem(vec![1.0, 0.0]);
        assert!(kkt_error(&p, &[0.0], &[0.0], &[0.0; 2]).is_err());
        assert!(kkt_error(&p, &[0.0; 2], &[], &[0.0; 2]).is_err());
    }

    #[test]
    fn offcone_stationarity_counts() {
        let p = ConeProblem::new(vec![2.0], vec![], vec![Bound::new(0.0, 10.0)], vec![]).unwrap();
        assert_eq!(kkt_error(&p, &[0.0], &[], &[0.0]).unwrap(), 2.0);
        // lower bound multiplier 2 (signed -2) restores stationarity
        assert_eq!(kkt_error(&p, &[0.0], &[], &[-2.0]).unwrap(), 0.0);
        // a dual on a missing bound is a violation
        let q = ConeProblem::new(vec![2.0], vec![], vec![Bound::new(0.0, f64::INFINITY)], vec![]).unwrap();
        assert_eq!(kkt_error(&q, &[0.0], &[], &[1.0]).unwrap(), 3.0);
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_block(&[1.0, 0.3, 0.4], EXTREMAL_TOL, DIFFERENTIABLE_TOL), ConeClass::Differentiable);
        assert_eq!(classify_block(&[1e-9, 1e-9], EXTREMAL_TOL, DIFFERENTIABLE_TOL), ConeClass::Extremal);
        assert_eq!(classify_block(&[1.0, 0.0, 0.0], EXTREMAL_TOL, DIFFERENTIABLE_TOL), ConeClass::NonDifferentiable);
    }
}
