//! The outer SQP iteration.
//!
//! Each iteration first tries the fast NLP-SQP step (linearized cones, cuts
//! only on cones whose head hits zero), optionally a second-order correction,
//! and otherwise falls back to the cutting-plane master QP, adding cuts until
//! the merit function accepts the step.

use serde::{Deserialize, Serialize};

use crate::cuts::HyperplaneSet;
use crate::error::SolveError;
use crate::merit::{self, PenaltyState};
use crate::model::{
    classify_cones, kkt_error, ConeClasses, ConeProblem, PrimalDualTriple, SolveReport,
    SolveStatus, DIFFERENTIABLE_TOL, EXTREMAL_TOL,
};
use crate::qp::{self, QpHessian, QpProblem, QpSolution, QpStatus, WarmStart};
use crate::subproblems::{self, ConeQp, SqpHessian, StepResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub max_inner_iters: usize,
    pub enable_soc_step: bool,
    pub c_dec: f64,
    pub c_inc: f64,
    pub c_h: f64,
    pub rho_init: f64,
    pub active_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iters: 200,
            max_inner_iters: 100,
            enable_soc_step: false,
            c_dec: merit::C_DEC,
            c_inc: merit::C_INC,
            c_h: 1e12,
            rho_init: 50.0,
            active_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::InvalidConfig(m.to_string()));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iters == 0 || self.max_inner_iters == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.c_dec > 0.0 && self.c_dec < 1.0) {
            return bad("c_dec must lie in (0, 1)");
        }
        if !(self.c_inc > 1.0) {
            return bad("c_inc must exceed 1");
        }
        if !(self.c_h > 0.0 && self.rho_init > 0.0 && self.active_tol > 0.0) {
            return bad("c_h, rho_init and active_tol must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Fast,
    Correction,
    Master,
}

/// One record per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub step: StepKind,
    pub newton_solves: usize,
    pub inner_iterations: usize,
    pub rho: f64,
    pub phi: f64,
    pub kkt_error: f64,
    pub extremal_cones: usize,
    /// largest violation of the linear rows and bounds at the new iterate
    pub linear_violation: f64,
    /// smallest cone head at the new iterate (`+∞` without cones)
    pub min_head: f64,
    pub min_mu: f64,
}

/// Packages a previous solution for a warm start on a related problem; the
/// cone duals are recomputed from the new objective.
pub fn warm_start_from(report: &SolveReport, problem: &ConeProblem) -> Result<PrimalDualTriple, SolveError> {
    let t = &report.triple;
    let triple = PrimalDualTriple::from_multipliers(problem, t.x.clone(), t.lambda.clone(), t.bound_duals.clone());
    triple.check_dims(problem)?;
    Ok(triple)
}

pub fn solve(
    problem: &ConeProblem,
    start: Option<&PrimalDualTriple>,
    config: &SolverConfig,
) -> Result<SolveReport, SolveError> {
    solve_traced(problem, start, config, &mut |_| {})
}

pub fn solve_traced(
    problem: &ConeProblem,
    start: Option<&PrimalDualTriple>,
    config: &SolverConfig,
    trace: &mut dyn FnMut(&TraceRecord),
) -> Result<SolveReport, SolveError> {
    config.validate()?;
    if let Some(s) = start {
        s.check_dims(problem)?;
    }
    let mut solver = Solver::new(problem, config);
    Ok(solver.run(start, trace))
}

/// Early exit from an iteration.
enum Stop {
    Infeasible,
    Failure,
}

struct Solver<'a> {
    problem: &'a ConeProblem,
    config: &'a SolverConfig,
    x: Vec<f64>,
    lambda: Vec<f64>,
    bound_duals: Vec<f64>,
    mu: Vec<f64>,
    ys: Vec<HyperplaneSet>,
    penalty: PenaltyState,
    ws_newton: Option<WarmStart>,
    ws_master: Option<WarmStart>,
    report: SolveReport,
}

impl<'a> Solver<'a> {
    fn new(problem: &'a ConeProblem, config: &'a SolverConfig) -> Self {
        let n = problem.num_vars();
        let report = SolveReport {
            status: SolveStatus::IterationLimit,
            triple: PrimalDualTriple {
                x: vec![0.0; n],
                lambda: vec![0.0; problem.num_rows()],
                z: vec![0.0; n],
                bound_duals: vec![0.0; n],
            },
            kkt_error: f64::INFINITY,
            total_iters: 0,
            sqp_step_iters: 0,
            qp_newton_solves: 0,
            qp_master_solves: 0,
            qp_soc_solves: 0,
            final_rho: config.rho_init,
            kkt_history: Vec::new(),
            model_decrease_violations: 0,
        };
        Self {
            problem,
            config,
            x: vec![0.0; n],
            lambda: vec![0.0; problem.num_rows()],
            bound_duals: vec![0.0; n],
            mu: vec![1.0; problem.num_cones()],
            ys: Vec::new(),
            penalty: PenaltyState::new(config.rho_init),
            ws_newton: None,
            ws_master: None,
            report,
        }
    }

    fn classify(&self, x: &[f64]) -> ConeClasses {
        classify_cones(self.problem, x, EXTREMAL_TOL, DIFFERENTIABLE_TOL)
    }

    fn finish(&mut self, status: SolveStatus, kkt: f64) -> SolveReport {
        let mut report = self.report.clone();
        report.status = status;
        report.kkt_error = kkt;
        report.final_rho = self.penalty.rho;
        report.triple = PrimalDualTriple::from_multipliers(
            self.problem,
            self.x.clone(),
            self.lambda.clone(),
            self.bound_duals.clone(),
        );
        report
    }

    fn current_error(&self) -> f64 {
        kkt_error(self.problem, &self.x, &self.lambda, &self.bound_duals).unwrap_or(f64::INFINITY)
    }

    fn run(&mut self, start: Option<&PrimalDualTriple>, trace: &mut dyn FnMut(&TraceRecord)) -> SolveReport {
        let problem = self.problem;
        if let Some(s) = start {
            self.x = s.x.clone();
            self.lambda = s.lambda.clone();
            self.bound_duals = s.bound_duals.clone();
        }
        match self.initial_point() {
            Ok(()) => {}
            Err(Stop::Infeasible) => return self.finish(SolveStatus::Infeasible, f64::INFINITY),
            Err(Stop::Failure) => return self.finish(SolveStatus::SubproblemFailure, f64::INFINITY),
        }
        let z0 = problem.implied_cone_dual(&self.lambda, &self.bound_duals);
        self.ys = problem
            .cones()
            .iter()
            .map(|cone| {
                let mut set = HyperplaneSet::initial(cone.dim()).expect("cone dimension checked by the model");
                set.add_dual_point(&cone.gather(&z0));
                set
            })
            .collect();
        if start.is_some() {
            self.mu = problem.cones().iter().map(|c| z0[c.head()].max(0.0)).collect();
        }

        let e0 = self.current_error();
        self.report.kkt_history.push(e0);
        if e0 <= self.config.tol {
            return self.finish(SolveStatus::Optimal, e0);
        }
        let mut last_error = e0;
        for k in 0..self.config.max_iters {
            match self.iterate(k, trace) {
                Ok(e) => last_error = e,
                Err(Stop::Infeasible) => return self.finish(SolveStatus::Infeasible, last_error),
                Err(Stop::Failure) => return self.finish(SolveStatus::SubproblemFailure, last_error),
            }
            if last_error <= self.config.tol {
                return self.finish(SolveStatus::Optimal, last_error);
            }
        }
        self.finish(SolveStatus::IterationLimit, last_error)
    }

    /// Projects the start onto the linear rows, bounds and head
    /// nonnegativity when it violates any of them.
    fn initial_point(&mut self) -> Result<(), Stop> {
        let problem = self.problem;
        let head_ok = problem.cones().iter().all(|c| self.x[c.head()] >= 0.0);
        if problem.linear_violation(&self.x) <= 1e-9 && head_ok {
            return Ok(());
        }
        let n = problem.num_vars();
        let mut lower: Vec<f64> = problem.bounds().iter().map(|b| b.lower).collect();
        let upper: Vec<f64> = problem.bounds().iter().map(|b| b.upper).collect();
        for c in problem.cones() {
            lower[c.head()] = lower[c.head()].max(0.0);
            if lower[c.head()] > upper[c.head()] {
                return Err(Stop::Infeasible);
            }
        }
        let rows = problem
            .rows()
            .iter()
            .enumerate()
            .map(|(i, r)| qp::QpRow { coeffs: r.coeffs.clone(), rhs: r.rhs, sense: r.sense, tag: i as u64 })
            .collect();
        let qp = QpProblem {
            n,
            hessian: QpHessian::identity(),
            g: self.x.iter().map(|v| -v).collect(),
            rows,
            lower,
            upper,
        };
        let sol = qp::solve_qp(&qp, None);
        match sol.status {
            QpStatus::Optimal => {
                self.x = sol.d;
                Ok(())
            }
            QpStatus::Infeasible => Err(Stop::Infeasible),
            QpStatus::Failed => Err(Stop::Failure),
        }
    }

    /// Solves a subproblem and recovers its multipliers. `offset` is added to
    /// the QP solution to form the step from the current iterate.
    fn solve_sub(
        &mut self,
        sub: &ConeQp,
        hess: &SqpHessian,
        warm: Option<WarmStart>,
        offset: Option<&[f64]>,
    ) -> (QpSolution, Option<StepResult>) {
        let sol = qp::solve_qp(&sub.qp, warm.as_ref());
        if sol.status != QpStatus::Optimal {
            return (sol, None);
        }
        let d: Vec<f64> = match offset {
            Some(o) => sol.d.iter().zip(o).map(|(a, b)| a + b).collect(),
            None => sol.d.clone(),
        };
        let hd = hess.mul(&d);
        let step = subproblems::recover_duals(self.problem, sub, &sol, &self.ys, d, &hd);
        (sol, Some(step))
    }

    /// Lemma-style sanity check: once `ρ` exceeds every dual head, the
    /// model change of a subproblem step is non-positive. Cones outside `D`
    /// that sit slightly outside the cone contribute their own bound.
    fn check_model_decrease(&mut self, step: &StepResult, rho: f64, classes: &ConeClasses) {
        let problem = self.problem;
        if rho <= step.max_head(problem) {
            return;
        }
        let model = merit::model_decrease(problem, &self.x, &step.d, rho, classes);
        let mut slack = 1e-9 * (1.0 + problem.objective_value(&step.d).abs() + rho);
        for (j, cone) in problem.cones().iter().enumerate() {
            if !classes.is_differentiable(j) {
                let r = crate::geometry::residual(&cone.gather(&self.x)).max(0.0);
                slack += step.z_hat[cone.head()].abs() * r;
            }
        }
        if model > slack {
            self.report.model_decrease_violations += 1;
        }
    }

    fn accepts(&self, d: &[f64], rho: f64, classes: &ConeClasses) -> bool {
        merit::accept_step(self.problem, &self.x, d, rho, classes, self.config.c_dec)
    }

    /// Fast step with the extremal-set expansion loop. `Ok(None)` means the
    /// Newton QP failed and the master loop has to take over.
    fn fast_step_loop(
        &mut self,
        classes: &ConeClasses,
        hess: &SqpHessian,
    ) -> Result<Option<(StepResult, Vec<bool>)>, Stop> {
        let problem = self.problem;
        let p = problem.num_cones();
        let mut e_hat: Vec<bool> = (0..p).map(|j| classes.is_extremal(j)).collect();
        loop {
            let sub = subproblems::build_newton_qp(problem, &self.x, hess, &self.ys, classes, &e_hat);
            let warm = self.ws_newton.clone();
            let (sol, step) = self.solve_sub(&sub, hess, warm, None);
            self.report.qp_newton_solves += 1;
            match sol.status {
                QpStatus::Infeasible => return Err(Stop::Infeasible),
                QpStatus::Failed => return Ok(None),
                QpStatus::Optimal => {}
            }
            self.ws_newton = Some(sol.working_set.clone());
            let step = step.expect("optimal subproblem has a step");
            let mut grown = false;
            for (j, cone) in problem.cones().iter().enumerate() {
                let h = cone.head();
                if !e_hat[j] && self.x[h] + step.d[h] <= self.config.active_tol {
                    e_hat[j] = true;
                    grown = true;
                }
            }
            if !grown {
                return Ok(Some((step, e_hat)));
            }
        }
    }

    fn try_correction(
        &mut self,
        classes: &ConeClasses,
        hess: &SqpHessian,
        d_s: &[f64],
        e_hat: &[bool],
        rho: f64,
    ) -> Result<Option<StepResult>, Stop> {
        let problem = self.problem;
        let sub = subproblems::build_soc_qp(problem, &self.x, d_s, hess, &self.ys, classes, e_hat);
        let warm = self.ws_newton.clone();
        let (sol, step) = self.solve_sub(&sub, hess, warm, Some(d_s));
        self.report.qp_soc_solves += 1;
        match sol.status {
            QpStatus::Infeasible => return Err(Stop::Infeasible),
            QpStatus::Failed => return Ok(None),
            QpStatus::Optimal => {}
        }
        let step = step.expect("optimal subproblem has a step");
        self.check_model_decrease(&step, rho, classes);
        let guard = problem
            .cones()
            .iter()
            .enumerate()
            .all(|(j, c)| e_hat[j] || self.x[c.head()] + step.d[c.head()] > self.config.active_tol);
        if guard && self.accepts(&step.d, rho, classes) {
            Ok(Some(step))
        } else {
            Ok(None)
        }
    }

    fn add_primal_cuts(&mut self, at: &[f64]) -> bool {
        let mut changed = false;
        for (set, cone) in self.ys.iter_mut().zip(self.problem.cones()) {
            changed |= set.update_primal(&cone.gather(at));
        }
        changed
    }

    fn add_dual_cuts(&mut self, at: &[f64], z: &[f64]) -> bool {
        let mut changed = false;
        for (set, cone) in self.ys.iter_mut().zip(self.problem.cones()) {
            changed |= set.update_dual(&cone.gather(at), &cone.gather(z));
        }
        changed
    }

    fn iterate(&mut self, k: usize, trace: &mut dyn FnMut(&TraceRecord)) -> Result<f64, Stop> {
        let problem = self.problem;
        let classes = self.classify(&self.x);
        let hess = subproblems::build_hessian(problem, &self.mu, &self.x, &classes, self.config.c_h);
        let newton_before = self.report.qp_newton_solves;

        let mut accepted: Option<(StepResult, StepKind, f64)> = None;
        let mut inner = 0;
        if let Some((step, e_hat)) = self.fast_step_loop(&classes, &hess)? {
            let rho = merit::rho_new(self.penalty.rho, step.max_head(problem), self.config.c_inc);
            self.check_model_decrease(&step, rho, &classes);
            if self.accepts(&step.d, rho, &classes) {
                accepted = Some((step, StepKind::Fast, rho));
            } else if self.config.enable_soc_step {
                if let Some(corr) = self.try_correction(&classes, &hess, &step.d, &e_hat, rho)? {
                    accepted = Some((corr, StepKind::Correction, rho));
                }
            }
        }

        let x_curr = self.x.clone();
        let (step, kind, rho) = match accepted {
            Some((step, kind, rho)) => {
                self.add_primal_cuts(&x_curr);
                self.mu = step.mu_hat.clone();
                self.report.sqp_step_iters += 1;
                (step, kind, rho)
            }
            None => {
                let (step, rho, count) = self.master_loop(&classes, &hess)?;
                inner = count;
                let x_next: Vec<f64> = x_curr.iter().zip(&step.d).map(|(a, b)| a + b).collect();
                let next_classes = self.classify(&x_next);
                self.mu = subproblems::update_mu(
                    problem,
                    &step.mu_hat,
                    &step.nu_hat,
                    &x_next,
                    &x_curr,
                    &next_classes,
                    &classes,
                );
                (step, StepKind::Master, rho)
            }
        };
        self.add_dual_cuts(&x_curr, &step.z_check);

        for (xi, di) in self.x.iter_mut().zip(&step.d) {
            *xi += di;
        }
        self.lambda = step.lambda_hat;
        self.bound_duals = step.bound_duals;
        self.penalty.accept(k + 1, rho);
        self.report.total_iters = k + 1;
        let err = self.current_error();
        self.report.kkt_history.push(err);
        trace(&TraceRecord {
            iteration: k,
            step: kind,
            newton_solves: self.report.qp_newton_solves - newton_before,
            inner_iterations: inner,
            rho,
            phi: merit::penalty_value(problem, &self.x, rho),
            kkt_error: err,
            extremal_cones: classes.extremal().len(),
            linear_violation: problem.linear_violation(&self.x),
            min_head: problem.cones().iter().map(|c| self.x[c.head()]).fold(f64::INFINITY, f64::min),
            min_mu: self.mu.iter().copied().fold(f64::INFINITY, f64::min),
        });
        Ok(err)
    }

    /// Cutting-plane loop: solve the master QP, cut off rejected trial points
    /// and add their dual points until the merit function accepts.
    fn master_loop(&mut self, classes: &ConeClasses, hess: &SqpHessian) -> Result<(StepResult, f64, usize), Stop> {
        let problem = self.problem;
        for l in 0..self.config.max_inner_iters {
            let sub = subproblems::build_master_qp(problem, &self.x, hess, &self.ys, classes);
            let warm = self.ws_master.clone().or_else(|| self.ws_newton.clone());
            let (sol, step) = self.solve_sub(&sub, hess, warm, None);
            self.report.qp_master_solves += 1;
            match sol.status {
                QpStatus::Infeasible => return Err(Stop::Infeasible),
                QpStatus::Failed => return Err(Stop::Failure),
                QpStatus::Optimal => {}
            }
            self.ws_master = Some(sol.working_set.clone());
            let step = step.expect("optimal subproblem has a step");
            let rho = merit::rho_new(self.penalty.rho, step.max_head(problem), self.config.c_inc);
            self.check_model_decrease(&step, rho, classes);
            if self.accepts(&step.d, rho, classes) {
                let x_curr = self.x.clone();
                self.add_primal_cuts(&x_curr);
                return Ok((step, rho, l + 1));
            }
            let trial: Vec<f64> = self.x.iter().zip(&step.d).map(|(a, b)| a + b).collect();
            let mut changed = self.add_primal_cuts(&trial);
            changed |= self.add_dual_cuts(&trial, &step.z_check);
            if !changed {
                // the next master QP would be identical
                return Err(Stop::Failure);
            }
        }
        Err(Stop::Failure)
    }
}
