//! Primal active-set iterations.
//!
//! Phase 1 minimizes the sum of infeasibilities by projected steepest descent
//! to the next breakpoint. Phase 2 first completes the working set to a vertex
//! with temporary constraints `d_i = const`, which keeps the reduced Hessian
//! small; temporaries are released like ordinary constraints whenever their
//! multiplier is significant.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::qr::UpdatingQr;
use super::{
    check_farkas, kkt_residual, tag_index, FarkasCertificate, QpProblem, QpSolution, QpStatus,
    WarmStart, KKT_TOL,
};
use crate::model::Sense;

/// Below this relative size a candidate column counts as dependent.
const DEP_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-10;
/// Zero-length steps tolerated before switching to Bland's rule.
const DEGENERATE_LIMIT: usize = 50;
pub(super) const UNBOUNDED: &str = "QP is unbounded";

#[derive(Debug, Clone, Copy, Default)]
pub struct EngineOptions {
    /// smallest-index drop rule from the start
    pub bland: bool,
    /// complete vertices with temporaries in reverse variable order
    pub reverse_order: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Row(usize),
    Lower(usize),
    Upper(usize),
    Fix(usize),
    Temp(usize),
}

#[derive(Debug, Clone)]
struct Con {
    kind: Kind,
    rhs: f64,
    eq: bool,
    norm: f64,
}

struct Engine<'a> {
    qp: &'a QpProblem,
    cons: Vec<Con>,
    qr: UpdatingQr,
    work: Vec<usize>,
    in_w: Vec<bool>,
    temp_of: Vec<Option<usize>>,
    d: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
    bland: bool,
    degenerate: usize,
    /// multipliers of the working set from the last stationarity test
    lambda: Vec<f64>,
}

enum Phase1 {
    Feasible,
    Infeasible(FarkasCertificate),
    Failed(String),
}

pub(super) fn solve(qp: &QpProblem, warm: Option<&WarmStart>, opts: &EngineOptions) -> QpSolution {
    let mut eng = Engine::new(qp, opts);
    eng.initial_working_set(warm);
    match eng.phase1() {
        Phase1::Feasible => {}
        Phase1::Infeasible(cert) => {
            let mut s = QpSolution::failed(qp.n, qp.rows.len(), "");
            s.d = eng.d.clone();
            s.status = QpStatus::Infeasible;
            s.message = None;
            s.farkas = Some(cert);
            s.iterations = eng.iterations;
            return s;
        }
        Phase1::Failed(msg) => {
            let mut s = QpSolution::failed(qp.n, qp.rows.len(), msg);
            s.iterations = eng.iterations;
            return s;
        }
    }
    eng.complete_vertex(opts.reverse_order);
    if let Err(msg) = eng.phase2() {
        let mut s = QpSolution::failed(qp.n, qp.rows.len(), msg);
        s.iterations = eng.iterations;
        return s;
    }
    eng.finish()
}

#[inline]
fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

impl<'a> Engine<'a> {
    fn new(qp: &'a QpProblem, opts: &EngineOptions) -> Self {
        let n = qp.n;
        let mut cons = Vec::with_capacity(qp.rows.len() + n);
        for (r, row) in qp.rows.iter().enumerate() {
            let norm = row.coeffs.iter().map(|(_, a)| a * a).sum::<f64>().sqrt();
            cons.push(Con { kind: Kind::Row(r), rhs: row.rhs, eq: row.sense == Sense::Eq, norm });
        }
        for i in 0..n {
            let (l, u) = (qp.lower[i], qp.upper[i]);
            if l == u {
                cons.push(Con { kind: Kind::Fix(i), rhs: l, eq: true, norm: 1.0 });
                continue;
            }
            if l.is_finite() {
                cons.push(Con { kind: Kind::Lower(i), rhs: -l, eq: false, norm: 1.0 });
            }
            if u.is_finite() {
                cons.push(Con { kind: Kind::Upper(i), rhs: u, eq: false, norm: 1.0 });
            }
        }
        let ncons = cons.len();
        let d = (0..n).map(|i| 0.0_f64.clamp(qp.lower[i], qp.upper[i])).collect();
        Self {
            qp,
            in_w: vec![false; ncons],
            cons,
            qr: UpdatingQr::new(n),
            work: Vec::new(),
            temp_of: vec![None; n],
            d,
            iterations: 0,
            max_iterations: 50 * (n + ncons) + 500,
            bland: opts.bland,
            degenerate: 0,
            lambda: Vec::new(),
        }
    }

    fn sparse(&self, c: usize) -> Vec<(usize, f64)> {
        match self.cons[c].kind {
            Kind::Row(r) => self.qp.rows[r].coeffs.clone(),
            Kind::Lower(i) => vec![(i, -1.0)],
            Kind::Upper(i) | Kind::Fix(i) | Kind::Temp(i) => vec![(i, 1.0)],
        }
    }

    #[inline]
    fn dot(&self, c: usize, v: &[f64]) -> f64 {
        match self.cons[c].kind {
            Kind::Row(r) => self.qp.rows[r].dot(v),
            Kind::Lower(i) => -v[i],
            Kind::Upper(i) | Kind::Fix(i) | Kind::Temp(i) => v[i],
        }
    }

    #[inline]
    fn activity(&self, c: usize) -> f64 {
        self.dot(c, &self.d) - self.cons[c].rhs
    }

    fn add_normal(&self, c: usize, w: f64, out: &mut [f64]) {
        match self.cons[c].kind {
            Kind::Row(r) => {
                for &(i, a) in &self.qp.rows[r].coeffs {
                    out[i] += w * a;
                }
            }
            Kind::Lower(i) => out[i] -= w,
            Kind::Upper(i) | Kind::Fix(i) | Kind::Temp(i) => out[i] += w,
        }
    }

    fn add_to_work(&mut self, c: usize) -> bool {
        if self.in_w[c] {
            return true;
        }
        let a = self.sparse(c);
        if self.qr.try_add(&a, DEP_TOL) {
            self.work.push(c);
            self.in_w[c] = true;
            true
        } else {
            false
        }
    }

    fn remove_from_work(&mut self, pos: usize) {
        let c = self.work.remove(pos);
        self.in_w[c] = false;
        self.qr.remove(pos);
    }

    /// Moves `d` onto the affine set of the working constraints with the
    /// smallest correction.
    fn project_onto_work(&mut self) {
        if self.work.is_empty() {
            return;
        }
        let resid: Vec<f64> = self.work.iter().map(|&c| self.activity(c)).collect();
        if inf_norm(&resid) == 0.0 {
            return;
        }
        let y = self.qr.solve_rt(&resid);
        let corr = self.qr.qy(&y);
        for (di, ci) in self.d.iter_mut().zip(corr) {
            *di -= ci;
        }
    }

    fn initial_working_set(&mut self, warm: Option<&WarmStart>) {
        for c in 0..self.cons.len() {
            if self.cons[c].eq {
                self.add_to_work(c);
            }
        }
        if let Some(ws) = warm {
            let tags = tag_index(self.qp);
            for t in &ws.row_tags {
                if let Some(&r) = tags.get(t) {
                    self.add_to_work(r);
                }
            }
            let nrows = self.qp.rows.len();
            for c in nrows..self.cons.len() {
                let wanted = match self.cons[c].kind {
                    Kind::Lower(i) => ws.lower.contains(&i),
                    Kind::Upper(i) => ws.upper.contains(&i),
                    _ => false,
                };
                if wanted {
                    self.add_to_work(c);
                }
            }
        }
        self.project_onto_work();
    }

    /// `λ_W = −R⁻¹ Q_Yᵀ v`.
    fn multipliers(&self, v: &[f64]) -> Vec<f64> {
        let t = self.qr.qyt(v);
        self.qr.solve_r(&t).into_iter().map(|x| -x).collect()
    }

    /// Position in the working set of the constraint to release, if any.
    fn drop_candidate(&self, lam: &[f64], tol: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &c) in self.work.iter().enumerate() {
            let con = &self.cons[c];
            let score = match con.kind {
                Kind::Temp(_) => {
                    if lam[pos].abs() > tol {
                        -lam[pos].abs()
                    } else {
                        continue;
                    }
                }
                _ if con.eq => continue,
                _ => {
                    if lam[pos] < -tol {
                        lam[pos]
                    } else {
                        continue;
                    }
                }
            };
            let better = match best {
                None => true,
                Some((bpos, bscore)) => {
                    if self.bland {
                        c < self.work[bpos]
                    } else {
                        score < bscore
                    }
                }
            };
            if better {
                best = Some((pos, score));
            }
        }
        best.map(|(pos, _)| pos)
    }

    fn note_step(&mut self, alpha: f64) {
        if alpha <= 1e-14 {
            self.degenerate += 1;
            if self.degenerate > DEGENERATE_LIMIT {
                self.bland = true;
            }
        } else {
            self.degenerate = 0;
        }
    }

    fn phase1(&mut self) -> Phase1 {
        let n = self.qp.n;
        loop {
            if self.iterations > self.max_iterations {
                return Phase1::Failed("iteration limit in phase 1".into());
            }
            let mut viol: Vec<(usize, f64)> = Vec::new();
            let mut g1 = vec![0.0; n];
            for c in 0..self.cons.len() {
                if self.in_w[c] {
                    continue;
                }
                let r = self.activity(c);
                let s = if r > FEAS_TOL {
                    1.0
                } else if self.cons[c].eq && r < -FEAS_TOL {
                    -1.0
                } else {
                    continue;
                };
                viol.push((c, s));
                self.add_normal(c, s, &mut g1);
            }
            if viol.is_empty() {
                return Phase1::Feasible;
            }
            self.iterations += 1;
            let gmax = inf_norm(&g1).max(1.0);
            let zg = self.qr.zt(&g1);
            if inf_norm(&zg) > 1e-12 * gmax {
                let p: Vec<f64> = self.qr.z(&zg).into_iter().map(|v| -v).collect();
                let pmax = inf_norm(&p);
                let mut best: Option<(usize, f64)> = None;
                for c in 0..self.cons.len() {
                    if self.in_w[c] || matches!(self.cons[c].kind, Kind::Temp(_)) {
                        continue;
                    }
                    let ap = self.dot(c, &p);
                    let eps = 1e-11 * pmax * self.cons[c].norm;
                    let r = self.activity(c);
                    let alpha = if r > FEAS_TOL {
                        if ap < -eps {
                            r / -ap
                        } else {
                            continue;
                        }
                    } else if self.cons[c].eq && r < -FEAS_TOL {
                        if ap > eps {
                            -r / ap
                        } else {
                            continue;
                        }
                    } else if self.cons[c].eq {
                        if ap.abs() > eps {
                            0.0
                        } else {
                            continue;
                        }
                    } else if ap > eps {
                        (-r).max(0.0) / ap
                    } else {
                        continue;
                    };
                    if best.is_none_or(|(_, a)| alpha < a) {
                        best = Some((c, alpha));
                    }
                }
                let Some((c, alpha)) = best else {
                    return Phase1::Failed("phase 1 found no breakpoint".into());
                };
                for (di, pi) in self.d.iter_mut().zip(&p) {
                    *di += alpha * pi;
                }
                self.note_step(alpha);
                if !self.add_to_work(c) {
                    return Phase1::Failed("dependent blocking constraint in phase 1".into());
                }
                continue;
            }
            let lam = self.multipliers(&g1);
            let tol = 1e-11 * gmax;
            if let Some(pos) = self.drop_candidate(&lam, tol) {
                self.remove_from_work(pos);
                continue;
            }
            return match self.farkas(&viol, &lam) {
                Ok(cert) => Phase1::Infeasible(cert),
                Err(msg) => Phase1::Failed(msg),
            };
        }
    }

    fn farkas(&self, viol: &[(usize, f64)], lam: &[f64]) -> Result<FarkasCertificate, String> {
        let mut rows = vec![0.0; self.qp.rows.len()];
        let mut bounds = vec![0.0; self.qp.n];
        let mut put = |kind: Kind, w: f64, eq: bool| {
            let w = if eq { w } else { w.max(0.0) };
            match kind {
                Kind::Row(r) => rows[r] += w,
                Kind::Lower(i) => bounds[i] -= w,
                Kind::Upper(i) | Kind::Fix(i) => bounds[i] += w,
                Kind::Temp(_) => {}
            }
        };
        for &(c, s) in viol {
            put(self.cons[c].kind, s, self.cons[c].eq);
        }
        for (pos, &c) in self.work.iter().enumerate() {
            put(self.cons[c].kind, lam[pos], self.cons[c].eq);
        }
        let scale = inf_norm(&rows).max(inf_norm(&bounds));
        if scale == 0.0 {
            return Err("empty infeasibility certificate".into());
        }
        rows.iter_mut().chain(bounds.iter_mut()).for_each(|v| *v /= scale);
        let cert = FarkasCertificate { rows, bounds };
        check_farkas(self.qp, &cert).map_err(|e| format!("unverified certificate: {e}"))?;
        Ok(cert)
    }

    fn complete_vertex(&mut self, reverse: bool) {
        let n = self.qp.n;
        for t in 0..n {
            if self.qr.nullity() == 0 {
                break;
            }
            let i = if reverse { n - 1 - t } else { t };
            let c = match self.temp_of[i] {
                Some(c) => c,
                None => {
                    self.cons.push(Con { kind: Kind::Temp(i), rhs: 0.0, eq: true, norm: 1.0 });
                    self.in_w.push(false);
                    let c = self.cons.len() - 1;
                    self.temp_of[i] = Some(c);
                    c
                }
            };
            self.cons[c].rhs = self.d[i];
            self.add_to_work(c);
        }
    }

    fn gradient(&self) -> Vec<f64> {
        let mut gr = self.qp.g.clone();
        self.qp.hessian.mul_add(&self.d, &mut gr);
        gr
    }

    fn reduced_hessian(&self) -> DMatrix<f64> {
        let nz = self.qr.nullity();
        let mut m = DMatrix::<f64>::zeros(nz, nz);
        for b in &self.qp.hessian.blocks {
            let bm = b.indices.len();
            let zb = DMatrix::from_fn(bm, nz, |r, c| self.qr.z_row(b.indices[r])[c]);
            if zb.iter().all(|v| *v == 0.0) {
                continue;
            }
            let hb = DMatrix::from_row_slice(bm, bm, &b.values);
            m += zb.transpose() * (hb * &zb);
        }
        for i in 0..nz {
            m[(i, i)] += self.qp.hessian.diagonal_shift;
        }
        let mt = m.transpose();
        (m + mt) * 0.5
    }

    /// Null-space direction: Newton step when the reduced Hessian is
    /// positive definite or the gradient lies in its range, otherwise a
    /// descent direction of zero curvature. The flag marks Newton steps.
    fn null_space_direction(&self, gr: &[f64]) -> (Vec<f64>, bool) {
        let zg = self.qr.zt(gr);
        let nz = zg.len();
        let m = self.reduced_hessian();
        let mmax = m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if mmax == 0.0 {
            return (zg.iter().map(|v| -v).collect(), false);
        }
        if let Some(l) = cholesky(&m, 1e-10 * mmax.max(1e-300)) {
            let pz = chol_solve(&l, &zg, nz);
            return (pz.into_iter().map(|v| -v).collect(), true);
        }
        let eig = SymmetricEigen::new(m);
        let emax = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let tol = 1e-10 * emax;
        let zgv = DVector::from_column_slice(&zg);
        let mut flat = DVector::zeros(nz);
        let mut newton = DVector::zeros(nz);
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(i);
            let proj = v.dot(&zgv);
            if ev <= tol {
                flat += v * proj;
            } else {
                newton += v * (proj / ev);
            }
        }
        if flat.amax() > 1e-12 * zgv.amax().max(1.0) {
            (flat.iter().map(|v| -v).collect(), false)
        } else {
            (newton.iter().map(|v| -v).collect(), true)
        }
    }

    fn phase2(&mut self) -> Result<(), String> {
        let mut dependent_failures = 0;
        let mut skip = vec![false; self.cons.len()];
        // set after an unblocked Newton step: the point is stationary on W
        let mut stationary = false;
        loop {
            if self.iterations > self.max_iterations {
                return Err("iteration limit in phase 2".into());
            }
            self.iterations += 1;
            let gr = self.gradient();
            let (p, newton) = if self.qr.nullity() == 0 || stationary {
                (vec![0.0; self.qp.n], true)
            } else {
                let (pz, newton) = self.null_space_direction(&gr);
                (self.qr.z(&pz), newton)
            };
            let pmax = inf_norm(&p);
            if pmax <= 1e-13 * (1.0 + inf_norm(&self.d)) {
                let lam = self.multipliers(&gr);
                let tol = (1e-12 * inf_norm(&gr).max(1.0)).min(5e-10);
                match self.drop_candidate(&lam, tol) {
                    Some(pos) => {
                        self.remove_from_work(pos);
                        skip.iter_mut().for_each(|s| *s = false);
                        stationary = false;
                        continue;
                    }
                    None => {
                        self.lambda = lam;
                        return Ok(());
                    }
                }
            }
            let mut best: Option<usize> = None;
            let mut alpha = if newton { 1.0 } else { f64::INFINITY };
            for c in 0..self.cons.len() {
                if self.in_w[c] || skip[c] || matches!(self.cons[c].kind, Kind::Temp(_)) {
                    continue;
                }
                let ap = self.dot(c, &p);
                let eps = 1e-11 * pmax * self.cons[c].norm;
                let r = self.activity(c);
                let a = if self.cons[c].eq {
                    if ap.abs() > eps {
                        (-r / ap).max(0.0)
                    } else {
                        continue;
                    }
                } else if ap > eps {
                    (-r).max(0.0) / ap
                } else {
                    continue;
                };
                if a < alpha {
                    alpha = a;
                    best = Some(c);
                }
            }
            if !alpha.is_finite() {
                return Err(format!("{UNBOUNDED} along a zero-curvature direction"));
            }
            if let Some(c) = best {
                if !self.add_to_work(c) {
                    // `a_c` lies in the span of W, so `a_cᵀp` is rounding
                    // noise: ignore c until the working set changes
                    dependent_failures += 1;
                    if dependent_failures > self.cons.len() {
                        return Err("blocking constraint numerically dependent".into());
                    }
                    skip[c] = true;
                    continue;
                }
                skip.iter_mut().for_each(|s| *s = false);
            }
            for (di, pi) in self.d.iter_mut().zip(&p) {
                *di += alpha * pi;
            }
            self.note_step(alpha);
            stationary = newton && best.is_none();
        }
    }

    /// Scatters working-set multipliers into row and bound duals.
    fn duals(&self, lam: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut rows = vec![0.0; self.qp.rows.len()];
        let mut bounds = vec![0.0; self.qp.n];
        for (pos, &c) in self.work.iter().enumerate() {
            let l = lam[pos];
            match self.cons[c].kind {
                Kind::Row(r) => {
                    rows[r] = if self.cons[c].eq { l } else { l.max(0.0) };
                }
                Kind::Lower(i) => bounds[i] -= l.max(0.0),
                Kind::Upper(i) => bounds[i] += l.max(0.0),
                Kind::Fix(i) => bounds[i] += l,
                Kind::Temp(_) => {}
            }
        }
        (rows, bounds)
    }

    /// Rebuilds the factorization from scratch and re-solves the equality
    /// problem on the final working set.
    fn refine(&mut self) {
        let work = std::mem::take(&mut self.work);
        for &c in &work {
            self.in_w[c] = false;
        }
        self.qr = UpdatingQr::new(self.qp.n);
        for c in work {
            self.add_to_work(c);
        }
        self.project_onto_work();
        if self.qr.nullity() > 0 {
            let gr = self.gradient();
            let (pz, newton) = self.null_space_direction(&gr);
            if newton {
                let p = self.qr.z(&pz);
                for (di, pi) in self.d.iter_mut().zip(&p) {
                    *di += pi;
                }
            }
        }
        let gr = self.gradient();
        self.lambda = self.multipliers(&gr);
    }

    fn finish(mut self) -> QpSolution {
        let (mut rows, mut bounds) = self.duals(&self.lambda);
        let mut resid = kkt_residual(self.qp, &self.d, &rows, &bounds);
        if resid > KKT_TOL {
            let saved = (self.d.clone(), rows.clone(), bounds.clone());
            self.refine();
            let (r2, b2) = self.duals(&self.lambda);
            let resid2 = kkt_residual(self.qp, &self.d, &r2, &b2);
            if resid2 < resid {
                rows = r2;
                bounds = b2;
                resid = resid2;
            } else {
                self.d = saved.0;
                rows = saved.1;
                bounds = saved.2;
            }
        }
        let mut ws = WarmStart::default();
        for &c in &self.work {
            match self.cons[c].kind {
                Kind::Row(r) if !self.cons[c].eq => ws.row_tags.push(self.qp.rows[r].tag),
                Kind::Lower(i) => ws.lower.push(i),
                Kind::Upper(i) => ws.upper.push(i),
                _ => {}
            }
        }
        let ok = resid <= KKT_TOL;
        QpSolution {
            d: self.d,
            row_duals: rows,
            bound_duals: bounds,
            status: if ok { QpStatus::Optimal } else { QpStatus::Failed },
            kkt_residual: resid,
            farkas: None,
            iterations: self.iterations,
            regularization: 0.0,
            working_set: ws,
            message: if ok { None } else { Some(format!("KKT residual {resid:e} above tolerance")) },
        }
    }
}

/// Lower Cholesky factor with a pivot threshold; `None` when not safely PD.
fn cholesky(m: &DMatrix<f64>, pivot_tol: f64) -> Option<Vec<f64>> {
    let n = m.nrows();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut s = m[(j, j)];
        for k in 0..j {
            s -= l[j * n + k] * l[j * n + k];
        }
        if s <= pivot_tol {
            return None;
        }
        let ljj = s.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Some(l)
}

fn chol_solve(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (y[i] - s) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * y[k]).sum();
        y[i] = (y[i] - s) / l[i * n + i];
    }
    y
}
