//! Random SOCP instances with a planted nondegenerate primal-dual solution.
//!
//! Instances have the form
//!
//! ```text
//!     minimize cᵀx  s.t.  Ax = b,  x_j ∈ K_j,  x_{j0} ≤ 1000,  0 ≤ x_off ≤ 1000
//! ```
//!
//! where the cones are split into extremal-active (`x*_j = 0`), inactive
//! (`z*_j = 0`) and boundary cones (both on the boundary). Every variable
//! outside the cones is fixed at its lower bound at the solution.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GenError;
use crate::geometry::{bar_norm, grad_residual, residual};
use crate::model::{Bound, ConeProblem, ConeSpec, PrimalDualTriple, Row};

/// Upper bound placed on cone heads and off-cone variables.
pub const BIG_BOUND: f64 = 1000.0;
pub const MAX_ATTEMPTS: usize = 20;
/// Required margin `r(x*_j + z*_j) ≤ −COMPLEMENTARITY_MARGIN`.
pub const COMPLEMENTARITY_MARGIN: f64 = 1e-3;
/// Required `σ_min/σ_max` of the active-constraint Jacobian.
pub const JACOBIAN_CONDITION: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub n: usize,
    pub m: usize,
    pub k0: usize,
    pub ki: usize,
    pub kb: usize,
    pub density: f64,
    pub seed: u64,
}

impl GenParams {
    /// A size class with the same number of cones of each activity type.
    pub fn uniform(n: usize, m: usize, k: usize, seed: u64) -> Self {
        Self { n, m, k0: k, ki: k, kb: k, density: 0.5, seed }
    }

    pub fn p(&self) -> usize {
        self.k0 + self.ki + self.kb
    }

    /// Total dimension of the extremal-active cones.
    fn extremal_dims(&self) -> usize {
        (self.m + self.kb) / 2
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidParams(m));
        let p = self.p();
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density {} outside (0, 1]", self.density));
        }
        if self.n <= 2 * p {
            return bad(format!("n = {} must exceed 2p = {}", self.n, 2 * p));
        }
        if self.n <= self.m + self.kb + self.extremal_dims() {
            return bad(format!(
                "n = {} must exceed m + K_B + floor((m + K_B)/2) = {}",
                self.n,
                self.m + self.kb + self.extremal_dims()
            ));
        }
        if self.extremal_dims() < 2 * self.k0 {
            return bad("extremal cones cannot all have dimension at least 2".into());
        }
        if self.m + self.kb < 2 * (self.ki + self.kb) {
            return bad("inactive and boundary cones cannot all have dimension at least 2".into());
        }
        if self.ki + self.kb == 0 && self.m + self.kb > 0 {
            return bad("no non-extremal cone to hold m + K_B dimensions".into());
        }
        if self.k0 == 0 && self.extremal_dims() > 0 {
            return bad("no extremal cone to hold floor((m + K_B)/2) dimensions".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Extremal,
    Interior,
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedInstance {
    pub params: GenParams,
    pub problem: ConeProblem,
    pub planted: PrimalDualTriple,
    pub activity: Vec<Activity>,
    pub attempts: usize,
}

/// Uniform sample on the open interval `(a, b)`.
fn open(rng: &mut ChaCha8Rng, a: f64, b: f64) -> f64 {
    loop {
        let v = rng.gen_range(a..b);
        if v > a {
            return v;
        }
    }
}

/// Random composition of `total` into `parts` integers, each at least 2.
fn compose(rng: &mut ChaCha8Rng, total: usize, parts: usize) -> Vec<usize> {
    if parts == 0 {
        return Vec::new();
    }
    let spare = total - 2 * parts;
    let slots = spare + parts - 1;
    let mut bars: Vec<usize> = sample(rng, slots, parts - 1).into_vec();
    bars.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0usize;
    for (k, &b) in bars.iter().enumerate() {
        // stars before bar k
        out.push(b - prev + 2 - if k == 0 { 0 } else { 1 });
        prev = b;
    }
    let last = if parts == 1 { spare } else { slots - prev - 1 };
    out.push(last + 2);
    debug_assert_eq!(out.iter().sum::<usize>(), total);
    out
}

/// `(sign-preserving) v·scale/‖v̄‖` style helper: scales the sampled barred
/// part to the requested norm.
fn barred_with_norm(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| open(rng, -10.0, 10.0)).collect();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nv > 0.0 {
            return v.iter().map(|a| a * norm / nv).collect();
        }
    }
}

pub fn generate(params: &GenParams) -> Result<GeneratedInstance, GenError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for attempt in 1..=MAX_ATTEMPTS {
        let inst = attempt_once(params, &mut rng, attempt);
        if nondegeneracy_screen(&inst) {
            return Ok(inst);
        }
    }
    Err(GenError::ResampleLimit(MAX_ATTEMPTS))
}

fn attempt_once(params: &GenParams, rng: &mut ChaCha8Rng, attempt: usize) -> GeneratedInstance {
    let (n, m) = (params.n, params.m);
    let mut dims = compose(rng, params.extremal_dims(), params.k0);
    dims.extend(compose(rng, m + params.kb, params.ki + params.kb));
    let mut activity = vec![Activity::Extremal; params.k0];
    activity.extend(std::iter::repeat_n(Activity::Interior, params.ki));
    activity.extend(std::iter::repeat_n(Activity::Boundary, params.kb));

    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut cones = Vec::with_capacity(dims.len());
    for (&nj, &act) in dims.iter().zip(&activity) {
        let start = x.len();
        cones.push(ConeSpec::new((start..start + nj).collect()));
        match act {
            Activity::Extremal => {
                let z0 = open(rng, 1.0, 5.0);
                let eps = open(rng, 0.0, 1.0);
                let zb = barred_with_norm(rng, nj - 1, z0 / (2.0 + eps));
                x.extend(std::iter::repeat_n(0.0, nj));
                z.push(z0);
                z.extend(zb);
            }
            Activity::Interior => {
                let x0 = open(rng, 1.0, 5.0);
                let eps = open(rng, 0.0, 1.0);
                let xb = barred_with_norm(rng, nj - 1, x0 / (2.0 + eps));
                x.push(x0);
                x.extend(xb);
                z.extend(std::iter::repeat_n(0.0, nj));
            }
            Activity::Boundary => {
                let x0 = open(rng, 1.0, 5.0);
                let xb = barred_with_norm(rng, nj - 1, x0);
                let beta = open(rng, 1.0, 5.0);
                z.push(beta * x0);
                z.extend(xb.iter().map(|v| -beta * v));
                x.push(x0);
                x.extend(xb);
            }
        }
    }
    let n_cone = x.len();
    let n_fix = n - n_cone;
    for _ in 0..n_fix {
        x.push(0.0);
        z.push(open(rng, 1.0, 5.0));
    }

    let a = sample_rows(rng, n, m, params.density);
    let lambda: Vec<f64> = (0..m).map(|_| open(rng, 1.0, 10.0)).collect();
    let mut c = z.clone();
    let mut rows = Vec::with_capacity(m);
    for (i, row) in a.iter().enumerate() {
        let rhs: f64 = row.iter().map(|&(k, v)| v * x[k]).sum();
        for &(k, v) in row {
            c[k] -= v * lambda[i];
        }
        rows.push(Row::eq(row.clone(), rhs));
    }
    let mut bounds = vec![Bound::FREE; n];
    for cone in &cones {
        bounds[cone.head()] = Bound::new(f64::NEG_INFINITY, BIG_BOUND);
    }
    for b in bounds.iter_mut().skip(n_cone) {
        *b = Bound::new(0.0, BIG_BOUND);
    }
    let mut bound_duals = vec![0.0; n];
    for i in n_cone..n {
        bound_duals[i] = -z[i];
    }
    let problem = ConeProblem::new(c, rows, bounds, cones).expect("generator builds a valid problem");
    let mut cone_z = z;
    for v in cone_z.iter_mut().skip(n_cone) {
        *v = 0.0;
    }
    let planted = PrimalDualTriple { x, lambda, z: cone_z, bound_duals };
    GeneratedInstance { params: *params, problem, planted, activity, attempts: attempt }
}

/// Rows with i.i.d. entries: nonzero with probability `density`, uniform on
/// (−5, 5). A row is redrawn while it is (numerically) in the span of the
/// previous ones.
fn sample_rows(rng: &mut ChaCha8Rng, n: usize, m: usize, density: f64) -> Vec<Vec<(usize, f64)>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rows = Vec::with_capacity(m);
    while rows.len() < m {
        let mut dense = vec![0.0; n];
        let mut sparse = Vec::new();
        for (k, slot) in dense.iter_mut().enumerate() {
            if rng.gen::<f64>() < density {
                let v = open(rng, -5.0, 5.0);
                *slot = v;
                sparse.push((k, v));
            }
        }
        let mut r = dense;
        for q in &basis {
            let t: f64 = q.iter().zip(&r).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= t * qi);
        }
        let nr = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nr < 1e-8 {
            continue;
        }
        basis.push(r.into_iter().map(|v| v / nr).collect());
        rows.push(sparse);
    }
    rows
}

/// Active-constraint Jacobian at the planted solution: the rows of `A`,
/// `∇r_j` for boundary cones and unit rows for extremal-cone variables and
/// fixed off-cone variables.
pub fn active_jacobian(inst: &GeneratedInstance) -> DMatrix<f64> {
    let p = &inst.problem;
    let n = p.num_vars();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for r in p.rows() {
        let mut v = vec![0.0; n];
        for &(k, a) in &r.coeffs {
            v[k] += a;
        }
        rows.push(v);
    }
    for (cone, act) in p.cones().iter().zip(&inst.activity) {
        match act {
            Activity::Boundary => {
                let xj = cone.gather(&inst.planted.x);
                if let Ok(g) = grad_residual(&xj) {
                    let mut v = vec![0.0; n];
                    for (&k, gk) in cone.indices.iter().zip(g) {
                        v[k] = gk;
                    }
                    rows.push(v);
                }
            }
            Activity::Extremal => {
                for &k in &cone.indices {
                    let mut v = vec![0.0; n];
                    v[k] = 1.0;
                    rows.push(v);
                }
            }
            Activity::Interior => {}
        }
    }
    for k in 0..n {
        if p.cone_of(k).is_none() && inst.planted.x[k] == 0.0 {
            let mut v = vec![0.0; n];
            v[k] = 1.0;
            rows.push(v);
        }
    }
    DMatrix::from_fn(rows.len(), n, |i, k| rows[i][k])
}

/// Strict complementarity margin on every cone plus a well-conditioned,
/// square active Jacobian.
pub fn nondegeneracy_screen(inst: &GeneratedInstance) -> bool {
    let p = &inst.problem;
    let t = &inst.planted;
    for cone in p.cones() {
        let s: Vec<f64> = cone.indices.iter().map(|&k| t.x[k] + t.z[k]).collect();
        if residual(&s) > -COMPLEMENTARITY_MARGIN {
            return false;
        }
    }
    let jac = active_jacobian(inst);
    if jac.nrows() != jac.ncols() {
        return false;
    }
    let sv = jac.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    smax > 0.0 && smin / smax >= JACOBIAN_CONDITION
}

/// Checks the planted activity labels against the planted triple.
pub fn check_activity(inst: &GeneratedInstance) -> bool {
    let p = &inst.problem;
    let t = &inst.planted;
    p.cones().iter().zip(&inst.activity).all(|(cone, act)| {
        let xj = cone.gather(&t.x);
        let zj = cone.gather(&t.z);
        let zero = |v: &[f64]| v.iter().all(|a| *a == 0.0);
        match act {
            Activity::Extremal => zero(&xj) && residual(&zj) < 0.0,
            Activity::Interior => zero(&zj) && residual(&xj) < 0.0,
            Activity::Boundary => {
                let tol = 1e-12 * (1.0 + xj[0].abs() + zj[0].abs());
                residual(&xj).abs() <= tol
                    && residual(&zj).abs() <= tol
                    && bar_norm(&xj) > 0.0
                    && bar_norm(&zj) > 0.0
            }
        }
    })
}
