//! Reader for the subset of the Conic Benchmark Format used by SOCP
//! instances, and the mapping onto [`ConeProblem`].
//!
//! Supported keywords: `VER`, `OBJSENSE`, `VAR`, `INT`, `CON`, `OBJACOORD`,
//! `OBJBCOORD`, `ACOORD`, `BCOORD`. Semidefinite content is rejected.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ModelError;
use crate::model::{Bound, ConeProblem, ConeSpec, Row};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CbfError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unsupported feature `{keyword}`")]
    Unsupported { line: usize, keyword: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    /// `F`
    Free,
    /// `L+`
    NonNeg,
    /// `L-`
    NonPos,
    /// `L=`
    Zero,
    /// `Q`
    Quad,
    /// `QR`
    RotQuad,
}

impl Domain {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "F" => Domain::Free,
            "L+" => Domain::NonNeg,
            "L-" => Domain::NonPos,
            "L=" => Domain::Zero,
            "Q" => Domain::Quad,
            "QR" => Domain::RotQuad,
            _ => return None,
        })
    }

    fn min_size(self) -> usize {
        match self {
            Domain::Quad => 2,
            Domain::RotQuad => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjSense {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbfModel {
    pub version: u32,
    pub sense: ObjSense,
    pub num_vars: usize,
    pub var_groups: Vec<(Domain, usize)>,
    pub num_cons: usize,
    pub con_groups: Vec<(Domain, usize)>,
    pub integers: Vec<usize>,
    pub obj_coords: Vec<(usize, f64)>,
    pub obj_offset: f64,
    pub a_coords: Vec<(usize, usize, f64)>,
    pub b_coords: Vec<(usize, f64)>,
}

const PSD_KEYWORDS: [&str; 7] = ["PSDVAR", "PSDCON", "FCOORD", "HCOORD", "DCOORD", "POWCONES", "POW*CONES"];

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines().enumerate().peekable(), last: 0 }
    }

    /// Next non-blank, non-comment line with its 1-based number.
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            self.last = i + 1;
            return Some((i + 1, t));
        }
        None
    }

    fn err(&self, message: impl Into<String>) -> CbfError {
        CbfError::Syntax { line: self.last, message: message.into() }
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), CbfError> {
        let last = self.last;
        self.next_line()
            .ok_or_else(|| CbfError::Syntax { line: last, message: format!("unexpected end of file, expected {what}") })
    }

    fn fields<const N: usize>(&mut self, what: &str) -> Result<[&'a str; N], CbfError> {
        let (_, l) = self.expect(what)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        parts.try_into().map_err(|p: Vec<&str>| self.err(format!("expected {N} fields for {what}, found {}", p.len())))
    }
}

fn num<T: std::str::FromStr>(lines: &Lines, s: &str, what: &str) -> Result<T, CbfError> {
    s.parse().map_err(|_| lines.err(format!("invalid {what} `{s}`")))
}

fn real(lines: &Lines, s: &str) -> Result<f64, CbfError> {
    let v: f64 = num(lines, s, "number")?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(lines.err(format!("non-finite number `{s}`")))
    }
}

/// Largest variable or constraint count accepted from a header.
pub const MAX_DIM: usize = 10_000_000;

fn dim(lines: &Lines, s: &str, what: &str) -> Result<usize, CbfError> {
    let v: usize = num(lines, s, what)?;
    if v > MAX_DIM {
        return Err(lines.err(format!("{what} {v} exceeds the limit {MAX_DIM}")));
    }
    Ok(v)
}

fn groups(lines: &mut Lines, total: usize, count: usize, what: &str) -> Result<Vec<(Domain, usize)>, CbfError> {
    let mut out = Vec::with_capacity(count.min(1 << 16));
    let mut sum = 0usize;
    for _ in 0..count {
        let [d, k] = lines.fields::<2>(what)?;
        let dom = Domain::parse(d).ok_or_else(|| lines.err(format!("unknown cone domain `{d}`")))?;
        let k: usize = num(lines, k, "group size")?;
        if k < dom.min_size() {
            return Err(lines.err(format!("{d} group of size {k} is too small")));
        }
        sum = sum.checked_add(k).ok_or_else(|| lines.err("group sizes overflow"))?;
        out.push((dom, k));
    }
    if sum != total {
        return Err(lines.err(format!("{what} sizes sum to {sum}, expected {total}")));
    }
    Ok(out)
}

fn index(lines: &Lines, s: &str, bound: usize, what: &str) -> Result<usize, CbfError> {
    let i: usize = num(lines, s, what)?;
    if i >= bound {
        return Err(lines.err(format!("{what} {i} out of range (size {bound})")));
    }
    Ok(i)
}

pub fn parse_cbf(text: &str) -> Result<CbfModel, CbfError> {
    let mut lines = Lines::new(text);
    let mut model = CbfModel {
        version: 0,
        sense: ObjSense::Min,
        num_vars: 0,
        var_groups: Vec::new(),
        num_cons: 0,
        con_groups: Vec::new(),
        integers: Vec::new(),
        obj_coords: Vec::new(),
        obj_offset: 0.0,
        a_coords: Vec::new(),
        b_coords: Vec::new(),
    };
    let mut seen_var = false;
    let mut seen_con = false;
    while let Some((line, kw)) = lines.next_line() {
        match kw {
            "VER" => {
                let [v] = lines.fields::<1>("version")?;
                model.version = num(&lines, v, "version")?;
                if !(1..=3).contains(&model.version) {
                    return Err(lines.err(format!("unsupported version {}", model.version)));
                }
            }
            "OBJSENSE" => {
                let [s] = lines.fields::<1>("objective sense")?;
                model.sense = match s {
                    "MIN" => ObjSense::Min,
                    "MAX" => ObjSense::Max,
                    _ => return Err(lines.err(format!("invalid objective sense `{s}`"))),
                };
            }
            "VAR" => {
                let [n, k] = lines.fields::<2>("variable header")?;
                model.num_vars = dim(&lines, n, "variable count")?;
                let k: usize = num(&lines, k, "group count")?;
                model.var_groups = groups(&mut lines, model.num_vars, k, "variable group")?;
                seen_var = true;
            }
            "CON" => {
                let [m, k] = lines.fields::<2>("constraint header")?;
                model.num_cons = dim(&lines, m, "constraint count")?;
                let k: usize = num(&lines, k, "group count")?;
                model.con_groups = groups(&mut lines, model.num_cons, k, "constraint group")?;
                seen_con = true;
            }
            "INT" => {
                if !seen_var {
                    return Err(lines.err("INT before VAR"));
                }
                let [c] = lines.fields::<1>("integer count")?;
                let c: usize = num(&lines, c, "integer count")?;
                for _ in 0..c {
                    let [i] = lines.fields::<1>("integer index")?;
                    model.integers.push(index(&lines, i, model.num_vars, "variable index")?);
                }
            }
            "OBJACOORD" => {
                if !seen_var {
                    return Err(lines.err("OBJACOORD before VAR"));
                }
                let [c] = lines.fields::<1>("coordinate count")?;
                let c: usize = num(&lines, c, "coordinate count")?;
                for _ in 0..c {
                    let [j, v] = lines.fields::<2>("objective coordinate")?;
                    let j = index(&lines, j, model.num_vars, "variable index")?;
                    model.obj_coords.push((j, real(&lines, v)?));
                }
            }
            "OBJBCOORD" => {
                let [v] = lines.fields::<1>("objective constant")?;
                model.obj_offset = real(&lines, v)?;
            }
            "ACOORD" => {
                if !seen_var || !seen_con {
                    return Err(lines.err("ACOORD before VAR and CON"));
                }
                let [c] = lines.fields::<1>("coordinate count")?;
                let c: usize = num(&lines, c, "coordinate count")?;
                for _ in 0..c {
                    let [i, j, v] = lines.fields::<3>("matrix coordinate")?;
                    let i = index(&lines, i, model.num_cons, "constraint index")?;
                    let j = index(&lines, j, model.num_vars, "variable index")?;
                    model.a_coords.push((i, j, real(&lines, v)?));
                }
            }
            "BCOORD" => {
                if !seen_con {
                    return Err(lines.err("BCOORD before CON"));
                }
                let [c] = lines.fields::<1>("coordinate count")?;
                let c: usize = num(&lines, c, "coordinate count")?;
                for _ in 0..c {
                    let [i, v] = lines.fields::<2>("constant coordinate")?;
                    let i = index(&lines, i, model.num_cons, "constraint index")?;
                    model.b_coords.push((i, real(&lines, v)?));
                }
            }
            other if PSD_KEYWORDS.contains(&other) => {
                return Err(CbfError::Unsupported { line, keyword: other.to_string() });
            }
            other => {
                return Err(CbfError::Syntax { line, message: format!("unknown keyword `{other}`") });
            }
        }
    }
    if model.version == 0 {
        return Err(CbfError::Syntax { line: lines.last, message: "missing VER".into() });
    }
    if !seen_var {
        return Err(CbfError::Syntax { line: lines.last, message: "missing VAR".into() });
    }
    Ok(model)
}

/// Affine expression `Σ a_j x_j + b`.
#[derive(Debug, Clone, Default)]
struct Affine {
    coeffs: Vec<(usize, f64)>,
    constant: f64,
}

impl Affine {
    fn var(j: usize) -> Self {
        Self { coeffs: vec![(j, 1.0)], constant: 0.0 }
    }

    fn combine(&self, s: f64, other: &Affine, t: f64) -> Affine {
        let mut coeffs: Vec<(usize, f64)> = self.coeffs.iter().map(|&(j, a)| (j, s * a)).collect();
        coeffs.extend(other.coeffs.iter().map(|&(j, a)| (j, t * a)));
        Affine { coeffs: merge(coeffs), constant: s * self.constant + t * other.constant }
    }
}

fn merge(mut coeffs: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    coeffs.sort_by_key(|c| c.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
    for (j, a) in coeffs {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += a,
            _ => out.push((j, a)),
        }
    }
    out.retain(|c| c.1 != 0.0);
    out
}

struct Builder {
    objective: Vec<f64>,
    bounds: Vec<Bound>,
    rows: Vec<Row>,
    cones: Vec<ConeSpec>,
}

impl Builder {
    fn fresh(&mut self) -> usize {
        self.objective.push(0.0);
        self.bounds.push(Bound::FREE);
        self.objective.len() - 1
    }

    /// New variable `u` with the row `u − e = 0`.
    fn defined(&mut self, e: &Affine) -> usize {
        let u = self.fresh();
        let mut coeffs: Vec<(usize, f64)> = e.coeffs.iter().map(|&(j, a)| (j, -a)).collect();
        coeffs.push((u, 1.0));
        self.rows.push(Row::eq(merge(coeffs), e.constant));
        u
    }

    fn quad(&mut self, exprs: &[Affine]) {
        let idx = exprs.iter().map(|e| self.defined(e)).collect();
        self.cones.push(ConeSpec::new(idx));
    }

    /// `2pq ≥ ‖x̄‖², p, q ≥ 0` through `u₀ = (p+q)/√2`, `u₁ = (p−q)/√2`,
    /// `ū = x̄`.
    fn rotated(&mut self, exprs: &[Affine]) {
        let (p, q) = (&exprs[0], &exprs[1]);
        let mut mapped = vec![p.combine(FRAC_1_SQRT_2, q, FRAC_1_SQRT_2), p.combine(FRAC_1_SQRT_2, q, -FRAC_1_SQRT_2)];
        mapped.extend_from_slice(&exprs[2..]);
        self.quad(&mapped);
    }
}

/// Rotated-cone coordinates `(p, q, x̄) ↦ ((p+q)/√2, (p−q)/√2, x̄)`.
pub fn rotated_to_standard(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    out.push((v[0] + v[1]) * FRAC_1_SQRT_2);
    out.push((v[0] - v[1]) * FRAC_1_SQRT_2);
    out.extend_from_slice(&v[2..]);
    out
}

impl CbfModel {
    /// Objective value of the original model at the first `num_vars`
    /// entries of `x`.
    pub fn original_objective(&self, x: &[f64]) -> f64 {
        self.obj_offset + self.obj_coords.iter().map(|&(j, c)| c * x[j]).sum::<f64>()
    }
}

/// Maps the model onto the solver form. Variables `0..num_vars` keep their
/// meaning; cone constraint groups and rotated cones get fresh variables tied
/// in by equality rows. Integrality is dropped and maximization becomes
/// minimization of the negated objective.
pub fn to_cone_problem(model: &CbfModel) -> Result<ConeProblem, CbfError> {
    let n = model.num_vars;
    let sign = if model.sense == ObjSense::Max { -1.0 } else { 1.0 };
    let mut objective = vec![0.0; n];
    for &(j, c) in &model.obj_coords {
        objective[j] += sign * c;
    }
    let mut b = Builder { objective, bounds: vec![Bound::FREE; n], rows: Vec::new(), cones: Vec::new() };

    let mut start = 0;
    for &(dom, k) in &model.var_groups {
        let idx: Vec<usize> = (start..start + k).collect();
        start += k;
        match dom {
            Domain::Free => {}
            Domain::NonNeg => idx.iter().for_each(|&j| b.bounds[j] = Bound::new(0.0, f64::INFINITY)),
            Domain::NonPos => idx.iter().for_each(|&j| b.bounds[j] = Bound::new(f64::NEG_INFINITY, 0.0)),
            Domain::Zero => idx.iter().for_each(|&j| b.bounds[j] = Bound::new(0.0, 0.0)),
            Domain::Quad => b.cones.push(ConeSpec::new(idx)),
            Domain::RotQuad => {
                let exprs: Vec<Affine> = idx.into_iter().map(Affine::var).collect();
                b.rotated(&exprs);
            }
        }
    }

    let mut exprs = vec![Affine::default(); model.num_cons];
    for &(i, j, a) in &model.a_coords {
        exprs[i].coeffs.push((j, a));
    }
    for &(i, v) in &model.b_coords {
        exprs[i].constant += v;
    }
    for e in exprs.iter_mut() {
        e.coeffs = merge(std::mem::take(&mut e.coeffs));
    }
    let mut start = 0;
    for &(dom, k) in &model.con_groups {
        let group = &exprs[start..start + k];
        start += k;
        match dom {
            Domain::Free => {}
            Domain::Zero => {
                for e in group {
                    b.rows.push(Row::eq(e.coeffs.clone(), -e.constant));
                }
            }
            // e ≥ 0  ⇔  −Σ a x ≤ b
            Domain::NonNeg => {
                for e in group {
                    b.rows.push(Row::le(e.coeffs.iter().map(|&(j, a)| (j, -a)).collect(), e.constant));
                }
            }
            Domain::NonPos => {
                for e in group {
                    b.rows.push(Row::le(e.coeffs.clone(), -e.constant));
                }
            }
            Domain::Quad => b.quad(group),
            Domain::RotQuad => b.rotated(group),
        }
    }
    Ok(ConeProblem::new(b.objective, b.rows, b.bounds, b.cones)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::residual;

    #[test]
    fn minimal_lp() {
        let text = "VER\n3\n\nOBJSENSE\nMIN\n\nVAR\n1 1\nF 1\n\nCON\n1 1\nL+ 1\n\nOBJACOORD\n1\n0 1.0\n\nACOORD\n1\n0 0 1.0\n\nBCOORD\n1\n0 -1.0\n";
        let m = parse_cbf(text).unwrap();
        assert_eq!(m.num_vars, 1);
        assert_eq!(m.num_cons, 1);
        let p = to_cone_problem(&m).unwrap();
        assert_eq!(p.num_rows(), 1);
        assert_eq!(p.num_cones(), 0);
        assert!(p.linear_violation(&[1.0]) <= 0.0);
        assert!(p.linear_violation(&[0.5]) > 0.0);
    }

    #[test]
    fn quad_group_recorded() {
        let text = "VER\n1\nVAR\n3 1\nQ 3\n";
        let m = parse_cbf(text).unwrap();
        assert_eq!(m.var_groups, vec![(Domain::Quad, 3)]);
        assert_eq!(to_cone_problem(&m).unwrap().cones()[0].indices, vec![0, 1, 2]);
    }

    #[test]
    fn psd_rejected() {
        let text = "VER\n3\nPSDVAR\n1\n2\n";
        assert!(matches!(parse_cbf(text), Err(CbfError::Unsupported { line: 3, .. })));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        assert!(matches!(parse_cbf("VER\n3\nVAR\n2 1\nF 3\n"), Err(CbfError::Syntax { line: 5, .. })));
        assert!(matches!(parse_cbf("VER\n3\nVAR\n1 1\nF 1\nOBJACOORD\n1\n4 1.0\n"), Err(CbfError::Syntax { line: 8, .. })));
        assert!(matches!(parse_cbf("VER\n3\nVAR\n1 1\nF 1\nOBJACOORD\n2\n0 1.0\n"), Err(CbfError::Syntax { .. })));
        assert!(matches!(parse_cbf("VER\n3\nVAR\n3 1\nQR 2\n"), Err(CbfError::Syntax { .. })));
    }

    #[test]
    fn rotated_points() {
        let inside = rotated_to_standard(&[1.0, 1.0, 2f64.sqrt() * 0.99, 0.0]);
        assert!(residual(&inside) <= 0.0);
        let outside = rotated_to_standard(&[1.0, 1.0, 2.0, 0.0]);
        assert!(residual(&outside) > 0.0);
    }
}
