//! Hyperplane-generating sets for the polyhedral outer approximations.
//!
//! Every generator `y` contributes the cut `∇r(y)ᵀx ≤ 0`. Sets only grow; a
//! candidate whose normalized barred direction is within [`DEDUP_TOL`] of an
//! existing generator is dropped.

use crate::geometry::{bar_norm, grad_residual, residual};
use crate::model::{norm_inf, EXTREMAL_TOL};

pub const DEDUP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HyperplaneSet {
    generators: Vec<Vec<f64>>,
    /// ȳ/‖ȳ‖ per generator, kept for duplicate checks
    directions: Vec<Vec<f64>>,
}

impl HyperplaneSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The set `{±e_i : i = 1..n_j−1}`, whose outer approximation is
    /// `‖x̄‖∞ ≤ x0`.
    pub fn initial(dim: usize) -> Option<Self> {
        if dim < 2 {
            return None;
        }
        let mut set = Self::empty();
        for sign in [1.0, -1.0] {
            for i in 1..dim {
                let mut y = vec![0.0; dim];
                y[i] = sign;
                set.push_unchecked(y);
            }
        }
        Some(set)
    }

    pub fn generators(&self) -> &[Vec<f64>] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Cut normal `∇r(y_l)` of generator `l`.
    pub fn normal(&self, l: usize) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.directions[l].len() + 1);
        g.push(-1.0);
        g.extend_from_slice(&self.directions[l]);
        g
    }

    fn direction(v: &[f64]) -> Option<Vec<f64>> {
        let nb = bar_norm(v);
        if nb == 0.0 || !nb.is_finite() {
            return None;
        }
        Some(v[1..].iter().map(|a| a / nb).collect())
    }

    fn push_unchecked(&mut self, y: Vec<f64>) {
        let dir = Self::direction(&y).expect("generator with zero barred part");
        self.generators.push(y);
        self.directions.push(dir);
    }

    pub fn is_duplicate(&self, v: &[f64]) -> bool {
        let Some(dir) = Self::direction(v) else {
            return false;
        };
        self.directions.iter().any(|d| {
            d.iter().zip(&dir).all(|(a, b)| (a - b).abs() <= DEDUP_TOL)
        })
    }

    /// Adds `v` unless its barred part vanishes or it duplicates a generator.
    pub fn try_add(&mut self, v: Vec<f64>) -> bool {
        if bar_norm(&v) == 0.0 || self.is_duplicate(&v) {
            return false;
        }
        self.push_unchecked(v);
        true
    }

    /// Adds a point outside the cone so that its cut excludes it.
    pub fn update_primal(&mut self, x: &[f64]) -> bool {
        if bar_norm(x) == 0.0 || residual(x) <= 0.0 {
            return false;
        }
        self.try_add(x.to_vec())
    }

    /// Adds `−z` when `z` lies in the cone interior and `x` is not the apex.
    pub fn update_dual(&mut self, x: &[f64], z: &[f64]) -> bool {
        if norm_inf(x) < EXTREMAL_TOL {
            return false;
        }
        self.add_dual_point(z)
    }

    /// The dual rule without the primal guard, used for the initial set.
    pub fn add_dual_point(&mut self, z: &[f64]) -> bool {
        if bar_norm(z) == 0.0 || residual(z) >= 0.0 {
            return false;
        }
        self.try_add(z.iter().map(|v| -v).collect())
    }

    /// Largest cut value `max_l ∇r(y_l)ᵀx` (−∞ for an empty set).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.directions
            .iter()
            .map(|d| d.iter().zip(&x[1..]).map(|(a, b)| a * b).sum::<f64>() - x[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Normal of the cut generated by `y`, or `None` for a zero barred part.
pub fn cut_normal(y: &[f64]) -> Option<Vec<f64>> {
    grad_residual(y).ok()
}
