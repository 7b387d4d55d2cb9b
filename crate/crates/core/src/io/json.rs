//! Native JSON instance format.
//!
//! ```json
//! {
//!   "format": "socp-sqp-instance",
//!   "version": 1,
//!   "objective": [1.0, 0.0],
//!   "rows": [{ "coeffs": [[0, 1.0], [1, 2.0]], "rhs": 3.0, "sense": "EQ" }],
//!   "bounds": [{ "lower": null, "upper": 1000.0 }, { "lower": 0.0, "upper": null }],
//!   "cones": [[0, 1]],
//!   "planted": { "x": [..], "lambda": [..], "z": [..], "bound_duals": [..] }
//! }
//! ```
//!
//! Infinite bounds are written as `null`. `planted` is optional. Numbers are
//! written as the shortest decimal that reads back to the same binary64.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ModelError;
use crate::model::{Bound, ConeProblem, ConeSpec, PrimalDualTriple, Row};

pub const FORMAT: &str = "socp-sqp-instance";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum JsonError {
    #[error("schema error: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("unsupported format `{0}` (expected `{FORMAT}`)")]
    Format(String),
    #[error("unsupported version {0}")]
    Version(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundRepr {
    lower: Option<f64>,
    upper: Option<f64>,
}

impl From<Bound> for BoundRepr {
    fn from(b: Bound) -> Self {
        Self {
            lower: b.lower.is_finite().then_some(b.lower),
            upper: b.upper.is_finite().then_some(b.upper),
        }
    }
}

impl From<BoundRepr> for Bound {
    fn from(b: BoundRepr) -> Self {
        Bound { lower: b.lower.unwrap_or(f64::NEG_INFINITY), upper: b.upper.unwrap_or(f64::INFINITY) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRepr {
    format: String,
    version: u32,
    objective: Vec<f64>,
    rows: Vec<Row>,
    bounds: Vec<BoundRepr>,
    cones: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    planted: Option<PrimalDualTriple>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub problem: ConeProblem,
    pub planted: Option<PrimalDualTriple>,
}

pub fn write_instance(problem: &ConeProblem, planted: Option<&PrimalDualTriple>) -> String {
    let repr = InstanceRepr {
        format: FORMAT.to_string(),
        version: VERSION,
        objective: problem.objective().to_vec(),
        rows: problem.rows().to_vec(),
        bounds: problem.bounds().iter().map(|&b| b.into()).collect(),
        cones: problem.cones().iter().map(|c| c.indices.clone()).collect(),
        planted: planted.cloned(),
    };
    serde_json::to_string_pretty(&repr).expect("instance serializes")
}

pub fn read_instance(text: &str) -> Result<Instance, JsonError> {
    let repr: InstanceRepr = serde_json::from_str(text)?;
    if repr.format != FORMAT {
        return Err(JsonError::Format(repr.format));
    }
    if repr.version != VERSION {
        return Err(JsonError::Version(repr.version));
    }
    let problem = ConeProblem::new(
        repr.objective,
        repr.rows,
        repr.bounds.into_iter().map(Bound::from).collect(),
        repr.cones.into_iter().map(ConeSpec::new).collect(),
    )?;
    if let Some(t) = &repr.planted {
        t.check_dims(&problem)?;
    }
    Ok(Instance { problem, planted: repr.planted })
}

/// Triple file: `x`, `lambda` and optionally `bound_duals` (zero when
/// absent). `z` is recomputed from the multipliers when missing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TripleRepr {
    x: Vec<f64>,
    lambda: Vec<f64>,
    #[serde(default)]
    z: Option<Vec<f64>>,
    #[serde(default)]
    bound_duals: Option<Vec<f64>>,
}

pub fn write_triple(t: &PrimalDualTriple) -> String {
    serde_json::to_string_pretty(t).expect("triple serializes")
}

pub fn read_triple(text: &str, problem: &ConeProblem) -> Result<PrimalDualTriple, JsonError> {
    let repr: TripleRepr = serde_json::from_str(text)?;
    let bound_duals = repr.bound_duals.unwrap_or_else(|| vec![0.0; problem.num_vars()]);
    let t = match repr.z {
        Some(z) => PrimalDualTriple { x: repr.x, lambda: repr.lambda, z, bound_duals },
        None => {
            problem.check_dims(&repr.x, &repr.lambda, &bound_duals)?;
            PrimalDualTriple::from_multipliers(problem, repr.x, repr.lambda, bound_duals)
        }
    };
    t.check_dims(problem)?;
    Ok(t)
}
