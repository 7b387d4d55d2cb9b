//! Instance formats: a CBF subset reader and the native JSON format.

pub mod cbf;
pub mod json;

pub use cbf::{parse_cbf, to_cone_problem, CbfError, CbfModel};
pub use json::{read_instance, read_triple, write_instance, write_triple, Instance, JsonError};
