//! Sequential quadratic programming with polyhedral cutting planes for
//! second-order cone programs.

pub mod bench;
pub mod cli;
pub mod cuts;
pub mod driver;
pub mod error;
pub mod gen;
pub mod geometry;
pub mod io;
pub mod merit;
pub mod model;
pub mod qp;
pub mod subproblems;
