#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod bounds;
pub mod codegen;
pub mod error;
pub mod gaussian;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod search;
pub mod sim;
pub mod tracer;
