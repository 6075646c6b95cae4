#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod cli;
pub mod error;
pub mod growth;
pub mod io;
pub mod kinematics;
pub mod math;
pub mod mlp;
pub mod model;
pub mod synth;
pub mod trainer;

pub use error::{Result, SkelError};
