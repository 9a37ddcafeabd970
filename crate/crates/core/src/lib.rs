// Negated comparisons such as `!(x > 0.0)` are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balltree;
pub mod contiguity;
pub mod dataset;
pub mod error;
pub mod features;
pub mod geo;
pub mod linalg;
pub mod pipeline;
pub mod poi;
pub mod regress;
pub mod sar;
pub mod synth;

pub use error::{Error, Result};
