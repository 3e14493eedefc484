// Negated comparisons such as `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod deltamin;
pub mod error;
pub mod experiments;
pub mod gan;
pub mod mlp;
pub mod numerics;
pub mod oracles;
pub mod processes;
pub mod ridgegrad;
pub mod trainer;

pub use error::{Error, Result};
