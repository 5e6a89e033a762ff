// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuit;
pub mod cli;
pub mod compare;
pub mod data;
pub mod explain;
pub mod gradcam;
pub mod io;
pub mod nn;
pub mod tensor;
