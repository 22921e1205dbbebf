#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::excessive_precision,
    clippy::inconsistent_digit_grouping
)]

pub mod bessel;
pub mod cli;
pub mod config;
pub mod distributions;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod posterior;
pub mod simstudy;

pub use error::{Error, Result};
