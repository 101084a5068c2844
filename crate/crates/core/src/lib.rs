#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod encode;
pub mod error;
pub mod experiments;
pub mod optics;
pub mod reconstruct;
pub mod walk;

pub use error::{Error, Result};
