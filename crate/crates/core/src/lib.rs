#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ann;
pub mod baseline;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod flame_model;
pub mod imaging;
pub mod predictor;
pub mod similarity;
pub mod synth;
pub mod textfmt;

pub use error::{Error, ErrorClass, Result};
