#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blockmat;
pub mod error;
pub mod ingest;
pub mod estim;
pub mod inference;
pub mod model;
pub mod moments;
pub mod optim;
pub mod report;
pub mod sim;

pub use error::{Error, ErrorKind, Result};
