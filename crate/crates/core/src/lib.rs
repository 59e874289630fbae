#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod objective;
pub mod policy;
pub mod replay;
pub mod scalarize;
pub mod service;
pub mod train;
