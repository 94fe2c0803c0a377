//! Catastrophe loss assessment, homeowner indifference pricing and
//! Hoeffding-bound solvency schemes for public-private seismic and flood
//! insurance.

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod geo;
pub mod hazard;
pub mod io;
pub mod loss;
pub mod numerics;
pub mod oracle;
pub mod pipeline;
pub mod pricing;
pub mod report;
pub mod scheme;
pub mod synth;
pub mod vulnerability;

pub use error::{Error, Result};
