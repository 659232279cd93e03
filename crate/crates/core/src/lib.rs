//! Local volt/VAR control of PV inverters on radial distribution feeders.
//!
//! The crate covers the network model and power flow ([`feeder`]), the inner
//! dispatch laws ([`control`]), the adaptive outer loop ([`adaptation`]),
//! closed-form stability analytics ([`analysis`]) and a quasi-static
//! time-series engine with disturbance scenarios and metrics ([`sim`]).
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod analysis;
pub mod control;
pub mod error;
pub mod feeder;
pub mod sim;

pub use error::{Error, Result};
