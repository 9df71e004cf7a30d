//! Distributed AC power flow over interconnected regional grids.
//!
//! Regional MATPOWER cases are tied together by transformer branches, split
//! into per-region models with core and copy buses, and solved either
//! centrally (Newton-Raphson) or in a distributed fashion with ADMM or
//! ALADIN.

pub mod admm;
pub mod aladin;
pub mod casefile;
pub mod centralized;
pub mod error;
pub mod localnlp;
pub mod network;
pub mod perturb;
pub mod topology;
pub mod trace;

pub use casefile::{BusType, CaseData, ConnectionSpec};
pub use error::{Error, Result};
