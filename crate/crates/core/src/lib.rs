//! Channel estimation for RIS-assisted multi-user MIMO-OFDM uplinks.
//!
//! The measured signal of every UE is a third-order tensor (subcarrier x
//! BS antenna x RIS configuration) with a low-rank CP structure. The
//! [`dsmdt`] estimator exploits the RIS–BS paths shared by all UEs: a
//! reference UE is decomposed first and the remaining UEs reuse its common
//! parameters through a double-structured search.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod dsmdt;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod robust;
pub mod scenario;
pub mod subspace;
pub mod tensor;

pub use error::{Error, Result};
