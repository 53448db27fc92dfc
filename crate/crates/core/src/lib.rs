//! Secure state estimation for Lur'e systems whose sensors may be corrupted.
//!
//! A bank of circle-criterion observers runs on sensor subsets; a consistency
//! test between nested subsets picks the estimate to trust.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod checks;
pub mod error;
pub mod grid;
pub mod index_set;
pub mod io;
pub mod linalg;
pub mod lmi;
pub mod observer;
pub mod scenario;
pub mod selector;
pub mod sim;
pub mod system;

pub use error::{Error, Result};
pub use index_set::IndexSet;
