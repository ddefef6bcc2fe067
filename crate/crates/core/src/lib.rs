//! Nonstationary bandits whose arms carry a hidden, deterministically
//! evolving state.
//!
//! Each arm `a` has a scalar state `x` moving as `x' = A x + B·[pulled] + K`
//! and pays `C x + D θ + noise`. The crate provides posterior sampling with
//! exact Kalman beliefs, the usual baselines, probability clipping that
//! guarantees enough exploration for a powered after-study test, the
//! least-squares tests themselves, and a reproducible experiment runner.

pub mod error;
pub mod harness;
pub mod filter;
pub mod inference;
pub mod log;
pub mod model;
pub mod normal;
pub mod policy;
pub mod power;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
