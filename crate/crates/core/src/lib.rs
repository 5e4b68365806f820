//! Adaptive spectral-filter linear Q-learning for batch (offline) sequential
//! decision making.
//!
//! The crate is `no_std` with `alloc`; everything here is a pure function of
//! its inputs. File formats, configuration and the command-line runner live in
//! the companion `spectral-q` crate.
//!
//! Layout:
//! - [`linalg`]: small dense matrices and a symmetric eigensolver.
//! - [`spectral`]: filter functions `g_λ` and spectral quantities of the
//!   empirical covariance.
//! - [`data`]: trajectories, batch datasets and per-stage designs.
//! - [`learner`]: backward induction, the adaptive λ rule and baselines.
//! - [`policy`]: greedy policies and evaluation metrics.
//! - [`env`]: synthetic recommendation environments with known ground truth.
//! - [`interpret`]: feature contribution and clipped-weight analyses.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod env;
mod error;
pub mod interpret;
pub mod learner;
pub mod linalg;
pub mod policy;
pub mod spectral;

pub use error::{Error, Result};
