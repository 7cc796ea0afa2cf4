//! Device-independent quantum position verification.
//!
//! Trial records and counts live in [`trialdata`]. Calibration fits are in
//! [`estimation`], test-factor construction in [`testfactor`], and the
//! pass/fail logic in [`protocol`]. [`simulator`] produces synthetic trials
//! and [`geometry`] turns verifier timings into spatial regions.

pub mod error;
pub mod estimation;
pub mod geometry;
pub mod lp;
pub mod optim;
pub mod polytopes;
pub mod protocol;
pub mod reference;
pub mod simulator;
pub mod testfactor;
pub mod trialdata;

pub use error::{QpvError, Result};
