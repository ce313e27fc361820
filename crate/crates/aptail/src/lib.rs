//! Exact combinatorics, tilted-measure sampling, and concentration
//! bounds for the count of k-term arithmetic progressions in a p-biased
//! random subset of {1, ..., N}.
//!
//! The crate is organised around a shared [`index::ProgressionIndex`]:
//!
//! * [`index`]: progression enumeration, degrees, intersection profiles,
//!   exact mean/variance, and the conditional-mean shift psi.
//! * [`variational`]: minimal sets reaching a progression count or a
//!   psi value, core extraction, and seed-size feasibility.
//! * [`rates`]: large-deviation rate functions and the phase diagram
//!   over (p, t).
//! * [`sampling`]: exact tail enumeration, plain and importance-sampled
//!   Monte Carlo, product tilts, and the sprinkling density.
//! * [`concentration`]: link statistics, the martingale tail bound, a
//!   lower tail for hypergeometric subset sampling, and second-moment
//!   diagnostics.
//! * [`clusters`]: connected components of progression families, their
//!   classification, filtered factorial moments, and the cluster
//!   encoding bound.
//! * [`oracle`]: independent brute-force reference implementations used
//!   by the test suites and the verification harness.
//!
//! Every module validates its inputs and returns [`error::Error`] rather
//! than panicking; enumeration sizes are guarded by explicit caps.

pub mod clusters;
pub mod concentration;
pub mod error;
pub mod index;
pub mod numeric;
pub mod oracle;
pub mod rates;
pub mod sampling;
pub mod variational;
pub mod verify;

pub use error::{Error, Result};
