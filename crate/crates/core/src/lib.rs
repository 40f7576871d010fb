//! Monte Carlo engine for forward-backward SDEs with jumps priced under
//! equivalent probability measures.
//!
//! The crate simulates jump-diffusion state processes on a fixed grid
//! ([`paths`]), builds Girsanov tilts and their Doleans-Dade density
//! processes ([`girsanov`]), solves backward equations by least-squares
//! regression with an outer Picard iteration ([`bsde`]), and wires these
//! into collateralized market models with repo funding, growth-optimal
//! deflation and numeraire changes ([`markets`]). Closed forms used as test
//! ground truth live in [`oracles`].
//!
//! Everything downstream of a `(seed, spec, grid, n_paths)` tuple is
//! bit-reproducible regardless of thread count: each path owns a
//! counter-derived random stream, and cross-measure computations reuse the
//! same streams with shifted increments and retilted compensators instead of
//! redrawing.

pub mod bsde;
pub mod error;
pub mod girsanov;
pub mod markets;
pub mod oracles;
pub mod paths;
mod regress;
mod rng;

pub use error::{Error, Result};
