//! Desk-scale numerical harmonic analysis on finite measure spaces.
//!
//! The crate builds finite atomized measure spaces carrying ball-bases
//! (dyadic martingale trees, all intervals with dilation hulls, and the
//! axis-parallel rectangle family that fails the engulfing axiom), and on
//! top of them: local and supremal averages, Orlicz/Luxemburg norms,
//! Muckenhoupt and reverse-Hölder characteristics, maximal operators,
//! concrete singular integrals with their commutators, the stopping-time
//! construction of sparse dominating families, and a set of replayable
//! experiments (local decay, mixed weak type, Coifman-Fefferman ratios,
//! weighted-bound scans, Fréchet-Kolmogorov compactness probes).
//!
//! Everything is exact where the finite setting permits: suprema over balls
//! are finite maxima, weak norms are sorted sweeps, and "almost everywhere"
//! means "at every atom".

pub mod error;
pub mod func;
pub mod maximal;
pub mod ops;
pub mod testfn;
pub mod weights;
pub mod space;
pub mod sparse;

pub use error::{Error, Result};
