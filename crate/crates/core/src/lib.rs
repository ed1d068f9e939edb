//! Numerical laboratory for two-matrix-weighted norm inequalities on dyadic grids.
//!
//! Everything lives on the finest dyadic partition of the unit cube `[0,1)^d`
//! (`d` = 1 or 2): matrix weights and symbols are piecewise constant on the
//! `2^{dL}` cells, so every integral in sight is an exact finite sum. On top of
//! that lattice the crate builds
//!
//! - dyadic cube families (all levels, shifted grids, arbitrary cell subsets),
//! - matrix A_{p,q} characteristics and a family of weighted-BMO functionals,
//! - reducing matrices for averaged norms (exact second-moment path and a
//!   minimum-volume-enclosing-ellipsoid path with certified distortion),
//! - dense discretizations of the fractional integral, averaging operators,
//!   commutators and weighted conjugations,
//! - mixed `L^p -> L^q` operator-norm estimation with certified lower bounds,
//! - Orlicz/Luxemburg norms, bump constants, Orlicz maximal functions,
//!   stopping-time sparse families and the dyadic domination sum,
//! - experiment suites replaying the two-sided norm inequalities as numerical
//!   assertions with hard (exact-direction) and soft (implicit-constant) tiers.
//!
//! The `verify` module is the top-level entry point for batch experiments; the
//! remaining modules are usable as a library.

pub mod characteristics;
pub mod error;
pub mod field;
pub mod grid;
pub mod linalg;
pub mod norms;
pub mod operators;
pub mod reducing;
pub mod verify;

pub use error::{Error, Result};
pub use field::{ExponentTriple, FieldKind, MatrixField, VectorField};
pub use grid::{Cube, CubeSet, GridSpec};
