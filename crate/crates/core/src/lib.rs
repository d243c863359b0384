//! Corrective operational management of an HV grid using aggregated,
//! non-convex distribution-grid flexibility regions (FORs).
//!
//! The crate layers three optimization formulations on a linearized AC
//! power flow:
//!
//! * a 2D mixed-integer piecewise segmentation of PQ regions,
//! * a 3D mixed-integer segmentation of voltage-dependent PQ(V) regions,
//! * a convex-hull half-space LP of the same PQ(V) regions.
//!
//! [`opman::correct`] ties them together: detect limit violations, solve,
//! apply the set-points, re-run the nonlinear power flow and iterate.

pub mod convexify;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod grid;
pub mod opman;
pub mod optimize;
pub mod powerflow;

pub use error::{Error, Result};
