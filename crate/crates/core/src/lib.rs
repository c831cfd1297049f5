//! Data-driven synthesis of contractive polytopic safe sets for nonlinear discrete-time plants.
//!
//! A single input-state experiment on the plant is turned into closed-loop representations of the
//! form `A + BK = X1 G`, and convex certificates are solved for `G` so that every facet of the
//! polytope is mapped into its `lambda`-scaled copy.

pub mod basis;
pub mod conic;
pub mod io;
pub mod plant_data;
pub mod polytope;
pub mod presets;
pub mod runtime;
pub mod synthesis;
pub mod verify;
