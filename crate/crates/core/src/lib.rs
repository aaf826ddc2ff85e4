//! Safety filtering for robots navigating ellipsoid-cloud maps.
//!
//! The crate is organised bottom-up:
//!
//! * [`scene`] ingests Gaussian-splat scenes (PLY / JSON / synthetic) and
//!   indexes their collision ellipsoids.
//! * [`distance`] computes exact signed robot-to-ellipsoid distances, the
//!   barrier value `h`, its gradient and its Hessian.
//! * [`qp`] is a small dense active-set solver for `min ‖u − ū‖²` subject to
//!   half-space constraints and an optional norm limit.
//! * [`filter`] assembles barrier half-spaces for a double integrator, prunes
//!   the ones no admissible control can violate and solves the QP.
//! * [`sim`] closes the loop around the filter and computes campaign metrics.

pub mod distance;
pub mod filter;
pub mod qp;
pub mod rng;
pub mod scene;
pub mod sim;

pub use nalgebra::{Matrix3, UnitQuaternion, Vector3};
