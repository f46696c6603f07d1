//! Numerical reconstruction of a bifurcation construction for an overdetermined
//! semilinear problem on the complement of a geodesic ball in a round sphere.

pub mod annulus2d;
pub mod band;
pub mod bifurcate;
pub mod dtn;
pub mod eigen;
pub mod exterior;
mod error;
pub mod geometry;
pub mod modeop;
pub mod radial;
pub mod sem;
pub mod spectrum;
pub mod verify;

pub use error::{OdpError, Result};
