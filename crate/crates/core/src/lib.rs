//! Time-dependent transmission problem for the one-dimensional wave equation
//! with a moving interface: forward modelling, singular-support probes and
//! recovery of the interface trajectory and the speed contrast from a single
//! boundary trace.

pub mod medium;
pub mod probe;
pub mod ansatz;
pub mod solver;
pub mod inversion;
