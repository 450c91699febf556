//! Numerical laboratory for min-max widths of 2-spheres.
//!
//! Sweepouts of maps `S² → M` are tightened by harmonic replacement on
//! scheduled ball families; the crate also carries a varifold distance,
//! checks for the analytic inequalities the tightening relies on, and an
//! integrator for the width bound under Ricci flow.

pub mod certlab;
pub mod dirichlet;
pub mod dmap;
pub mod manifold;
pub mod ricci;
pub mod sweepout;
pub mod varifold;
