//! Equilibrium lipid-vesicle shapes from a real surface-harmonic expansion of
//! the radius, the Helfrich bending energy with area and volume penalties, and
//! a nonlinear conjugate-gradient minimizer with analytic gradients.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod energy;
pub mod geometry;
pub mod optimize;
pub mod quadrature;
pub mod reconstruct;
pub mod shbasis;
