//! Discretization toolkit for a linear collision operator under strong
//! rotation about a fixed axis: cylindrical velocity grids, gyroaveraged
//! collision operators, constrained cell solvers, effective diffusion
//! tensors, and desk-scale kinetic/fluid integrators for the two limit
//! regimes (drift-diffusion at fixed rotation rate, guiding-center drift
//! plus parallel diffusion at large rotation rate).

pub mod angular;
pub mod cell;
pub mod cross_section;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod par;
pub mod quadrature;

pub use error::{CoreError, Result};
