//! Optimal control of the periodic linear advection equation with a
//! full-order upwind model, a POD-Galerkin reduced model and a shifted-POD
//! Galerkin reduced model, all driven by one gradient-descent optimizer.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod control;
pub mod discretization;
pub mod error;
pub mod experiments;
pub mod fom;
pub mod io;
pub mod optimizer;
pub mod rom_pod;
pub mod rom_spod;
pub mod spectral;
pub mod transform;

pub use error::{Error, Result};
