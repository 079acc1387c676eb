//! Finite-element solver for nematic liquid crystal flow in 2D.
//!
//! The model couples a Ginzburg-Landau relaxation of the director field with
//! the incompressible Navier-Stokes equations through an elastic stress. Two
//! second-order, linear, fully decoupled time-stepping schemes are provided:
//!
//! * `pcsav`: semi-implicit convection with a scalar-auxiliary-variable (SAV)
//!   factor on the nonlinear couplings and a rotational pressure-correction
//!   projection; every velocity solve reassembles the convection operator.
//! * `pcsav-ect`: same structure with the momentum convection treated
//!   explicitly, so the hat velocity operator is constant in time and can be
//!   assembled once per run.
//!
//! Both schemes decay a modified discrete energy unconditionally; the energy
//! module evaluates the corresponding audit at every step.
//!
//! Spatial discretization is Taylor-Hood P2-P1 on structured triangulations
//! of axis-aligned rectangles.

pub mod assemble;
pub mod config;
pub mod driver;
pub mod energy;
pub mod error;
pub mod firststep;
pub mod mesh;
pub mod mms;
pub mod output;
pub mod problems;
pub mod projection;
pub mod quad;
pub mod space;
pub mod sparse;
pub mod state;
pub mod stepper;

pub use error::{Error, Result};
