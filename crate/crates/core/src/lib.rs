//! Numerical laboratory for the mean-field flow
//! `d/dt e^u = Delta_g u + rho (h e^u / int h e^u - 1)` on unit-area conformally flat
//! tori: geometry, the functional and its derivatives, time integration, Green-function
//! geometry, blow-up analysis and stationary solutions.

pub mod blowup;
pub mod builtins;
mod cg;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod green;
pub mod grid;
pub mod interp;
pub mod kwf;
pub mod oracle;
mod spectral;
pub mod stationary;
pub mod surface;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Grid, ScalarField};
pub use surface::Surface;
