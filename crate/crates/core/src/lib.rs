//! Semi-implicit MAC finite-volume scheme for variable-density incompressible
//! flow, with the discrete identities it relies on exposed for verification.

pub mod cli;
pub mod error;
pub mod fields;
pub mod grid;
pub mod io;
pub mod linsolve;
pub mod operators;
pub mod presets;
pub mod sparse;
pub mod timestepper;
pub mod verify;

pub use error::{Error, Result};
pub use fields::{ScalarField, Trajectory, VelocityField};
pub use grid::MacMesh;
