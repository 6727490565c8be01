//! Numerical laboratory for planar multiwell dislocation energies: well
//! geometry and elastic densities, grid fields and discrete calculus,
//! elliptic solvers, rigidity probes, dislocation cell problems, and the
//! scaled energies with their limit counterparts.

pub mod annulus;
pub mod dislocations;
pub mod elliptic;
pub mod error;
pub mod gamma;
pub mod grid;
pub mod matrix;
pub mod report;
pub mod rigidity;
pub mod wells;

pub use error::{DglError, Result};
pub use matrix::{Mat2, Vec2, J};
pub use wells::{CuMode, ElasticDensity, QuadraticForm, WellSet};
