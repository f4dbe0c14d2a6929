//! Single-phase flow in fractured porous media with multiple interacting
//! continua (matrix, natural fractures, hydraulic fractures).
//!
//! The pipeline: mesh a fracture network into a structured grid
//! ([`geometry`]), assemble the coupled finite-volume system
//! ([`assembly`]), march it in time with coupled or decoupled splitting
//! schemes ([`timestepping`]), and optionally upscale to a coarse grid
//! with nonlocal multicontinuum (NLMC) basis functions ([`nlmc`]).
//! [`experiments`] ties everything together behind scenario files and
//! drives the `fracflow` CLI.

pub mod assembly;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod nlmc;
pub mod timestepping;

pub use assembly::{MulticontinuumSystem, SparseMatrix};
pub use geometry::{FractureMesh, FractureNetwork, StructuredGrid2D};
pub use timestepping::{RunRecord, SchemeKind};
