//! A finite-volume solver for incompressible flow over and through
//! (an)isotropic porous media on unstructured triangular meshes.
//!
//! One set of governing equations covers the free fluid, the porous bulk and
//! a finite-width transition layer in between; porosity and inverse
//! permeability vary continuously across the layer. Each time step runs a
//! convective predictor (per-cell ODE systems swept along the flow
//! direction), an implicit viscous corrector and a continuity corrector that
//! restores pointwise divergence-free velocities through anisotropy-aware
//! two-point fluxes.
//!
//! Entry points:
//! - [`mesh`] / [`meshgen`]: mesh construction, file IO and generation,
//! - [`material`]: porosity / permeability fields and stage matrices,
//! - [`timeloop`]: configuration and the step pipeline,
//! - [`verification`]: reference solutions, error norms, convergence rates,
//! - [`harness`]: ready-made verification and timing studies,
//! - [`output`]: VTK, CSV profiles and run summaries.

pub mod algebra;
pub mod bc;
pub mod config;
pub mod corrector;
pub mod harness;
pub mod material;
pub mod mesh;
pub mod output;
pub mod predictor;
pub mod rt0;
pub mod meshgen;
pub mod sparse;
pub mod timeloop;
pub mod verification;

pub use algebra::{Mat2, Vec2};
