//! Gaussian process regression on compact Riemannian manifolds.
//!
//! The pipeline: load or construct a manifold (triangle mesh, sphere,
//! circle), compute a truncated Laplace-Beltrami spectrum, evaluate
//! spectral or closed-form covariance kernels, and run Bayesian
//! inference on the field together with its directional-derivative and
//! (on the circle) curvature processes.

pub mod cli;
pub mod diffcov;
pub mod geometry;
pub mod inference;
pub mod kernels;
pub mod mesh_core;
pub mod spectral;

pub use mesh_core::{LaplacianPair, TriangleMesh};
pub use spectral::Spectrum;
