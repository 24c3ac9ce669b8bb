//! Joint diffusion over molecular graphs (atom types, charges, bonds) and
//! 3D conformations, with an equivariant graph transformer as the denoiser.

pub mod app;
pub mod config;
pub mod diffusion;
pub mod metrics;
pub mod model;
pub mod molecule;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod verify;
