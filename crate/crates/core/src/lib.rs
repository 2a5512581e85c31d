//! Relative viewpoint estimation between a posed reference image and a query
//! image of the same object.
//!
//! Views of the object are generated at fixed intermediate viewpoints from the
//! reference side, noised with the diffusion forward process, and denoised
//! with the query image as conditioning. A candidate query pose is scored by
//! the Monte-Carlo denoising residual; the pose is found with a coarse grid
//! search followed by finite-difference gradient refinement.
//!
//! Generation and denoising are abstracted behind [`backend::Backend`]. The
//! crate ships a synthetic rendering oracle ([`backend::OracleBackend`]) and
//! an HTTP client/server pair ([`remote`]) for external diffusion servers.

pub mod backend;
pub mod bench;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod remote;
pub mod rng;
pub mod scoring;
pub mod search;

pub use error::{Error, Result};
pub use geometry::{RotationMatrix, ViewChange, Viewpoint};
pub use imaging::{ImageBuffer, NoiseSchedule, TensorBuffer};
