//! Encode aggregated Gaussian-process priors over areal units with a
//! variational autoencoder, then use the trained decoder as a drop-in
//! spatial prior inside Hamiltonian Monte Carlo.
//!
//! The pipeline solves the change-of-support problem for prevalence mapping
//! when one territory carries two boundary systems (say, districts drawn
//! before and after a reform):
//!
//! 1. [`geometry`] rasterizes both polygon sets against one fine grid and
//!    precomputes binary membership matrices.
//! 2. [`priors`] draws Gaussian-process realisations on the grid under RBF
//!    kernel hyperpriors.
//! 3. [`aggregate`] sums draws within polygons, jointly for both boundary
//!    systems, producing the training set.
//! 4. [`vae`] trains an encoder/decoder pair on those joint aggregates and
//!    exports the decoder as the reusable surrogate prior.
//! 5. [`inference`] runs No-U-Turn sampling for the two competing models:
//!    the exact aggregated-GP prior and the decoder surrogate.
//! 6. [`diagnostics`] computes rank-normalized split R-hat and bulk
//!    effective sample sizes and renders the efficiency comparison.
//! 7. [`synthdata`] generates the synthetic scenarios the whole pipeline is
//!    exercised on.

pub mod aggregate;
pub mod config;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod linalg;
pub mod priors;
pub mod render;
pub mod rng;
pub mod synthdata;
pub mod vae;

pub use error::{Error, Result};
