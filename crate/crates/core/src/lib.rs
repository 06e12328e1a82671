//! Real-time relighting and material editing of translucent objects.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled;
//! the default `parallel` feature pulls in `std` and rayon for the precompute
//! stages. Everything here is pure computation: mesh/file/image IO and the
//! network service live in the companion `lucent` crate.
//!
//! Pipeline overview:
//! - [`dipole`]: the dipole diffusion profile `R_d(r, σ)`.
//! - [`basisgen`]: PCA factorization `R_d ≈ Σ s_k(σ) b_k(r)`.
//! - [`shapes`]: procedural test meshes.
//! - [`surface`]: surface samples and the quadtree atlas that maps them onto
//!   regular `2ⁿ×2ⁿ` grids.
//! - [`wavelets`]: Haar and CDF 9/7 transforms plus coefficient truncation.
//! - [`transfer`]: per-basis transfer rows, two-step compression, visibility
//!   folding for environment light.
//! - [`lighting`]: irradiance from point, directional, spherical and
//!   environment lights with ray-cast shadows.
//! - [`runtime`]: relighting, the cached material-edit path, and a software
//!   rasterizer.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod basisgen;
pub mod dipole;
pub mod error;
pub mod lighting;
pub mod math;
mod par;
pub mod runtime;
pub mod shapes;
pub mod surface;
pub mod transfer;
pub mod wavelets;

pub use error::{Error, Result};
