//! File formats, precompute driver, command-line tools and the live editing
//! service built on [`lucent_core`].
//!
//! - [`obj`]: Wavefront OBJ meshes.
//! - [`container`]: the `PRTS1` precompute container and `PRTB1` basis files.
//! - [`precompute`]: two-step compression with step-1 rows spilled to disk.
//! - [`imageio`]: PNG output and cubemap input (PNG or Radiance HDR).
//! - [`config`]: TOML run configuration.
//! - [`scene`]: runtime scenes from containers; wall clock.
//! - [`validate`]: oracle comparison and property checks.
//! - [`cli`]: the `lucent` subcommands.
//! - [`service`]: HTTP and WebSocket editing service.

pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod imageio;
pub mod obj;
pub mod precompute;
pub mod scene;
pub mod service;
pub mod validate;

pub use error::{LucentError, Result};
