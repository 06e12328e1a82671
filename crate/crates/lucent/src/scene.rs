//! Loading a runtime scene from a container, a mesh and a configuration.

use std::path::Path;
use std::time::Instant;

use lucent_core::runtime::{Clock, Scene};
use lucent_core::surface::TriangleMesh;

use crate::config::RunConfig;
use crate::container::Container;
use crate::error::{LucentError, Result};

/// Wall-clock milliseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct StdClock(Instant);

impl StdClock {
    pub fn new() -> Self {
        StdClock(Instant::now())
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

/// Builds a scene after checking that the container belongs to `mesh`.
pub fn scene_from_container(container: Container, mesh: TriangleMesh, config: &RunConfig, base: &Path) -> Result<Scene> {
    container.check_mesh(&mesh)?;
    let bounds = mesh.bounds();
    let rig = config.light_rig(bounds, base)?;
    let camera = config.camera_for(bounds);
    let material = config.material.to_material()?;
    let (folded, visibility) = match container.ambient {
        Some(a) => (Some(a.folded), Some(a.visibility)),
        None => (None, None),
    };
    let scene = Scene::new(
        mesh,
        container.atlas,
        container.basis,
        container.transfer,
        material,
        rig,
        camera,
        config.runtime_settings(),
    )?
    .with_ambient(folded, visibility)?;
    Ok(scene)
}

/// Loads the container and mesh named by `config` (paths relative to `base`).
pub fn load_scene(config: &RunConfig, base: &Path) -> Result<Scene> {
    let path = config
        .container
        .as_ref()
        .ok_or_else(|| LucentError::Config("no container given".into()))?;
    let container = Container::load(&base.join(path))?;
    let mesh = config.load_mesh(base)?;
    scene_from_container(container, mesh, config, base)
}
