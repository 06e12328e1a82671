//! Run configuration: a TOML file whose every field can be overridden by a
//! command-line flag. See `docs/config.md` for the schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lucent_core::basisgen::{GridConfig, SigmaBox};
use lucent_core::dipole::OpticalMaterial;
use lucent_core::lighting::{Cubemap, Light, LightRig};
use lucent_core::math::{Aabb, Rgb, Vec3};
use lucent_core::runtime::{Camera, RuntimeSettings};
use lucent_core::shapes;
use lucent_core::surface::TriangleMesh;
use lucent_core::transfer::{FoldSettings, TransferSettings};

use crate::error::{LucentError, Result};
use crate::imageio::{load_cubemap_cross, load_cubemap_faces};
use crate::obj::load_obj;
use crate::precompute::{PrecomputeOptions, VisibilityOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// OBJ path or `builtin:<name>`.
    pub mesh: String,
    pub container: Option<PathBuf>,
    /// Precomputed basis file; built on the fly when absent.
    pub basis_file: Option<PathBuf>,
    pub basis: BasisSection,
    pub precompute: PrecomputeSection,
    pub material: MaterialSpec,
    pub lights: Vec<LightSpec>,
    pub camera: Option<CameraSpec>,
    pub render: RenderSection,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mesh: "builtin:icosphere".into(),
            container: None,
            basis_file: None,
            basis: BasisSection::default(),
            precompute: PrecomputeSection::default(),
            material: MaterialSpec::default(),
            lights: Vec::new(),
            camera: None,
            render: RenderSection::default(),
            serve: ServeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub k: usize,
    /// Basis counts reported in the error table.
    pub error_counts: Vec<usize>,
    pub sigma_s_prime_range: [f64; 2],
    pub sigma_a_range: [f64; 2],
    pub sigma_s_prime_count: usize,
    pub sigma_a_count: usize,
    pub r_count: usize,
    pub eta: f64,
}

impl Default for BasisSection {
    fn default() -> Self {
        let g = GridConfig::default();
        BasisSection {
            k: 12,
            error_counts: (1..=15).collect(),
            sigma_s_prime_range: [g.sigma_box.sigma_s_prime.0, g.sigma_box.sigma_s_prime.1],
            sigma_a_range: [g.sigma_box.sigma_a.0, g.sigma_box.sigma_a.1],
            sigma_s_prime_count: g.sigma_s_prime_count,
            sigma_a_count: g.sigma_a_count,
            r_count: g.r_count,
            eta: g.eta,
        }
    }
}

impl BasisSection {
    pub fn grid(&self) -> GridConfig {
        GridConfig {
            sigma_box: SigmaBox {
                sigma_s_prime: (self.sigma_s_prime_range[0], self.sigma_s_prime_range[1]),
                sigma_a: (self.sigma_a_range[0], self.sigma_a_range[1]),
            },
            sigma_s_prime_count: self.sigma_s_prime_count,
            sigma_a_count: self.sigma_a_count,
            r_count: self.r_count,
            eta: self.eta,
            ..GridConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecomputeSection {
    pub parts: usize,
    pub level: Option<u32>,
    pub step1_fraction: f64,
    pub step2_fraction: f64,
    pub visibility: bool,
    pub cube_side: usize,
    pub visibility_fraction: f64,
    pub column_fraction: f64,
    pub spill_dir: Option<PathBuf>,
}

impl Default for PrecomputeSection {
    fn default() -> Self {
        let t = TransferSettings::default();
        let f = FoldSettings::default();
        PrecomputeSection {
            parts: 4,
            level: None,
            step1_fraction: t.step1_fraction,
            step2_fraction: t.step2_fraction,
            visibility: false,
            cube_side: 16,
            visibility_fraction: f.visibility_fraction,
            column_fraction: f.column_fraction,
            spill_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSpec {
    pub sigma_s_prime: Rgb,
    pub sigma_a: Rgb,
    pub g: f64,
    pub eta: f64,
}

impl Default for MaterialSpec {
    /// Skin-like coefficients, mm⁻¹.
    fn default() -> Self {
        MaterialSpec { sigma_s_prime: [0.74, 0.88, 1.01], sigma_a: [0.032, 0.17, 0.48], g: 0.0, eta: 1.3 }
    }
}

impl MaterialSpec {
    pub fn to_material(self) -> Result<OpticalMaterial> {
        Ok(OpticalMaterial::new(self.sigma_s_prime, self.sigma_a, self.g, self.eta)?)
    }

    pub fn from_material(m: &OpticalMaterial) -> Self {
        MaterialSpec { sigma_s_prime: m.sigma_s_prime, sigma_a: m.sigma_a, g: m.g, eta: m.eta }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LightSpec {
    Point {
        position: [f64; 3],
        intensity: Rgb,
    },
    Directional {
        direction: [f64; 3],
        irradiance: Rgb,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        radiance: Rgb,
    },
    /// Environment from a constant, a cross image, or six face images.
    Ambient {
        #[serde(default)]
        constant: Option<Rgb>,
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        faces: Option<Vec<PathBuf>>,
        #[serde(default = "default_side")]
        side: usize,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn default_side() -> usize {
    16
}

fn one() -> f64 {
    1.0
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl LightSpec {
    /// Relative paths resolve against `base`.
    pub fn to_light(&self, base: &Path) -> Result<Light> {
        Ok(match self {
            LightSpec::Point { position, intensity } => Light::point(v3(*position), *intensity),
            LightSpec::Directional { direction, irradiance } => {
                if v3(*direction).length() == 0.0 {
                    return Err(LucentError::Config("directional light needs a non-zero direction".into()));
                }
                Light::directional(v3(*direction), *irradiance)
            }
            LightSpec::Sphere { center, radius, radiance } => Light::sphere(v3(*center), *radius, *radiance),
            LightSpec::Ambient { constant, path, faces, side, scale } => {
                let map = match (constant, path, faces) {
                    (Some(c), None, None) => Cubemap::constant(*side, *c)?,
                    (None, Some(p), None) => load_cubemap_cross(&base.join(p))?,
                    (None, None, Some(f)) => {
                        load_cubemap_faces(&f.iter().map(|p| base.join(p)).collect::<Vec<_>>())?
                    }
                    _ => {
                        return Err(LucentError::Config(
                            "ambient light needs exactly one of constant, path, faces".into(),
                        ))
                    }
                };
                let texels = map.texels.iter().map(|t| t.map(|v| v * scale)).collect();
                Light::Ambient { environment: Cubemap::new(map.side, texels)? }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "y_up")]
    pub up: [f64; 3],
    #[serde(default = "default_fov")]
    pub fov_y: f64,
}

fn y_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_fov() -> f64 {
    40.0
}

impl CameraSpec {
    pub fn to_camera(self) -> Camera {
        Camera { position: v3(self.position), look_at: v3(self.look_at), up: v3(self.up), fov_y: self.fov_y }
    }

    pub fn from_camera(c: &Camera) -> Self {
        let a = |v: Vec3| [v.x, v.y, v.z];
        CameraSpec { position: a(c.position), look_at: a(c.look_at), up: a(c.up), fov_y: c.fov_y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub width: usize,
    pub height: usize,
    pub exposure: f64,
    pub irradiance_keep: f64,
    pub environment_coefficients: usize,
    /// Add a white point light when `lights` is empty.
    pub default_light: bool,
}

impl Default for RenderSection {
    fn default() -> Self {
        let r = RuntimeSettings::default();
        RenderSection {
            width: 640,
            height: 480,
            exposure: 1.0,
            irradiance_keep: r.irradiance_keep,
            environment_coefficients: r.environment_coefficients,
            default_light: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: String,
    /// Static editor bundle served at `/`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection { bind: "127.0.0.1:7878".into(), ui_dir: None }
    }
}

/// Names accepted after `builtin:`.
pub const BUILTIN_MESHES: [&str; 4] = ["icosphere", "slab", "bust", "cube"];

pub fn builtin_mesh(name: &str) -> Option<TriangleMesh> {
    Some(match name {
        "icosphere" => shapes::icosphere(4, 10.0),
        "slab" => shapes::slab(40.0, 40.0, 2.5, 1.25),
        "bust" => shapes::bust(3),
        "cube" => shapes::unit_cube(),
        _ => return None,
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| LucentError::io(path, e))?;
        toml::from_str(&text).map_err(|e| LucentError::Config(format!("{}: {e}", path.display())))
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if !self.mesh.starts_with("builtin:") && Path::new(&self.mesh).is_relative() {
            self.mesh = base.join(&self.mesh).to_string_lossy().into_owned();
        }
        for p in [&mut self.container, &mut self.basis_file, &mut self.precompute.spill_dir, &mut self.serve.ui_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for l in &mut self.lights {
            if let LightSpec::Ambient { path, faces, .. } = l {
                path.iter_mut().for_each(fix);
                faces.iter_mut().flatten().for_each(fix);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks everything that can be checked without loading inputs.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(LucentError::Config(m));
        let b = &self.basis;
        if b.k == 0 {
            return cfg("basis.k must be at least 1".into());
        }
        if b.error_counts.contains(&0) {
            return cfg("basis.error_counts entries must be at least 1".into());
        }
        let p = &self.precompute;
        if p.parts == 0 {
            return cfg("precompute.parts must be at least 1".into());
        }
        for (name, v) in [
            ("step1_fraction", p.step1_fraction),
            ("step2_fraction", p.step2_fraction),
            ("visibility_fraction", p.visibility_fraction),
            ("column_fraction", p.column_fraction),
            ("render.irradiance_keep", self.render.irradiance_keep),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return cfg(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if !p.cube_side.is_power_of_two() {
            return cfg(format!("precompute.cube_side must be a power of two, got {}", p.cube_side));
        }
        self.material.to_material()?;
        if self.render.width == 0 || self.render.height == 0 {
            return cfg("render size must be positive".into());
        }
        if !(self.render.exposure.is_finite() && self.render.exposure > 0.0) {
            return cfg("render.exposure must be positive".into());
        }
        if let Some(c) = self.camera {
            c.to_camera().validate()?;
        }
        if let Some(name) = self.mesh.strip_prefix("builtin:") {
            if !BUILTIN_MESHES.contains(&name) {
                return cfg(format!("unknown builtin mesh '{name}' (have {})", BUILTIN_MESHES.join(", ")));
            }
        }
        Ok(())
    }

    pub fn load_mesh(&self, base: &Path) -> Result<TriangleMesh> {
        match self.mesh.strip_prefix("builtin:") {
            Some(name) => builtin_mesh(name).ok_or_else(|| LucentError::Config(format!("unknown builtin mesh '{name}'"))),
            None => load_obj(&base.join(&self.mesh)),
        }
    }

    pub fn transfer_settings(&self) -> TransferSettings {
        TransferSettings {
            step1_fraction: self.precompute.step1_fraction,
            step2_fraction: self.precompute.step2_fraction,
        }
    }

    pub fn precompute_options(&self) -> PrecomputeOptions {
        let p = &self.precompute;
        PrecomputeOptions {
            parts: p.parts,
            level: p.level,
            transfer: self.transfer_settings(),
            visibility: p.visibility.then_some(VisibilityOptions {
                cube_side: p.cube_side,
                eta: self.material.eta,
                fold: FoldSettings { visibility_fraction: p.visibility_fraction, column_fraction: p.column_fraction },
            }),
            spill_dir: p.spill_dir.clone(),
            ..PrecomputeOptions::default()
        }
    }

    pub fn runtime_settings(&self) -> RuntimeSettings {
        RuntimeSettings {
            irradiance_keep: self.render.irradiance_keep,
            environment_coefficients: self.render.environment_coefficients,
            ..RuntimeSettings::default()
        }
    }

    /// Configured lights, or one white point light above and in front of the
    /// mesh when none are configured and `render.default_light` is set.
    pub fn light_rig(&self, bounds: Aabb, base: &Path) -> Result<LightRig> {
        let lights = if self.lights.is_empty() && self.render.default_light {
            vec![default_light(bounds)]
        } else {
            self.lights.iter().map(|l| l.to_light(base)).collect::<Result<_>>()?
        };
        Ok(LightRig::new(lights)?)
    }

    pub fn camera_for(&self, bounds: Aabb) -> Camera {
        match self.camera {
            Some(c) => c.to_camera(),
            None => Camera::framing(bounds, Vec3::new(0.3, 0.4, 1.0), 3.0),
        }
    }
}

/// Point light at three bounding radii along (1, 1.5, 2), delivering
/// irradiance π at the mesh centre.
pub fn default_light(bounds: Aabb) -> Light {
    let d = 1.5 * bounds.diagonal();
    let pos = bounds.centroid() + Vec3::new(1.0, 1.5, 2.0).normalized() * d;
    let i = std::f64::consts::PI * d * d;
    Light::point(pos, [i; 3])
}
