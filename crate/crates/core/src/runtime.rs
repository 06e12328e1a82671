//! Relighting loop, cached material edits and a software rasterizer.
//!
//! A frame runs in five stages:
//! 1. irradiance `E` per sample, projected to the `w₀` domain and truncated;
//! 2. per-basis transfer application into the `w₁` domain (plus the folded
//!    ambient operator when an environment light is active);
//! 3. material weights `s_k(σ)`;
//! 4. the weighted sum over bases;
//! 5. inverse `w₁` transform back to samples, then per-vertex shading by
//!    `F_t(η, n·ω_o)/π`.
//!
//! Stages 1–2 are cached, so a material edit costs only stages 3–5 and a
//! camera move only the shading multiply.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::basisgen::{project_material, DiffusionBasis, MaterialWeights};
use crate::dipole::{fresnel_transmittance, OpticalMaterial};
use crate::error::{Error, Result};
use crate::lighting::{
    build_accelerator, irradiance_direct, project_environment, reconstruct_environment, Bvh, LightRig,
    ShadowQuery, DEFAULT_ENVIRONMENT_COEFFICIENTS, RAY_OFFSET_SCALE,
};
use crate::math::{ceil, floor, powf, round, tan, Rgb, Vec3, PI};
use crate::surface::{sample_surface, QuadtreeAtlas, SurfaceSamples, TriangleMesh};
use crate::transfer::{
    ambient_irradiance, to_wavelet_domain, CompressedTransfer, FoldedAmbient, VisibilityMatrix, W0, W1,
};
use crate::wavelets::{compress_top_n, SparseSpectrum};

/// Millisecond time source for stage timings.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Always reads zero; every stage timing comes out as 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view, degrees.
    pub fov_y: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let f = self.look_at - self.position;
        if !(self.position.is_finite() && self.look_at.is_finite() && self.up.is_finite()) {
            return Err(Error::InvalidCamera("non-finite camera vector".into()));
        }
        if f.length() < 1e-12 {
            return Err(Error::InvalidCamera("look_at coincides with position".into()));
        }
        if f.normalized().cross(self.up).length() < 1e-9 {
            return Err(Error::InvalidCamera("up is parallel to the view direction".into()));
        }
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return Err(Error::InvalidCamera(format!("field of view {} out of (0, 180)", self.fov_y)));
        }
        Ok(())
    }

    /// Orthonormal (right, up, forward) frame.
    pub fn frame(&self) -> (Vec3, Vec3, Vec3) {
        let f = (self.look_at - self.position).normalized();
        let r = f.cross(self.up).normalized();
        (r, r.cross(f), f)
    }

    /// Looks at the centre of `bounds` from `distance` bounding radii along `dir`.
    pub fn framing(bounds: crate::math::Aabb, dir: Vec3, distance: f64) -> Camera {
        let c = bounds.centroid();
        let radius = 0.5 * bounds.diagonal();
        Camera {
            position: c + dir.normalized() * (radius * distance),
            look_at: c,
            up: if dir.normalized().cross(Vec3::new(0.0, 1.0, 0.0)).length() < 1e-6 {
                Vec3::new(0.0, 0.0, 1.0)
            } else {
                Vec3::new(0.0, 1.0, 0.0)
            },
            fov_y: 40.0,
        }
    }
}

/// How environment light reaches the transfer operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmbientPath {
    /// Environment Haar coefficients through the folded operator.
    #[default]
    Folded,
    /// Environment irradiance from raw visibility, added to `E` before projection.
    Unfolded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeSettings {
    /// Fraction of `w₀` irradiance coefficients kept per channel.
    pub irradiance_keep: f64,
    /// Environment Haar coefficients kept per channel.
    pub environment_coefficients: usize,
    pub ambient_path: AmbientPath,
}

impl Default for RuntimeSettings {
    fn default() -> Self {
        RuntimeSettings {
            irradiance_keep: 0.04,
            environment_coefficients: DEFAULT_ENVIRONMENT_COEFFICIENTS,
            ambient_path: AmbientPath::Folded,
        }
    }
}

impl RuntimeSettings {
    pub fn lossless() -> Self {
        RuntimeSettings { irradiance_keep: 1.0, environment_coefficients: usize::MAX, ..Default::default() }
    }
}

/// Wall time per stage, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub irradiance: f64,
    pub transfer: f64,
    pub weighting: f64,
    pub inverse_wavelet: f64,
    pub shading: f64,
    pub raster: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.irradiance + self.transfer + self.weighting + self.inverse_wavelet + self.shading + self.raster
    }

    pub const NAMES: [&'static str; 6] = ["irradiance", "transfer", "weighting", "inverse_wavelet", "shading", "raster"];

    pub fn as_array(&self) -> [f64; 6] {
        [self.irradiance, self.transfer, self.weighting, self.inverse_wavelet, self.shading, self.raster]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameStats {
    /// Kept / total energy of the truncated `w₀` irradiance, per channel.
    pub irradiance_energy: [f64; 3],
    /// Samples whose shaded radiance was negative before clamping.
    pub clamped_samples: usize,
    /// Smallest shaded value before clamping.
    pub min_unclamped: f64,
    /// The requested material was outside the basis σ box and was clamped.
    pub material_clamped: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    /// Outgoing radiance per vertex, clamped to ≥ 0.
    pub radiance: Vec<Rgb>,
    /// Same before clamping.
    pub unclamped: Vec<Rgb>,
    pub timings: StageTimings,
    pub stats: FrameStats,
}

/// Everything the real-time loop needs, plus the stage caches.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: TriangleMesh,
    pub samples: SurfaceSamples,
    pub atlas: QuadtreeAtlas,
    pub basis: DiffusionBasis,
    pub transfer: CompressedTransfer,
    pub ambient: Option<FoldedAmbient>,
    pub visibility: Option<VisibilityMatrix>,
    pub settings: RuntimeSettings,
    material: OpticalMaterial,
    material_clamped: bool,
    rig: LightRig,
    camera: Camera,
    accel: Bvh,
    epsilon: f64,
    // stage caches
    irradiance: Vec<Rgb>,
    irradiance_energy: [f64; 3],
    /// `[channel][k]` transfer outputs in the `w₁` domain.
    responses: [Vec<Vec<f64>>; 3],
    weights: Option<MaterialWeights>,
    /// Unshaded per-sample response.
    exitance: Vec<Rgb>,
    lit: bool,
}

#[allow(clippy::too_many_arguments)]
impl Scene {
    pub fn new(
        mesh: TriangleMesh,
        atlas: QuadtreeAtlas,
        basis: DiffusionBasis,
        transfer: CompressedTransfer,
        material: OpticalMaterial,
        rig: LightRig,
        camera: Camera,
        settings: RuntimeSettings,
    ) -> Result<Scene> {
        let samples = sample_surface(&mesh);
        if atlas.sample_count() != samples.len() {
            return Err(Error::SceneMismatch(format!(
                "atlas covers {} samples, mesh has {}",
                atlas.sample_count(),
                samples.len()
            )));
        }
        transfer.matches_atlas(&atlas)?;
        if transfer.basis_count() != basis.count {
            return Err(Error::SceneMismatch(format!(
                "transfer has {} bases, basis file {}",
                transfer.basis_count(),
                basis.count
            )));
        }
        material.validate()?;
        rig.validate()?;
        camera.validate()?;
        let accel = build_accelerator(&mesh);
        let epsilon = RAY_OFFSET_SCALE * mesh.bounds().diagonal();
        let (material, material_clamped) = basis.sigma_box.clamp(&material);
        let n = samples.len();
        Ok(Scene {
            mesh,
            samples,
            atlas,
            basis,
            transfer,
            ambient: None,
            visibility: None,
            settings,
            material,
            material_clamped,
            rig,
            camera,
            accel,
            epsilon,
            irradiance: vec![[0.0; 3]; n],
            irradiance_energy: [1.0; 3],
            responses: Default::default(),
            weights: None,
            exitance: vec![[0.0; 3]; n],
            lit: false,
        })
    }

    pub fn with_ambient(mut self, folded: Option<FoldedAmbient>, visibility: Option<VisibilityMatrix>) -> Result<Scene> {
        if let Some(f) = &folded {
            if f.blocks.len() != self.basis.count {
                return Err(Error::SceneMismatch("folded ambient basis count differs".into()));
            }
        }
        if let Some(v) = &visibility {
            if v.sample_count != self.samples.len() {
                return Err(Error::SceneMismatch("visibility sample count differs".into()));
            }
        }
        self.ambient = folded;
        self.visibility = visibility;
        self.lit = false;
        Ok(self)
    }

    pub fn material(&self) -> &OpticalMaterial {
        &self.material
    }

    pub fn rig(&self) -> &LightRig {
        &self.rig
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn irradiance(&self) -> &[Rgb] {
        &self.irradiance
    }

    pub fn accelerator(&self) -> &Bvh {
        &self.accel
    }

    pub fn shadow_query(&self) -> ShadowQuery<'_> {
        ShadowQuery { accel: &self.accel, epsilon: self.epsilon }
    }

    /// Full pipeline, stages 1–5.
    pub fn relight(&mut self, clock: &dyn Clock) -> Result<FrameResult> {
        let mut t = StageTimings::default();
        let t0 = clock.now_ms();
        let domain = self.atlas.domain_len();
        let eta = self.material.eta;
        let mut e = irradiance_direct(&self.samples, &self.rig, &self.shadow_query(), eta);
        let environment = match self.rig.ambient() {
            Some(env) => {
                let n = self.settings.environment_coefficients;
                Some(project_environment(env, if n >= env.len() { None } else { Some(n) }))
            }
            None => None,
        };
        if let (Some(spec), AmbientPath::Unfolded) = (&environment, self.settings.ambient_path) {
            let vis = self.visibility.as_ref().ok_or(Error::MissingVisibility)?;
            let ambient_eta = self.ambient.as_ref().map_or(eta, |a| a.eta);
            let ea = ambient_irradiance(&self.samples, vis, &reconstruct_environment(spec), ambient_eta)?;
            for (a, b) in e.iter_mut().zip(ea) {
                for c in 0..3 {
                    a[c] += b[c];
                }
            }
        }
        let keep = (ceil(self.settings.irradiance_keep * domain as f64) as usize).clamp(1, domain);
        let mut projected: [SparseSpectrum; 3] = Default::default();
        for (c, p) in projected.iter_mut().enumerate() {
            let channel: Vec<f64> = e.iter().map(|v| v[c]).collect();
            let coeffs = to_wavelet_domain(&self.atlas, &channel, W0)?;
            *p = compress_top_n(&coeffs, keep);
            self.irradiance_energy[c] = if p.total_energy > 0.0 { p.kept_energy / p.total_energy } else { 1.0 };
        }
        self.irradiance = e;
        let t1 = clock.now_ms();
        t.irradiance = t1 - t0;

        let k_count = self.basis.count;
        let folded = match (&environment, self.settings.ambient_path) {
            (Some(spec), AmbientPath::Folded) => {
                Some((self.ambient.as_ref().ok_or(Error::MissingVisibility)?, spec))
            }
            _ => None,
        };
        for c in 0..3 {
            let outs = &mut self.responses[c];
            outs.resize_with(k_count, || vec![0.0; domain]);
            for (k, out) in outs.iter_mut().enumerate() {
                out.resize(domain, 0.0);
                self.transfer.apply(k, &projected[c], out);
                if let Some((f, spec)) = folded {
                    f.apply_add(k, &spec.channels[c], out)?;
                }
            }
        }
        t.transfer = clock.now_ms() - t1;
        self.lit = true;
        self.weights = None;
        self.finish(clock, t, true)
    }

    /// Stages 3–5 from cached transfer outputs.
    fn finish(&mut self, clock: &dyn Clock, mut t: StageTimings, reweight: bool) -> Result<FrameResult> {
        let domain = self.atlas.domain_len();
        if reweight || self.weights.is_none() {
            let t0 = clock.now_ms();
            let weights = project_material(&self.basis, &self.material);
            let mut sums = [vec![0.0; domain], vec![0.0; domain], vec![0.0; domain]];
            for (c, sum) in sums.iter_mut().enumerate() {
                for (s, v) in weights.s[c].iter().zip(&self.responses[c]) {
                    for (a, b) in sum.iter_mut().zip(v) {
                        *a += s * b;
                    }
                }
            }
            let t1 = clock.now_ms();
            t.weighting = t1 - t0;
            for (c, sum) in sums.iter_mut().enumerate() {
                W1.inverse_parts(sum, self.atlas.side);
                let values = self.atlas.unflatten(sum)?;
                for (x, v) in self.exitance.iter_mut().zip(values) {
                    x[c] = v;
                }
            }
            self.weights = Some(weights);
            t.inverse_wavelet = clock.now_ms() - t1;
        }
        let t2 = clock.now_ms();
        let unclamped = self.shade();
        let mut stats = FrameStats {
            irradiance_energy: self.irradiance_energy,
            material_clamped: self.material_clamped,
            min_unclamped: f64::INFINITY,
            ..Default::default()
        };
        let radiance: Vec<Rgb> = unclamped
            .iter()
            .map(|v| {
                let m = v[0].min(v[1]).min(v[2]);
                stats.min_unclamped = stats.min_unclamped.min(m);
                if m < 0.0 {
                    stats.clamped_samples += 1;
                }
                v.map(|x| x.max(0.0))
            })
            .collect();
        if stats.min_unclamped == f64::INFINITY {
            stats.min_unclamped = 0.0;
        }
        if self.material_clamped {
            stats.warnings.push("material outside the basis sigma box; clamped".into());
        }
        t.shading = clock.now_ms() - t2;
        Ok(FrameResult { radiance, unclamped, timings: t, stats })
    }

    /// `F_t(η, n·ω_o)/π` times the cached response, per vertex.
    fn shade(&self) -> Vec<Rgb> {
        let eta = self.material.eta;
        self.samples
            .positions
            .iter()
            .zip(&self.samples.normals)
            .zip(&self.exitance)
            .map(|((&p, &n), b)| {
                let f = shading_factor(eta, n, (self.camera.position - p).normalized());
                b.map(|v| f * v)
            })
            .collect()
    }

    /// Material edit: re-projects `s_k` and redoes stages 3–5 only. A change of
    /// η alters the Fresnel factor inside `E`, so it takes the full path.
    pub fn set_material(&mut self, material: OpticalMaterial, clock: &dyn Clock) -> Result<FrameResult> {
        material.validate()?;
        let (clamped, was_clamped) = self.basis.sigma_box.clamp(&material);
        let eta_changed = clamped.eta != self.material.eta;
        self.material = clamped;
        self.material_clamped = was_clamped;
        if eta_changed || !self.lit {
            return self.relight(clock);
        }
        self.finish(clock, StageTimings::default(), true)
    }

    pub fn set_lights(&mut self, rig: LightRig, clock: &dyn Clock) -> Result<FrameResult> {
        rig.validate()?;
        self.rig = rig;
        self.relight(clock)
    }

    /// Camera move: only the view-dependent shading changes.
    pub fn set_camera(&mut self, camera: Camera, clock: &dyn Clock) -> Result<FrameResult> {
        camera.validate()?;
        self.camera = camera;
        if !self.lit {
            return self.relight(clock);
        }
        self.finish(clock, StageTimings::default(), false)
    }

    /// The current state rendered from the caches (relighting first if needed).
    pub fn frame(&mut self, clock: &dyn Clock) -> Result<FrameResult> {
        if !self.lit {
            return self.relight(clock);
        }
        self.finish(clock, StageTimings::default(), false)
    }
}

pub fn shading_factor(eta: f64, normal: Vec3, to_viewer: Vec3) -> f64 {
    let c = normal.dot(to_viewer).clamp(0.0, 1.0);
    fresnel_transmittance(eta, c) / PI
}

/// Brute-force outgoing radiance: `F_t(ω_o)/π · Σ_i E_i·R(‖x_i − x_o‖)·A_i`
/// with an arbitrary per-channel radial kernel.
pub fn oracle_radiance(
    samples: &SurfaceSamples,
    irradiance: &[Rgb],
    kernel: &(dyn Fn(usize, f64) -> f64 + Sync),
    eta: f64,
    viewer: Vec3,
) -> Vec<Rgb> {
    crate::par::map_indexed(samples.len(), |o| {
        let xo = samples.positions[o];
        let mut acc = [0.0; 3];
        for i in 0..samples.len() {
            let r = (samples.positions[i] - xo).length();
            for c in 0..3 {
                if irradiance[i][c] != 0.0 {
                    acc[c] += irradiance[i][c] * kernel(c, r) * samples.areas[i];
                }
            }
        }
        let f = shading_factor(eta, samples.normals[o], (viewer - xo).normalized());
        acc.map(|v| f * v)
    })
}

/// 8-bit sRGB image, row-major from the top-left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

pub const BACKGROUND: [u8; 3] = [18, 18, 22];

pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * powf(v, 1.0 / 2.4) - 0.055
    }
}

pub fn encode_srgb8(v: f64) -> u8 {
    round(linear_to_srgb(v) * 255.0) as u8
}

/// Z-buffered rasterization of per-vertex radiance with perspective-correct
/// interpolation. Triangles crossing the near plane are skipped.
pub fn render_image(
    mesh: &TriangleMesh,
    radiance: &[Rgb],
    camera: &Camera,
    width: usize,
    height: usize,
    exposure: f64,
) -> Result<Image> {
    camera.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidCamera("image size must be positive".into()));
    }
    if radiance.len() != mesh.vertex_count() {
        return Err(Error::DimensionMismatch { expected: mesh.vertex_count(), actual: radiance.len() });
    }
    let (right, up, fwd) = camera.frame();
    let near = 1e-3 * mesh.bounds().diagonal().max(1e-9);
    let tan_half = tan(camera.fov_y.to_radians() * 0.5);
    let aspect = width as f64 / height as f64;
    // screen x, screen y, view depth
    let projected: Vec<(f64, f64, f64)> = mesh
        .positions
        .iter()
        .map(|&p| {
            let d = p - camera.position;
            let z = d.dot(fwd);
            let x = d.dot(right) / (z * tan_half * aspect);
            let y = d.dot(up) / (z * tan_half);
            ((x + 1.0) * 0.5 * width as f64, (1.0 - y) * 0.5 * height as f64, z)
        })
        .collect();
    let mut depth = vec![f64::INFINITY; width * height];
    let mut color = vec![None::<Rgb>; width * height];
    for tri in &mesh.triangles {
        let v = tri.map(|i| projected[i as usize]);
        if v.iter().any(|p| p.2 <= near) {
            continue;
        }
        let area = edge(v[0], v[1], v[2].0, v[2].1);
        if area.abs() < 1e-12 {
            continue;
        }
        let min_x = floor(v.iter().map(|p| p.0).fold(f64::INFINITY, f64::min)).max(0.0) as usize;
        let max_x = ceil(v.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)).min(width as f64) as usize;
        let min_y = floor(v.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)).max(0.0) as usize;
        let max_y = ceil(v.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)).min(height as f64) as usize;
        let cols = tri.map(|i| radiance[i as usize]);
        for py in min_y..max_y {
            for px in min_x..max_x {
                let (sx, sy) = (px as f64 + 0.5, py as f64 + 0.5);
                let w0 = edge(v[1], v[2], sx, sy) / area;
                let w1 = edge(v[2], v[0], sx, sy) / area;
                let w2 = edge(v[0], v[1], sx, sy) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // perspective-correct weights
                let (a, b, c) = (w0 / v[0].2, w1 / v[1].2, w2 / v[2].2);
                let inv_z = a + b + c;
                let z = 1.0 / inv_z;
                let idx = py * width + px;
                if z >= depth[idx] {
                    continue;
                }
                depth[idx] = z;
                let mut rgb = [0.0; 3];
                for ch in 0..3 {
                    rgb[ch] = (a * cols[0][ch] + b * cols[1][ch] + c * cols[2][ch]) * z;
                }
                color[idx] = Some(rgb);
            }
        }
    }
    let mut rgb = Vec::with_capacity(width * height * 3);
    for c in color {
        match c {
            Some(v) => rgb.extend(v.map(|x| encode_srgb8(x * exposure))),
            None => rgb.extend(BACKGROUND),
        }
    }
    Ok(Image { width, height, rgb })
}

fn edge(a: (f64, f64, f64), b: (f64, f64, f64), x: f64, y: f64) -> f64 {
    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
}

/// Median and 90th percentile of one stage over repeated runs, ms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageSummary {
    pub median: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSummary {
    pub stages: [StageSummary; 6],
    pub total: StageSummary,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub relight: PathSummary,
    pub edit: PathSummary,
}

fn summarize(values: &mut [f64]) -> StageSummary {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let pick = |q: f64| values[((q * (n - 1) as f64) + 0.5) as usize];
    StageSummary { median: pick(0.5), p90: pick(0.9) }
}

fn summarize_path(runs: &[StageTimings]) -> PathSummary {
    let mut out = PathSummary { samples: runs.len(), ..Default::default() };
    if runs.is_empty() {
        return out;
    }
    for s in 0..6 {
        let mut v: Vec<f64> = runs.iter().map(|t| t.as_array()[s]).collect();
        out.stages[s] = summarize(&mut v);
    }
    let mut totals: Vec<f64> = runs.iter().map(|t| t.total()).collect();
    out.total = summarize(&mut totals);
    out
}

/// Times `iterations` full relights and `iterations` material edits
/// (alternating between the current material and a perturbed copy).
pub fn bench(scene: &mut Scene, iterations: usize, clock: &dyn Clock) -> Result<BenchReport> {
    let iterations = iterations.max(1);
    scene.relight(clock)?;
    let original = *scene.material();
    let mut alt = original;
    for c in 0..3 {
        alt.sigma_a[c] *= 1.25;
        alt.sigma_s_prime[c] *= 0.9;
    }
    let mut relights = Vec::with_capacity(iterations);
    let mut edits = Vec::with_capacity(iterations);
    for i in 0..iterations {
        relights.push(scene.relight(clock)?.timings);
        let m = if i % 2 == 0 { alt } else { original };
        edits.push(scene.set_material(m, clock)?.timings);
    }
    scene.set_material(original, clock)?;
    Ok(BenchReport { relight: summarize_path(&relights), edit: summarize_path(&edits) })
}
