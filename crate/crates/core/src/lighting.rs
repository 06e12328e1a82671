//! Irradiance at surface samples from point, directional, spherical and
//! environment lights, with ray-cast shadows.
//!
//! Every irradiance value already includes the Fresnel transmittance into the
//! surface, `F_t(η, n·ω)`, so that the transfer operators stay independent of
//! the material.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dipole::fresnel_transmittance;
use crate::error::{Error, Result};
use crate::math::{atan2, cos, sin, sqrt, Aabb, Rgb, Vec3, PI};
use crate::surface::{SurfaceSamples, TriangleMesh};
use crate::wavelets::{compress_top_n, SparseSpectrum, Wavelet};

/// Cone samples per spherical light (8×8 strata).
pub const SPHERE_LIGHT_SAMPLES: usize = 64;

/// Ray origin offset along the normal as a fraction of the bounding-box diagonal.
pub const RAY_OFFSET_SCALE: f64 = 1e-4;

/// Möller–Trumbore, two-sided. Returns the hit distance along `dir`.
pub fn ray_triangle(origin: Vec3, dir: Vec3, v0: Vec3, v1: Vec3, v2: Vec3) -> Option<f64> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-14 * e1.length() * e2.length() * dir.length() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(q) * inv)
}

#[derive(Debug, Clone, Copy)]
struct BvhNode {
    bounds: Aabb,
    /// First triangle for leaves, left child otherwise (right is `left + 1`).
    start: u32,
    /// Triangle count; 0 marks an interior node.
    count: u32,
}

/// Bounding-volume hierarchy over a mesh's triangles for shadow queries.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    triangles: Vec<[Vec3; 3]>,
}

const LEAF_SIZE: usize = 4;

pub fn build_accelerator(mesh: &TriangleMesh) -> Bvh {
    let tris: Vec<[Vec3; 3]> =
        mesh.triangles.iter().map(|t| t.map(|i| mesh.positions[i as usize])).collect();
    Bvh::new(tris)
}

impl Bvh {
    pub fn new(triangles: Vec<[Vec3; 3]>) -> Bvh {
        let centroids: Vec<Vec3> = triangles.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut nodes = vec![BvhNode { bounds: Aabb::EMPTY, start: 0, count: 0 }];
        let mut stack = vec![(0usize, 0usize, order.len())];
        while let Some((node, lo, hi)) = stack.pop() {
            let bounds = order[lo..hi]
                .iter()
                .fold(Aabb::EMPTY, |b, &t| triangles[t as usize].iter().fold(b, |b, &p| b.grow(p)));
            nodes[node].bounds = bounds;
            if hi - lo <= LEAF_SIZE {
                nodes[node].start = lo as u32;
                nodes[node].count = (hi - lo) as u32;
                continue;
            }
            let cb = Aabb::from_points(order[lo..hi].iter().map(|&t| centroids[t as usize]));
            let axis = cb.extent().max_axis();
            let mid = (lo + hi) / 2;
            order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
                centroids[a as usize].axis(axis).total_cmp(&centroids[b as usize].axis(axis)).then(a.cmp(&b))
            });
            let left = nodes.len();
            nodes.push(BvhNode { bounds: Aabb::EMPTY, start: 0, count: 0 });
            nodes.push(BvhNode { bounds: Aabb::EMPTY, start: 0, count: 0 });
            nodes[node].start = left as u32;
            stack.push((left, lo, mid));
            stack.push((left + 1, mid, hi));
        }
        let triangles = order.iter().map(|&t| triangles[t as usize]).collect();
        Bvh { nodes, triangles }
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// True if any triangle is hit at a distance in `(t_min, t_max)`.
    pub fn any_hit(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = [0u32; 64];
        let mut top = 1;
        while top > 0 {
            top -= 1;
            let node = self.nodes[stack[top] as usize];
            if !slab_test(&node.bounds, origin, inv, t_min, t_max) {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for t in &self.triangles[s..s + node.count as usize] {
                    if let Some(d) = ray_triangle(origin, dir, t[0], t[1], t[2]) {
                        if d > t_min && d < t_max {
                            return true;
                        }
                    }
                }
            } else {
                stack[top] = node.start;
                stack[top + 1] = node.start + 1;
                top += 2;
            }
        }
        false
    }

    /// Reference query that tests every triangle.
    pub fn any_hit_brute_force(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> bool {
        self.triangles.iter().any(|t| {
            ray_triangle(origin, dir, t[0], t[1], t[2]).is_some_and(|d| d > t_min && d < t_max)
        })
    }
}

fn slab_test(b: &Aabb, origin: Vec3, inv: Vec3, t_min: f64, t_max: f64) -> bool {
    let mut lo = t_min;
    let mut hi = t_max;
    for a in 0..3 {
        let o = origin.axis(a);
        let i = inv.axis(a);
        let (mut t0, mut t1) = ((b.min.axis(a) - o) * i, (b.max.axis(a) - o) * i);
        if t0.is_nan() || t1.is_nan() {
            // ray parallel to and lying on a slab plane
            continue;
        }
        if t0 > t1 {
            core::mem::swap(&mut t0, &mut t1);
        }
        // widen slightly so boundary-grazing rays are never culled
        let pad = 1e-9 * (t0.abs().max(t1.abs()) + 1.0);
        lo = lo.max(t0 - pad);
        hi = hi.min(t1 + pad);
        if lo > hi {
            return false;
        }
    }
    true
}

/// Six-face environment map, faces ordered +X, −X, +Y, −Y, +Z, −Z, each
/// `side × side` texels stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Cubemap {
    pub side: usize,
    pub texels: Vec<Rgb>,
}

impl Cubemap {
    pub fn new(side: usize, texels: Vec<Rgb>) -> Result<Cubemap> {
        if side == 0 || !side.is_power_of_two() {
            return Err(Error::InvalidCubemap(format!("face side {side} is not a power of two")));
        }
        if texels.len() != 6 * side * side {
            return Err(Error::InvalidCubemap(format!(
                "expected {} texels, got {}",
                6 * side * side,
                texels.len()
            )));
        }
        if texels.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidCubemap("radiance must be finite and non-negative".into()));
        }
        Ok(Cubemap { side, texels })
    }

    pub fn constant(side: usize, radiance: Rgb) -> Result<Cubemap> {
        Cubemap::new(side, vec![radiance; 6 * side * side])
    }

    pub fn len(&self) -> usize {
        self.texels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texels.is_empty()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.texels.iter().map(|t| t[c]).collect()
    }
}

/// Direction set of a cubemap: texel-centre directions and solid angles.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeDirections {
    pub side: usize,
    pub directions: Vec<Vec3>,
    pub solid_angles: Vec<f64>,
}

/// Face-local coordinates `(u, v) ∈ [-1, 1]²` to a unit direction.
pub fn face_direction(face: usize, u: f64, v: f64) -> Vec3 {
    let d = match face {
        0 => Vec3::new(1.0, -v, -u),
        1 => Vec3::new(-1.0, -v, u),
        2 => Vec3::new(u, 1.0, v),
        3 => Vec3::new(u, -1.0, -v),
        4 => Vec3::new(u, -v, 1.0),
        _ => Vec3::new(-u, -v, -1.0),
    };
    d.normalized()
}

fn area_element(x: f64, y: f64) -> f64 {
    atan2(x * y, sqrt(x * x + y * y + 1.0))
}

/// Solid angle of the texel at `(row, col)` on a face of the given side.
pub fn texel_solid_angle(side: usize, row: usize, col: usize) -> f64 {
    let s = side as f64;
    let x0 = 2.0 * col as f64 / s - 1.0;
    let x1 = 2.0 * (col + 1) as f64 / s - 1.0;
    let y0 = 2.0 * row as f64 / s - 1.0;
    let y1 = 2.0 * (row + 1) as f64 / s - 1.0;
    area_element(x0, y0) - area_element(x0, y1) - area_element(x1, y0) + area_element(x1, y1)
}

impl CubeDirections {
    pub fn new(side: usize) -> Result<CubeDirections> {
        if side == 0 || !side.is_power_of_two() {
            return Err(Error::InvalidCubemap(format!("face side {side} is not a power of two")));
        }
        let mut directions = Vec::with_capacity(6 * side * side);
        let mut solid_angles = Vec::with_capacity(6 * side * side);
        for face in 0..6 {
            for row in 0..side {
                for col in 0..side {
                    let u = 2.0 * (col as f64 + 0.5) / side as f64 - 1.0;
                    let v = 2.0 * (row as f64 + 0.5) / side as f64 - 1.0;
                    directions.push(face_direction(face, u, v));
                    solid_angles.push(texel_solid_angle(side, row, col));
                }
            }
        }
        Ok(CubeDirections { side, directions, solid_angles })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Haar coefficients of an environment map, per channel, over the
/// concatenated six faces.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpectrum {
    pub side: usize,
    pub channels: [SparseSpectrum; 3],
}

pub const DEFAULT_ENVIRONMENT_COEFFICIENTS: usize = 128;

/// Per-face Haar transform, keeping the `n` largest coefficients per
/// channel (`None` keeps all).
pub fn project_environment(map: &Cubemap, n: Option<usize>) -> EnvironmentSpectrum {
    let channels = core::array::from_fn(|c| {
        let mut values = map.channel(c);
        Wavelet::Haar.forward_parts(&mut values, map.side);
        compress_top_n(&values, n.unwrap_or(values.len()))
    });
    EnvironmentSpectrum { side: map.side, channels }
}

/// Radiance per direction reconstructed from a (truncated) spectrum.
pub fn reconstruct_environment(spectrum: &EnvironmentSpectrum) -> Cubemap {
    let side = spectrum.side;
    let mut texels = vec![[0.0; 3]; 6 * side * side];
    for (c, ch) in spectrum.channels.iter().enumerate() {
        let mut values = ch.to_dense();
        Wavelet::Haar.inverse_parts(&mut values, side);
        for (t, v) in texels.iter_mut().zip(values) {
            t[c] = v;
        }
    }
    Cubemap { side, texels }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Light {
    /// Isotropic point source; `intensity` in W·sr⁻¹ per channel.
    Point { position: Vec3, intensity: Rgb },
    /// Distant light. `direction` points from the surface toward the light;
    /// `irradiance` is measured perpendicular to it, W·mm⁻².
    Directional { direction: Vec3, irradiance: Rgb },
    /// Distant environment given as radiance per cubemap texel.
    Ambient { environment: Cubemap },
    /// Uniformly emitting sphere; `radiance` in W·mm⁻²·sr⁻¹.
    LocalSphere { center: Vec3, radius: f64, radiance: Rgb },
}

impl Light {
    pub fn point(position: Vec3, intensity: Rgb) -> Light {
        Light::Point { position, intensity }
    }

    pub fn directional(direction: Vec3, irradiance: Rgb) -> Light {
        Light::Directional { direction: direction.normalized(), irradiance }
    }

    pub fn sphere(center: Vec3, radius: f64, radiance: Rgb) -> Light {
        Light::LocalSphere { center, radius, radiance }
    }

    fn scaled(&self, f: f64) -> Light {
        let s = |c: &Rgb| c.map(|v| v * f);
        match self {
            Light::Point { position, intensity } => Light::Point { position: *position, intensity: s(intensity) },
            Light::Directional { direction, irradiance } => {
                Light::Directional { direction: *direction, irradiance: s(irradiance) }
            }
            Light::Ambient { environment } => Light::Ambient {
                environment: Cubemap { side: environment.side, texels: environment.texels.iter().map(s).collect() },
            },
            Light::LocalSphere { center, radius, radiance } => {
                Light::LocalSphere { center: *center, radius: *radius, radiance: s(radiance) }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LightRig {
    pub lights: Vec<Light>,
}

fn non_negative(c: &Rgb) -> bool {
    c.iter().all(|v| v.is_finite() && *v >= 0.0)
}

impl LightRig {
    pub fn new(lights: Vec<Light>) -> Result<LightRig> {
        let rig = LightRig { lights };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ambient = 0;
        for (i, l) in self.lights.iter().enumerate() {
            let ok = match l {
                Light::Point { position, intensity } => position.is_finite() && non_negative(intensity),
                Light::Directional { direction, irradiance } => {
                    (direction.length() - 1.0).abs() < 1e-6 && non_negative(irradiance)
                }
                Light::Ambient { environment } => {
                    ambient += 1;
                    Cubemap::new(environment.side, environment.texels.clone()).is_ok()
                }
                Light::LocalSphere { center, radius, radiance } => {
                    center.is_finite() && radius.is_finite() && *radius >= 0.0 && non_negative(radiance)
                }
            };
            if !ok {
                return Err(Error::InvalidLight(format!("light {i} has invalid parameters")));
            }
        }
        if ambient > 1 {
            return Err(Error::InvalidLight("at most one ambient light may be active".into()));
        }
        Ok(())
    }

    pub fn ambient(&self) -> Option<&Cubemap> {
        self.lights.iter().find_map(|l| match l {
            Light::Ambient { environment } => Some(environment),
            _ => None,
        })
    }

    /// Every intensity multiplied by `f`.
    pub fn scaled(&self, f: f64) -> LightRig {
        LightRig { lights: self.lights.iter().map(|l| l.scaled(f)).collect() }
    }
}

/// Shadow-ray setup shared by direct lighting and visibility precompute.
#[derive(Debug, Clone, Copy)]
pub struct ShadowQuery<'a> {
    pub accel: &'a Bvh,
    /// Origin offset along the normal, mm.
    pub epsilon: f64,
}

impl<'a> ShadowQuery<'a> {
    pub fn for_mesh(accel: &'a Bvh, mesh: &TriangleMesh) -> ShadowQuery<'a> {
        ShadowQuery { accel, epsilon: RAY_OFFSET_SCALE * mesh.bounds().diagonal() }
    }

    /// Unoccluded from `p` (offset along `n`) toward `dir` for `distance`.
    pub fn visible(&self, p: Vec3, n: Vec3, dir: Vec3, distance: f64) -> bool {
        let origin = p + n * self.epsilon;
        !self.accel.any_hit(origin, dir, 0.0, distance)
    }
}

/// Seed for one (sample, sphere) pair. It depends on the sphere's geometry
/// rather than its slot in the rig, so irradiance stays additive over lights.
fn sample_seed(sample: usize, center: Vec3, radius: f64) -> u64 {
    let geom = center.x.to_bits() ^ center.y.to_bits().rotate_left(21) ^ center.z.to_bits().rotate_left(42)
        ^ radius.to_bits().rotate_left(11);
    // splitmix-style mixing so neighbouring samples get unrelated streams
    let mut z = (sample as u64) ^ geom.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn irradiance_at(i: usize, p: Vec3, n: Vec3, rig: &LightRig, shadow: &ShadowQuery, eta: f64) -> Rgb {
    let mut e = [0.0; 3];
    let mut add = |scale: f64, c: &Rgb| {
        for ch in 0..3 {
            e[ch] += scale * c[ch];
        }
    };
    for light in &rig.lights {
        match light {
            Light::Point { position, intensity } => {
                let to = *position - p;
                let d2 = to.length_squared();
                let d = sqrt(d2);
                if d == 0.0 {
                    continue;
                }
                let w = to / d;
                let c = n.dot(w);
                if c <= 0.0 || !shadow.visible(p, n, w, d) {
                    continue;
                }
                add(fresnel_transmittance(eta, c) * c / d2, intensity);
            }
            Light::Directional { direction, irradiance } => {
                let c = n.dot(*direction);
                if c <= 0.0 || !shadow.visible(p, n, *direction, f64::INFINITY) {
                    continue;
                }
                add(fresnel_transmittance(eta, c) * c, irradiance);
            }
            Light::LocalSphere { center, radius, radiance } => {
                add(sphere_light_factor(i, p, n, *center, *radius, shadow, eta), radiance);
            }
            Light::Ambient { .. } => {}
        }
    }
    e
}

/// `∫ V·F_t·cos dω` over the cone subtended by a sphere, estimated with
/// stratified samples; multiply by the sphere's radiance.
#[allow(clippy::too_many_arguments)]
fn sphere_light_factor(
    sample: usize,
    p: Vec3,
    n: Vec3,
    center: Vec3,
    radius: f64,
    shadow: &ShadowQuery,
    eta: f64,
) -> f64 {
    let to = center - p;
    let d = to.length();
    if radius <= 0.0 || d <= radius {
        return 0.0;
    }
    let axis = to / d;
    let sin_max = radius / d;
    let cos_max = sqrt((1.0 - sin_max * sin_max).max(0.0));
    let solid_angle = 2.0 * PI * (1.0 - cos_max);
    let (t1, t2) = axis.orthonormal_basis();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(sample, center, radius));
    let strata = 8;
    let mut acc = 0.0;
    for a in 0..strata {
        for b in 0..strata {
            let u = (a as f64 + unit_f64(&mut rng)) / strata as f64;
            let v = (b as f64 + unit_f64(&mut rng)) / strata as f64;
            let ct = 1.0 - u * (1.0 - cos_max);
            let st = sqrt((1.0 - ct * ct).max(0.0));
            let phi = 2.0 * PI * v;
            let w = axis * ct + t1 * (st * cos(phi)) + t2 * (st * sin(phi));
            let c = n.dot(w);
            if c <= 0.0 {
                continue;
            }
            // distance to the near side of the sphere along w
            let b_ = w.dot(to);
            let disc = b_ * b_ - (d * d - radius * radius);
            let hit = b_ - sqrt(disc.max(0.0));
            if !shadow.visible(p, n, w, hit) {
                continue;
            }
            acc += fresnel_transmittance(eta, c) * c;
        }
    }
    acc * solid_angle / SPHERE_LIGHT_SAMPLES as f64
}

/// Per-sample irradiance from the non-ambient lights of `rig`, W·mm⁻².
/// Ambient lights are skipped; they go through the environment path.
pub fn irradiance_direct(samples: &SurfaceSamples, rig: &LightRig, shadow: &ShadowQuery, eta: f64) -> Vec<Rgb> {
    crate::par::map_indexed(samples.len(), |i| {
        irradiance_at(i, samples.positions[i], samples.normals[i], rig, shadow, eta)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use crate::surface::sample_surface;

    fn unit(rng: &mut ChaCha8Rng) -> f64 {
        unit_f64(rng)
    }

    fn one_sample(p: Vec3, n: Vec3) -> SurfaceSamples {
        SurfaceSamples { positions: vec![p], normals: vec![n], areas: vec![1.0], source_vertex: vec![0] }
    }

    fn empty_bvh() -> Bvh {
        Bvh::new(Vec::new())
    }

    #[test]
    fn single_triangle_hits() {
        let bvh = Bvh::new(vec![[Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)]]);
        let o = Vec3::new(0.2, 0.2, 1.0);
        assert!(bvh.any_hit(o, Vec3::new(0.0, 0.0, -1.0), 0.0, 10.0));
        assert!(bvh.any_hit(Vec3::new(0.2, 0.2, -1.0), Vec3::new(0.0, 0.0, 1.0), 0.0, 10.0));
        assert!(!bvh.any_hit(o, Vec3::new(1.0, 0.0, 0.0), 0.0, 10.0));
        assert!(!bvh.any_hit(o, Vec3::new(0.0, 0.0, -1.0), 0.0, 0.5));
        assert!(!bvh.any_hit(Vec3::new(5.0, 5.0, 5.0), Vec3::new(0.0, 0.0, 1.0), 0.0, f64::INFINITY));
    }

    #[test]
    fn bvh_agrees_with_brute_force() {
        let mesh = shapes::bust(2);
        let bvh = build_accelerator(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = mesh.bounds();
        let mut hits = 0;
        for _ in 0..10_000 {
            let o = Vec3::new(
                b.min.x - 5.0 + unit(&mut rng) * (b.extent().x + 10.0),
                b.min.y - 5.0 + unit(&mut rng) * (b.extent().y + 10.0),
                b.min.z - 5.0 + unit(&mut rng) * (b.extent().z + 10.0),
            );
            let d = Vec3::new(unit(&mut rng) - 0.5, unit(&mut rng) - 0.5, unit(&mut rng) - 0.5).normalized();
            let t_max = unit(&mut rng) * 40.0;
            let fast = bvh.any_hit(o, d, 0.0, t_max);
            assert_eq!(fast, bvh.any_hit_brute_force(o, d, 0.0, t_max));
            hits += fast as usize;
        }
        assert!(hits > 1000 && hits < 9000, "{hits}");
    }

    #[test]
    fn point_light_inverse_square() {
        let bvh = empty_bvh();
        let q = ShadowQuery { accel: &bvh, epsilon: 1e-6 };
        let s = one_sample(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        let rig = LightRig::new(vec![Light::point(Vec3::new(0.0, 0.0, 2.0), [4.0; 3])]).unwrap();
        let e = irradiance_direct(&s, &rig, &q, 1.0);
        assert!((e[0][0] - 1.0).abs() < 1e-12);
        let below = LightRig::new(vec![Light::point(Vec3::new(0.0, 0.0, -2.0), [4.0; 3])]).unwrap();
        assert_eq!(irradiance_direct(&s, &below, &q, 1.0)[0], [0.0; 3]);
    }

    #[test]
    fn occluder_blocks_light() {
        let plane = vec![
            [Vec3::new(-5.0, -5.0, 1.0), Vec3::new(5.0, -5.0, 1.0), Vec3::new(5.0, 5.0, 1.0)],
            [Vec3::new(-5.0, -5.0, 1.0), Vec3::new(5.0, 5.0, 1.0), Vec3::new(-5.0, 5.0, 1.0)],
        ];
        let bvh = Bvh::new(plane);
        let q = ShadowQuery { accel: &bvh, epsilon: 1e-6 };
        let s = one_sample(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        for light in [
            Light::point(Vec3::new(0.0, 0.0, 2.0), [4.0; 3]),
            Light::directional(Vec3::new(0.0, 0.0, 1.0), [1.0; 3]),
            Light::sphere(Vec3::new(0.0, 0.0, 3.0), 0.5, [1.0; 3]),
        ] {
            let rig = LightRig::new(vec![light]).unwrap();
            assert_eq!(irradiance_direct(&s, &rig, &q, 1.3)[0], [0.0; 3]);
        }
    }

    #[test]
    fn directional_light_cosine_and_fresnel() {
        let bvh = empty_bvh();
        let q = ShadowQuery { accel: &bvh, epsilon: 1e-6 };
        let s = one_sample(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        let dir = Vec3::new(0.0, 0.6, 0.8);
        let rig = LightRig::new(vec![Light::directional(dir, [2.0, 1.0, 0.0])]).unwrap();
        let e = irradiance_direct(&s, &rig, &q, 1.3)[0];
        let ft = fresnel_transmittance(1.3, 0.8);
        assert!((e[0] - 2.0 * 0.8 * ft).abs() < 1e-12);
        assert!((e[1] - 0.8 * ft).abs() < 1e-12);
        assert_eq!(e[2], 0.0);
    }

    #[test]
    fn small_sphere_matches_point_light() {
        let bvh = empty_bvh();
        let q = ShadowQuery { accel: &bvh, epsilon: 1e-6 };
        let s = one_sample(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        let center = Vec3::new(3.0, 0.0, 4.0);
        let d = 5.0;
        let radius = d / 1000.0;
        let radiance = 7.0;
        let intensity = radiance * PI * radius * radius;
        let sphere = LightRig::new(vec![Light::sphere(center, radius, [radiance; 3])]).unwrap();
        let point = LightRig::new(vec![Light::point(center, [intensity; 3])]).unwrap();
        let a = irradiance_direct(&s, &sphere, &q, 1.3)[0][0];
        let b = irradiance_direct(&s, &point, &q, 1.3)[0][0];
        assert!((a - b).abs() / b < 0.01, "{a} vs {b}");
        // deterministic
        assert_eq!(a, irradiance_direct(&s, &sphere, &q, 1.3)[0][0]);
    }

    #[test]
    fn rig_validation() {
        let env = Cubemap::constant(2, [1.0; 3]).unwrap();
        assert!(LightRig::new(vec![
            Light::Ambient { environment: env.clone() },
            Light::Ambient { environment: env }
        ])
        .is_err());
        assert!(LightRig::new(vec![Light::point(Vec3::ZERO, [-1.0, 0.0, 0.0])]).is_err());
        assert!(LightRig::new(vec![Light::Directional { direction: Vec3::new(0.0, 0.0, 2.0), irradiance: [1.0; 3] }])
            .is_err());
        assert!(LightRig::new(vec![Light::sphere(Vec3::ZERO, -1.0, [1.0; 3])]).is_err());
        assert!(Cubemap::new(3, vec![[0.0; 3]; 54]).is_err());
    }

    #[test]
    fn solid_angles_sum_to_sphere() {
        for side in [1, 2, 16] {
            let dirs = CubeDirections::new(side).unwrap();
            let total: f64 = dirs.solid_angles.iter().sum();
            assert!((total - 4.0 * PI).abs() < 1e-10);
            for d in &dirs.directions {
                assert!((d.length() - 1.0).abs() < 1e-12);
            }
        }
        // centre texel of a large face ≈ flat patch of area (2/side)²
        let side = 256;
        let a = texel_solid_angle(side, side / 2, side / 2);
        assert!((a - (2.0 / side as f64).powi(2)).abs() / a < 1e-3);
    }

    #[test]
    fn face_directions_cover_axes() {
        let axes = [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
        ];
        for (f, a) in axes.iter().enumerate() {
            assert!((face_direction(f, 0.0, 0.0) - *a).length() < 1e-12);
        }
    }

    #[test]
    fn constant_environment_has_six_dc_terms() {
        let env = Cubemap::constant(8, [0.5, 1.0, 2.0]).unwrap();
        let spec = project_environment(&env, None);
        for ch in &spec.channels {
            assert_eq!(ch.nnz(), 6);
            for (i, _) in ch.iter() {
                assert_eq!(i as usize % 64, 0);
            }
        }
    }

    #[test]
    fn environment_round_trip_and_nested_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let texels: Vec<Rgb> = (0..6 * 16).map(|_| [unit(&mut rng), unit(&mut rng), unit(&mut rng)]).collect();
        let env = Cubemap::new(4, texels).unwrap();
        let back = reconstruct_environment(&project_environment(&env, None));
        for (a, b) in env.texels.iter().zip(&back.texels) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-9);
            }
        }
        let mut spot = Cubemap::constant(4, [0.0; 3]).unwrap();
        spot.texels[37] = [10.0; 3];
        let mut last = f64::INFINITY;
        for n in 1..=96 {
            let r = reconstruct_environment(&project_environment(&spot, Some(n)));
            let err: f64 = r.texels.iter().zip(&spot.texels).map(|(a, b)| (a[0] - b[0]).powi(2)).sum();
            assert!(err <= last + 1e-12);
            last = err;
        }
        assert!(last < 1e-18);
    }

    #[test]
    fn irradiance_linear_additive_and_shadowing_only_reduces() {
        let mesh = shapes::bust(1);
        let s = sample_surface(&mesh);
        let bvh = build_accelerator(&mesh);
        let empty = empty_bvh();
        let q = ShadowQuery::for_mesh(&bvh, &mesh);
        let unshadowed = ShadowQuery { accel: &empty, epsilon: q.epsilon };
        let a = Light::point(Vec3::new(20.0, 30.0, 20.0), [100.0, 50.0, 25.0]);
        let b = Light::directional(Vec3::new(-1.0, 0.5, 0.3), [0.2; 3]);
        let c = Light::sphere(Vec3::new(0.0, 10.0, 25.0), 2.0, [3.0; 3]);
        let ea = irradiance_direct(&s, &LightRig::new(vec![a.clone()]).unwrap(), &q, 1.3);
        let eb = irradiance_direct(&s, &LightRig::new(vec![b.clone()]).unwrap(), &q, 1.3);
        let ec = irradiance_direct(&s, &LightRig::new(vec![c.clone()]).unwrap(), &q, 1.3);
        let rig = LightRig::new(vec![a, b, c]).unwrap();
        let all = irradiance_direct(&s, &rig, &q, 1.3);
        let doubled = irradiance_direct(&s, &rig.scaled(2.0), &q, 1.3);
        let free = irradiance_direct(&s, &rig, &unshadowed, 1.3);
        let mut shadowed = 0;
        for i in 0..s.len() {
            for ch in 0..3 {
                let sum = ea[i][ch] + eb[i][ch] + ec[i][ch];
                assert!(all[i][ch] >= 0.0);
                assert!((all[i][ch] - sum).abs() <= 1e-12 * sum.max(1.0));
                assert!((doubled[i][ch] - 2.0 * all[i][ch]).abs() <= 1e-12 * all[i][ch].max(1.0));
                assert!(all[i][ch] <= free[i][ch] + 1e-15);
            }
            shadowed += (all[i][0] < free[i][0]) as usize;
        }
        assert!(shadowed > 0);
    }
}
