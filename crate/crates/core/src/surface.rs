//! Triangle meshes, per-vertex surface samples, and the quadtree atlas.
//!
//! The atlas splits the samples into `m` spatially coherent parts and lays
//! each part out on a `2ⁿ×2ⁿ` grid by recursive two-way median bisection:
//! every quadtree level bisects the points along the longest bounding-box
//! axis twice, and the four groups occupy the four quadrants in Morton order.
//! Cells that receive no sample are PAD cells; they hold zero before forward
//! transforms and are ignored after inverse transforms.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

fn position_key(p: Vec3) -> [u64; 3] {
    // +0.0 and -0.0 must merge
    let canon = |x: f64| if x == 0.0 { 0.0f64.to_bits() } else { x.to_bits() };
    [canon(p.x), canon(p.y), canon(p.z)]
}

impl TriangleMesh {
    /// Builds a clean mesh from raw data.
    ///
    /// Vertices with identical positions are merged (their supplied normals
    /// are averaged), degenerate and out-of-range triangles are rejected or
    /// dropped, unreferenced vertices are removed and missing normals are
    /// computed by area-weighted averaging.
    pub fn new(positions: Vec<Vec3>, triangles: Vec<[u32; 3]>, normals: Option<Vec<Vec3>>) -> Result<Self> {
        if let Some(n) = &normals {
            if n.len() != positions.len() {
                return Err(Error::DimensionMismatch { expected: positions.len(), actual: n.len() });
            }
        }
        if let Some(p) = positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidMesh(format!("vertex {p} is not finite")));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i as usize >= positions.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references vertex {bad} but only {} exist",
                    positions.len()
                )));
            }
        }

        // merge exact duplicates
        let mut remap = vec![0u32; positions.len()];
        let mut unique: Vec<Vec3> = Vec::new();
        let mut normal_sums: Vec<Vec3> = Vec::new();
        let mut seen: BTreeMap<[u64; 3], u32> = BTreeMap::new();
        for (i, &p) in positions.iter().enumerate() {
            let id = *seen.entry(position_key(p)).or_insert_with(|| {
                unique.push(p);
                normal_sums.push(Vec3::ZERO);
                (unique.len() - 1) as u32
            });
            remap[i] = id;
            if let Some(n) = &normals {
                normal_sums[id as usize] += n[i];
            }
        }

        let mut tris: Vec<[u32; 3]> = Vec::with_capacity(triangles.len());
        for tri in &triangles {
            let t = [remap[tri[0] as usize], remap[tri[1] as usize], remap[tri[2] as usize]];
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                continue;
            }
            let area = triangle_area(unique[t[0] as usize], unique[t[1] as usize], unique[t[2] as usize]);
            if !(area > 0.0) {
                continue;
            }
            tris.push(t);
        }
        if tris.is_empty() {
            return Err(Error::InvalidMesh("mesh has no non-degenerate triangles".into()));
        }

        // drop unreferenced vertices
        let mut used = vec![false; unique.len()];
        for t in &tris {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let mut compact = vec![u32::MAX; unique.len()];
        let mut out_pos = Vec::new();
        let mut out_normal_sums = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                compact[i] = out_pos.len() as u32;
                out_pos.push(unique[i]);
                out_normal_sums.push(normal_sums[i]);
            }
        }
        for t in tris.iter_mut() {
            for i in t.iter_mut() {
                *i = compact[*i as usize];
            }
        }

        let computed = area_weighted_normals(&out_pos, &tris);
        let normals_out: Vec<Vec3> = if normals.is_some() {
            out_normal_sums
                .iter()
                .zip(&computed)
                .map(|(s, c)| {
                    // already-unit normals pass through so meshes survive a save/load bit for bit
                    if (s.length_squared() - 1.0).abs() < 1e-12 {
                        *s
                    } else if s.length() > 1e-12 {
                        s.normalized()
                    } else {
                        *c
                    }
                })
                .collect()
        } else {
            computed
        };
        Ok(TriangleMesh { positions: out_pos, normals: normals_out, triangles: tris })
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        triangle_area(self.positions[a as usize], self.positions[b as usize], self.positions[c as usize])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.positions.iter().copied())
    }
}

pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * (b - a).cross(c - a).length()
}

fn area_weighted_normals(positions: &[Vec3], triangles: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::ZERO; positions.len()];
    for t in triangles {
        let [a, b, c] = t.map(|i| positions[i as usize]);
        // |cross| = 2·area, so summing raw cross products is area weighting
        let n = (b - a).cross(c - a);
        for &i in t {
            acc[i as usize] += n;
        }
    }
    acc.into_iter().map(|n| n.normalized()).collect()
}

/// Quadrature points for integrals over the surface: one per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Lumped area, one third of every incident triangle, mm².
    pub areas: Vec<f64>,
    pub source_vertex: Vec<u32>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }
}

pub fn sample_surface(mesh: &TriangleMesh) -> SurfaceSamples {
    let mut areas = vec![0.0; mesh.vertex_count()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let third = mesh.triangle_area(t) / 3.0;
        for &i in tri {
            areas[i as usize] += third;
        }
    }
    SurfaceSamples {
        positions: mesh.positions.clone(),
        normals: mesh.normals.clone(),
        areas,
        source_vertex: (0..mesh.vertex_count() as u32).collect(),
    }
}

fn sort_along_axis(points: &[Vec3], indices: &mut [u32]) {
    let bounds = Aabb::from_points(indices.iter().map(|&i| points[i as usize]));
    let axis = bounds.extent().max_axis();
    indices.sort_unstable_by(|&a, &b| {
        points[a as usize].axis(axis).total_cmp(&points[b as usize].axis(axis)).then(a.cmp(&b))
    });
}

/// Splits `indices` at the median of the longest axis; the lower half gets the extra point.
fn bisect<'a>(points: &[Vec3], indices: &'a mut [u32]) -> (&'a mut [u32], &'a mut [u32]) {
    if indices.len() > 1 {
        sort_along_axis(points, indices);
    }
    let mid = indices.len().div_ceil(2);
    indices.split_at_mut(mid)
}

/// Number of parts actually used for `m` requested parts.
pub fn effective_parts(m: usize) -> usize {
    m.max(1).next_power_of_two()
}

/// Recursive longest-axis median bisection into `m` (rounded up to a power of
/// two) parts. Returns one label per point.
pub fn partition_points(points: &[Vec3], m: usize) -> Vec<u32> {
    let parts = effective_parts(m);
    let depth = parts.trailing_zeros();
    let mut labels = vec![0u32; points.len()];
    let mut indices: Vec<u32> = (0..points.len() as u32).collect();
    fn recurse(points: &[Vec3], indices: &mut [u32], depth: u32, base: u32, labels: &mut [u32]) {
        if depth == 0 || indices.is_empty() {
            for &i in indices.iter() {
                labels[i as usize] = base;
            }
            return;
        }
        let (lo, hi) = bisect(points, indices);
        recurse(points, lo, depth - 1, base, labels);
        recurse(points, hi, depth - 1, base + (1 << (depth - 1)), labels);
    }
    recurse(points, &mut indices, depth, 0, &mut labels);
    labels
}

/// Grid cell of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRef {
    pub part: u32,
    pub row: u32,
    pub col: u32,
}

pub const PAD: u32 = u32::MAX;

/// Bijection between surface samples and non-PAD cells of `part_count`
/// grids of side `2^level`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadtreeAtlas {
    pub part_count: usize,
    pub level: u32,
    pub side: usize,
    /// Indexed by sample.
    pub assignment: Vec<CellRef>,
    /// Indexed by flat cell (`part·side² + row·side + col`); `PAD` where empty.
    pub inverse: Vec<u32>,
}

/// Smallest level at which every part of an `m`-way split of `n` samples fits.
pub fn default_level(sample_count: usize, m: usize) -> u32 {
    let per_part = sample_count.div_ceil(effective_parts(m)).max(1);
    let mut level = 0;
    while (1usize << (2 * level)) < per_part {
        level += 1;
    }
    level
}

/// How points are split among the four quadrants at each quadtree level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AtlasLayout {
    /// Median splits: quadrant counts differ by at most one, PAD cells are
    /// spread evenly through the grid.
    Balanced,
    /// Quadrants are filled to capacity in Morton order, so all PAD cells
    /// form one trailing run per part.
    #[default]
    Packed,
}

impl AtlasLayout {
    /// Size of the first group when `len` points are split into two groups
    /// of capacity `cap` each.
    fn first_len(self, len: usize, cap: usize) -> usize {
        match self {
            AtlasLayout::Balanced => len.div_ceil(2),
            AtlasLayout::Packed => len.min(cap),
        }
    }
}

pub fn build_quadtree_atlas(samples: &SurfaceSamples, m: usize, level: u32) -> Result<QuadtreeAtlas> {
    build_atlas_from_points(&samples.positions, m, level, AtlasLayout::default())
}

pub fn build_atlas_from_points(points: &[Vec3], m: usize, level: u32, layout: AtlasLayout) -> Result<QuadtreeAtlas> {
    let part_count = effective_parts(m);
    let side = 1usize << level;
    let capacity = side * side;
    let labels = partition_points(points, part_count);
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); part_count];
    for (i, &l) in labels.iter().enumerate() {
        members[l as usize].push(i as u32);
    }
    for (part, list) in members.iter().enumerate() {
        if list.len() > capacity {
            return Err(Error::AtlasOverflow { part, count: list.len(), capacity });
        }
    }

    let mut assignment = vec![CellRef { part: 0, row: 0, col: 0 }; points.len()];
    let mut inverse = vec![PAD; part_count * capacity];

    struct Placer<'a> {
        points: &'a [Vec3],
        layout: AtlasLayout,
        part: u32,
        out: &'a mut [CellRef],
    }

    impl Placer<'_> {
        fn split<'b>(&self, indices: &'b mut [u32], cap: usize) -> (&'b mut [u32], &'b mut [u32]) {
            if indices.len() > 1 {
                sort_along_axis(self.points, indices);
            }
            let first = self.layout.first_len(indices.len(), cap);
            indices.split_at_mut(first)
        }

        fn place(&mut self, indices: &mut [u32], level: u32, row: u32, col: u32) {
            if indices.is_empty() {
                return;
            }
            if level == 0 {
                debug_assert_eq!(indices.len(), 1);
                self.out[indices[0] as usize] = CellRef { part: self.part, row, col };
                return;
            }
            let h = 1u32 << (level - 1);
            let quad = 1usize << (2 * (level - 1));
            let (a, b) = self.split(indices, 2 * quad);
            let (a1, a2) = self.split(a, quad);
            self.place(a1, level - 1, row, col);
            self.place(a2, level - 1, row, col + h);
            let (b1, b2) = self.split(b, quad);
            self.place(b1, level - 1, row + h, col);
            self.place(b2, level - 1, row + h, col + h);
        }
    }

    for (part, list) in members.iter_mut().enumerate() {
        let mut placer = Placer { points, layout, part: part as u32, out: &mut assignment };
        placer.place(list, level, 0, 0);
    }
    for (i, c) in assignment.iter().enumerate() {
        let flat = c.part as usize * capacity + c.row as usize * side + c.col as usize;
        debug_assert_eq!(inverse[flat], PAD);
        inverse[flat] = i as u32;
    }
    Ok(QuadtreeAtlas { part_count, level, side, assignment, inverse })
}

impl QuadtreeAtlas {
    pub fn sample_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn cells_per_part(&self) -> usize {
        self.side * self.side
    }

    /// Length of the concatenated multi-part domain.
    pub fn domain_len(&self) -> usize {
        self.part_count * self.cells_per_part()
    }

    pub fn flat_index(&self, sample: usize) -> usize {
        let c = self.assignment[sample];
        c.part as usize * self.cells_per_part() + c.row as usize * self.side + c.col as usize
    }

    pub fn pad_mask(&self, part: usize) -> Vec<bool> {
        let n = self.cells_per_part();
        self.inverse[part * n..(part + 1) * n].iter().map(|&s| s == PAD).collect()
    }

    /// Scatters a per-sample vector onto all parts; PAD cells get 0.
    pub fn flatten(&self, values: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.domain_len()];
        self.flatten_into(values, &mut out)?;
        Ok(out)
    }

    pub fn flatten_into(&self, values: &[f64], out: &mut [f64]) -> Result<()> {
        if values.len() != self.sample_count() {
            return Err(Error::DimensionMismatch { expected: self.sample_count(), actual: values.len() });
        }
        if out.len() != self.domain_len() {
            return Err(Error::DimensionMismatch { expected: self.domain_len(), actual: out.len() });
        }
        for (cell, &s) in out.iter_mut().zip(&self.inverse) {
            *cell = if s == PAD { 0.0 } else { values[s as usize] };
        }
        Ok(())
    }

    /// The `part`-th grid of a per-sample vector.
    pub fn flatten_part(&self, part: usize, values: &[f64]) -> Result<crate::wavelets::Grid2D> {
        if values.len() != self.sample_count() {
            return Err(Error::DimensionMismatch { expected: self.sample_count(), actual: values.len() });
        }
        let n = self.cells_per_part();
        let grid = self.inverse[part * n..(part + 1) * n]
            .iter()
            .map(|&s| if s == PAD { 0.0 } else { values[s as usize] })
            .collect();
        Ok(crate::wavelets::Grid2D::new(self.side, grid))
    }

    /// Gathers a per-sample vector back from all parts, ignoring PAD cells.
    pub fn unflatten(&self, grid: &[f64]) -> Result<Vec<f64>> {
        if grid.len() != self.domain_len() {
            return Err(Error::DimensionMismatch { expected: self.domain_len(), actual: grid.len() });
        }
        let mut out = vec![0.0; self.sample_count()];
        for (&cell, &s) in grid.iter().zip(&self.inverse) {
            if s != PAD {
                out[s as usize] = cell;
            }
        }
        Ok(out)
    }

    pub fn unflatten_part(&self, part: usize, grid: &crate::wavelets::Grid2D, out: &mut [f64]) -> Result<()> {
        if grid.side != self.side {
            return Err(Error::DimensionMismatch { expected: self.side, actual: grid.side });
        }
        if out.len() != self.sample_count() {
            return Err(Error::DimensionMismatch { expected: self.sample_count(), actual: out.len() });
        }
        let n = self.cells_per_part();
        for (&cell, &s) in grid.values.iter().zip(&self.inverse[part * n..(part + 1) * n]) {
            if s != PAD {
                out[s as usize] = cell;
            }
        }
        Ok(())
    }

    /// Samples in Morton (storage) order, part by part, skipping PAD.
    pub fn morton_sequence(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        let n = self.cells_per_part();
        self.inverse.iter().enumerate().filter(|(_, &s)| s != PAD).map(move |(flat, &s)| (flat / n, s))
    }
}
