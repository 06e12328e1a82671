//! Per-basis scattering-transfer operators and their two-step compression.
//!
//! For basis `k` the transfer operator maps irradiance on in-samples to the
//! basis-`k` response at out-samples: `T_k[o][i] = b_k(‖x_i − x_o‖)·A_i`.
//!
//! Step 1 flattens each row onto the atlas, Haar-transforms it (the `w₀`
//! domain) and keeps its `n` largest coefficients. Step 2 takes, for each
//! `w₀` index retained by any row of basis `k`, the column of that
//! coefficient over all out-samples, flattens it onto the atlas, applies the
//! CDF 9/7 transform (the `w₁` domain) and keeps an energy fraction. At run
//! time a `w₀`-projected irradiance vector is applied column by column and
//! the result stays in the `w₁` domain until material weighting is done.
//!
//! Ambient light is handled by folding the cosine/Fresnel-weighted
//! visibility of every sample into the operator, so that Haar coefficients of
//! an environment map (the `w₂` domain) map straight to `w₁` outputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::basisgen::DiffusionBasis;
use crate::dipole::fresnel_transmittance;
use crate::error::{Error, Result};
use crate::lighting::{CubeDirections, EnvironmentSpectrum, ShadowQuery};
use crate::math::ceil;
use crate::surface::{QuadtreeAtlas, SurfaceSamples};
use crate::wavelets::{compress_energy, compress_top_n, SparseSpectrum, Wavelet};

/// Wavelet used on the in-sample (`w₀`) domain.
pub const W0: Wavelet = Wavelet::Haar;
/// Wavelet used on the out-sample (`w₁`) domain.
pub const W1: Wavelet = Wavelet::Cdf97;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferSettings {
    /// Step-1 coefficients kept per row, as a fraction of the atlas domain.
    pub step1_fraction: f64,
    /// Step-2 energy fraction kept per column.
    pub step2_fraction: f64,
}

impl Default for TransferSettings {
    fn default() -> Self {
        TransferSettings { step1_fraction: 0.01, step2_fraction: 0.95 }
    }
}

impl TransferSettings {
    pub fn lossless() -> Self {
        TransferSettings { step1_fraction: 1.0, step2_fraction: 1.0 }
    }

    pub fn step1_n(&self, domain_len: usize) -> usize {
        (ceil(self.step1_fraction * domain_len as f64) as usize).clamp(1, domain_len.max(1))
    }

    pub fn is_lossless(&self) -> bool {
        self.step1_fraction >= 1.0 && self.step2_fraction >= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f <= 1.0;
        if !ok(self.step1_fraction) || !ok(self.step2_fraction) {
            return Err(Error::InvalidGrid("compression fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRow {
    pub out_sample: u32,
    pub k: u32,
    /// One entry per in-sample, in sample order.
    pub values: Vec<f64>,
}

/// The rows of every basis for one out-sample.
pub fn transfer_rows_for(samples: &SurfaceSamples, basis: &DiffusionBasis, out_sample: usize) -> Vec<TransferRow> {
    let xo = samples.positions[out_sample];
    let locs: Vec<_> = samples.positions.iter().map(|&xi| basis.locate((xi - xo).length())).collect();
    (0..basis.count)
        .map(|k| TransferRow {
            out_sample: out_sample as u32,
            k: k as u32,
            values: locs
                .iter()
                .zip(&samples.areas)
                .map(|(loc, &a)| loc.map_or(0.0, |l| basis.eval_at(k, l) * a))
                .collect(),
        })
        .collect()
}

/// All transfer rows, out-samples in atlas (Morton) order and bases
/// ascending within each out-sample.
pub fn precompute_transfer<'a>(
    samples: &'a SurfaceSamples,
    atlas: &'a QuadtreeAtlas,
    basis: &'a DiffusionBasis,
) -> impl Iterator<Item = TransferRow> + 'a {
    atlas.morton_sequence().flat_map(move |(_, o)| transfer_rows_for(samples, basis, o as usize))
}

/// Flattens a per-sample vector onto the atlas and applies `wavelet` per part.
pub fn to_wavelet_domain(atlas: &QuadtreeAtlas, values: &[f64], wavelet: Wavelet) -> Result<Vec<f64>> {
    let mut flat = atlas.flatten(values)?;
    wavelet.forward_parts(&mut flat, atlas.side);
    Ok(flat)
}

/// Inverse of [`to_wavelet_domain`]; PAD cells are discarded.
pub fn from_wavelet_domain(atlas: &QuadtreeAtlas, coeffs: &[f64], wavelet: Wavelet) -> Result<Vec<f64>> {
    if coeffs.len() != atlas.domain_len() {
        return Err(Error::DimensionMismatch { expected: atlas.domain_len(), actual: coeffs.len() });
    }
    let mut grid = coeffs.to_vec();
    wavelet.inverse_parts(&mut grid, atlas.side);
    atlas.unflatten(&grid)
}

/// Haar-transforms one row over the atlas and keeps its `n` largest coefficients.
pub fn compress_step1(row: &[f64], atlas: &QuadtreeAtlas, n: usize) -> Result<SparseSpectrum> {
    Ok(compress_top_n(&to_wavelet_domain(atlas, row, W0)?, n.max(1)))
}

/// Step-1 output of one basis: a truncated `w₀` spectrum per out-sample,
/// indexed by sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Step1Block {
    pub k: usize,
    pub rows: Vec<SparseSpectrum>,
}

impl Step1Block {
    pub fn total_energy(&self) -> f64 {
        self.rows.iter().map(|r| r.total_energy).sum()
    }

    pub fn kept_energy(&self) -> f64 {
        self.rows.iter().map(|r| r.kept_energy).sum()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.nnz()).sum()
    }
}

/// Step 1 for the out-samples `range`, returning `[sample][k]` spectra.
pub fn step1_range(
    samples: &SurfaceSamples,
    atlas: &QuadtreeAtlas,
    basis: &DiffusionBasis,
    n: usize,
    range: core::ops::Range<usize>,
) -> Result<Vec<Vec<SparseSpectrum>>> {
    let start = range.start;
    let out = crate::par::map_indexed(range.len(), |i| {
        transfer_rows_for(samples, basis, start + i)
            .into_iter()
            .map(|row| compress_step1(&row.values, atlas, n))
            .collect::<Result<Vec<_>>>()
    });
    out.into_iter().collect()
}

/// Step 1 of basis `k` for every out-sample.
pub fn step1_block(
    samples: &SurfaceSamples,
    atlas: &QuadtreeAtlas,
    basis: &DiffusionBasis,
    n: usize,
    k: usize,
) -> Result<Step1Block> {
    let rows = crate::par::map_indexed(samples.len(), |o| {
        let xo = samples.positions[o];
        let row: Vec<f64> = samples
            .positions
            .iter()
            .zip(&samples.areas)
            .map(|(&xi, &a)| basis.eval_basis(k, (xi - xo).length()) * a)
            .collect();
        compress_step1(&row, atlas, n)
    });
    Ok(Step1Block { k, rows: rows.into_iter().collect::<Result<Vec<_>>>()? })
}

/// One sparse column of a compressed operator.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferColumn {
    /// Input coefficient this column multiplies (`w₀` index, or `w₂` index
    /// for folded ambient operators).
    pub source: u32,
    /// Ascending `w₁` indices.
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
}

impl TransferColumn {
    fn from_spectrum(source: u32, s: &SparseSpectrum) -> TransferColumn {
        TransferColumn { source, indices: s.indices.clone(), values: s.values.iter().map(|&v| v as f32).collect() }
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    #[inline]
    fn axpy(&self, scale: f64, out: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] += scale * v as f64;
        }
    }
}

/// Compressed operator of one basis, columns sorted by `source`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransferBlock {
    pub columns: Vec<TransferColumn>,
    pub step1_total_energy: f64,
    pub step1_kept_energy: f64,
    /// Energy of the step-2 columns before truncation.
    pub step2_total_energy: f64,
    /// Energy of the stored (f32) entries.
    pub step2_kept_energy: f64,
    /// Entries retained by step 1 (over all rows).
    pub step1_nnz: usize,
}

impl TransferBlock {
    pub fn nnz(&self) -> usize {
        self.columns.iter().map(|c| c.indices.len()).sum()
    }

    fn column(&self, source: u32) -> Option<&TransferColumn> {
        self.columns.binary_search_by_key(&source, |c| c.source).ok().map(|p| &self.columns[p])
    }

    /// `out += Σ_j input[j]·column_j` for a dense input vector.
    pub fn apply_dense(&self, input: &[f64], out: &mut [f64]) {
        for c in &self.columns {
            let e = input[c.source as usize];
            if e != 0.0 {
                c.axpy(e, out);
            }
        }
    }

    /// `out += Σ_j input[j]·column_j` for a sparse input.
    pub fn apply_sparse(&self, input: &SparseSpectrum, out: &mut [f64]) {
        for (j, e) in input.iter() {
            if let Some(c) = self.column(j) {
                c.axpy(e, out);
            }
        }
    }
}

/// Step 2 for one basis: gathers every retained `w₀` coefficient across
/// out-samples, 9/7-transforms it over the atlas and keeps `fraction` of its
/// energy.
pub fn compress_step2(block: &Step1Block, atlas: &QuadtreeAtlas, fraction: f64) -> Result<TransferBlock> {
    let n = atlas.sample_count();
    if block.rows.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: block.rows.len() });
    }
    let domain = atlas.domain_len();
    // bucket (out-sample, value) pairs by w₀ index
    let mut counts = vec![0usize; domain + 1];
    for row in &block.rows {
        if row.len != domain {
            return Err(Error::DimensionMismatch { expected: domain, actual: row.len });
        }
        for &j in &row.indices {
            counts[j as usize + 1] += 1;
        }
    }
    for j in 0..domain {
        counts[j + 1] += counts[j];
    }
    let mut fill = counts.clone();
    let mut entries = vec![(0u32, 0.0f64); counts[domain]];
    for (o, row) in block.rows.iter().enumerate() {
        for (j, v) in row.iter() {
            entries[fill[j as usize]] = (o as u32, v);
            fill[j as usize] += 1;
        }
    }
    let used: Vec<u32> = (0..domain as u32).filter(|&j| counts[j as usize + 1] > counts[j as usize]).collect();

    let spectra = crate::par::map_indexed(used.len(), |u| {
        let j = used[u] as usize;
        let mut column = vec![0.0; n];
        for &(o, v) in &entries[counts[j]..counts[j + 1]] {
            column[o as usize] = v;
        }
        let coeffs = to_wavelet_domain(atlas, &column, W1).expect("column length matches atlas");
        compress_energy(&coeffs, fraction)
    });

    let mut out = TransferBlock {
        step1_total_energy: block.total_energy(),
        step1_kept_energy: block.kept_energy(),
        step1_nnz: block.nnz(),
        ..Default::default()
    };
    for (u, s) in spectra.iter().enumerate() {
        if s.nnz() == 0 {
            continue;
        }
        let col = TransferColumn::from_spectrum(used[u], s);
        out.step2_total_energy += s.total_energy;
        out.step2_kept_energy += col.energy();
        out.columns.push(col);
    }
    Ok(out)
}

/// All `K` compressed operators plus the settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedTransfer {
    pub sample_count: usize,
    pub part_count: usize,
    pub side: usize,
    pub step1_n: usize,
    pub step2_fraction: f64,
    pub blocks: Vec<TransferBlock>,
}

impl CompressedTransfer {
    pub fn basis_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn domain_len(&self) -> usize {
        self.part_count * self.side * self.side
    }

    pub fn nnz(&self) -> usize {
        self.blocks.iter().map(|b| b.nnz()).sum()
    }

    pub fn step1_nnz(&self) -> usize {
        self.blocks.iter().map(|b| b.step1_nnz).sum()
    }

    /// Step-2 entries per step-1 entry (≈ 0.25 means 1:4).
    pub fn step2_ratio(&self) -> f64 {
        self.nnz() as f64 / self.step1_nnz().max(1) as f64
    }

    pub fn is_lossless(&self) -> bool {
        self.step1_n >= self.domain_len() && self.step2_fraction >= 1.0
    }

    pub fn matches_atlas(&self, atlas: &QuadtreeAtlas) -> Result<()> {
        if self.sample_count != atlas.sample_count()
            || self.part_count != atlas.part_count
            || self.side != atlas.side
        {
            return Err(Error::SceneMismatch("transfer and atlas disagree on layout".into()));
        }
        Ok(())
    }

    /// `w₁` output of basis `k` for a `w₀` input; overwrites `out`.
    pub fn apply(&self, k: usize, input: &SparseSpectrum, out: &mut [f64]) {
        out.fill(0.0);
        self.blocks[k].apply_sparse(input, out);
    }
}

/// Runs both steps in memory.
pub fn compress_transfer(
    samples: &SurfaceSamples,
    atlas: &QuadtreeAtlas,
    basis: &DiffusionBasis,
    settings: &TransferSettings,
) -> Result<CompressedTransfer> {
    settings.validate()?;
    let step1_n = settings.step1_n(atlas.domain_len());
    // one basis at a time keeps only a single step-1 block alive
    let blocks = (0..basis.count)
        .map(|k| compress_step2(&step1_block(samples, atlas, basis, step1_n, k)?, atlas, settings.step2_fraction))
        .collect::<Result<Vec<_>>>()?;
    Ok(CompressedTransfer {
        sample_count: atlas.sample_count(),
        part_count: atlas.part_count,
        side: atlas.side,
        step1_n,
        step2_fraction: settings.step2_fraction,
        blocks,
    })
}

/// Binary visibility of every sample over the texel directions of a cubemap.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMatrix {
    pub side: usize,
    pub sample_count: usize,
    /// Row-major bitset, `words_per_row` words per sample.
    pub bits: Vec<u64>,
}

impl VisibilityMatrix {
    pub fn direction_count(&self) -> usize {
        6 * self.side * self.side
    }

    pub fn words_per_row(&self) -> usize {
        self.direction_count().div_ceil(64)
    }

    pub fn get(&self, sample: usize, direction: usize) -> bool {
        let w = self.bits[sample * self.words_per_row() + direction / 64];
        (w >> (direction % 64)) & 1 == 1
    }

    pub fn visible_count(&self, sample: usize) -> usize {
        let w = self.words_per_row();
        self.bits[sample * w..(sample + 1) * w].iter().map(|x| x.count_ones() as usize).sum()
    }
}

/// Ray-casts every (sample, direction) pair. Directions below the tangent
/// plane are stored as occluded.
pub fn precompute_visibility(
    samples: &SurfaceSamples,
    shadow: &ShadowQuery,
    directions: &CubeDirections,
) -> VisibilityMatrix {
    let dcount = directions.len();
    let words = dcount.div_ceil(64);
    let rows = crate::par::map_indexed(samples.len(), |i| {
        let (p, n) = (samples.positions[i], samples.normals[i]);
        let mut row = vec![0u64; words];
        for (d, &w) in directions.directions.iter().enumerate() {
            if n.dot(w) > 0.0 && shadow.visible(p, n, w, f64::INFINITY) {
                row[d / 64] |= 1 << (d % 64);
            }
        }
        row
    });
    VisibilityMatrix { side: directions.side, sample_count: samples.len(), bits: rows.concat() }
}

/// `V·F_t(η, n·ω)·(n·ω)·ΔΩ` for one sample over all directions.
pub fn ambient_weights(
    samples: &SurfaceSamples,
    vis: &VisibilityMatrix,
    directions: &CubeDirections,
    eta: f64,
    sample: usize,
) -> Vec<f64> {
    let n = samples.normals[sample];
    (0..directions.len())
        .map(|d| {
            if !vis.get(sample, d) {
                return 0.0;
            }
            let c = n.dot(directions.directions[d]);
            if c <= 0.0 {
                0.0
            } else {
                fresnel_transmittance(eta, c) * c * directions.solid_angles[d]
            }
        })
        .collect()
}

/// Irradiance from a distant environment using precomputed visibility.
pub fn ambient_irradiance(
    samples: &SurfaceSamples,
    vis: &VisibilityMatrix,
    environment: &crate::lighting::Cubemap,
    eta: f64,
) -> Result<Vec<crate::math::Rgb>> {
    if environment.side != vis.side || samples.len() != vis.sample_count {
        return Err(Error::DimensionMismatch { expected: vis.direction_count(), actual: environment.len() });
    }
    let dirs = CubeDirections::new(vis.side)?;
    Ok(crate::par::map_indexed(samples.len(), |i| {
        let w = ambient_weights(samples, vis, &dirs, eta, i);
        let mut e = [0.0; 3];
        for (wd, l) in w.iter().zip(&environment.texels) {
            for c in 0..3 {
                e[c] += wd * l[c];
            }
        }
        e
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldSettings {
    /// Energy kept per column of the `w₀`-by-`w₂` visibility operator.
    pub visibility_fraction: f64,
    /// Energy kept per folded `w₁` column.
    pub column_fraction: f64,
}

impl Default for FoldSettings {
    fn default() -> Self {
        FoldSettings { visibility_fraction: 0.999_999, column_fraction: 0.999_99 }
    }
}

impl FoldSettings {
    pub fn lossless() -> Self {
        FoldSettings { visibility_fraction: 1.0, column_fraction: 1.0 }
    }
}

/// Ambient operators: per basis, one `w₁` column per environment Haar coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedAmbient {
    pub side: usize,
    /// Refractive index the Fresnel weights were baked with.
    pub eta: f64,
    pub blocks: Vec<TransferBlock>,
}

impl FoldedAmbient {
    pub fn direction_count(&self) -> usize {
        6 * self.side * self.side
    }

    pub fn nnz(&self) -> usize {
        self.blocks.iter().map(|b| b.nnz()).sum()
    }

    /// `w₁` output of basis `k` for one channel of an environment spectrum; adds into `out`.
    pub fn apply_add(&self, k: usize, environment: &SparseSpectrum, out: &mut [f64]) -> Result<()> {
        if environment.len != self.direction_count() {
            return Err(Error::DimensionMismatch { expected: self.direction_count(), actual: environment.len });
        }
        self.blocks[k].apply_sparse(environment, out);
        Ok(())
    }
}

/// Folds visibility into the compressed transfer:
/// `F_k = T̂_k · (W₀ P W W₂ᵀ)` where `W` holds the ambient weights.
pub fn fold_visibility(
    compressed: &CompressedTransfer,
    atlas: &QuadtreeAtlas,
    samples: &SurfaceSamples,
    vis: &VisibilityMatrix,
    eta: f64,
    settings: &FoldSettings,
) -> Result<FoldedAmbient> {
    compressed.matches_atlas(atlas)?;
    if vis.sample_count != samples.len() || samples.len() != atlas.sample_count() {
        return Err(Error::DimensionMismatch { expected: atlas.sample_count(), actual: vis.sample_count });
    }
    let dirs = CubeDirections::new(vis.side)?;
    let dcount = dirs.len();
    let domain = atlas.domain_len();

    // A = W₀ P W, stored by w₀ row so each row can be Haar-transformed over directions.
    let weights: Vec<Vec<f64>> =
        crate::par::map_indexed(samples.len(), |i| ambient_weights(samples, vis, &dirs, eta, i));
    let columns = crate::par::map_indexed(dcount, |d| {
        let col: Vec<f64> = weights.iter().map(|w| w[d]).collect();
        to_wavelet_domain(atlas, &col, W0).expect("sample count matches atlas")
    });
    drop(weights);
    let rows = crate::par::map_indexed(domain, |j| {
        let mut row: Vec<f64> = columns.iter().map(|c| c[j]).collect();
        Wavelet::Haar.forward_parts(&mut row, vis.side);
        row
    });
    drop(columns);
    // sparse columns of W₀ P W W₂ᵀ, one per environment coefficient
    let vw = crate::par::map_indexed(dcount, |d| {
        let col: Vec<f64> = rows.iter().map(|r| r[d]).collect();
        compress_energy(&col, settings.visibility_fraction)
    });
    drop(rows);

    let blocks = compressed
        .blocks
        .iter()
        .map(|block| {
            let folded = crate::par::map_indexed(dcount, |d| {
                let mut acc = vec![0.0; domain];
                block.apply_sparse(&vw[d], &mut acc);
                compress_energy(&acc, settings.column_fraction)
            });
            let mut out = TransferBlock::default();
            for (d, s) in folded.iter().enumerate() {
                out.step2_total_energy += s.total_energy;
                if s.nnz() == 0 {
                    continue;
                }
                let col = TransferColumn::from_spectrum(d as u32, s);
                out.step2_kept_energy += col.energy();
                out.columns.push(col);
            }
            out
        })
        .collect();
    Ok(FoldedAmbient { side: vis.side, eta, blocks })
}

/// Folded ambient response of basis `k` per channel, in the `w₁` domain.
pub fn irradiance_ambient(
    folded: Option<&FoldedAmbient>,
    k: usize,
    environment: &EnvironmentSpectrum,
    out: &mut [Vec<f64>; 3],
) -> Result<()> {
    let folded = folded.ok_or(Error::MissingVisibility)?;
    if environment.side != folded.side {
        return Err(Error::DimensionMismatch { expected: folded.side, actual: environment.side });
    }
    for (c, o) in out.iter_mut().enumerate() {
        folded.apply_add(k, &environment.channels[c], o)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basisgen::{assemble_matrix, build_sample_grid, decompose, GridConfig, SigmaBox};
    use crate::lighting::{build_accelerator, project_environment, Bvh, Cubemap};
    use crate::math::Vec3;
    use crate::shapes;
    use crate::surface::{build_quadtree_atlas, default_level, sample_surface, TriangleMesh};

    fn small_basis(count: usize) -> DiffusionBasis {
        let cfg = GridConfig {
            sigma_box: SigmaBox::default(),
            sigma_s_prime_count: 6,
            sigma_a_count: 6,
            r_count: 96,
            ..GridConfig::default()
        };
        let grid = build_sample_grid(&cfg).unwrap();
        decompose(&assemble_matrix(&grid), count).unwrap()
    }

    fn line_samples(xs: &[f64], area: f64) -> SurfaceSamples {
        SurfaceSamples {
            positions: xs.iter().map(|&x| Vec3::new(x, 0.0, 0.0)).collect(),
            normals: vec![Vec3::new(0.0, 0.0, 1.0); xs.len()],
            areas: vec![area; xs.len()],
            source_vertex: (0..xs.len() as u32).collect(),
        }
    }

    #[test]
    fn single_sample_row() {
        let basis = small_basis(3);
        let s = line_samples(&[0.0], 0.7);
        for row in transfer_rows_for(&s, &basis, 0) {
            assert_eq!(row.values, vec![basis.eval_basis(row.k as usize, 0.0) * 0.7]);
        }
    }

    #[test]
    fn far_samples_are_truncated() {
        let basis = small_basis(2);
        let s = line_samples(&[0.0, basis.r_max() * 1.5], 1.0);
        for row in transfer_rows_for(&s, &basis, 0) {
            assert_eq!(row.values[1], 0.0);
        }
    }

    #[test]
    fn line_rows_match_eval_basis() {
        let basis = small_basis(4);
        let s = line_samples(&[0.0, 1.0, 2.0], 0.5);
        for row in transfer_rows_for(&s, &basis, 0) {
            for (i, v) in row.values.iter().enumerate() {
                assert_eq!(*v, basis.eval_basis(row.k as usize, i as f64) * 0.5);
            }
        }
    }

    #[test]
    fn rows_stream_in_atlas_order() {
        let basis = small_basis(2);
        let mesh = shapes::icosphere(1, 5.0);
        let s = sample_surface(&mesh);
        let atlas = build_quadtree_atlas(&s, 2, default_level(s.len(), 2)).unwrap();
        let order: Vec<(u32, u32)> = precompute_transfer(&s, &atlas, &basis).map(|r| (r.out_sample, r.k)).collect();
        let expected: Vec<(u32, u32)> =
            atlas.morton_sequence().flat_map(|(_, o)| [(o, 0), (o, 1)]).collect();
        assert_eq!(order, expected);
    }

    #[test]
    fn constant_full_part_row_is_pure_dc() {
        let pts: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let s = line_samples(&pts, 1.0);
        let atlas = build_quadtree_atlas(&s, 1, 2).unwrap();
        let spec = compress_step1(&[3.0; 16], &atlas, 1).unwrap();
        assert_eq!(spec.indices, vec![0]);
        assert!((spec.values[0] - 12.0).abs() < 1e-12);
        assert!((spec.kept_energy - spec.total_energy).abs() < 1e-9);
    }

    #[test]
    fn lossless_step1_preserves_dot_products() {
        let basis = small_basis(3);
        let mesh = shapes::icosphere(2, 5.0);
        let s = sample_surface(&mesh);
        let atlas = build_quadtree_atlas(&s, 4, default_level(s.len(), 4)).unwrap();
        let e: Vec<f64> = (0..s.len()).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let e_hat = SparseSpectrum::from_dense(&to_wavelet_domain(&atlas, &e, W0).unwrap());
        for row in transfer_rows_for(&s, &basis, 17) {
            let spec = compress_step1(&row.values, &atlas, atlas.domain_len()).unwrap();
            let dense: f64 = row.values.iter().zip(&e).map(|(a, b)| a * b).sum();
            let sparse = crate::wavelets::sparse_dot(&spec, &e_hat);
            assert!((dense - sparse).abs() <= 1e-8 * dense.abs().max(1e-12));
        }
    }

    fn brute_force(rows: &[Vec<f64>], e: &[f64]) -> Vec<f64> {
        rows.iter().map(|r| r.iter().zip(e).map(|(a, b)| a * b).sum()).collect()
    }

    fn pipeline(ct: &CompressedTransfer, atlas: &QuadtreeAtlas, k: usize, e: &[f64]) -> Vec<f64> {
        let e_hat = SparseSpectrum::from_dense(&to_wavelet_domain(atlas, e, W0).unwrap());
        let mut out = vec![0.0; atlas.domain_len()];
        ct.apply(k, &e_hat, &mut out);
        from_wavelet_domain(atlas, &out, W1).unwrap()
    }

    #[test]
    fn lossless_pipeline_is_exact_and_energies_consistent() {
        let basis = small_basis(3);
        let mesh = shapes::icosphere(2, 5.0);
        let s = sample_surface(&mesh);
        let atlas = build_quadtree_atlas(&s, 4, default_level(s.len(), 4)).unwrap();
        let ct = compress_transfer(&s, &atlas, &basis, &TransferSettings::lossless()).unwrap();
        assert!(ct.is_lossless());
        let e: Vec<f64> = (0..s.len()).map(|i| 1.0 + ((i * 13) % 7) as f64).collect();
        for k in 0..3 {
            let rows: Vec<Vec<f64>> = (0..s.len()).map(|o| transfer_rows_for(&s, &basis, o)[k].values.clone()).collect();
            let want = brute_force(&rows, &e);
            let got = pipeline(&ct, &atlas, k, &e);
            let num: f64 = want.iter().zip(&got).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = want.iter().map(|a| a * a).sum();
            assert!((num / den).sqrt() < 1e-6, "k={k}: {}", (num / den).sqrt());
            let b = &ct.blocks[k];
            let stored: f64 = b.columns.iter().map(|c| c.energy()).sum();
            assert!((stored - b.step2_kept_energy).abs() <= 1e-6 * stored);
            assert!((b.step2_kept_energy - b.step2_total_energy).abs() <= 1e-6 * b.step2_total_energy);
            for c in &b.columns {
                assert!((c.source as usize) < atlas.domain_len());
                assert!(c.indices.iter().all(|&i| (i as usize) < atlas.domain_len()));
            }
        }
    }

    #[test]
    fn spatially_constant_column_compresses_to_dc() {
        let pts: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let s = line_samples(&pts, 1.0);
        let atlas = build_quadtree_atlas(&s, 1, 3).unwrap();
        let block = Step1Block {
            k: 0,
            rows: (0..64).map(|_| SparseSpectrum { len: 64, indices: vec![5], values: vec![2.0], total_energy: 4.0, kept_energy: 4.0 }).collect(),
        };
        let out = compress_step2(&block, &atlas, 0.999_999).unwrap();
        assert_eq!(out.columns.len(), 1);
        assert_eq!(out.columns[0].indices, vec![0]);
        let mut acc = vec![0.0; 64];
        out.apply_dense(&{
            let mut v = vec![0.0; 64];
            v[5] = 1.0;
            v
        }, &mut acc);
        let back = from_wavelet_domain(&atlas, &acc, W1).unwrap();
        for v in back {
            assert!((v - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn error_shrinks_with_more_coefficients() {
        let basis = small_basis(2);
        let mesh = shapes::icosphere(2, 5.0);
        let s = sample_surface(&mesh);
        let atlas = build_quadtree_atlas(&s, 2, default_level(s.len(), 2)).unwrap();
        let e: Vec<f64> = s.positions.iter().map(|p| (p.z + 5.0).max(0.0)).collect();
        let rows: Vec<Vec<f64>> = (0..s.len()).map(|o| transfer_rows_for(&s, &basis, o)[0].values.clone()).collect();
        let want = brute_force(&rows, &e);
        let mut last = f64::INFINITY;
        for f1 in [0.01, 0.05, 0.2, 1.0] {
            let ct = compress_transfer(&s, &atlas, &basis, &TransferSettings { step1_fraction: f1, step2_fraction: 1.0 })
                .unwrap();
            let got = pipeline(&ct, &atlas, 0, &e);
            let err: f64 = want.iter().zip(&got).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err <= last * (1.0 + 1e-9), "{f1}: {err} > {last}");
            last = err;
        }
    }

    #[test]
    fn visibility_single_triangle_and_closed_cube() {
        let tri = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let bvh = build_accelerator(&tri);
        let s = sample_surface(&tri);
        let dirs = CubeDirections::new(4).unwrap();
        let vis = precompute_visibility(&s, &ShadowQuery::for_mesh(&bvh, &tri), &dirs);
        for i in 0..s.len() {
            for (d, w) in dirs.directions.iter().enumerate() {
                assert_eq!(vis.get(i, d), w.z > 0.0);
            }
        }
        // a sample inside a closed cube facing inward sees nothing
        let cube = shapes::unit_cube();
        let bvh = build_accelerator(&cube);
        let inner = SurfaceSamples {
            positions: vec![Vec3::new(0.5, 0.5, 0.5)],
            normals: vec![Vec3::new(0.0, 1.0, 0.0)],
            areas: vec![1.0],
            source_vertex: vec![0],
        };
        let vis = precompute_visibility(&inner, &ShadowQuery { accel: &bvh, epsilon: 1e-6 }, &dirs);
        assert_eq!(vis.visible_count(0), 0);
    }

    #[test]
    fn convex_mesh_sees_whole_hemisphere() {
        let mesh = shapes::icosphere(2, 5.0);
        let bvh = build_accelerator(&mesh);
        let s = sample_surface(&mesh);
        let dirs = CubeDirections::new(4).unwrap();
        let vis = precompute_visibility(&s, &ShadowQuery::for_mesh(&bvh, &mesh), &dirs);
        let free = precompute_visibility(&s, &ShadowQuery { accel: &Bvh::new(Vec::new()), epsilon: 0.0 }, &dirs);
        assert_eq!(vis, free);
    }

    fn fold_fixture() -> (SurfaceSamples, QuadtreeAtlas, CompressedTransfer, VisibilityMatrix) {
        let basis = small_basis(2);
        let mesh = shapes::icosphere(2, 5.0);
        let s = sample_surface(&mesh);
        let atlas = build_quadtree_atlas(&s, 2, default_level(s.len(), 2)).unwrap();
        let ct = compress_transfer(&s, &atlas, &basis, &TransferSettings::lossless()).unwrap();
        let bvh = build_accelerator(&mesh);
        let vis = precompute_visibility(&s, &ShadowQuery::for_mesh(&bvh, &mesh), &CubeDirections::new(4).unwrap());
        (s, atlas, ct, vis)
    }

    fn unfolded(
        s: &SurfaceSamples,
        atlas: &QuadtreeAtlas,
        ct: &CompressedTransfer,
        vis: &VisibilityMatrix,
        env: &Cubemap,
        k: usize,
    ) -> Vec<f64> {
        let e: Vec<f64> = ambient_irradiance(s, vis, env, 1.3).unwrap().iter().map(|e| e[0]).collect();
        let e_hat = SparseSpectrum::from_dense(&to_wavelet_domain(atlas, &e, W0).unwrap());
        let mut out = vec![0.0; atlas.domain_len()];
        ct.apply(k, &e_hat, &mut out);
        out
    }

    #[test]
    fn folded_matches_unfolded_lossless() {
        let (s, atlas, ct, vis) = fold_fixture();
        let folded = fold_visibility(&ct, &atlas, &s, &vis, 1.3, &FoldSettings::lossless()).unwrap();
        let mut env = Cubemap::constant(4, [1.0; 3]).unwrap();
        for (i, t) in env.texels.iter_mut().enumerate() {
            t[0] += ((i * 7) % 5) as f64;
        }
        let spec = project_environment(&env, None);
        for k in 0..2 {
            let want = unfolded(&s, &atlas, &ct, &vis, &env, k);
            let mut got = [vec![0.0; atlas.domain_len()], vec![0.0; atlas.domain_len()], vec![0.0; atlas.domain_len()]];
            irradiance_ambient(Some(&folded), k, &spec, &mut got).unwrap();
            let num: f64 = want.iter().zip(&got[0]).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = want.iter().map(|a| a * a).sum();
            assert!((num / den).sqrt() < 1e-6, "{}", (num / den).sqrt());
        }
    }

    #[test]
    fn zero_visibility_folds_to_nothing() {
        let (s, atlas, ct, mut vis) = fold_fixture();
        vis.bits.fill(0);
        let folded = fold_visibility(&ct, &atlas, &s, &vis, 1.3, &FoldSettings::default()).unwrap();
        assert_eq!(folded.nnz(), 0);
        assert!(matches!(
            irradiance_ambient(None, 0, &project_environment(&Cubemap::constant(4, [1.0; 3]).unwrap(), None), &mut Default::default()),
            Err(Error::MissingVisibility)
        ));
    }
}
