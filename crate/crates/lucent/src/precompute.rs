//! Precompute driver: step 1 streamed to per-basis spill files, then step 2
//! one basis at a time, then optional visibility folding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use lucent_core::basisgen::DiffusionBasis;
use lucent_core::lighting::{build_accelerator, CubeDirections, ShadowQuery};
use lucent_core::surface::{build_quadtree_atlas, default_level, sample_surface, QuadtreeAtlas, SurfaceSamples, TriangleMesh};
use lucent_core::transfer::{
    compress_step2, fold_visibility, precompute_visibility, step1_range, CompressedTransfer, FoldSettings, Step1Block,
    TransferSettings,
};
use lucent_core::wavelets::SparseSpectrum;

use crate::container::{mesh_hash, AmbientData, Container};
use crate::error::{LucentError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityOptions {
    pub cube_side: usize,
    /// Refractive index baked into the folded operator.
    pub eta: f64,
    pub fold: FoldSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputeOptions {
    pub parts: usize,
    /// Quadtree level; the smallest that fits when `None`.
    pub level: Option<u32>,
    pub transfer: TransferSettings,
    pub visibility: Option<VisibilityOptions>,
    /// Parent directory for step-1 spill files (system temp when `None`).
    pub spill_dir: Option<PathBuf>,
    /// Out-samples per step-1 work batch.
    pub batch: usize,
}

impl Default for PrecomputeOptions {
    fn default() -> Self {
        PrecomputeOptions {
            parts: 4,
            level: None,
            transfer: TransferSettings::default(),
            visibility: None,
            spill_dir: None,
            batch: 256,
        }
    }
}

pub fn precompute(
    mesh: &TriangleMesh,
    basis: &DiffusionBasis,
    opts: &PrecomputeOptions,
    meta: String,
    progress: &mut dyn FnMut(&str),
) -> Result<Container> {
    opts.transfer.validate()?;
    let samples = sample_surface(mesh);
    let level = opts.level.unwrap_or_else(|| default_level(samples.len(), opts.parts));
    let atlas = build_quadtree_atlas(&samples, opts.parts, level)?;
    progress(&format!(
        "atlas: {} samples, {} parts of {}x{}",
        samples.len(),
        atlas.part_count,
        atlas.side,
        atlas.side
    ));
    let spill_parent = opts.spill_dir.clone().unwrap_or_else(std::env::temp_dir);
    let transfer = compress_transfer_streaming(&samples, &atlas, basis, &opts.transfer, &spill_parent, opts.batch, progress)?;
    progress(&format!("transfer: {} entries after step 2 ({} after step 1)", transfer.nnz(), transfer.step1_nnz()));
    let ambient = match &opts.visibility {
        Some(v) => {
            let bvh = build_accelerator(mesh);
            let dirs = CubeDirections::new(v.cube_side)?;
            let vis = precompute_visibility(&samples, &ShadowQuery::for_mesh(&bvh, mesh), &dirs);
            let folded = fold_visibility(&transfer, &atlas, &samples, &vis, v.eta, &v.fold)?;
            progress(&format!("visibility: {} directions, folded operator {} entries", dirs.len(), folded.nnz()));
            Some(AmbientData { visibility: vis, folded })
        }
        None => None,
    };
    Ok(Container { mesh_hash: mesh_hash(mesh), basis: basis.clone(), atlas, transfer, ambient, meta })
}

/// Two-step compression with step-1 rows spilled to disk, one file per basis,
/// so at most one basis worth of step-1 data is in memory during step 2.
/// Produces exactly the result of the in-memory path.
pub fn compress_transfer_streaming(
    samples: &SurfaceSamples,
    atlas: &QuadtreeAtlas,
    basis: &DiffusionBasis,
    settings: &TransferSettings,
    spill_parent: &Path,
    batch: usize,
    progress: &mut dyn FnMut(&str),
) -> Result<CompressedTransfer> {
    settings.validate()?;
    std::fs::create_dir_all(spill_parent).map_err(|e| LucentError::io(spill_parent, e))?;
    let dir = tempfile::Builder::new()
        .prefix("lucent-spill-")
        .tempdir_in(spill_parent)
        .map_err(|e| LucentError::io(spill_parent, e))?;
    let step1_n = settings.step1_n(atlas.domain_len());
    let paths: Vec<PathBuf> = (0..basis.count).map(|k| dir.path().join(format!("step1_{k:02}.bin"))).collect();
    let mut writers = paths
        .iter()
        .map(|p| File::create(p).map(BufWriter::new).map_err(|e| LucentError::io(p, e)))
        .collect::<Result<Vec<_>>>()?;

    let batch = batch.max(1);
    let mut start = 0;
    while start < samples.len() {
        let end = (start + batch).min(samples.len());
        for row in step1_range(samples, atlas, basis, step1_n, start..end)? {
            for (k, spec) in row.iter().enumerate() {
                write_spectrum(&mut writers[k], spec).map_err(|e| LucentError::io(&paths[k], e))?;
            }
        }
        start = end;
        progress(&format!("step 1: {end}/{} out-samples", samples.len()));
    }
    for (w, p) in writers.iter_mut().zip(&paths) {
        w.flush().map_err(|e| LucentError::io(p, e))?;
    }
    drop(writers);

    let mut blocks = Vec::with_capacity(basis.count);
    for (k, p) in paths.iter().enumerate() {
        let mut r = BufReader::new(File::open(p).map_err(|e| LucentError::io(p, e))?);
        let rows = (0..samples.len())
            .map(|_| read_spectrum(&mut r, atlas.domain_len()).map_err(|e| LucentError::io(p, e)))
            .collect::<Result<Vec<_>>>()?;
        blocks.push(compress_step2(&Step1Block { k, rows }, atlas, settings.step2_fraction)?);
        std::fs::remove_file(p).map_err(|e| LucentError::io(p, e))?;
        progress(&format!("step 2: basis {}/{}", k + 1, basis.count));
    }
    Ok(CompressedTransfer {
        sample_count: samples.len(),
        part_count: atlas.part_count,
        side: atlas.side,
        step1_n,
        step2_fraction: settings.step2_fraction,
        blocks,
    })
}

fn write_spectrum(w: &mut impl Write, s: &SparseSpectrum) -> std::io::Result<()> {
    w.write_all(&s.total_energy.to_le_bytes())?;
    w.write_all(&s.kept_energy.to_le_bytes())?;
    w.write_all(&(s.indices.len() as u32).to_le_bytes())?;
    for i in &s.indices {
        w.write_all(&i.to_le_bytes())?;
    }
    for v in &s.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_spectrum(r: &mut impl Read, len: usize) -> std::io::Result<SparseSpectrum> {
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b8)?;
    let total_energy = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let kept_energy = f64::from_le_bytes(b8);
    r.read_exact(&mut b4)?;
    let nnz = u32::from_le_bytes(b4) as usize;
    let mut raw = vec![0u8; nnz * 12];
    r.read_exact(&mut raw)?;
    let (ib, vb) = raw.split_at(nnz * 4);
    Ok(SparseSpectrum {
        len,
        indices: ib.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect(),
        values: vb.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
        total_energy,
        kept_energy,
    })
}
