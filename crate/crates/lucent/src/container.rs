//! The `PRTS1` precompute container and the standalone `PRTB1` basis file.
//!
//! Both are little-endian, chunked, and end in a SHA-256 digest of every
//! preceding byte. The byte layout is documented in `docs/format.md`.

use std::path::Path;

use sha2::{Digest, Sha256};

use lucent_core::basisgen::{DiffusionBasis, SigmaBox};
use lucent_core::surface::{CellRef, QuadtreeAtlas, TriangleMesh, PAD};
use lucent_core::transfer::{CompressedTransfer, FoldedAmbient, TransferBlock, TransferColumn, VisibilityMatrix};

use crate::error::{LucentError, Result};

pub const CONTAINER_MAGIC: [u8; 8] = *b"PRTS1\0\0\0";
pub const BASIS_MAGIC: [u8; 8] = *b"PRTB1\0\0\0";
pub const VERSION: u32 = 1;

const FLAG_LOSSLESS: u32 = 1;
const FLAG_VISIBILITY: u32 = 2;

const TAG_BASIS: [u8; 4] = *b"BASI";
const TAG_ATLAS: [u8; 4] = *b"ATLS";
const TAG_TRANSFER: [u8; 4] = *b"TRAN";
const TAG_VISIBILITY: [u8; 4] = *b"VIS ";
const TAG_META: [u8; 4] = *b"META";

/// Raw visibility plus the operator folded from it.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientData {
    pub visibility: VisibilityMatrix,
    pub folded: FoldedAmbient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub mesh_hash: [u8; 32],
    pub basis: DiffusionBasis,
    pub atlas: QuadtreeAtlas,
    pub transfer: CompressedTransfer,
    pub ambient: Option<AmbientData>,
    /// Free-form UTF-8; the CLI stores its run configuration as TOML.
    pub meta: String,
}

/// SHA-256 over positions, normals (f64) and triangle indices (u32), little-endian.
pub fn mesh_hash(mesh: &TriangleMesh) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((mesh.positions.len() as u64).to_le_bytes());
    h.update((mesh.triangles.len() as u64).to_le_bytes());
    for v in mesh.positions.iter().chain(&mesh.normals) {
        for c in [v.x, v.y, v.z] {
            h.update(c.to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        for i in t {
            h.update(i.to_le_bytes());
        }
    }
    h.finalize().into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Container {
    pub fn is_lossless(&self) -> bool {
        self.transfer.is_lossless()
    }

    /// Refuses a mesh other than the one the container was built from.
    pub fn check_mesh(&self, mesh: &TriangleMesh) -> Result<()> {
        let h = mesh_hash(mesh);
        if h != self.mesh_hash {
            return Err(LucentError::HashMismatch { container: hex(&self.mesh_hash[..8]), mesh: hex(&h[..8]) });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let t = &self.transfer;
        let mut w = Writer::default();
        w.bytes(&CONTAINER_MAGIC);
        w.u32(VERSION);
        w.bytes(&self.mesh_hash);
        w.u32(t.sample_count as u32);
        w.u32(t.basis_count() as u32);
        w.u32(self.atlas.part_count as u32);
        w.u32(self.atlas.level);
        w.u32(t.step1_n as u32);
        let mut flags = 0;
        if t.is_lossless() {
            flags |= FLAG_LOSSLESS;
        }
        if self.ambient.is_some() {
            flags |= FLAG_VISIBILITY;
        }
        w.u32(flags);
        w.f64(t.step2_fraction);
        let chunk_count = 3 + t.basis_count() + usize::from(self.ambient.is_some());
        w.u32(chunk_count as u32);

        w.chunk(TAG_BASIS, |c| write_basis(c, &self.basis));
        w.chunk(TAG_ATLAS, |c| {
            c.u32(self.atlas.part_count as u32);
            c.u32(self.atlas.level);
            c.u32(self.atlas.assignment.len() as u32);
            let cells = self.atlas.cells_per_part() as u32;
            for a in &self.atlas.assignment {
                c.u32(a.part);
                c.u32(a.row * self.atlas.side as u32 + a.col);
                debug_assert!(a.row * (self.atlas.side as u32) + a.col < cells);
            }
        });
        for (k, b) in t.blocks.iter().enumerate() {
            w.chunk(TAG_TRANSFER, |c| {
                c.u32(k as u32);
                write_block(c, b);
            });
        }
        if let Some(a) = &self.ambient {
            w.chunk(TAG_VISIBILITY, |c| {
                let v = &a.visibility;
                c.u32(v.side as u32);
                c.u32(v.sample_count as u32);
                c.u64(v.bits.len() as u64);
                for &word in &v.bits {
                    c.u64(word);
                }
                c.u32(a.folded.side as u32);
                c.f64(a.folded.eta);
                c.u32(a.folded.blocks.len() as u32);
                for b in &a.folded.blocks {
                    write_block(c, b);
                }
            });
        }
        w.chunk(TAG_META, |c| c.bytes(self.meta.as_bytes()));
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
        let body = check_envelope(bytes, &CONTAINER_MAGIC)?;
        let mut r = Reader::new(body);
        r.skip(12)?;
        let mut mesh_hash = [0u8; 32];
        mesh_hash.copy_from_slice(r.take(32)?);
        let n = r.u32()? as usize;
        let k_count = r.u32()? as usize;
        let part_count = r.u32()? as usize;
        let level = r.u32()?;
        let step1_n = r.u32()? as usize;
        let flags = r.u32()?;
        let step2_fraction = r.f64()?;
        let chunk_count = r.u32()? as usize;
        if level > 15 {
            return Err(corrupt("atlas level out of range"));
        }
        let mut basis = None;
        let mut atlas = None;
        let mut blocks: Vec<Option<TransferBlock>> = vec![None; k_count];
        let mut ambient = None;
        let mut meta = None;
        for _ in 0..chunk_count {
            let (tag, mut c) = r.chunk()?;
            match tag {
                TAG_BASIS => basis = Some(read_basis(&mut c)?),
                TAG_ATLAS => atlas = Some(read_atlas(&mut c, part_count, level, n)?),
                TAG_TRANSFER => {
                    let k = c.u32()? as usize;
                    let slot = blocks.get_mut(k).ok_or_else(|| corrupt("transfer chunk index out of range"))?;
                    *slot = Some(read_block(&mut c)?);
                }
                TAG_VISIBILITY => {
                    let side = c.u32()? as usize;
                    let sample_count = c.u32()? as usize;
                    let words = c.u64()? as usize;
                    let dirs = 6 * side * side;
                    if sample_count != n || words != n * dirs.div_ceil(64) {
                        return Err(corrupt("visibility size does not match the sample count"));
                    }
                    let bits = (0..words).map(|_| c.u64()).collect::<Result<Vec<_>>>()?;
                    let fside = c.u32()? as usize;
                    let eta = c.f64()?;
                    let kb = c.u32()? as usize;
                    let fblocks = (0..kb).map(|_| read_block(&mut c)).collect::<Result<Vec<_>>>()?;
                    ambient = Some(AmbientData {
                        visibility: VisibilityMatrix { side, sample_count, bits },
                        folded: FoldedAmbient { side: fside, eta, blocks: fblocks },
                    });
                }
                TAG_META => {
                    meta = Some(
                        String::from_utf8(c.rest().to_vec()).map_err(|_| corrupt("metadata is not UTF-8"))?,
                    );
                }
                other => return Err(corrupt(&format!("unknown chunk tag {:?}", String::from_utf8_lossy(&other)))),
            }
            c.expect_end()?;
        }
        r.expect_end()?;
        let basis = basis.ok_or_else(|| corrupt("missing basis chunk"))?;
        let atlas = atlas.ok_or_else(|| corrupt("missing atlas chunk"))?;
        let blocks = blocks.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| corrupt("missing transfer chunk"))?;
        if basis.count != k_count {
            return Err(corrupt("basis count differs from header"));
        }
        if (flags & FLAG_VISIBILITY != 0) != ambient.is_some() {
            return Err(corrupt("visibility flag does not match chunks"));
        }
        let transfer = CompressedTransfer {
            sample_count: n,
            part_count: atlas.part_count,
            side: atlas.side,
            step1_n,
            step2_fraction,
            blocks,
        };
        let domain = transfer.domain_len() as u32;
        let in_range = |b: &TransferBlock, src_len: u32| {
            b.columns.iter().all(|col| col.source < src_len && col.indices.iter().all(|&i| i < domain))
        };
        if !transfer.blocks.iter().all(|b| in_range(b, domain)) {
            return Err(corrupt("transfer index out of range"));
        }
        if let Some(a) = &ambient {
            let d = a.folded.direction_count() as u32;
            if a.folded.blocks.len() != k_count || !a.folded.blocks.iter().all(|b| in_range(b, d)) {
                return Err(corrupt("folded ambient operator malformed"));
            }
        }
        Ok(Container {
            mesh_hash,
            basis,
            atlas,
            transfer,
            ambient,
            meta: meta.ok_or_else(|| corrupt("missing metadata chunk"))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Container> {
        let bytes = std::fs::read(path).map_err(|e| LucentError::io(path, e))?;
        Container::from_bytes(&bytes)
    }
}

pub fn basis_to_bytes(basis: &DiffusionBasis) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&BASIS_MAGIC);
    w.u32(VERSION);
    w.chunk(TAG_BASIS, |c| write_basis(c, basis));
    w.finish()
}

pub fn basis_from_bytes(bytes: &[u8]) -> Result<DiffusionBasis> {
    let body = check_envelope(bytes, &BASIS_MAGIC)?;
    let mut r = Reader::new(body);
    r.skip(12)?;
    let (tag, mut c) = r.chunk()?;
    if tag != TAG_BASIS {
        return Err(corrupt("basis file lacks a basis chunk"));
    }
    let b = read_basis(&mut c)?;
    c.expect_end()?;
    r.expect_end()?;
    Ok(b)
}

pub fn save_basis(basis: &DiffusionBasis, path: &Path) -> Result<()> {
    write_atomic(path, &basis_to_bytes(basis))
}

pub fn load_basis(path: &Path) -> Result<DiffusionBasis> {
    let bytes = std::fs::read(path).map_err(|e| LucentError::io(path, e))?;
    basis_from_bytes(&bytes)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| LucentError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| LucentError::io(path, e))
}

fn corrupt(msg: &str) -> LucentError {
    LucentError::Corrupt(msg.to_string())
}

/// Checks magic, version and trailing digest; returns everything before the digest.
fn check_envelope<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<&'a [u8]> {
    if bytes.len() < 12 || &bytes[..8] != magic {
        if bytes.len() >= 8 && &bytes[..8] == magic {
            return Err(corrupt("file too short"));
        }
        return Err(corrupt(if bytes.len() < 8 { "file too short" } else { "bad magic" }));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(LucentError::Version { found: version, expected: VERSION });
    }
    if bytes.len() < 12 + 32 {
        return Err(corrupt("file too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified file)"));
    }
    Ok(body)
}

fn write_basis(c: &mut Writer, b: &DiffusionBasis) {
    c.u32(b.count as u32);
    c.u32(b.r_nodes.len() as u32);
    c.u32(b.singular_values.len() as u32);
    c.f64(b.eta);
    c.f64(b.g);
    c.f64(b.sigma_box.sigma_s_prime.0);
    c.f64(b.sigma_box.sigma_s_prime.1);
    c.f64(b.sigma_box.sigma_a.0);
    c.f64(b.sigma_box.sigma_a.1);
    for v in b.r_nodes.iter().chain(&b.r_weights).chain(&b.bases).chain(&b.singular_values) {
        c.f64(*v);
    }
}

fn read_basis(c: &mut Reader) -> Result<DiffusionBasis> {
    let count = c.u32()? as usize;
    let nodes = c.u32()? as usize;
    let svs = c.u32()? as usize;
    let eta = c.f64()?;
    let g = c.f64()?;
    let sigma_box = SigmaBox { sigma_s_prime: (c.f64()?, c.f64()?), sigma_a: (c.f64()?, c.f64()?) };
    if count == 0 || nodes < 2 || count > svs {
        return Err(corrupt("basis dimensions invalid"));
    }
    let r_nodes = c.f64s(nodes)?;
    let r_weights = c.f64s(nodes)?;
    let bases = c.f64s(count.checked_mul(nodes).ok_or_else(|| corrupt("basis too large"))?)?;
    let singular_values = c.f64s(svs)?;
    if !r_nodes.windows(2).all(|w| w[0] < w[1]) {
        return Err(corrupt("basis distance nodes not increasing"));
    }
    Ok(DiffusionBasis { r_nodes, r_weights, bases, singular_values, count, sigma_box, eta, g })
}

fn read_atlas(c: &mut Reader, part_count: usize, level: u32, n: usize) -> Result<QuadtreeAtlas> {
    let parts = c.u32()? as usize;
    let lvl = c.u32()?;
    let count = c.u32()? as usize;
    if parts != part_count || lvl != level || count != n || parts == 0 {
        return Err(corrupt("atlas header disagrees with container header"));
    }
    let side = 1usize << level;
    let cells = side * side;
    let mut inverse = vec![PAD; parts * cells];
    let mut assignment = Vec::with_capacity(n);
    for i in 0..n {
        let part = c.u32()?;
        let cell = c.u32()? as usize;
        if part as usize >= parts || cell >= cells {
            return Err(corrupt("atlas cell out of range"));
        }
        let flat = part as usize * cells + cell;
        if inverse[flat] != PAD {
            return Err(corrupt("atlas assigns two samples to one cell"));
        }
        inverse[flat] = i as u32;
        assignment.push(CellRef { part, row: (cell / side) as u32, col: (cell % side) as u32 });
    }
    Ok(QuadtreeAtlas { part_count: parts, level, side, assignment, inverse })
}

fn write_block(c: &mut Writer, b: &TransferBlock) {
    c.f64(b.step1_total_energy);
    c.f64(b.step1_kept_energy);
    c.f64(b.step2_total_energy);
    c.f64(b.step2_kept_energy);
    c.u64(b.step1_nnz as u64);
    c.u32(b.columns.len() as u32);
    for col in &b.columns {
        c.u32(col.source);
        c.u32(col.indices.len() as u32);
        for &i in &col.indices {
            c.u32(i);
        }
        for &v in &col.values {
            c.bytes(&v.to_le_bytes());
        }
    }
}

fn read_block(c: &mut Reader) -> Result<TransferBlock> {
    let step1_total_energy = c.f64()?;
    let step1_kept_energy = c.f64()?;
    let step2_total_energy = c.f64()?;
    let step2_kept_energy = c.f64()?;
    let step1_nnz = c.u64()? as usize;
    let ncols = c.u32()? as usize;
    let mut columns = Vec::with_capacity(ncols.min(1 << 20));
    for _ in 0..ncols {
        let source = c.u32()?;
        let nnz = c.u32()? as usize;
        let indices = (0..nnz).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let values = (0..nnz).map(|_| c.f32()).collect::<Result<Vec<_>>>()?;
        columns.push(TransferColumn { source, indices, values });
    }
    Ok(TransferBlock { columns, step1_total_energy, step1_kept_energy, step2_total_energy, step2_kept_energy, step1_nnz })
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn chunk(&mut self, tag: [u8; 4], body: impl FnOnce(&mut Writer)) {
        let mut c = Writer::default();
        body(&mut c);
        self.bytes(&tag);
        self.u64(c.buf.len() as u64);
        self.bytes(&c.buf);
    }
    fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn skip(&mut self, n: usize) -> Result<()> {
        self.take(n).map(|_| ())
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
    }
    fn chunk(&mut self) -> Result<([u8; 4], Reader<'a>)> {
        let tag: [u8; 4] = self.take(4)?.try_into().unwrap();
        let len = usize::try_from(self.u64()?).map_err(|_| corrupt("chunk too large"))?;
        Ok((tag, Reader::new(self.take(len)?)))
    }
    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }
    fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(())
    }
}
