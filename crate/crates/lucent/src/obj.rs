//! Wavefront OBJ reading and writing.
//!
//! Only `v`, `vn` and `f` records matter; polygons are fan-triangulated and
//! everything else (`vt`, `o`, `g`, `s`, `usemtl`, ...) is ignored. Vertex
//! normals are taken per position when every face corner names the same
//! normal for a given position, otherwise recomputed from the faces.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lucent_core::math::Vec3;
use lucent_core::surface::TriangleMesh;

use crate::error::{LucentError, Result};

pub fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| LucentError::io(path, e))?;
    parse_obj(&text, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let err = |line: usize, message: String| LucentError::Parse { path: PathBuf::from(path), line, message };
    let mut positions: Vec<Vec3> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // normal index chosen for each position, None once corners disagree
    let mut corner_normal: Vec<Option<Option<usize>>> = Vec::new();
    let mut normals_usable = true;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        match tag {
            "v" | "vn" => {
                let vals: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|_| err(line_no, format!("bad number '{s}'"))))
                    .collect::<Result<_>>()?;
                if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
                    return Err(err(line_no, format!("'{tag}' needs three finite coordinates")));
                }
                let v = Vec3::new(vals[0], vals[1], vals[2]);
                if tag == "v" {
                    positions.push(v);
                    corner_normal.push(None);
                } else {
                    normals.push(v);
                }
            }
            "f" => {
                let mut corners = Vec::new();
                for c in parts {
                    let mut fields = c.split('/');
                    let vi = resolve(fields.next().unwrap_or(""), positions.len())
                        .ok_or_else(|| err(line_no, format!("bad vertex reference '{c}'")))?;
                    let ni = match fields.nth(1) {
                        Some(s) if !s.is_empty() => Some(
                            resolve(s, normals.len())
                                .ok_or_else(|| err(line_no, format!("bad normal reference '{c}'")))?,
                        ),
                        _ => None,
                    };
                    match corner_normal[vi] {
                        None => corner_normal[vi] = Some(ni),
                        Some(prev) if prev != ni => normals_usable = false,
                        _ => {}
                    }
                    corners.push(vi as u32);
                }
                if corners.len() < 3 {
                    return Err(err(line_no, "face needs at least three vertices".into()));
                }
                for j in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[j], corners[j + 1]]);
                }
            }
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(LucentError::Core(lucent_core::Error::InvalidMesh(format!("{}: no faces", path.display()))));
    }
    let vertex_normals = if normals_usable && !normals.is_empty() {
        corner_normal
            .iter()
            .map(|c| c.flatten().map(|n| normals[n]))
            .collect::<Option<Vec<Vec3>>>()
            .filter(|ns| ns.iter().all(|n| n.length() > 0.0))
    } else {
        None
    };
    Ok(TriangleMesh::new(positions, triangles, vertex_normals)?)
}

/// 1-based (or negative, relative) OBJ index to 0-based.
fn resolve(s: &str, count: usize) -> Option<usize> {
    let i: i64 = s.parse().ok()?;
    let idx = if i > 0 { i - 1 } else { count as i64 + i };
    (0..count as i64).contains(&idx).then_some(idx as usize)
}

/// Writes positions, normals and faces with round-trip float precision.
pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    std::fs::write(path, obj_string(mesh)).map_err(|e| LucentError::io(path, e))
}

pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for p in &mesh.positions {
        let _ = writeln!(s, "v {:?} {:?} {:?}", p.x, p.y, p.z);
    }
    for n in &mesh.normals {
        let _ = writeln!(s, "vn {:?} {:?} {:?}", n.x, n.y, n.z);
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
    }
    s
}
