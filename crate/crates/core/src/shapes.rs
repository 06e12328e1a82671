//! Procedural test meshes (lengths in mm).

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{round, sqrt, Vec3};
use crate::surface::TriangleMesh;

pub fn unit_cube() -> TriangleMesh {
    let p: Vec<Vec3> = (0..8).map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64)).collect();
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let mut tris = Vec::new();
    for q in quads {
        tris.push([q[0], q[1], q[2]]);
        tris.push([q[0], q[2], q[3]]);
    }
    TriangleMesh::new(p, tris, None).expect("cube is valid")
}

/// Geodesic sphere: icosahedron with `subdivisions` rounds of 4:1 splitting.
/// Vertex count is `10·4^s + 2`.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriangleMesh {
    let t = (1.0 + sqrt(5.0)) / 2.0;
    let mut pos: Vec<Vec3> = [
        (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
        (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
        (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalized())
    .collect();
    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut midpoint = |a: u32, b: u32, pos: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                pos.push(((pos[a as usize] + pos[b as usize]) * 0.5).normalized());
                (pos.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut pos);
            let bc = midpoint(b, c, &mut pos);
            let ca = midpoint(c, a, &mut pos);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let normals = pos.clone();
    let pos = pos.into_iter().map(|p| p * radius).collect();
    TriangleMesh::new(pos, tris, Some(normals)).expect("icosphere is valid")
}

/// Closed box `width × depth × thickness` centred on the origin, each face
/// split into a regular grid with roughly `cell` mm spacing.
pub fn slab(width: f64, depth: f64, thickness: f64, cell: f64) -> TriangleMesh {
    let half = Vec3::new(width, thickness, depth) * 0.5;
    let steps = |len: f64| (round(len / cell) as usize).max(1);
    let n = [steps(width), steps(thickness), steps(depth)];
    let coord = |axis: usize, i: usize| -half.axis(axis) + 2.0 * half.axis(axis) * i as f64 / n[axis] as f64;
    let mut pos = Vec::new();
    let mut tris = Vec::new();
    // face: normal axis, sign; (u, v) chosen so u × v points outward
    for (axis, sign) in [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)] {
        let (mut u, mut v) = ((axis + 1) % 3, (axis + 2) % 3);
        if sign < 0.0 {
            core::mem::swap(&mut u, &mut v);
        }
        let base = pos.len() as u32;
        for j in 0..=n[v] {
            for i in 0..=n[u] {
                let mut c = [0.0; 3];
                c[axis] = if sign > 0.0 { half.axis(axis) } else { -half.axis(axis) };
                c[u] = coord(u, i);
                c[v] = coord(v, j);
                pos.push(Vec3::new(c[0], c[1], c[2]));
            }
        }
        let row = n[u] as u32 + 1;
        for j in 0..n[v] as u32 {
            for i in 0..n[u] as u32 {
                let a = base + j * row + i;
                tris.push([a, a + 1, a + row + 1]);
                tris.push([a, a + row + 1, a + row]);
            }
        }
    }
    TriangleMesh::new(pos, tris, None).expect("slab is valid")
}

/// Head, neck, shoulders and nose made of overlapping spheres. Surface parts
/// buried inside another sphere are removed, so the result has open seams but
/// plenty of concavities for self-shadowing.
pub fn bust(subdivisions: u32) -> TriangleMesh {
    let spheres: [(Vec3, f64); 6] = [
        (Vec3::new(0.0, 22.0, 0.0), 8.0),
        (Vec3::new(0.0, 13.0, 0.0), 4.0),
        (Vec3::new(0.0, 4.0, 0.0), 9.0),
        (Vec3::new(-9.0, 6.0, 0.0), 6.5),
        (Vec3::new(9.0, 6.0, 0.0), 6.5),
        (Vec3::new(0.0, 22.0, 8.0), 1.8),
    ];
    let unit = icosphere(subdivisions, 1.0);
    let mut pos = Vec::new();
    let mut nrm = Vec::new();
    let mut tris = Vec::new();
    for (s, &(c, r)) in spheres.iter().enumerate() {
        let inside_other = |p: Vec3| {
            spheres.iter().enumerate().any(|(o, &(c2, r2))| o != s && (p - c2).length() < r2)
        };
        let base = pos.len() as u32;
        for (p, n) in unit.positions.iter().zip(&unit.normals) {
            pos.push(c + *p * r);
            nrm.push(*n);
        }
        for t in &unit.triangles {
            if t.iter().any(|&i| inside_other(pos[(base + i) as usize])) {
                continue;
            }
            tris.push(t.map(|i| base + i));
        }
    }
    TriangleMesh::new(pos, tris, Some(nrm)).expect("bust is valid")
}
