use std::collections::HashMap;

use super::mesh::tet_signed_volume;
use super::{TetMesh, TriMesh, Vec3};
use crate::error::{Error, Result};

/// Largest accepted sphere subdivision level (about 40k surface vertices).
pub const MAX_SPHERE_SUBDIVISIONS: usize = 6;

/// Box `[0, dims]` split into `resolution³` cells of six tets each.
pub fn tetrahedralize_box(dims: Vec3, resolution: usize) -> Result<TetMesh> {
    tetrahedralize_box_cells(dims, [resolution; 3])
}

/// Box `[0, dims]` with an independent cell count per axis.
///
/// Every cell uses the same six-tet split around its main diagonal, so
/// neighbouring cells share conforming faces.
pub fn tetrahedralize_box_cells(dims: Vec3, cells: [usize; 3]) -> Result<TetMesh> {
    if !dims.iter().all(|d| d.is_finite() && *d > 0.0) {
        return Err(Error::invalid(format!("box dims must be positive, got {dims:?}")));
    }
    if cells.iter().any(|&c| c == 0) {
        return Err(Error::invalid("box resolution must be at least 1"));
    }
    let [nx, ny, nz] = cells;
    let idx = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Vec3::new(
                    dims.x * i as f64 / nx as f64,
                    dims.y * j as f64 / ny as f64,
                    dims.z * k as f64 / nz as f64,
                ));
            }
        }
    }
    // Kuhn split: one tet per axis permutation, walking corner 000 -> 111.
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(nx * ny * nz * 6);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut tet = [idx(c[0], c[1], c[2]); 4];
                    for (slot, axis) in perm.iter().enumerate() {
                        c[*axis] += 1;
                        tet[slot + 1] = idx(c[0], c[1], c[2]);
                    }
                    orient(&vertices, &mut tet);
                    tets.push(tet);
                }
            }
        }
    }
    TetMesh::new(vertices, tets)
}

/// Ball of `radius` centered at the origin.
///
/// The surface is an icosphere at the given subdivision level; the interior
/// is filled with `subdivisions + 1` concentric shells joined by prisms, each
/// split into three tets, plus a fan to the center for the innermost shell.
pub fn tetrahedralize_sphere(radius: f64, subdivisions: usize) -> Result<TetMesh> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid(format!("sphere radius must be positive, got {radius}")));
    }
    if subdivisions > MAX_SPHERE_SUBDIVISIONS {
        return Err(Error::invalid(format!(
            "sphere subdivisions {subdivisions} exceed the limit of {MAX_SPHERE_SUBDIVISIONS}"
        )));
    }
    let (dirs, faces) = icosphere_unit(subdivisions);
    let layers = subdivisions + 1;
    let nv = dirs.len();
    let shell = |l: usize, v: usize| 1 + (l - 1) * nv + v;

    let mut vertices = Vec::with_capacity(1 + layers * nv);
    vertices.push(Vec3::zeros());
    for l in 1..=layers {
        let r = radius * l as f64 / layers as f64;
        vertices.extend(dirs.iter().map(|d| d * r));
    }

    let mut tets = Vec::with_capacity(faces.len() * (1 + 3 * (layers - 1)));
    for f in &faces {
        let mut t = [0, shell(1, f[0]), shell(1, f[1]), shell(1, f[2])];
        orient(&vertices, &mut t);
        tets.push(t);
    }
    for l in 1..layers {
        for f in &faces {
            let mut s = *f;
            s.sort_unstable();
            let p = s.map(|v| shell(l, v));
            let q = s.map(|v| shell(l + 1, v));
            for mut t in [
                [p[0], p[1], p[2], q[0]],
                [p[1], p[2], q[0], q[1]],
                [p[2], q[0], q[1], q[2]],
            ] {
                orient(&vertices, &mut t);
                tets.push(t);
            }
        }
    }
    TetMesh::new(vertices, tets)
}

/// Closed icosphere surface of `radius` centered at the origin, outward facing.
pub fn icosphere(radius: f64, subdivisions: usize) -> Result<TriMesh> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid(format!("sphere radius must be positive, got {radius}")));
    }
    if subdivisions > MAX_SPHERE_SUBDIVISIONS {
        return Err(Error::invalid(format!(
            "sphere subdivisions {subdivisions} exceed the limit of {MAX_SPHERE_SUBDIVISIONS}"
        )));
    }
    let (dirs, faces) = icosphere_unit(subdivisions);
    let normals = dirs.clone();
    TriMesh::new(dirs.into_iter().map(|d| d * radius).collect(), faces)?.with_normals(normals)
}

/// Closed box surface centered at the origin with `cells` subdivisions per axis.
pub fn box_trimesh(half_extents: Vec3, cells: [usize; 3]) -> Result<TriMesh> {
    let m = tetrahedralize_box_cells(half_extents * 2.0, cells)?;
    Ok(m.surface().transformed(&super::Pose::from_translation(-half_extents)))
}

fn orient(vertices: &[Vec3], t: &mut [usize; 4]) {
    let [a, b, c, d] = t.map(|i| vertices[i]);
    if tet_signed_volume(&a, &b, &c, &d) < 0.0 {
        t.swap(2, 3);
    }
}

fn icosphere_unit(subdivisions: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}
