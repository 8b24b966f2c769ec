use std::collections::HashMap;

use super::{Aabb, Pose, Vec3};
use crate::error::{Error, Result};

/// Smallest triangle area accepted by [`TriMesh::new`].
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Triangle surface mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    normals: Option<Vec<Vec3>>,
}

impl TriMesh {
    /// Builds a mesh, rejecting out-of-range indices and degenerate triangles.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(v) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {v} is not finite")));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references vertex outside 0..{n}"
                )));
            }
            let area = triangle_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} is degenerate (area {area:.3e} m^2)"
                )));
            }
        }
        Ok(TriMesh {
            vertices,
            triangles,
            normals: None,
        })
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} normals for {} vertices",
                normals.len(),
                self.vertices.len()
            )));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    #[inline]
    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Same connectivity with every vertex mapped through `pose`.
    pub fn transformed(&self, pose: &Pose) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(),
            triangles: self.triangles.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| pose.transform_vector(n)).collect()),
        }
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| {
                [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]].map(|[a, b]| [a.min(b), a.max(b)])
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed_manifold(&self) -> bool {
        let mut count: HashMap<[usize; 2], usize> = HashMap::new();
        for t in &self.triangles {
            for [a, b] in [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]] {
                *count.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        !count.is_empty() && count.values().all(|&c| c == 2)
    }

    /// V - E + F over the vertices actually referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edges().len() as i64 + self.triangles.len() as i64
    }

    /// Enclosed volume by the divergence theorem; meaningful for closed, outward meshes.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]];
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }
}

#[inline]
pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

#[inline]
pub fn tet_signed_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

/// Tetrahedral volume mesh with its outward boundary surface.
///
/// The surface is stored with compacted vertex indices; `surface_vertices`
/// maps each surface vertex back to its index in the volume mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TetMesh {
    vertices: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    surface: TriMesh,
    surface_vertices: Vec<usize>,
}

impl TetMesh {
    /// Builds a mesh; every tet must have positive signed volume.
    pub fn new(vertices: Vec<Vec3>, tets: Vec<[usize; 4]>) -> Result<Self> {
        let n = vertices.len();
        if tets.is_empty() {
            return Err(Error::InvalidMesh("no tetrahedra".into()));
        }
        for (t, tet) in tets.iter().enumerate() {
            if tet.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "tet {t} references vertex outside 0..{n}"
                )));
            }
            let [a, b, c, d] = tet.map(|i| vertices[i]);
            let vol = tet_signed_volume(&a, &b, &c, &d);
            if !(vol > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "tet {t} has non-positive rest volume {vol:.3e}"
                )));
            }
        }
        let (surface, surface_vertices) = boundary(&vertices, &tets)?;
        Ok(TetMesh {
            vertices,
            tets,
            surface,
            surface_vertices,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn surface(&self) -> &TriMesh {
        &self.surface
    }

    /// Surface-local vertex index -> volume vertex index.
    pub fn surface_vertices(&self) -> &[usize] {
        &self.surface_vertices
    }

    /// Surface triangles expressed in volume vertex indices.
    pub fn surface_triangles_global(&self) -> Vec<[usize; 3]> {
        self.surface
            .triangles()
            .iter()
            .map(|t| t.map(|i| self.surface_vertices[i]))
            .collect()
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tets[t].map(|i| self.vertices[i]);
        tet_signed_volume(&a, &b, &c, &d)
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).sum()
    }

    pub fn min_tet_volume(&self) -> f64 {
        (0..self.tets.len())
            .map(|t| self.tet_volume(t))
            .fold(f64::INFINITY, f64::min)
    }

    /// Rigidly moved copy; connectivity and surface indexing are unchanged.
    pub fn transformed(&self, pose: &Pose) -> TetMesh {
        TetMesh {
            vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(),
            tets: self.tets.clone(),
            surface: self.surface.transformed(pose),
            surface_vertices: self.surface_vertices.clone(),
        }
    }
}

/// Boundary of a tet mesh: faces that belong to exactly one tet, oriented outward.
pub fn surface_of(mesh: &TetMesh) -> TriMesh {
    // A valid TetMesh always has a well-formed boundary.
    boundary(&mesh.vertices, &mesh.tets)
        .map(|(s, _)| s)
        .unwrap_or_else(|_| mesh.surface.clone())
}

fn boundary(vertices: &[Vec3], tets: &[[usize; 4]]) -> Result<(TriMesh, Vec<usize>)> {
    // Outward faces of a positively oriented tet (a, b, c, d).
    let faces_of = |t: &[usize; 4]| {
        let [a, b, c, d] = *t;
        [[a, c, b], [a, b, d], [a, d, c], [b, c, d]]
    };
    let key = |f: &[usize; 3]| {
        let mut k = *f;
        k.sort_unstable();
        k
    };
    let mut count: HashMap<[usize; 3], u32> = HashMap::with_capacity(tets.len() * 4);
    for t in tets {
        for f in faces_of(t) {
            *count.entry(key(&f)).or_default() += 1;
        }
    }
    let mut local = vec![usize::MAX; vertices.len()];
    let mut surface_vertices = Vec::new();
    let mut triangles = Vec::new();
    for t in tets {
        for f in faces_of(t) {
            if count[&key(&f)] == 1 {
                let tri = f.map(|g| {
                    if local[g] == usize::MAX {
                        local[g] = surface_vertices.len();
                        surface_vertices.push(g);
                    }
                    local[g]
                });
                triangles.push(tri);
            }
        }
    }
    let verts = surface_vertices.iter().map(|&g| vertices[g]).collect();
    Ok((TriMesh::new(verts, triangles)?, surface_vertices))
}
