//! Meshes, primitive tetrahedralization, distance queries and mesh file I/O.
//!
//! Lengths are SI meters everywhere. All types are plain values; the
//! operations are pure functions.

mod distance;
pub(crate) mod io;
mod mesh;
mod pose;
mod primitives;

pub use distance::{
    classify_edge_edge, classify_point_triangle, closest_point_triangle,
    closest_points_segments, edge_edge_distance, point_segment_distance,
    point_triangle_distance, EdgeEdgeKind, PointTriangleKind,
};
pub use io::{load_mesh, read_obj, read_tetgen, save_mesh, write_atomic, write_obj, write_tetgen, Mesh};
pub use mesh::{surface_of, tet_signed_volume, triangle_area, TetMesh, TriMesh, MIN_TRIANGLE_AREA};
pub use pose::Pose;
pub use primitives::{
    box_trimesh, icosphere, tetrahedralize_box, tetrahedralize_box_cells, tetrahedralize_sphere,
    MAX_SPHERE_SUBDIVISIONS,
};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    #[inline]
    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    #[inline]
    pub fn inflated(&self, r: f64) -> Self {
        Aabb {
            min: self.min.add_scalar(-r),
            max: self.max.add_scalar(r),
        }
    }

    #[inline]
    pub fn union(&self, other: &Aabb) -> Self {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    #[inline]
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }

    #[inline]
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }
}
