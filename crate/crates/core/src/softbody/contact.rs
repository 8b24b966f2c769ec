//! Contact primitives, broad phase, smooth pair distances and conservative CCD.

use std::collections::HashMap;

use nalgebra::SMatrix;

use super::autodiff::{cross3, dot3, lift, sub3, Hd, HdVec};
use super::barrier::{barrier, barrier_derivatives};
use super::elastic::project_psd12;
use super::ContactParams;
use crate::error::{Error, Result};
use crate::geometry::{
    classify_edge_edge, classify_point_triangle, closest_point_triangle, Aabb, EdgeEdgeKind, PointTriangleKind,
    TriMesh, Vec3,
};

pub(crate) type Mat12 = SMatrix<f64, 12, 12>;

/// A vertex taking part in contact: a simulated degree of freedom or a
/// vertex of a kinematic collider.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VertexRef {
    Dof(usize),
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PairKind {
    /// Vertex 0 against triangle (1, 2, 3).
    PointTriangle,
    /// Edge (0, 1) against edge (2, 3).
    EdgeEdge,
}

/// A primitive pair closer than the activation distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactPair {
    pub kind: PairKind,
    pub vertices: [VertexRef; 4],
    pub distance: f64,
}

/// Read access to simulated and collider vertex positions.
#[derive(Clone, Copy)]
pub(crate) struct Positions<'a> {
    pub dof: &'a [Vec3],
    pub fixed: &'a [Vec3],
}

impl Positions<'_> {
    #[inline]
    pub fn get(&self, v: VertexRef) -> Vec3 {
        match v {
            VertexRef::Dof(i) => self.dof[i],
            VertexRef::Fixed(i) => self.fixed[i],
        }
    }

    #[inline]
    pub fn four(&self, v: &[VertexRef; 4]) -> [Vec3; 4] {
        v.map(|r| self.get(r))
    }
}

#[derive(Clone, Copy, Debug)]
struct Prim<const K: usize> {
    v: [VertexRef; K],
    group: u32,
    fixed: bool,
}

impl<const K: usize> Prim<K> {
    fn aabb(&self, a: &Positions, b: Option<&Positions>, inflate: f64) -> Aabb {
        let mut bb = Aabb::empty();
        for &r in &self.v {
            bb.grow(&a.get(r));
            if let Some(b) = b {
                bb.grow(&b.get(r));
            }
        }
        bb.inflated(inflate)
    }
}

fn compatible<const A: usize, const B: usize>(a: &Prim<A>, b: &Prim<B>) -> bool {
    a.group != b.group && !(a.fixed && b.fixed)
}

/// Triangle surface taking part in contact, already mapped to vertex refs.
pub(crate) struct SurfaceSpec {
    pub triangles: Vec<[VertexRef; 3]>,
    pub fixed: bool,
}

/// Points, edges and triangles of every surface, tagged by owning surface.
///
/// Primitives of the same surface never pair (no self-contact), nor do two
/// kinematic surfaces.
pub(crate) struct ContactScene {
    points: Vec<Prim<1>>,
    edges: Vec<Prim<2>>,
    tris: Vec<Prim<3>>,
}

impl ContactScene {
    pub fn new(surfaces: &[SurfaceSpec]) -> Self {
        let mut points = Vec::new();
        let mut edges = Vec::new();
        let mut tris = Vec::new();
        for (g, s) in surfaces.iter().enumerate() {
            let group = g as u32;
            let mut pv: Vec<VertexRef> = s.triangles.iter().flatten().copied().collect();
            pv.sort_unstable();
            pv.dedup();
            points.extend(pv.into_iter().map(|v| Prim {
                v: [v],
                group,
                fixed: s.fixed,
            }));
            let mut ev: Vec<[VertexRef; 2]> = s
                .triangles
                .iter()
                .flat_map(|t| [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]].map(|[a, b]| [a.min(b), a.max(b)]))
                .collect();
            ev.sort_unstable();
            ev.dedup();
            edges.extend(ev.into_iter().map(|v| Prim {
                v,
                group,
                fixed: s.fixed,
            }));
            tris.extend(s.triangles.iter().map(|&v| Prim {
                v,
                group,
                fixed: s.fixed,
            }));
        }
        ContactScene { points, edges, tris }
    }

    /// Pairs whose bounding boxes, swept from `a` to `b` and inflated by
    /// `inflate`, overlap. Sorted and free of duplicates.
    pub fn candidates(&self, a: &Positions, b: Option<&Positions>, inflate: f64) -> Vec<(PairKind, [VertexRef; 4])> {
        let mut out = Vec::new();
        let tri_boxes: Vec<Aabb> = self.tris.iter().map(|t| t.aabb(a, b, inflate)).collect();
        let cell = cell_size(&tri_boxes, &self.tris, inflate);
        let grid = HashGrid::build(&tri_boxes, cell);
        let mut hits = Vec::new();
        for p in &self.points {
            let bb = p.aabb(a, b, inflate);
            grid.query(&bb, &mut hits);
            for &j in &hits {
                let t = &self.tris[j as usize];
                if compatible(p, t) && bb.intersects(&tri_boxes[j as usize]) {
                    out.push((PairKind::PointTriangle, [p.v[0], t.v[0], t.v[1], t.v[2]]));
                }
            }
        }
        let edge_boxes: Vec<Aabb> = self.edges.iter().map(|e| e.aabb(a, b, inflate)).collect();
        let grid = HashGrid::build(&edge_boxes, cell);
        for (i, e) in self.edges.iter().enumerate() {
            grid.query(&edge_boxes[i], &mut hits);
            for &j in &hits {
                let j = j as usize;
                if j <= i {
                    continue;
                }
                let f = &self.edges[j];
                if compatible(e, f) && edge_boxes[i].intersects(&edge_boxes[j]) {
                    out.push((PairKind::EdgeEdge, [e.v[0], e.v[1], f.v[0], f.v[1]]));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Every pair closer than `dhat` at positions `x`.
    pub fn active_pairs(&self, x: &Positions, dhat: f64) -> Vec<ContactPair> {
        self.candidates(x, None, 0.5 * dhat)
            .into_iter()
            .filter_map(|(kind, vertices)| {
                let distance = pair_distance(kind, &x.four(&vertices));
                (distance < dhat).then_some(ContactPair {
                    kind,
                    vertices,
                    distance,
                })
            })
            .collect()
    }
}

fn cell_size(boxes: &[Aabb], prims: &[Prim<3>], inflate: f64) -> f64 {
    let (sum, n) = boxes
        .iter()
        .zip(prims)
        .filter(|(_, p)| !p.fixed)
        .fold((0.0, 0usize), |(s, n), (b, _)| (s + (b.max - b.min).max(), n + 1));
    let mean = if n > 0 { sum / n as f64 } else { 0.0 };
    mean.max(4.0 * inflate).max(1e-9)
}

/// Uniform spatial hash over boxes; boxes spanning too many cells are kept
/// in a list that every query returns.
struct HashGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
    large: Vec<u32>,
    count: usize,
}

const MAX_CELLS_PER_BOX: i64 = 512;

impl HashGrid {
    fn build(boxes: &[Aabb], cell: f64) -> Self {
        let mut g = HashGrid {
            cell,
            cells: HashMap::new(),
            large: Vec::new(),
            count: boxes.len(),
        };
        for (i, b) in boxes.iter().enumerate() {
            let (lo, hi) = g.range(b);
            if span(&lo, &hi) > MAX_CELLS_PER_BOX {
                g.large.push(i as u32);
                continue;
            }
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        g.cells.entry([x, y, z]).or_default().push(i as u32);
                    }
                }
            }
        }
        g
    }

    fn range(&self, b: &Aabb) -> ([i64; 3], [i64; 3]) {
        let f = |v: f64| (v / self.cell).floor() as i64;
        ([f(b.min.x), f(b.min.y), f(b.min.z)], [f(b.max.x), f(b.max.y), f(b.max.z)])
    }

    fn query(&self, b: &Aabb, out: &mut Vec<u32>) {
        out.clear();
        let (lo, hi) = self.range(b);
        if span(&lo, &hi) > MAX_CELLS_PER_BOX {
            out.extend(0..self.count as u32);
            return;
        }
        out.extend_from_slice(&self.large);
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(ids) = self.cells.get(&[x, y, z]) {
                        out.extend_from_slice(ids);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

fn span(lo: &[i64; 3], hi: &[i64; 3]) -> i64 {
    (0..3)
        .map(|k| (hi[k] - lo[k] + 1).max(1))
        .try_fold(1i64, |acc, n| acc.checked_mul(n))
        .unwrap_or(i64::MAX)
}

/// Every point-triangle and edge-edge pair closer than `dhat` between
/// different surfaces, at least one of them soft.
///
/// `Dof` refs index the concatenated vertices of `soft`, `Fixed` refs the
/// concatenated vertices of `rigid`.
pub fn collect_contact_pairs(soft: &[TriMesh], rigid: &[TriMesh], dhat: f64) -> Vec<ContactPair> {
    let mut specs = Vec::new();
    let mut dof = Vec::new();
    let mut fixed = Vec::new();
    for m in soft {
        let off = dof.len();
        dof.extend_from_slice(m.vertices());
        specs.push(SurfaceSpec {
            triangles: m.triangles().iter().map(|t| t.map(|i| VertexRef::Dof(off + i))).collect(),
            fixed: false,
        });
    }
    for m in rigid {
        let off = fixed.len();
        fixed.extend_from_slice(m.vertices());
        specs.push(SurfaceSpec {
            triangles: m.triangles().iter().map(|t| t.map(|i| VertexRef::Fixed(off + i))).collect(),
            fixed: true,
        });
    }
    let scene = ContactScene::new(&specs);
    scene.active_pairs(
        &Positions {
            dof: &dof,
            fixed: &fixed,
        },
        dhat,
    )
}

/// Unsigned distance between the two primitives of a pair.
pub fn pair_distance(kind: PairKind, p: &[Vec3; 4]) -> f64 {
    match kind {
        PairKind::PointTriangle => (p[0] - closest_point_triangle(&p[0], &p[1], &p[2], &p[3]).0).norm(),
        PairKind::EdgeEdge => {
            let (_, s, t) = classify_edge_edge(&p[0], &p[1], &p[2], &p[3]);
            let pa = p[0] + (p[1] - p[0]) * s;
            let pb = p[2] + (p[3] - p[2]) * t;
            (pa - pb).norm()
        }
    }
}

fn d_pp(a: &HdVec, b: &HdVec) -> Hd {
    let d = sub3(a, b);
    dot3(&d, &d).sqrt()
}

fn d_pe(p: &HdVec, e0: &HdVec, e1: &HdVec) -> Hd {
    let c = cross3(&sub3(e0, p), &sub3(e1, p));
    let e = sub3(e1, e0);
    (dot3(&c, &c) / dot3(&e, &e)).sqrt()
}

fn d_plane(p: &HdVec, a: &HdVec, n: &HdVec) -> Hd {
    let s = dot3(&sub3(p, a), n);
    (s * s / dot3(n, n)).sqrt()
}

/// Pair distance with its gradient and Hessian over the twelve coordinates.
pub(crate) fn pair_distance_hd(kind: PairKind, p: &[Vec3; 4]) -> Hd {
    let v = lift(p);
    match kind {
        PairKind::PointTriangle => match classify_point_triangle(&p[0], &p[1], &p[2], &p[3]) {
            PointTriangleKind::Face => {
                let n = cross3(&sub3(&v[2], &v[1]), &sub3(&v[3], &v[1]));
                d_plane(&v[0], &v[1], &n)
            }
            PointTriangleKind::Edge(i) => {
                let i = i as usize;
                d_pe(&v[0], &v[1 + i], &v[1 + (i + 1) % 3])
            }
            PointTriangleKind::Vertex(i) => d_pp(&v[0], &v[1 + i as usize]),
        },
        PairKind::EdgeEdge => match classify_edge_edge(&p[0], &p[1], &p[2], &p[3]).0 {
            EdgeEdgeKind::LineLine => {
                let n = cross3(&sub3(&v[1], &v[0]), &sub3(&v[3], &v[2]));
                d_plane(&v[0], &v[2], &n)
            }
            EdgeEdgeKind::PointA(i) => d_pe(&v[i as usize], &v[2], &v[3]),
            EdgeEdgeKind::PointB(j) => d_pe(&v[2 + j as usize], &v[0], &v[1]),
            EdgeEdgeKind::PointPoint(i, j) => d_pp(&v[i as usize], &v[2 + j as usize]),
        },
    }
}

/// Barrier energy `kappa * b(d)` of one pair (J).
pub fn pair_barrier_energy(kind: PairKind, p: &[Vec3; 4], params: &ContactParams) -> Result<f64> {
    let d = pair_distance(kind, p);
    if !(d > 0.0) {
        return Err(Error::invalid("pair distance is not positive"));
    }
    Ok(params.kappa * barrier(d, params.dhat))
}

/// Gradient of [`pair_barrier_energy`] per pair vertex (N).
pub fn pair_barrier_gradient(kind: PairKind, p: &[Vec3; 4], params: &ContactParams) -> Result<[Vec3; 4]> {
    let (g, _) = barrier_derivs(kind, p, params, false)?;
    Ok(g)
}

/// Gradient and PSD-projected Hessian of one pair's barrier energy.
pub(crate) fn barrier_derivs(
    kind: PairKind,
    p: &[Vec3; 4],
    params: &ContactParams,
    with_hessian: bool,
) -> Result<([Vec3; 4], Option<Mat12>)> {
    let d = pair_distance_hd(kind, p);
    if !(d.v > 0.0) {
        return Err(Error::invalid("pair distance is not positive"));
    }
    let (b1, b2) = barrier_derivatives(d.v, params.dhat);
    let k = params.kappa;
    let g = std::array::from_fn(|a| Vec3::new(d.g[3 * a], d.g[3 * a + 1], d.g[3 * a + 2]) * (k * b1));
    let h = with_hessian.then(|| {
        let h = Mat12::from_fn(|i, j| k * (b2 * d.g[i] * d.g[j] + b1 * d.h[i][j]));
        project_psd12(0.5 * (h + h.transpose()))
    });
    Ok((g, h))
}

/// Largest fraction of the step `dx` (in `(0, 1]`) that keeps the pair
/// separated, by additive conservative advancement.
pub(crate) fn additive_ccd(kind: PairKind, x: &[Vec3; 4], dx: &[Vec3; 4]) -> f64 {
    const SEPARATION: f64 = 0.1;
    const MAX_ITERS: usize = 10_000;
    let mean = (dx[0] + dx[1] + dx[2] + dx[3]) / 4.0;
    let p = dx.map(|d| d - mean);
    let lp = match kind {
        PairKind::PointTriangle => p[0].norm() + p[1].norm().max(p[2].norm()).max(p[3].norm()),
        PairKind::EdgeEdge => p[0].norm().max(p[1].norm()) + p[2].norm().max(p[3].norm()),
    };
    if lp == 0.0 {
        return 1.0;
    }
    let mut xs = *x;
    let d0 = pair_distance(kind, &xs);
    if !(d0 > 0.0) {
        return 0.0;
    }
    let gap = SEPARATION * d0;
    let mut t = 0.0;
    let mut tl = (1.0 - SEPARATION) * d0 / lp;
    for _ in 0..MAX_ITERS {
        for k in 0..4 {
            xs[k] += p[k] * tl;
        }
        let d = pair_distance(kind, &xs);
        if t > 0.0 && d < gap {
            return t;
        }
        t += tl;
        if t > 1.0 {
            return 1.0;
        }
        tl = 0.9 * d / lp;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    fn feature(kind: PairKind, p: &[Vec3; 4]) -> String {
        match kind {
            PairKind::PointTriangle => format!("{:?}", classify_point_triangle(&p[0], &p[1], &p[2], &p[3])),
            PairKind::EdgeEdge => format!("{:?}", classify_edge_edge(&p[0], &p[1], &p[2], &p[3]).0),
        }
    }

    #[test]
    fn distance_derivatives_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        let mut checked = 0;
        for trial in 0..200 {
            let kind = if trial % 2 == 0 {
                PairKind::PointTriangle
            } else {
                PairKind::EdgeEdge
            };
            let p: [Vec3; 4] = std::array::from_fn(|_| rand_vec(&mut rng, 1.0));
            let d = pair_distance_hd(kind, &p);
            assert!((d.v - pair_distance(kind, &p)).abs() < 1e-10, "trial {trial}");
            let f0 = feature(kind, &p);
            for i in 0..12 {
                let mut pp = p;
                pp[i / 3][i % 3] += h;
                let mut pm = p;
                pm[i / 3][i % 3] -= h;
                if feature(kind, &pp) != f0 || feature(kind, &pm) != f0 {
                    continue;
                }
                let (dp, dm) = (pair_distance_hd(kind, &pp), pair_distance_hd(kind, &pm));
                let fd = (dp.v - dm.v) / (2.0 * h);
                assert!((fd - d.g[i]).abs() < 1e-6 * (1.0 + d.g[i].abs()), "trial {trial} g{i}");
                for j in 0..12 {
                    let fdh = (dp.g[j] - dm.g[j]) / (2.0 * h);
                    assert!(
                        (fdh - d.h[i][j]).abs() < 1e-4 * (1.0 + d.h[i][j].abs()),
                        "trial {trial} h{i}{j}: {fdh} vs {}",
                        d.h[i][j]
                    );
                }
                checked += 1;
            }
        }
        assert!(checked > 2000);
    }

    #[test]
    fn ccd_stops_before_contact() {
        // point falling onto a triangle from 1 cm, step of 3 cm
        let x = [
            Vec3::new(0.2, 0.2, 0.01),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let dx = [Vec3::new(0.0, 0.0, -0.03), Vec3::zeros(), Vec3::zeros(), Vec3::zeros()];
        let t = additive_ccd(PairKind::PointTriangle, &x, &dx);
        assert!(t < 1.0 / 3.0 && t > 0.2, "{t}");
        let moved = [x[0] + dx[0] * t, x[1], x[2], x[3]];
        assert!(pair_distance(PairKind::PointTriangle, &moved) > 0.0);
        // moving away is unrestricted
        let up = [Vec3::new(0.0, 0.0, 0.03), Vec3::zeros(), Vec3::zeros(), Vec3::zeros()];
        assert_eq!(additive_ccd(PairKind::PointTriangle, &x, &up), 1.0);
    }

    #[test]
    fn crossing_edges_are_caught() {
        let x = [
            Vec3::new(-1.0, 0.0, 0.01),
            Vec3::new(1.0, 0.0, 0.01),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let dz = Vec3::new(0.0, 0.0, -0.05);
        let dx = [dz, dz, Vec3::zeros(), Vec3::zeros()];
        let t = additive_ccd(PairKind::EdgeEdge, &x, &dx);
        assert!(t < 0.2, "{t}");
    }
}
