use super::Vec3;
use crate::error::{Error, Result};

const DEGENERATE_AREA: f64 = 1e-24;
const DEGENERATE_LENGTH: f64 = 1e-12;

/// Which feature of the triangle realizes the point-triangle distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PointTriangleKind {
    Face,
    /// Edge `(i, (i + 1) % 3)`.
    Edge(u8),
    Vertex(u8),
}

/// Which features realize the segment-segment distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeEdgeKind {
    /// Interior of both segments.
    LineLine,
    /// Endpoint `i` of segment A against the interior of segment B.
    PointA(u8),
    /// Endpoint `j` of segment B against the interior of segment A.
    PointB(u8),
    /// Endpoint `i` of A against endpoint `j` of B.
    PointPoint(u8, u8),
}

/// Closest point on triangle `abc` to `p` and its barycentric coordinates.
pub fn closest_point_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let (bary, _) = closest_bary(p, a, b, c);
    (a * bary[0] + b * bary[1] + c * bary[2], bary)
}

/// Region-based closest-point query (real-time collision detection style).
fn closest_bary(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> ([f64; 3], PointTriangleKind) {
    use PointTriangleKind::*;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ([1.0, 0.0, 0.0], Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return ([0.0, 1.0, 0.0], Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return ([1.0 - v, v, 0.0], Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return ([0.0, 0.0, 1.0], Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return ([1.0 - w, 0.0, w], Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return ([0.0, 1.0 - w, w], Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    ([1.0 - v - w, v, w], Face)
}

/// Distance from `p` to the closed triangle and the closest point on it.
pub fn point_triangle_distance(p: &Vec3, tri: &[Vec3; 3]) -> Result<(f64, Vec3)> {
    let [a, b, c] = tri;
    if (b - a).cross(&(c - a)).norm_squared() <= DEGENERATE_AREA {
        return Err(Error::invalid("degenerate triangle in distance query"));
    }
    let (q, _) = closest_point_triangle(p, a, b, c);
    Ok(((p - q).norm(), q))
}

/// Feature classification used to pick a smooth distance formula.
pub fn classify_point_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> PointTriangleKind {
    closest_bary(p, a, b, c).1
}

/// Distance from `p` to segment `ab` and the segment parameter of the closest point.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p - (a + ab * t)).norm(), t)
}

/// Parameters `(s, t)` of the closest points on segments `a0a1` and `b0b1`.
pub fn closest_points_segments(a0: &Vec3, a1: &Vec3, b0: &Vec3, b1: &Vec3) -> (f64, f64) {
    let d1 = a1 - a0;
    let d2 = b1 - b0;
    let r = a0 - b0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    // Parallel (or nearly) segments: any s works; pin s = 0 and clamp.
    let mut s = if denom > 1e-14 * a * e {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

/// Minimum distance between segments `a0a1` and `b0b1`.
pub fn edge_edge_distance(a0: &Vec3, a1: &Vec3, b0: &Vec3, b1: &Vec3) -> Result<f64> {
    if (a1 - a0).norm() <= DEGENERATE_LENGTH || (b1 - b0).norm() <= DEGENERATE_LENGTH {
        return Err(Error::invalid("degenerate segment in distance query"));
    }
    let (s, t) = closest_points_segments(a0, a1, b0, b1);
    let pa = a0 + (a1 - a0) * s;
    let pb = b0 + (b1 - b0) * t;
    Ok((pa - pb).norm())
}

/// Feature classification for the segment pair, consistent with [`edge_edge_distance`].
pub fn classify_edge_edge(a0: &Vec3, a1: &Vec3, b0: &Vec3, b1: &Vec3) -> (EdgeEdgeKind, f64, f64) {
    let (s, t) = closest_points_segments(a0, a1, b0, b1);
    let end = |x: f64| {
        if x <= 0.0 {
            Some(0u8)
        } else if x >= 1.0 {
            Some(1u8)
        } else {
            None
        }
    };
    let kind = match (end(s), end(t)) {
        (None, None) => {
            let n = (a1 - a0).cross(&(b1 - b0));
            let scale = (a1 - a0).norm_squared() * (b1 - b0).norm_squared();
            if n.norm_squared() > 1e-12 * scale {
                EdgeEdgeKind::LineLine
            } else {
                // Near-parallel interiors: the distance is attained at an endpoint.
                return classify_parallel(a0, a1, b0, b1);
            }
        }
        (Some(i), None) => EdgeEdgeKind::PointA(i),
        (None, Some(j)) => EdgeEdgeKind::PointB(j),
        (Some(i), Some(j)) => EdgeEdgeKind::PointPoint(i, j),
    };
    (kind, s, t)
}

fn classify_parallel(a0: &Vec3, a1: &Vec3, b0: &Vec3, b1: &Vec3) -> (EdgeEdgeKind, f64, f64) {
    let cands = [
        (point_segment_distance(a0, b0, b1), 0u8, true),
        (point_segment_distance(a1, b0, b1), 1, true),
        (point_segment_distance(b0, a0, a1), 0, false),
        (point_segment_distance(b1, a0, a1), 1, false),
    ];
    let ((_, param), end, on_a) = cands
        .into_iter()
        .min_by(|x, y| x.0 .0.total_cmp(&y.0 .0))
        .expect("four candidates");
    let interior = param > 0.0 && param < 1.0;
    let snap = |x: f64| if x <= 0.0 { 0u8 } else { 1u8 };
    if on_a {
        let s = end as f64;
        if interior {
            (EdgeEdgeKind::PointA(end), s, param)
        } else {
            (EdgeEdgeKind::PointPoint(end, snap(param)), s, param)
        }
    } else {
        let t = end as f64;
        if interior {
            (EdgeEdgeKind::PointB(end), param, t)
        } else {
            (EdgeEdgeKind::PointPoint(snap(param), end), param, t)
        }
    }
}
