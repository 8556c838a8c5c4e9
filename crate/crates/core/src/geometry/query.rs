use crate::geometry::winding::{winding_fast, DEFAULT_BETA, DEFAULT_WINDING_THRESHOLD};
use crate::geometry::{Bvh, NodeKind};
use crate::math::Vec3;

/// Winding number, unsigned distance and closest surface point for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceQuery {
    pub winding: f64,
    pub distance: f64,
    pub closest_point: Vec3,
}

impl SurfaceQuery {
    /// Hard occupancy label from the winding number.
    #[inline]
    pub fn inside(&self, threshold: f64) -> bool {
        self.winding > threshold
    }
}

/// Closest point to `p` on triangle `(a, b, c)` by Voronoi-region
/// classification.
pub fn closest_point_on_triangle(p: Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Exact closest point on the mesh using branch-and-bound over the BVH.
/// Returns `(closest point, squared distance)`.
pub fn closest_point(bvh: &Bvh, p: Vec3) -> (Vec3, f64) {
    let mut best = (Vec3::ZERO, f64::INFINITY);
    let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
    stack.push((0, bvh.root().aabb.distance_squared(p)));
    while let Some((ni, bound)) = stack.pop() {
        if bound >= best.1 {
            continue;
        }
        match bvh.nodes()[ni as usize].kind {
            NodeKind::Leaf { start, count } => {
                for tri in &bvh.leaf_triangles()[start as usize..(start + count) as usize] {
                    let q = closest_point_on_triangle(p, tri);
                    let d2 = (q - p).norm_squared();
                    if d2 < best.1 {
                        best = (q, d2);
                    }
                }
            }
            NodeKind::Internal { left, right } => {
                let dl = bvh.nodes()[left as usize].aabb.distance_squared(p);
                let dr = bvh.nodes()[right as usize].aabb.distance_squared(p);
                // Visit the nearer child first.
                if dl <= dr {
                    stack.push((right, dr));
                    stack.push((left, dl));
                } else {
                    stack.push((left, dl));
                    stack.push((right, dr));
                }
            }
        }
    }
    best
}

/// Distance, closest point and (fast, default beta) winding number at `p`.
pub fn surface_query(bvh: &Bvh, p: Vec3) -> SurfaceQuery {
    surface_query_with_beta(bvh, p, DEFAULT_BETA)
}

pub fn surface_query_with_beta(bvh: &Bvh, p: Vec3, beta: f64) -> SurfaceQuery {
    let (closest_point, d2) = closest_point(bvh, p);
    SurfaceQuery {
        winding: winding_fast(bvh, p, beta),
        distance: d2.sqrt(),
        closest_point,
    }
}

/// 1 when the fast winding number exceeds 0.5, else 0.
pub fn occupancy_indicator(bvh: &Bvh, p: Vec3) -> u8 {
    u8::from(winding_fast(bvh, p, DEFAULT_BETA) > DEFAULT_WINDING_THRESHOLD)
}
