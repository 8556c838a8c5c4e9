//! Generalized winding numbers: exact solid-angle sums and the hierarchical
//! far-field approximation.
//!
//! The far field of a cluster is its Taylor expansion about the area-weighted
//! centroid through third order. The dipole term alone is off by a few
//! percent at `beta = 2` on a finely tessellated sphere; with the two
//! correction terms the error there is a few 1e-3, and about 1e-3 at
//! `beta = 3`.

use std::f64::consts::PI;

use crate::geometry::{Bvh, Mesh, NodeKind, WindingMoments};
use crate::math::Vec3;

/// Far-field acceptance multiplier used when none is given.
pub const DEFAULT_BETA: f64 = 2.0;

/// Default inside/outside threshold on the winding number.
pub const DEFAULT_WINDING_THRESHOLD: f64 = 0.5;

const FOUR_PI: f64 = 4.0 * PI;

/// Signed solid angle subtended by triangle `tri` at `p`
/// (Van Oosterom and Strackee). Positive when `p` sees the back side, i.e.
/// when `p` lies inside an outward-oriented closed surface.
#[inline]
pub fn solid_angle(tri: &[Vec3; 3], p: Vec3) -> f64 {
    let a = tri[0] - p;
    let b = tri[1] - p;
    let c = tri[2] - p;
    let la = a.norm();
    let lb = b.norm();
    let lc = c.norm();
    let det = a.dot(b.cross(c));
    let denom = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb + b.dot(c) * la;
    2.0 * det.atan2(denom)
}

/// Exact generalized winding number: the sum of signed solid angles over all
/// triangles, divided by 4π. Triangles are visited in mesh order.
pub fn winding_exact(mesh: &Mesh, p: Vec3) -> f64 {
    let mut total = 0.0;
    for t in 0..mesh.triangle_count() {
        total += solid_angle(&mesh.corners(t), p);
    }
    total / FOUR_PI
}

/// Hierarchical winding number. A node whose centroid is farther than
/// `beta * radius` from `p` contributes its far-field expansion; otherwise the
/// traversal descends, and leaves are evaluated exactly.
///
/// An infinite `beta` never accepts a node and returns [`winding_exact`]
/// bit for bit.
pub fn winding_fast(bvh: &Bvh, p: Vec3, beta: f64) -> f64 {
    debug_assert!(beta >= 1.0, "beta must be >= 1");
    if beta == f64::INFINITY {
        return winding_exact(bvh.mesh(), p);
    }
    let mut total = 0.0;
    let mut stack: Vec<u32> = Vec::with_capacity(64);
    stack.push(0);
    while let Some(ni) = stack.pop() {
        let node = &bvh.nodes()[ni as usize];
        let r = node.moments.centroid - p;
        let dist2 = r.norm_squared();
        let reach = beta * node.moments.radius;
        if dist2 > reach * reach {
            total += far_field(&node.moments, r, dist2);
            continue;
        }
        match node.kind {
            NodeKind::Leaf { start, count } => {
                for tri in &bvh.leaf_triangles()[start as usize..(start + count) as usize] {
                    total += solid_angle(tri, p);
                }
            }
            NodeKind::Internal { left, right } => {
                stack.push(right);
                stack.push(left);
            }
        }
    }
    total / FOUR_PI
}

/// Taylor expansion of a cluster's solid angle about its centroid, seen from
/// offset `r = centroid - p`: the dipole term plus two corrections.
#[inline]
pub fn far_field(m: &WindingMoments, r: Vec3, dist2: f64) -> f64 {
    let inv = 1.0 / dist2.sqrt();
    let inv3 = inv / dist2;
    let inv5 = inv3 / dist2;
    let dipole = m.normal_sum.dot(r) * inv3;
    // Hessian of r/|r|^3 contracted with the second moment.
    let q = &m.quadrupole;
    let rr = [r.x, r.y, r.z];
    let mut corr = (q[0][0] + q[1][1] + q[2][2]) * inv3;
    let mut rqr = 0.0;
    for j in 0..3 {
        for k in 0..3 {
            rqr += rr[j] * q[j][k] * rr[k];
        }
    }
    corr -= 3.0 * rqr * inv5;

    // Third derivative of r/|r|^3 contracted with the octupole, halved.
    let o = &m.octupole;
    let inv7 = inv5 / dist2;
    let mut traces = 0.0;
    let mut rrr = 0.0;
    for j in 0..3 {
        for k in 0..3 {
            traces += (o[j][j][k] + o[j][k][j] + o[k][j][j]) * rr[k];
            for l in 0..3 {
                rrr += rr[j] * rr[k] * rr[l] * o[j][k][l];
            }
        }
    }
    let third = 0.5 * (-3.0 * traces * inv5 + 15.0 * rrr * inv7);
    dipole + corr + third
}
