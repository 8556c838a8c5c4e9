use crate::error::PaintError;
use crate::field::Camera;
use crate::geometry::Mesh;

/// Face index of uncovered pixels.
pub const NO_FACE: u32 = u32::MAX;
/// Triangles with any vertex closer than this (view depth) are skipped.
pub const NEAR_PLANE: f64 = 1e-4;

/// Per-pixel rasterization record, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub resolution: usize,
    pub face: Vec<u32>,
    /// Perspective-correct barycentrics of the visible face.
    pub bary: Vec<[f64; 3]>,
    pub uv: Vec<[f64; 2]>,
    pub depth: Vec<f64>,
}

impl GBuffer {
    fn empty(res: usize) -> Self {
        let n = res * res;
        Self {
            resolution: res,
            face: vec![NO_FACE; n],
            bary: vec![[0.0; 3]; n],
            uv: vec![[0.0; 2]; n],
            depth: vec![f64::INFINITY; n],
        }
    }

    #[inline]
    pub fn covered(&self, pixel: usize) -> bool {
        self.face[pixel] != NO_FACE
    }

    pub fn coverage(&self) -> usize {
        self.face.iter().filter(|f| **f != NO_FACE).count()
    }
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Top or left edge in image coordinates (x right, y down) for a
/// positively oriented triangle.
#[inline]
fn top_left(ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let (dx, dy) = (bx - ax, by - ay);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Z-buffered perspective rasterization of `mesh` at `res x res` (the
/// camera's own resolution is ignored). Pixel centers sit at half-integers;
/// ties on shared edges follow the top-left rule.
pub fn rasterize(mesh: &Mesh, cam: &Camera, res: usize) -> Result<GBuffer, PaintError> {
    if !mesh.has_uvs() {
        return Err(PaintError::MissingUvs);
    }
    let cam = Camera {
        resolution: res,
        ..*cam
    };
    let (right, up, forward) = cam.basis();
    let tan = (0.5 * cam.fov_y).tan();
    let r = res as f64;
    let project = |p: crate::math::Vec3| {
        let d = p - cam.position;
        let z = d.dot(forward);
        let x = d.dot(right) / (z * tan);
        let y = d.dot(up) / (z * tan);
        ((x + 1.0) * 0.5 * r, (1.0 - y) * 0.5 * r, z)
    };
    let mut g = GBuffer::empty(res);
    for t in 0..mesh.triangle_count() {
        let corners = mesh.corners(t);
        let depth_ok = corners
            .iter()
            .all(|c| (*c - cam.position).dot(forward) > NEAR_PLANE);
        if !depth_ok {
            continue;
        }
        let mut s = corners.map(project);
        let uvs = mesh.triangle_uvs(t).expect("uvs checked above");
        let mut order = [0usize, 1, 2];
        let area = edge(s[0].0, s[0].1, s[1].0, s[1].1, s[2].0, s[2].1);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            s.swap(1, 2);
            order.swap(1, 2);
        }
        let area = area.abs();
        let min_x = s.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
        let max_x = s.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = s.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        let max_y = s.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
        let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
        let x1 = ((max_x - 0.5).floor().min(r - 1.0)).max(-1.0);
        let y1 = ((max_y - 0.5).floor().min(r - 1.0)).max(-1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        let tl = [
            top_left(s[1].0, s[1].1, s[2].0, s[2].1),
            top_left(s[2].0, s[2].1, s[0].0, s[0].1),
            top_left(s[0].0, s[0].1, s[1].0, s[1].1),
        ];
        for py in y0..=y1 {
            let fy = py as f64 + 0.5;
            for px in x0..=x1 {
                let fx = px as f64 + 0.5;
                let e = [
                    edge(s[1].0, s[1].1, s[2].0, s[2].1, fx, fy),
                    edge(s[2].0, s[2].1, s[0].0, s[0].1, fx, fy),
                    edge(s[0].0, s[0].1, s[1].0, s[1].1, fx, fy),
                ];
                if !(0..3).all(|i| e[i] > 0.0 || (e[i] == 0.0 && tl[i])) {
                    continue;
                }
                // Screen-space weights, then perspective correction.
                let l = e.map(|v| v / area);
                let q = [l[0] / s[0].2, l[1] / s[1].2, l[2] / s[2].2];
                let inv_z = q[0] + q[1] + q[2];
                let z = 1.0 / inv_z;
                let pix = py * res + px;
                if z >= g.depth[pix] {
                    continue;
                }
                let mut b = [0.0; 3];
                for i in 0..3 {
                    b[order[i]] = q[i] * z;
                }
                g.depth[pix] = z;
                g.face[pix] = t as u32;
                g.bary[pix] = b;
                g.uv[pix] = [
                    b[0] * uvs[0][0] + b[1] * uvs[1][0] + b[2] * uvs[2][0],
                    b[0] * uvs[0][1] + b[1] * uvs[1][1] + b[2] * uvs[2][1],
                ];
            }
        }
    }
    Ok(g)
}
