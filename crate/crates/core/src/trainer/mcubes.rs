//! Isosurface extraction with the classic 256-entry marching cubes tables.

use std::collections::HashMap;

use log::warn;
use rayon::prelude::*;

use crate::field::FieldParams;
use crate::geometry::{winding_exact, Mesh};
use crate::math::Vec3;
use crate::trainer::mc_tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE};

pub const DEFAULT_ISO: f64 = 0.5;
pub const MIN_RESOLUTION: usize = 8;

/// Extracts the `iso` level set of the field's point occupancy on a `res^3`
/// lattice spanning the scene cube.
pub fn marching_cubes(params: &FieldParams, res: usize, iso: f64) -> Mesh {
    let bound = params.config().bound;
    marching_cubes_fn(&|p| params.point_occupancy(p), bound, res, iso)
}

/// Same as [`marching_cubes`] for an arbitrary scalar function on
/// `[-bound, bound]^3`. Values above `iso` count as inside. The result is
/// oriented so that normals point away from the inside region.
pub fn marching_cubes_fn(
    f: &(dyn Fn(Vec3) -> f64 + Sync),
    bound: f64,
    res: usize,
    iso: f64,
) -> Mesh {
    let res = res.max(MIN_RESOLUTION);
    let step = 2.0 * bound / (res - 1) as f64;
    let at = |i: usize, j: usize, k: usize| {
        Vec3::new(
            -bound + i as f64 * step,
            -bound + j as f64 * step,
            -bound + k as f64 * step,
        )
    };
    let idx = |i: usize, j: usize, k: usize| (k * res + j) * res + i;
    let values: Vec<f64> = (0..res * res * res)
        .into_par_iter()
        .map(|n| {
            let (i, j, k) = (n % res, (n / res) % res, n / (res * res));
            f(at(i, j, k))
        })
        .collect();

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    for k in 0..res - 1 {
        for j in 0..res - 1 {
            for i in 0..res - 1 {
                let mut corner_val = [0.0; 8];
                let mut corner_idx = [0usize; 8];
                let mut cube = 0usize;
                for (c, o) in CORNER_OFFSETS.iter().enumerate() {
                    let n = idx(i + o[0], j + o[1], k + o[2]);
                    corner_idx[c] = n;
                    corner_val[c] = values[n];
                    if corner_val[c] > iso {
                        cube |= 1 << c;
                    }
                }
                if EDGE_TABLE[cube] == 0 {
                    continue;
                }
                let mut edge_ids = [u32::MAX; 12];
                for (e, &[a, b]) in EDGE_CORNERS.iter().enumerate() {
                    if EDGE_TABLE[cube] & (1 << e) == 0 {
                        continue;
                    }
                    // Key each lattice edge by its lower endpoint and axis so
                    // neighbouring cubes share vertices.
                    let (lo, hi) = if corner_idx[a] < corner_idx[b] {
                        (a, b)
                    } else {
                        (b, a)
                    };
                    let axis = (0..3)
                        .find(|&ax| CORNER_OFFSETS[lo][ax] != CORNER_OFFSETS[hi][ax])
                        .unwrap_or(0) as u8;
                    let key = (corner_idx[lo], axis);
                    edge_ids[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let pa = at(
                            i + CORNER_OFFSETS[lo][0],
                            j + CORNER_OFFSETS[lo][1],
                            k + CORNER_OFFSETS[lo][2],
                        );
                        let pb = at(
                            i + CORNER_OFFSETS[hi][0],
                            j + CORNER_OFFSETS[hi][1],
                            k + CORNER_OFFSETS[hi][2],
                        );
                        let (va, vb) = (corner_val[lo], corner_val[hi]);
                        let t = if (vb - va).abs() > 1e-300 {
                            ((iso - va) / (vb - va)).clamp(0.0, 1.0)
                        } else {
                            0.5
                        };
                        vertices.push(pa + (pb - pa) * t);
                        (vertices.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[cube].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    triangles.push([
                        edge_ids[tri[0] as usize],
                        edge_ids[tri[1] as usize],
                        edge_ids[tri[2] as usize],
                    ]);
                }
            }
        }
    }

    if triangles.is_empty() {
        warn!("marching cubes found no surface at iso {iso}");
        return Mesh::empty();
    }
    let mesh = match Mesh::new(vertices, triangles, None) {
        Ok(m) => m,
        Err(e) => {
            warn!("marching cubes produced an unusable mesh: {e}");
            return Mesh::empty();
        }
    };
    if signed_volume(&mesh) < 0.0 {
        mesh.flipped()
    } else {
        mesh
    }
}

fn signed_volume(mesh: &Mesh) -> f64 {
    (0..mesh.triangle_count())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            a.dot(b.cross(c)) / 6.0
        })
        .sum()
}

/// Winding number of an extracted mesh at `p`, for closedness checks.
pub fn mesh_winding(mesh: &Mesh, p: Vec3) -> f64 {
    winding_exact(mesh, p)
}
