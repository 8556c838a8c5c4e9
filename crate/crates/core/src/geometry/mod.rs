//! Triangle meshes, the bounding volume hierarchy, winding numbers and
//! unsigned distance queries used by sketch guidance and texture painting.

mod bvh;
mod mesh;
mod obj;
mod query;
mod winding;

use rayon::prelude::*;

pub use bvh::{Aabb, Bvh, BvhNode, NodeKind, WindingMoments, DEFAULT_LEAF_SIZE};
pub use mesh::{area_normal, triangle_area, Mesh, DEGENERATE_AREA};
pub use obj::{load_obj, obj_string, parse_obj, write_obj};
pub use query::{
    closest_point, closest_point_on_triangle, occupancy_indicator, surface_query,
    surface_query_with_beta, SurfaceQuery,
};
pub use winding::{
    far_field, solid_angle, winding_exact, winding_fast, DEFAULT_BETA, DEFAULT_WINDING_THRESHOLD,
};

use crate::math::Vec3;

/// Default-parameter BVH.
pub fn build_bvh(mesh: &Mesh, leaf_size: usize) -> Bvh {
    Bvh::build(mesh, leaf_size)
}

/// Surface queries for many points. Results are in input order.
pub fn surface_queries(bvh: &Bvh, points: &[Vec3], beta: f64) -> Vec<SurfaceQuery> {
    points
        .par_iter()
        .map(|p| surface_query_with_beta(bvh, *p, beta))
        .collect()
}
