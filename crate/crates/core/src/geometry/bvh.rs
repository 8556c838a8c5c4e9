use crate::geometry::mesh::area_normal;
use crate::geometry::Mesh;
use crate::math::Vec3;

/// Leaf capacity used when none is given.
pub const DEFAULT_LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::splat(f64::INFINITY),
            max: Vec3::splat(f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: Vec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.min.x <= other.min.x
            && self.min.y <= other.min.y
            && self.min.z <= other.min.z
            && self.max.x >= other.max.x
            && self.max.y >= other.max.y
            && self.max.z >= other.max.z
    }

    /// Squared distance from `p` to the box (0 inside).
    #[inline]
    pub fn distance_squared(&self, p: Vec3) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        let dz = (self.min.z - p.z).max(0.0).max(p.z - self.max.z);
        dx * dx + dy * dy + dz * dz
    }
}

/// Far-field winding expansion of a node (Taylor terms to third order).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindingMoments {
    /// Sum of the area-weighted normals of the node's triangles.
    pub normal_sum: Vec3,
    /// Area-weighted centroid.
    pub centroid: Vec3,
    /// Distance from `centroid` to the farthest vertex in the node.
    pub radius: f64,
    /// Second-order term: `sum_t N_t (c_t - centroid)^T` over triangles with
    /// area-weighted normal `N_t` and centroid `c_t`.
    pub quadrupole: [[f64; 3]; 3],
    /// Third-order term: `sum_t N_t (x) S_t` where `S_t` is the area-mean of
    /// `(x - centroid)(x - centroid)^T` over triangle `t`.
    pub octupole: [[[f64; 3]; 3]; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Internal {
        left: u32,
        right: u32,
    },
    /// Range into [`Bvh::leaf_triangles`].
    Leaf {
        start: u32,
        count: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhNode {
    pub aabb: Aabb,
    pub kind: NodeKind,
    pub moments: WindingMoments,
}

/// Median-split bounding volume hierarchy over a triangle mesh. Node 0 is the
/// root. Immutable after construction and safe to share across threads.
#[derive(Debug, Clone)]
pub struct Bvh {
    mesh: Mesh,
    nodes: Vec<BvhNode>,
    /// Triangle corners in leaf order.
    tris: Vec<[Vec3; 3]>,
    /// Original mesh triangle index for each entry of `tris`.
    order: Vec<u32>,
}

impl Bvh {
    /// Builds the hierarchy by recursively splitting triangle centroids at the
    /// median along the longest axis of their bounds.
    ///
    /// # Panics
    /// If the mesh has no triangles or `leaf_size` is zero.
    pub fn build(mesh: &Mesh, leaf_size: usize) -> Bvh {
        assert!(!mesh.is_empty(), "cannot build a BVH over an empty mesh");
        assert!(leaf_size > 0, "leaf_size must be positive");

        let corners: Vec<[Vec3; 3]> = (0..mesh.triangle_count())
            .map(|t| mesh.corners(t))
            .collect();
        let centroids: Vec<Vec3> = corners.iter().map(|c| (c[0] + c[1] + c[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..corners.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * corners.len() / leaf_size + 1);

        // (node slot, start, end) work list; children are created before their
        // ranges are processed so indices are stable.
        nodes.push(placeholder());
        let mut work = vec![(0usize, 0usize, order.len())];
        while let Some((slot, start, end)) = work.pop() {
            let mut aabb = Aabb::empty();
            let mut cbox = Aabb::empty();
            for &t in &order[start..end] {
                for v in corners[t as usize] {
                    aabb.grow(v);
                }
                cbox.grow(centroids[t as usize]);
            }
            let moments = moments_of(&order[start..end], &corners);
            let count = end - start;
            let extent = cbox.max - cbox.min;
            if count <= leaf_size || extent.x.max(extent.y).max(extent.z) <= 0.0 {
                nodes[slot] = BvhNode {
                    aabb,
                    kind: NodeKind::Leaf {
                        start: start as u32,
                        count: count as u32,
                    },
                    moments,
                };
                continue;
            }
            let axis = extent.max_axis();
            let mid = start + count / 2;
            order[start..end].select_nth_unstable_by(mid - start, |a, b| {
                centroids[*a as usize][axis]
                    .total_cmp(&centroids[*b as usize][axis])
                    .then(a.cmp(b))
            });
            let left = nodes.len();
            nodes.push(placeholder());
            let right = nodes.len();
            nodes.push(placeholder());
            nodes[slot] = BvhNode {
                aabb,
                kind: NodeKind::Internal {
                    left: left as u32,
                    right: right as u32,
                },
                moments,
            };
            work.push((right, mid, end));
            work.push((left, start, mid));
        }

        let tris = order.iter().map(|&t| corners[t as usize]).collect();
        Bvh {
            mesh: mesh.clone(),
            nodes,
            tris,
            order,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    pub fn root(&self) -> &BvhNode {
        &self.nodes[0]
    }

    pub fn leaf_triangles(&self) -> &[[Vec3; 3]] {
        &self.tris
    }

    /// Mesh triangle index of each entry of [`Bvh::leaf_triangles`].
    pub fn triangle_order(&self) -> &[u32] {
        &self.order
    }
}

fn placeholder() -> BvhNode {
    BvhNode {
        aabb: Aabb::empty(),
        kind: NodeKind::Leaf { start: 0, count: 0 },
        moments: WindingMoments {
            normal_sum: Vec3::ZERO,
            centroid: Vec3::ZERO,
            radius: 0.0,
            quadrupole: [[0.0; 3]; 3],
            octupole: [[[0.0; 3]; 3]; 3],
        },
    }
}

fn moments_of(tris: &[u32], corners: &[[Vec3; 3]]) -> WindingMoments {
    let mut normal_sum = Vec3::ZERO;
    let mut weighted = Vec3::ZERO;
    let mut area = 0.0;
    for &t in tris {
        let c = &corners[t as usize];
        let n = area_normal(c);
        let a = n.norm();
        normal_sum += n;
        weighted += (c[0] + c[1] + c[2]) * (a / 3.0);
        area += a;
    }
    let centroid = if area > 0.0 {
        weighted / area
    } else {
        corners[tris[0] as usize][0]
    };
    let radius = tris
        .iter()
        .flat_map(|&t| corners[t as usize])
        .map(|v| (v - centroid).norm())
        .fold(0.0, f64::max);
    let mut quadrupole = [[0.0; 3]; 3];
    let mut octupole = [[[0.0; 3]; 3]; 3];
    for &t in tris {
        let c = &corners[t as usize];
        let n = area_normal(c);
        let d = (c[0] + c[1] + c[2]) / 3.0 - centroid;
        // Area-mean second moment of a triangle about `centroid`:
        // (sum_i d_i d_i^T + s s^T) / 12 with d_i = v_i - centroid, s = sum_i d_i.
        let di = [c[0] - centroid, c[1] - centroid, c[2] - centroid];
        let s = di[0] + di[1] + di[2];
        let mut second = [[0.0; 3]; 3];
        for (k, row) in second.iter_mut().enumerate() {
            for (l, m) in row.iter_mut().enumerate() {
                *m =
                    (di[0][k] * di[0][l] + di[1][k] * di[1][l] + di[2][k] * di[2][l] + s[k] * s[l])
                        / 12.0;
            }
        }
        for j in 0..3 {
            for k in 0..3 {
                quadrupole[j][k] += n[j] * d[k];
                for l in 0..3 {
                    octupole[j][k][l] += n[j] * second[k][l];
                }
            }
        }
    }
    WindingMoments {
        normal_sum,
        centroid,
        radius,
        quadrupole,
        octupole,
    }
}
