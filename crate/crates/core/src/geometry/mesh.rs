use crate::error::GeometryError;
use crate::math::Vec3;

/// Triangles with area at or below this are dropped on construction.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Indexed triangle mesh with optional per-corner texture coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    /// Three entries per triangle, in corner order.
    uvs: Option<Vec<[f64; 2]>>,
}

impl Mesh {
    /// Builds a mesh, validating indices and dropping degenerate triangles
    /// (with a warning). UVs, when given, must hold one entry per corner.
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        uvs: Option<Vec<[f64; 2]>>,
    ) -> Result<Self, GeometryError> {
        let n = vertices.len();
        for (ti, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i as usize >= n {
                    return Err(GeometryError::BadTriangle {
                        triangle: ti,
                        index: i,
                        count: n,
                    });
                }
            }
        }
        if let Some(uv) = &uvs {
            if uv.len() != triangles.len() * 3 {
                return Err(GeometryError::UvCount {
                    expected: triangles.len() * 3,
                    got: uv.len(),
                });
            }
        }

        let keep: Vec<bool> = triangles
            .iter()
            .map(|t| triangle_area(&vertices, t) > DEGENERATE_AREA)
            .collect();
        let dropped = keep.iter().filter(|k| !**k).count();
        if dropped == 0 {
            return Ok(Self {
                vertices,
                triangles,
                uvs,
            });
        }
        log::warn!("dropping {dropped} degenerate triangle(s)");
        let tris = triangles
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(t, _)| *t)
            .collect();
        let uvs = uvs.map(|uv| {
            uv.chunks_exact(3)
                .zip(&keep)
                .filter(|(_, k)| **k)
                .flat_map(|(c, _)| c.iter().copied())
                .collect()
        });
        Ok(Self {
            vertices,
            triangles: tris,
            uvs,
        })
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
            uvs: None,
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn uvs(&self) -> Option<&[[f64; 2]]> {
        self.uvs.as_deref()
    }

    pub fn has_uvs(&self) -> bool {
        self.uvs.is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Replaces the texture coordinates. Must hold three entries per triangle.
    pub fn set_uvs(&mut self, uvs: Vec<[f64; 2]>) -> Result<(), GeometryError> {
        if uvs.len() != self.triangles.len() * 3 {
            return Err(GeometryError::UvCount {
                expected: self.triangles.len() * 3,
                got: uvs.len(),
            });
        }
        self.uvs = Some(uvs);
        Ok(())
    }

    #[inline]
    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_uvs(&self, t: usize) -> Option<[[f64; 2]; 3]> {
        self.uvs
            .as_ref()
            .map(|uv| [uv[3 * t], uv[3 * t + 1], uv[3 * t + 2]])
    }

    /// Axis-aligned bounds `(min, max)`; `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), v| (lo.min(*v), hi.max(*v))),
        )
    }

    pub fn total_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| triangle_area(&self.vertices, t))
            .sum()
    }

    /// Applies `f` to every vertex.
    pub fn transformed(&self, f: impl Fn(Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| f(*v)).collect(),
            triangles: self.triangles.clone(),
            uvs: self.uvs.clone(),
        }
    }

    /// Same surface with every triangle's orientation reversed.
    pub fn flipped(&self) -> Mesh {
        Mesh {
            vertices: self.vertices.clone(),
            triangles: self
                .triangles
                .iter()
                .map(|[a, b, c]| [*a, *c, *b])
                .collect(),
            uvs: self.uvs.as_ref().map(|uv| {
                uv.chunks_exact(3)
                    .flat_map(|c| [c[0], c[2], c[1]])
                    .collect()
            }),
        }
    }

    /// Axis-aligned box with outward-facing triangles.
    pub fn cuboid(min: Vec3, max: Vec3) -> Mesh {
        let v = |x: usize, y: usize, z: usize| {
            Vec3::new(
                if x == 0 { min.x } else { max.x },
                if y == 0 { min.y } else { max.y },
                if z == 0 { min.z } else { max.z },
            )
        };
        let vertices = vec![
            v(0, 0, 0),
            v(1, 0, 0),
            v(1, 1, 0),
            v(0, 1, 0),
            v(0, 0, 1),
            v(1, 0, 1),
            v(1, 1, 1),
            v(0, 1, 1),
        ];
        let triangles = vec![
            [0, 3, 2],
            [0, 2, 1], // z = min
            [4, 5, 6],
            [4, 6, 7], // z = max
            [0, 1, 5],
            [0, 5, 4], // y = min
            [3, 7, 6],
            [3, 6, 2], // y = max
            [0, 4, 7],
            [0, 7, 3], // x = min
            [1, 2, 6],
            [1, 6, 5], // x = max
        ];
        Mesh {
            vertices,
            triangles,
            uvs: None,
        }
    }

    /// UV sphere with `stacks` latitude bands and `slices` longitude segments,
    /// outward-oriented and closed.
    pub fn uv_sphere(center: Vec3, radius: f64, stacks: usize, slices: usize) -> Mesh {
        assert!(stacks >= 2 && slices >= 3);
        let mut vertices = vec![center + Vec3::new(0.0, radius, 0.0)];
        for i in 1..stacks {
            let theta = std::f64::consts::PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
                vertices.push(
                    center
                        + Vec3::new(
                            theta.sin() * phi.cos(),
                            theta.cos(),
                            theta.sin() * phi.sin(),
                        ) * radius,
                );
            }
        }
        let south = vertices.len() as u32;
        vertices.push(center - Vec3::new(0.0, radius, 0.0));

        let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
        let mut triangles = Vec::new();
        for j in 0..slices {
            triangles.push([0, ring(1, j + 1), ring(1, j)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b) = (ring(i, j), ring(i, j + 1));
                let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        for j in 0..slices {
            triangles.push([south, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
        }
        Mesh {
            vertices,
            triangles,
            uvs: None,
        }
    }
}

#[inline]
pub fn triangle_area(vertices: &[Vec3], t: &[u32; 3]) -> f64 {
    let a = vertices[t[0] as usize];
    let b = vertices[t[1] as usize];
    let c = vertices[t[2] as usize];
    0.5 * (b - a).cross(c - a).norm()
}

/// Area-weighted normal, `0.5 * (b - a) x (c - a)`.
#[inline]
pub fn area_normal(tri: &[Vec3; 3]) -> Vec3 {
    (tri[1] - tri[0]).cross(tri[2] - tri[0]) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_index() {
        let err = Mesh::new(vec![Vec3::ZERO; 3], vec![[0, 1, 3]], None).unwrap_err();
        assert!(matches!(err, GeometryError::BadTriangle { index: 3, .. }));
    }

    #[test]
    fn drops_degenerate_triangles_with_their_uvs() {
        let verts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let mut uvs = vec![[0.1, 0.1]; 6];
        uvs[3] = [0.9, 0.9];
        let m = Mesh::new(verts, vec![[0, 1, 3], [0, 1, 2]], Some(uvs.clone())).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
        assert_eq!(m.uvs().unwrap(), &uvs[3..]);
    }

    #[test]
    fn uv_count_must_match_corners() {
        let err = Mesh::new(
            vec![
                Vec3::ZERO,
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            Some(vec![[0.0, 0.0]; 2]),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            GeometryError::UvCount {
                expected: 3,
                got: 2
            }
        ));
    }

    #[test]
    fn cube_normals_sum_to_zero_and_face_outward() {
        let m = Mesh::cuboid(Vec3::splat(-1.0), Vec3::splat(1.0));
        let mut sum = Vec3::ZERO;
        for t in 0..m.triangle_count() {
            let c = m.corners(t);
            let n = area_normal(&c);
            let centroid = (c[0] + c[1] + c[2]) / 3.0;
            assert!(n.dot(centroid) > 0.0, "triangle {t} faces inward");
            sum += n;
        }
        assert!(sum.norm() < 1e-12);
        assert!((m.total_area() - 24.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_faces_outward() {
        let m = Mesh::uv_sphere(Vec3::ZERO, 1.0, 8, 12);
        for t in 0..m.triangle_count() {
            let c = m.corners(t);
            let centroid = (c[0] + c[1] + c[2]) / 3.0;
            assert!(area_normal(&c).dot(centroid) > 0.0);
        }
    }
}
