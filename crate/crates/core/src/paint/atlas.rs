use crate::geometry::Mesh;

/// Assigns every triangle its own square cell in a `ceil(sqrt(n))` grid and
/// maps the triangle onto the lower-left half of the cell, inset by one
/// texel of a `texture_size` texture so bilinear lookups stay inside the
/// chart.
pub fn naive_atlas(mesh: &Mesh, texture_size: usize) -> Mesh {
    let n = mesh.triangle_count();
    let cells = (n as f64).sqrt().ceil().max(1.0) as usize;
    let s = 1.0 / cells as f64;
    let pad = (1.0 / texture_size as f64).min(0.1 * s);
    let mut uvs = Vec::with_capacity(3 * n);
    for t in 0..n {
        let (cx, cy) = ((t % cells) as f64 * s, (t / cells) as f64 * s);
        uvs.push([cx + pad, cy + pad]);
        uvs.push([cx + s - 2.0 * pad, cy + pad]);
        uvs.push([cx + pad, cy + s - 2.0 * pad]);
    }
    let mut out = mesh.clone();
    out.set_uvs(uvs).expect("one uv per corner");
    out
}
