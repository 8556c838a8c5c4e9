//! ASCII Wavefront OBJ reading and writing (`v`, `vt`, `f` records).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::GeometryError;
use crate::geometry::Mesh;
use crate::math::Vec3;

/// Loads an OBJ file. Polygons with more than three corners are
/// fan-triangulated around their first corner. UVs are kept only when every
/// face carries `vt` indices.
pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh, GeometryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_obj(&text, path)
}

struct Corner {
    v: usize,
    vt: Option<usize>,
}

/// Parses OBJ text; `path` is used only for error messages.
pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh, GeometryError> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut corner_uvs: Vec<Option<usize>> = Vec::new();

    let parse_err = |line: usize, message: String| GeometryError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or("");
        match tag {
            "v" => {
                let c = parse_floats(parts, 3, line_no, &parse_err)?;
                positions.push(Vec3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let c = parse_floats(parts, 2, line_no, &parse_err)?;
                texcoords.push([c[0], c[1]]);
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in parts {
                    corners.push(parse_corner(
                        tok,
                        positions.len(),
                        texcoords.len(),
                        line_no,
                        path,
                    )?);
                }
                if corners.len() < 3 {
                    return Err(parse_err(
                        line_no,
                        format!("face has {} corners, need at least 3", corners.len()),
                    ));
                }
                for k in 1..corners.len() - 1 {
                    let fan = [&corners[0], &corners[k], &corners[k + 1]];
                    triangles.push([fan[0].v as u32, fan[1].v as u32, fan[2].v as u32]);
                    corner_uvs.extend(fan.iter().map(|c| c.vt));
                }
            }
            // Normals, groups, materials and smoothing are not needed.
            "vn" | "vp" | "o" | "g" | "s" | "usemtl" | "mtllib" | "l" | "p" => {}
            other => {
                return Err(parse_err(line_no, format!("unknown record `{other}`")));
            }
        }
    }

    let uvs = if !corner_uvs.is_empty() && corner_uvs.iter().all(Option::is_some) {
        Some(corner_uvs.iter().map(|i| texcoords[i.unwrap()]).collect())
    } else {
        None
    };
    Mesh::new(positions, triangles, uvs)
}

fn parse_floats<'a>(
    parts: impl Iterator<Item = &'a str>,
    need: usize,
    line: usize,
    err: &impl Fn(usize, String) -> GeometryError,
) -> Result<Vec<f64>, GeometryError> {
    let vals: Vec<f64> = parts
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| err(line, format!("invalid number `{s}`")))
        })
        .collect::<Result<_, _>>()?;
    if vals.len() < need {
        return Err(err(
            line,
            format!("expected {need} coordinates, found {}", vals.len()),
        ));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(err(line, "non-finite coordinate".to_string()));
    }
    Ok(vals)
}

fn resolve_index(
    raw: &str,
    count: usize,
    line: usize,
    kind: &'static str,
    path: &Path,
) -> Result<usize, GeometryError> {
    let idx: i64 = raw.parse().map_err(|_| GeometryError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("invalid {kind} index `{raw}`"),
    })?;
    // 1-based; negative values count back from the latest record.
    let resolved = if idx > 0 { idx - 1 } else { count as i64 + idx };
    if idx == 0 || resolved < 0 || resolved >= count as i64 {
        return Err(GeometryError::IndexOutOfRange {
            path: path.to_path_buf(),
            line,
            kind,
            index: idx,
            count,
        });
    }
    Ok(resolved as usize)
}

fn parse_corner(
    tok: &str,
    nv: usize,
    nvt: usize,
    line: usize,
    path: &Path,
) -> Result<Corner, GeometryError> {
    let mut fields = tok.split('/');
    let v = resolve_index(fields.next().unwrap_or(""), nv, line, "vertex", path)?;
    let vt = match fields.next() {
        Some(s) if !s.is_empty() => Some(resolve_index(s, nvt, line, "texcoord", path)?),
        _ => None,
    };
    Ok(Corner { v, vt })
}

/// Serializes a mesh as OBJ text. UVs are written one `vt` per corner.
/// `material` is `(mtllib file name, material name)`.
pub fn obj_string(mesh: &Mesh, material: Option<(&str, &str)>) -> String {
    let mut out = String::new();
    if let Some((lib, _)) = material {
        let _ = writeln!(out, "mtllib {lib}");
    }
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    if let Some(uvs) = mesh.uvs() {
        for uv in uvs {
            let _ = writeln!(out, "vt {} {}", uv[0], uv[1]);
        }
    }
    if let Some((_, name)) = material {
        let _ = writeln!(out, "usemtl {name}");
    }
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if mesh.has_uvs() {
            let _ = writeln!(
                out,
                "f {}/{} {}/{} {}/{}",
                tri[0] + 1,
                3 * t + 1,
                tri[1] + 1,
                3 * t + 2,
                tri[2] + 1,
                3 * t + 3
            );
        } else {
            let _ = writeln!(out, "f {} {} {}", tri[0] + 1, tri[1] + 1, tri[2] + 1);
        }
    }
    out
}

pub fn write_obj(
    mesh: &Mesh,
    path: impl AsRef<Path>,
    material: Option<(&str, &str)>,
) -> Result<(), GeometryError> {
    let path = path.as_ref();
    std::fs::write(path, obj_string(mesh, material)).map_err(|source| GeometryError::Io {
        path: path.to_path_buf(),
        source,
    })
}
