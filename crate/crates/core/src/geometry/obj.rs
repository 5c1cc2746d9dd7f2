//! Wavefront OBJ reader: `v`, `vt`, `vn` and `f` records.
//!
//! Polygons are fan-triangulated. Negative (relative) indices are resolved
//! against the elements read so far. Grouping, smoothing and material
//! statements are ignored.

use std::io::BufRead;
use std::path::Path;

use nalgebra::Point3;

use super::mesh::{Corner, Mesh};
use crate::error::{Error, Result};

/// Parse OBJ text into a mesh (not normalized).
pub fn parse_obj<R: BufRead>(reader: R) -> Result<Mesh> {
    let mut positions: Vec<Point3<f64>> = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut normal_count = 0usize;
    let mut faces: Vec<[Corner; 3]> = Vec::new();
    let mut faces_without_uv = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::ObjParse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = match line.find('#') {
            Some(i) => &line[..i],
            None => &line[..],
        };
        let mut tokens = line.split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        let err = |message: String| Error::ObjParse {
            line: lineno,
            message,
        };
        match keyword {
            "v" => {
                let c = parse_floats(&mut tokens, 3, lineno)?;
                positions.push(Point3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let c = parse_floats(&mut tokens, 1, lineno)?;
                uvs.push([c[0], c.get(1).copied().unwrap_or(0.0)]);
            }
            "vn" => {
                parse_floats(&mut tokens, 3, lineno)?;
                normal_count += 1;
            }
            "f" => {
                let mut corners = Vec::with_capacity(4);
                let mut missing_uv = false;
                for tok in tokens {
                    let mut parts = tok.split('/');
                    let p = parts
                        .next()
                        .filter(|s| !s.is_empty())
                        .ok_or_else(|| err(format!("face corner '{tok}' has no position")))?;
                    let p = resolve(p, positions.len(), "position", lineno)?;
                    let t = match parts.next() {
                        Some(s) if !s.is_empty() => Some(resolve(s, uvs.len(), "uv", lineno)?),
                        _ => None,
                    };
                    if let Some(n) = parts.next() {
                        if !n.is_empty() {
                            resolve(n, normal_count, "normal", lineno)?;
                        }
                    }
                    if parts.next().is_some() {
                        return Err(err(format!("malformed face corner '{tok}'")));
                    }
                    missing_uv |= t.is_none();
                    corners.push((p, t.unwrap_or(0)));
                }
                if corners.len() < 3 {
                    return Err(err(format!("face with {} corners", corners.len())));
                }
                if missing_uv {
                    faces_without_uv += 1;
                    continue;
                }
                let c = |(p, t): (u32, u32)| Corner { position: p, uv: t };
                for k in 1..corners.len() - 1 {
                    faces.push([c(corners[0]), c(corners[k]), c(corners[k + 1])]);
                }
            }
            _ => {}
        }
    }

    if faces_without_uv > 0 {
        return Err(Error::NotTextureMappable(format!(
            "{faces_without_uv} face(s) without 'vt' indices"
        )));
    }
    if faces.is_empty() {
        return Err(Error::InvalidMesh("no faces".into()));
    }
    Mesh::new(positions, uvs, faces)
}

pub fn parse_obj_bytes(bytes: &[u8]) -> Result<Mesh> {
    parse_obj(bytes)
}

/// Read, validate and normalize an OBJ file.
pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mesh = parse_obj(std::io::BufReader::new(file))?;
    Ok(mesh.normalized())
}

fn parse_floats<'a>(
    tokens: &mut impl Iterator<Item = &'a str>,
    min: usize,
    line: usize,
) -> Result<Vec<f64>> {
    let vals = tokens
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::ObjParse {
                    line,
                    message: format!("invalid number '{t}'"),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    if vals.len() < min {
        return Err(Error::ObjParse {
            line,
            message: format!("expected at least {min} values, got {}", vals.len()),
        });
    }
    Ok(vals)
}

fn resolve(tok: &str, count: usize, what: &str, line: usize) -> Result<u32> {
    let bad = |message: String| Error::ObjParse { line, message };
    let i: i64 = tok
        .parse()
        .map_err(|_| bad(format!("invalid {what} index '{tok}'")))?;
    let resolved = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return Err(bad(format!("{what} index 0")));
    };
    if resolved < 0 || resolved >= count as i64 {
        return Err(bad(format!("{what} index {i} out of range ({count} defined)")));
    }
    u32::try_from(resolved).map_err(|_| bad(format!("{what} index {i} too large")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUAD: &str = "\
# unit quad
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
vt 0 0
vt 1 0
vt 1 1
vt 0 1
f 1/1 2/2 3/3
f 1/1 3/3 4/4
";

    #[test]
    fn parses_quad() {
        let m = parse_obj(QUAD.as_bytes()).unwrap();
        assert_eq!(m.face_count(), 2);
        assert_eq!(m.uvs().len(), 4);
        for n in m.face_normals() {
            assert!((n.z - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fan_triangulates_polygons_and_negative_indices() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nvn 0 0 1\nf -4/-4/1 -3/-3/1 -2/-2/1 -1/-1/1\n";
        let m = parse_obj(src.as_bytes()).unwrap();
        assert_eq!(m.face_count(), 2);
        assert_eq!(m.faces()[1][2].position, 3);
    }

    #[test]
    fn missing_uvs_not_texture_mappable() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        let e = parse_obj(src.as_bytes()).unwrap_err();
        assert!(matches!(e, Error::NotTextureMappable(_)));
        assert!(e.to_string().contains("mesh not texture-mappable"));
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n";
        assert!(matches!(
            parse_obj(src.as_bytes()),
            Err(Error::NotTextureMappable(_))
        ));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 nope 0\n";
        match parse_obj(src.as_bytes()) {
            Err(Error::ObjParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let src = "v 0 0 0\nvt 0 0\nf 1/1 2/1 3/1\n";
        match parse_obj(src.as_bytes()) {
            Err(Error::ObjParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_mesh_reports_io_error() {
        let e = load_mesh(Path::new("/nonexistent/mesh.obj")).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
    }
}
