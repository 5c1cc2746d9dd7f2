//! Procedural test meshes and an OBJ writer for them.

use std::fmt::Write as _;

use nalgebra::{Point3, Vector3};

use super::mesh::{Corner, Mesh};

fn tri(p: [u32; 3], t: [u32; 3]) -> [Corner; 3] {
    [
        Corner { position: p[0], uv: t[0] },
        Corner { position: p[1], uv: t[1] },
        Corner { position: p[2], uv: t[2] },
    ]
}

/// Axis-aligned quad in the z = 0 plane facing +Z, centered on the origin,
/// UVs spanning the full unit square.
pub fn quad(width: f64, height: f64) -> Mesh {
    let (hw, hh) = (width / 2.0, height / 2.0);
    let positions = vec![
        Point3::new(-hw, -hh, 0.0),
        Point3::new(hw, -hh, 0.0),
        Point3::new(hw, hh, 0.0),
        Point3::new(-hw, hh, 0.0),
    ];
    let uvs = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let faces = vec![tri([0, 1, 2], [0, 1, 2]), tri([0, 2, 3], [0, 2, 3])];
    Mesh::new(positions, uvs, faces).unwrap()
}

/// Latitude/longitude sphere of radius 1 with a seam-duplicated UV grid.
/// `slices * 2 * (stacks - 1)` faces.
pub fn uv_sphere(slices: usize, stacks: usize) -> Mesh {
    assert!(slices >= 3 && stacks >= 2);
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    for i in 0..=stacks {
        let theta = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..=slices {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
            positions.push(Point3::new(
                theta.sin() * phi.sin(),
                theta.cos(),
                theta.sin() * phi.cos(),
            ));
            uvs.push([j as f64 / slices as f64, 1.0 - i as f64 / stacks as f64]);
        }
    }
    let idx = |i: usize, j: usize| (i * (slices + 1) + j) as u32;
    let mut faces = Vec::new();
    for i in 0..stacks {
        for j in 0..slices {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            if i != 0 {
                faces.push(tri([a, b, d], [a, b, d]));
            }
            if i != stacks - 1 {
                faces.push(tri([b, c, d], [b, c, d]));
            }
        }
    }
    outward(Mesh::new(positions, uvs, faces).unwrap())
}

/// Cube with half-extent `1/sqrt(3)` (unit bounding sphere). Each side is its
/// own UV chart in a 3×2 layout with a gutter between charts.
pub fn cube() -> Mesh {
    let s = 1.0 / 3f64.sqrt();
    let sides: [(Vector3<f64>, Vector3<f64>, Vector3<f64>); 6] = [
        (Vector3::z(), Vector3::x(), Vector3::y()),
        (-Vector3::z(), -Vector3::x(), Vector3::y()),
        (Vector3::x(), -Vector3::z(), Vector3::y()),
        (-Vector3::x(), Vector3::z(), Vector3::y()),
        (Vector3::y(), Vector3::x(), -Vector3::z()),
        (-Vector3::y(), Vector3::x(), Vector3::z()),
    ];
    let gutter = 0.08;
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    for (k, (n, u, v)) in sides.iter().enumerate() {
        let (col, row) = ((k % 3) as f64, (k / 3) as f64);
        let base = positions.len() as u32;
        for (a, b) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            positions.push(Point3::from((n + u * a + v * b) * s));
            let cu = (col + gutter + (1.0 - 2.0 * gutter) * (a + 1.0) / 2.0) / 3.0;
            let cv = (row + gutter + (1.0 - 2.0 * gutter) * (b + 1.0) / 2.0) / 2.0;
            uvs.push([cu, cv]);
        }
        faces.push(tri([base, base + 1, base + 2], [base, base + 1, base + 2]));
        faces.push(tri([base, base + 2, base + 3], [base, base + 2, base + 3]));
    }
    Mesh::new(positions, uvs, faces).unwrap()
}

/// Flat two-sided card in the z = 0 plane: the +Z side maps to the left half
/// of the atlas, the -Z side to the right half.
pub fn card(width: f64, height: f64) -> Mesh {
    let (hw, hh) = (width / 2.0, height / 2.0);
    let positions = vec![
        Point3::new(-hw, -hh, 0.0),
        Point3::new(hw, -hh, 0.0),
        Point3::new(hw, hh, 0.0),
        Point3::new(-hw, hh, 0.0),
    ];
    let (m, e) = (0.04, 0.96);
    let uvs = vec![
        // front chart
        [m, m],
        [0.5 - m, m],
        [0.5 - m, e],
        [m, e],
        // back chart, mirrored so the back reads left to right from behind
        [0.5 + m, m],
        [e, m],
        [e, e],
        [0.5 + m, e],
    ];
    let faces = vec![
        tri([0, 1, 2], [0, 1, 2]),
        tri([0, 2, 3], [0, 2, 3]),
        tri([1, 0, 3], [4, 5, 6]),
        tri([1, 3, 2], [4, 6, 7]),
    ];
    Mesh::new(positions, uvs, faces).unwrap()
}

/// Two parallel quads facing +Z at different depths, the nearer one smaller
/// and offset so they partially overlap on screen.
pub fn overlapping_quads() -> Mesh {
    let positions = vec![
        Point3::new(-0.6, -0.6, -0.3),
        Point3::new(0.6, -0.6, -0.3),
        Point3::new(0.6, 0.6, -0.3),
        Point3::new(-0.6, 0.6, -0.3),
        Point3::new(-0.2, -0.4, 0.3),
        Point3::new(0.7, -0.4, 0.3),
        Point3::new(0.7, 0.5, 0.3),
        Point3::new(-0.2, 0.5, 0.3),
    ];
    let uvs = vec![
        [0.0, 0.0],
        [0.5, 0.0],
        [0.5, 1.0],
        [0.0, 1.0],
        [0.5, 0.0],
        [1.0, 0.0],
        [1.0, 1.0],
        [0.5, 1.0],
    ];
    let faces = vec![
        tri([0, 1, 2], [0, 1, 2]),
        tri([0, 2, 3], [0, 2, 3]),
        tri([4, 5, 6], [4, 5, 6]),
        tri([4, 6, 7], [4, 6, 7]),
    ];
    Mesh::new(positions, uvs, faces).unwrap()
}

/// Reverse any face whose normal points toward the origin.
fn outward(mesh: Mesh) -> Mesh {
    let faces: Vec<[Corner; 3]> = (0..mesh.face_count())
        .map(|f| {
            let p = mesh.face_positions(f);
            let centroid = (p[0].coords + p[1].coords + p[2].coords) / 3.0;
            let c = mesh.faces()[f];
            if mesh.face_normals()[f].dot(&centroid) < 0.0 {
                [c[0], c[2], c[1]]
            } else {
                c
            }
        })
        .collect();
    Mesh::new(mesh.positions().to_vec(), mesh.uvs().to_vec(), faces).unwrap()
}

/// Serialize as OBJ text with `f v/vt` records.
pub fn to_obj(mesh: &Mesh) -> String {
    let mut s = String::new();
    for p in mesh.positions() {
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for t in mesh.uvs() {
        let _ = writeln!(s, "vt {} {}", t[0], t[1]);
    }
    for f in mesh.faces() {
        let _ = writeln!(
            s,
            "f {}/{} {}/{} {}/{}",
            f[0].position + 1,
            f[0].uv + 1,
            f[1].position + 1,
            f[1].uv + 1,
            f[2].position + 1,
            f[2].uv + 1
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::obj::parse_obj;

    #[test]
    fn sphere_face_count_and_orientation() {
        let m = uv_sphere(32, 16);
        assert_eq!(m.face_count(), 960);
        for f in 0..m.face_count() {
            let p = m.face_positions(f);
            let c = (p[0].coords + p[1].coords + p[2].coords) / 3.0;
            assert!(m.face_normals()[f].dot(&c) > 0.0);
        }
    }

    #[test]
    fn cube_normals_are_axis_aligned_and_outward() {
        let m = cube();
        assert_eq!(m.face_count(), 12);
        for f in 0..12 {
            let n = m.face_normals()[f];
            assert!((n.abs().max() - 1.0).abs() < 1e-12);
            let p = m.face_positions(f);
            assert!(n.dot(&p[0].coords) > 0.0);
        }
        assert!((m.bounding_radius() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn card_sides_are_opposed() {
        let m = card(2.0, 1.4);
        assert_eq!(m.face_normals()[0], Vector3::z());
        assert_eq!(m.face_normals()[2], -Vector3::z());
    }

    #[test]
    fn obj_writer_roundtrips() {
        let m = uv_sphere(8, 5);
        let back = parse_obj(to_obj(&m).as_bytes()).unwrap();
        assert_eq!(back.face_count(), m.face_count());
        assert_eq!(back.faces(), m.faces());
        for (a, b) in back.positions().iter().zip(m.positions()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
