use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// One face corner: index into the position list and into the UV list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corner {
    pub position: u32,
    pub uv: u32,
}

/// Indexed triangle mesh with per-corner UVs.
///
/// Immutable once built; every constructor validates indices and computes
/// unit face normals (counter-clockwise winding).
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    positions: Vec<Point3<f64>>,
    uvs: Vec<[f64; 2]>,
    faces: Vec<[Corner; 3]>,
    face_normals: Vec<Vector3<f64>>,
}

impl Mesh {
    /// Build a mesh. Zero-area faces carry no normal and are dropped.
    pub fn new(
        positions: Vec<Point3<f64>>,
        uvs: Vec<[f64; 2]>,
        faces: Vec<[Corner; 3]>,
    ) -> Result<Self> {
        if uvs.is_empty() && !faces.is_empty() {
            return Err(Error::NotTextureMappable("no UV coordinates".into()));
        }
        for (fi, face) in faces.iter().enumerate() {
            for c in face {
                if c.position as usize >= positions.len() {
                    return Err(Error::InvalidMesh(format!(
                        "face {fi} references position {} of {}",
                        c.position,
                        positions.len()
                    )));
                }
                if c.uv as usize >= uvs.len() {
                    return Err(Error::InvalidMesh(format!(
                        "face {fi} references uv {} of {}",
                        c.uv,
                        uvs.len()
                    )));
                }
            }
        }
        if positions.iter().any(|p| !p.coords.iter().all(|v| v.is_finite()))
            || uvs.iter().any(|t| !t[0].is_finite() || !t[1].is_finite())
        {
            return Err(Error::InvalidMesh("non-finite coordinate".into()));
        }

        let mut kept = Vec::with_capacity(faces.len());
        let mut normals = Vec::with_capacity(faces.len());
        let mut dropped = 0usize;
        for face in faces {
            match face_normal(&positions, &face) {
                Some(n) => {
                    kept.push(face);
                    normals.push(n);
                }
                None => dropped += 1,
            }
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} zero-area faces");
        }
        Ok(Self {
            positions,
            uvs,
            faces: kept,
            face_normals: normals,
        })
    }

    pub fn positions(&self) -> &[Point3<f64>] {
        &self.positions
    }

    pub fn uvs(&self) -> &[[f64; 2]] {
        &self.uvs
    }

    pub fn faces(&self) -> &[[Corner; 3]] {
        &self.faces
    }

    pub fn face_normals(&self) -> &[Vector3<f64>] {
        &self.face_normals
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_positions(&self, f: usize) -> [Point3<f64>; 3] {
        let c = &self.faces[f];
        [
            self.positions[c[0].position as usize],
            self.positions[c[1].position as usize],
            self.positions[c[2].position as usize],
        ]
    }

    pub fn face_uvs(&self, f: usize) -> [[f64; 2]; 3] {
        let c = &self.faces[f];
        [
            self.uvs[c[0].uv as usize],
            self.uvs[c[1].uv as usize],
            self.uvs[c[2].uv as usize],
        ]
    }

    /// Largest vertex distance from the origin.
    pub fn bounding_radius(&self) -> f64 {
        self.positions
            .iter()
            .map(|p| p.coords.norm())
            .fold(0.0, f64::max)
    }

    /// Center the bounding box on the origin and scale uniformly so the
    /// farthest vertex sits at distance 1.
    pub fn normalized(&self) -> Mesh {
        if self.positions.is_empty() {
            return self.clone();
        }
        let mut lo = self.positions[0].coords;
        let mut hi = lo;
        for p in &self.positions {
            lo = lo.inf(&p.coords);
            hi = hi.sup(&p.coords);
        }
        let center = (lo + hi) * 0.5;
        let radius = self
            .positions
            .iter()
            .map(|p| (p.coords - center).norm())
            .fold(0.0, f64::max);
        let scale = if radius > 0.0 { 1.0 / radius } else { 1.0 };
        let positions = self
            .positions
            .iter()
            .map(|p| Point3::from((p.coords - center) * scale))
            .collect();
        Mesh {
            positions,
            uvs: self.uvs.clone(),
            faces: self.faces.clone(),
            // uniform scale and translation leave normals unchanged
            face_normals: self.face_normals.clone(),
        }
    }

    /// Same mesh with every face's winding reversed.
    pub fn flipped(&self) -> Mesh {
        Mesh {
            positions: self.positions.clone(),
            uvs: self.uvs.clone(),
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
            face_normals: self.face_normals.iter().map(|n| -n).collect(),
        }
    }

    pub fn translated(&self, offset: Vector3<f64>) -> Mesh {
        Mesh {
            positions: self.positions.iter().map(|p| p + offset).collect(),
            ..self.clone()
        }
    }

    /// Rotate about the +Y axis by `deg` degrees.
    pub fn rotated_y(&self, deg: f64) -> Mesh {
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), deg.to_radians());
        Mesh {
            positions: self.positions.iter().map(|p| rot * p).collect(),
            uvs: self.uvs.clone(),
            faces: self.faces.clone(),
            face_normals: self.face_normals.iter().map(|n| rot * n).collect(),
        }
    }
}

fn face_normal(positions: &[Point3<f64>], face: &[Corner; 3]) -> Option<Vector3<f64>> {
    let p0 = positions[face[0].position as usize];
    let p1 = positions[face[1].position as usize];
    let p2 = positions[face[2].position as usize];
    let n = (p1 - p0).cross(&(p2 - p0));
    let len = n.norm();
    if len > 1e-12 && len.is_finite() {
        Some(n / len)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    #[test]
    fn unit_quad_normals_face_z() {
        let m = shapes::quad(1.0, 1.0);
        assert_eq!(m.face_count(), 2);
        for n in m.face_normals() {
            assert!((n - Vector3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        let m = shapes::uv_sphere(12, 8).translated(Vector3::new(3.0, -2.0, 5.0));
        let a = m.normalized();
        let b = a.normalized();
        assert!((a.bounding_radius() - 1.0).abs() < 1e-12);
        for (p, q) in a.positions().iter().zip(b.positions()) {
            assert!((p - q).norm() < 1e-6);
        }
    }

    #[test]
    fn flipping_negates_normals() {
        let m = shapes::cube();
        let f = m.flipped();
        for (a, b) in m.face_normals().iter().zip(f.face_normals()) {
            assert_eq!(*a, -b);
        }
        // recomputing from the flipped winding agrees
        let rebuilt = Mesh::new(f.positions().to_vec(), f.uvs().to_vec(), f.faces().to_vec()).unwrap();
        for (a, b) in rebuilt.face_normals().iter().zip(f.face_normals()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_range_index() {
        let err = Mesh::new(
            vec![Point3::origin(); 3],
            vec![[0.0, 0.0]],
            vec![[
                Corner { position: 0, uv: 0 },
                Corner { position: 1, uv: 0 },
                Corner { position: 3, uv: 0 },
            ]],
        );
        assert!(matches!(err, Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn drops_degenerate_faces() {
        let c = |p| Corner { position: p, uv: 0 };
        let m = Mesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)],
            vec![[0.0, 0.0]],
            vec![[c(0), c(1), c(2)]],
        )
        .unwrap();
        assert_eq!(m.face_count(), 0);
    }
}
