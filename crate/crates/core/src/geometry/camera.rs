use nalgebra::{Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Camera rig for the seven canonical views. Angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub radius: f64,
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
    /// Resolution of the front view (v0).
    pub image_size: usize,
    /// Resolution of each of v1..v6 (one grid tile).
    pub tile_size: usize,
    pub azimuths: [f64; 6],
    pub elevations: [f64; 6],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            radius: 3.0,
            fov_deg: 40.0,
            near: 0.1,
            far: 10.0,
            image_size: 512,
            tile_size: 320,
            azimuths: [30.0, 90.0, 150.0, 210.0, 270.0, 330.0],
            elevations: [-20.0, 30.0, -20.0, 30.0, -20.0, 30.0],
        }
    }
}

impl CameraConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: CameraConfig = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        canonical_viewpoints(self).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub id: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
    pub image_size: usize,
}

impl Viewpoint {
    pub fn new(
        id: usize,
        azimuth_deg: f64,
        elevation_deg: f64,
        cfg: &CameraConfig,
        image_size: usize,
    ) -> Result<Self> {
        let v = Viewpoint {
            id,
            azimuth_deg,
            elevation_deg,
            radius: cfg.radius,
            fov_deg: cfg.fov_deg,
            near: cfg.near,
            far: cfg.far,
            image_size,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidViewpoint(m));
        if self.id > 6 {
            return bad(format!("id {} outside 0..=6", self.id));
        }
        if self.image_size == 0 {
            return bad("image_size must be positive".into());
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad(format!("need 0 < near < far, got {} / {}", self.near, self.far));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad(format!("fov {} outside (0, 180)", self.fov_deg));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return bad(format!("radius {} must be positive", self.radius));
        }
        if !self.azimuth_deg.is_finite() || !self.elevation_deg.is_finite() {
            return bad("non-finite angle".into());
        }
        Ok(())
    }

    /// Same pose at a different azimuth/elevation.
    pub fn with_angles(&self, azimuth_deg: f64, elevation_deg: f64) -> Viewpoint {
        Viewpoint {
            azimuth_deg,
            elevation_deg,
            ..*self
        }
    }

    pub fn with_image_size(&self, image_size: usize) -> Viewpoint {
        Viewpoint {
            image_size,
            ..*self
        }
    }

    /// Unit vector from the origin toward the camera. Azimuth 0 is +Z,
    /// azimuth 90 is +X, positive elevation is toward +Y.
    pub fn direction(&self) -> Vector3<f64> {
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos())
    }

    pub fn eye(&self) -> Point3<f64> {
        Point3::from(self.direction() * self.radius)
    }

    /// World-to-camera look-at transform (camera looks down -Z, +Y up).
    pub fn view_matrix(&self) -> Result<Matrix4<f64>> {
        let dir = self.direction();
        if dir.cross(&Vector3::y()).norm() < 1e-9 {
            return Err(Error::DegenerateUpVector {
                elevation_deg: self.elevation_deg,
            });
        }
        Ok(Matrix4::look_at_rh(
            &self.eye(),
            &Point3::origin(),
            &Vector3::y(),
        ))
    }

    /// OpenGL-style perspective projection (square aspect).
    pub fn projection_matrix(&self) -> Matrix4<f64> {
        Matrix4::new_perspective(1.0, self.fov_deg.to_radians(), self.near, self.far)
    }

    pub fn view_projection(&self) -> Result<Matrix4<f64>> {
        Ok(self.projection_matrix() * self.view_matrix()?)
    }
}

/// v0 (front) plus the six generator poses from `cfg`.
pub fn canonical_viewpoints(cfg: &CameraConfig) -> Result<Vec<Viewpoint>> {
    let mut views = Vec::with_capacity(7);
    views.push(Viewpoint::new(0, 0.0, 0.0, cfg, cfg.image_size)?);
    for k in 0..6 {
        let v = Viewpoint::new(k + 1, cfg.azimuths[k], cfg.elevations[k], cfg, cfg.tile_size)?;
        v.view_matrix()?;
        views.push(v);
    }
    Ok(views)
}
