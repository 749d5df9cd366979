//! Retinal surface model, top-down camera, ray casting and sphere estimation.

mod fit;
mod points;

pub use fit::{fit_sphere_lsq, fit_sphere_ransac, FitError, FitResult, RansacConfig};
pub use points::{read_points, write_points, PointIoError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::Vec3;

/// Radius of the 25.4 mm phantom eye.
pub const PHANTOM_RADIUS_MM: f64 = 12.7;

/// Image scale from a 0.320 mm tool tip spanning 8 pixels.
pub const DEFAULT_MM_PER_PIXEL: f64 = 0.320 / 8.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("ray does not intersect the sphere")]
    NoIntersection,
    #[error("pixel ({0}, {1}) is outside the image")]
    PixelOutOfBounds(f64, f64),
    #[error("invalid geometry: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeGeometry {
    pub center: Vec3,
    pub radius: f64,
}

impl EyeGeometry {
    pub fn new(center: Vec3, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) || !center.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::Invalid("radius must be positive and finite"));
        }
        Ok(Self { center, radius })
    }

    pub fn phantom(center: Vec3) -> Self {
        Self {
            center,
            radius: PHANTOM_RADIUS_MM,
        }
    }

    /// Unsigned distance of `p` from the surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        ((p - self.center).norm() - self.radius).abs()
    }

    /// Concentric sphere with the radius reduced by `offset`.
    pub fn shrunk(&self, offset: f64) -> Self {
        Self {
            center: self.center,
            radius: self.radius - offset,
        }
    }

    /// Radial projection of `p` onto the surface.
    pub fn project(&self, p: &Vec3) -> Option<Vec3> {
        let d = p - self.center;
        let n = d.norm();
        (n > 0.0).then(|| self.center + d * (self.radius / n))
    }
}

impl Default for EyeGeometry {
    fn default() -> Self {
        Self::phantom(Vec3::zeros())
    }
}

/// Continuous image coordinates; `(0, 0)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
}

impl Pixel {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Orthographic camera. The image centre maps to `optical_center`; image
/// `x` runs along [`CameraModel::right`] and image `y` along [`CameraModel::down`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub optical_center: Vec3,
    pub view_direction: Vec3,
    pub width: u32,
    pub height: u32,
    /// mm per pixel.
    pub scale: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            optical_center: Vec3::zeros(),
            view_direction: -Vec3::z(),
            width: 640,
            height: 480,
            scale: DEFAULT_MM_PER_PIXEL,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(GeometryError::Invalid("camera scale must be positive"));
        }
        if (self.view_direction.norm() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::Invalid("view direction must be unit-norm"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::Invalid("image must be non-empty"));
        }
        Ok(())
    }

    pub fn pixel_to_mm(&self, px: f64) -> f64 {
        px * self.scale
    }

    pub fn mm_to_pixel(&self, mm: f64) -> f64 {
        mm / self.scale
    }

    pub fn right(&self) -> Vec3 {
        let view = self.view_direction;
        let hint = if view.y.abs() < 0.9 { -Vec3::y() } else { Vec3::z() };
        hint.cross(&view).normalize()
    }

    pub fn down(&self) -> Vec3 {
        self.view_direction.cross(&self.right())
    }

    pub fn contains(&self, pixel: &Pixel) -> bool {
        (0.0..=self.width as f64).contains(&pixel.x) && (0.0..=self.height as f64).contains(&pixel.y)
    }

    /// Ray origin on the image plane through the optical centre.
    pub fn pixel_origin(&self, pixel: &Pixel) -> Vec3 {
        let du = self.pixel_to_mm(pixel.x - self.width as f64 / 2.0);
        let dv = self.pixel_to_mm(pixel.y - self.height as f64 / 2.0);
        self.optical_center + du * self.right() + dv * self.down()
    }

    /// Orthographic projection of a point into the image.
    pub fn project(&self, point: &Vec3) -> Pixel {
        let rel = point - self.optical_center;
        Pixel {
            x: self.width as f64 / 2.0 + self.mm_to_pixel(rel.dot(&self.right())),
            y: self.height as f64 / 2.0 + self.mm_to_pixel(rel.dot(&self.down())),
        }
    }
}

/// Smallest non-negative ray parameter at which `origin + t·dir` meets the
/// sphere. `dir` must be unit length.
pub fn ray_sphere(origin: &Vec3, dir: &Vec3, eye: &EyeGeometry) -> Option<f64> {
    let oc = origin - eye.center;
    let scale = eye.radius * eye.radius;
    let b = dir.dot(&oc);
    let c = oc.norm_squared() - scale;
    let mut disc = b * b - c;
    if disc < 0.0 {
        // Tangent rays lose the zero discriminant to rounding.
        if disc < -1e-12 * scale {
            return None;
        }
        disc = 0.0;
    }
    // q = -(b + sign(b)·√disc) avoids cancellation; roots are q and c/q.
    let q = -(b + b.signum() * disc.sqrt());
    let (t0, t1) = if q == 0.0 {
        (0.0, 0.0)
    } else {
        let (a, z) = (q, c / q);
        if a < z {
            (a, z)
        } else {
            (z, a)
        }
    };
    let tol = 1e-12 * eye.radius.max(1.0);
    if t0 >= -tol {
        Some(t0.max(0.0))
    } else if t1 >= -tol {
        Some(t1.max(0.0))
    } else {
        None
    }
}

/// Surface point seen through `pixel`.
pub fn raycast_sphere(cam: &CameraModel, pixel: &Pixel, eye: &EyeGeometry) -> Result<Vec3, GeometryError> {
    if !cam.contains(pixel) {
        return Err(GeometryError::PixelOutOfBounds(pixel.x, pixel.y));
    }
    let origin = cam.pixel_origin(pixel);
    let dir = cam.view_direction;
    ray_sphere(&origin, &dir, eye)
        .map(|t| origin + t * dir)
        .ok_or(GeometryError::NoIntersection)
}

/// Where the tool tip's shadow falls on the retina under a directional light.
pub fn project_shadow(tool_tip: &Vec3, light_dir: &Vec3, eye: &EyeGeometry) -> Result<Vec3, GeometryError> {
    let n = light_dir.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(GeometryError::Invalid("light direction must be non-zero"));
    }
    let dir = light_dir / n;
    ray_sphere(tool_tip, &dir, eye)
        .map(|t| tool_tip + t * dir)
        .ok_or(GeometryError::NoIntersection)
}
