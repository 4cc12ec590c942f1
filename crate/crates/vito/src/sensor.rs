//! Pinhole cameras and the rectangular area light.
//!
//! Camera frame: `x` right, `y` down (image rows grow downward), `z` forward.
//! `rotation` maps camera-frame vectors to world space and `center` is the
//! camera position in world space — note this is the inverse of the
//! world-to-camera convention used by the COLMAP text files; the parser in
//! `io` performs that conversion. Intrinsics (`fx`, `fy`, `cx`, `cy`) are in
//! pixels on the **full** sensor; a crop window selects the rendered region.

use crate::color::Rgb;
use crate::math::{orthonormal_basis, Mat3, Vec3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("image dimensions must be nonzero")]
    ZeroImage,
    #[error("focal lengths must be finite and positive, got fx={fx} fy={fy}")]
    BadFocal { fx: f64, fy: f64 },
    #[error("principal point must be finite")]
    BadPrincipalPoint,
    #[error("crop window ({x}, {y}, {w}x{h}) exceeds the {sw}x{sh} sensor")]
    CropOutsideSensor {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        sw: u32,
        sh: u32,
    },
    #[error("camera rotation is not orthonormal")]
    BadRotation,
    #[error("camera center must be finite")]
    BadCenter,
    #[error("pixel ({px}, {py}) lies outside the {w}x{h} crop window")]
    PixelOutOfWindow { px: f64, py: f64, w: u32, h: u32 },
    #[error("light corners must be finite")]
    BadLightCorner,
    #[error("light corners are not coplanar")]
    NonCoplanarLight,
    #[error("light quad is degenerate")]
    DegenerateLight,
    #[error("light radiance must be finite and non-negative")]
    BadRadiance,
    #[error("look-at direction is parallel to the up vector")]
    DegenerateLookAt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Ray {
        Ray {
            origin,
            dir,
            t_near: 0.0,
            t_far: f64::INFINITY,
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// Rendered (crop window) size in pixels.
    pub width: u32,
    pub height: u32,
    /// Full sensor size in pixels.
    pub sensor_width: u32,
    pub sensor_height: u32,
    /// Crop window origin on the full sensor.
    pub crop_x: u32,
    pub crop_y: u32,
    /// Intrinsics on the full sensor pixel grid.
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-frame to world-frame rotation.
    pub rotation: Mat3,
    /// Camera center in world space.
    pub center: Vec3,
}

fn rotation_is_orthonormal(m: &Mat3) -> bool {
    if !m.is_finite() {
        return false;
    }
    let t = m.transpose();
    let cols = [
        m.mul_vec(Vec3 { x: 1.0, y: 0.0, z: 0.0 }),
        m.mul_vec(Vec3 { x: 0.0, y: 1.0, z: 0.0 }),
        m.mul_vec(Vec3 { x: 0.0, y: 0.0, z: 1.0 }),
    ];
    let _ = t;
    for i in 0..3 {
        for j in 0..3 {
            let dot = cols[i].dot(cols[j]);
            let want = if i == j { 1.0 } else { 0.0 };
            if (dot - want).abs() > 1e-6 {
                return false;
            }
        }
    }
    true
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sensor_width: u32,
        sensor_height: u32,
        crop: (u32, u32, u32, u32),
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        center: Vec3,
    ) -> Result<Camera, SensorError> {
        let (crop_x, crop_y, width, height) = crop;
        if width == 0 || height == 0 || sensor_width == 0 || sensor_height == 0 {
            return Err(SensorError::ZeroImage);
        }
        if crop_x.checked_add(width).map_or(true, |v| v > sensor_width)
            || crop_y.checked_add(height).map_or(true, |v| v > sensor_height)
        {
            return Err(SensorError::CropOutsideSensor {
                x: crop_x,
                y: crop_y,
                w: width,
                h: height,
                sw: sensor_width,
                sh: sensor_height,
            });
        }
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(SensorError::BadFocal { fx, fy });
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(SensorError::BadPrincipalPoint);
        }
        if !rotation_is_orthonormal(&rotation) {
            return Err(SensorError::BadRotation);
        }
        if !center.is_finite() {
            return Err(SensorError::BadCenter);
        }
        Ok(Camera {
            width,
            height,
            sensor_width,
            sensor_height,
            crop_x,
            crop_y,
            fx,
            fy,
            cx,
            cy,
            rotation,
            center,
        })
    }

    /// Uncropped camera at `eye` looking toward `target` with the given world
    /// up hint, covering the full `width`x`height` sensor with focal length
    /// `focal_px` and a centered principal point.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: u32,
        height: u32,
        focal_px: f64,
    ) -> Result<Camera, SensorError> {
        let forward = target - eye;
        if forward.length_squared() == 0.0 {
            return Err(SensorError::DegenerateLookAt);
        }
        let f = forward.normalized();
        let cross = f.cross(up.normalized());
        if cross.length_squared() < 1e-12 {
            return Err(SensorError::DegenerateLookAt);
        }
        let right = cross.normalized();
        let down = f.cross(right);
        Camera::new(
            width,
            height,
            (0, 0, width, height),
            focal_px,
            focal_px,
            width as f64 / 2.0,
            height as f64 / 2.0,
            Mat3::from_columns(right, down, f),
            eye,
        )
    }

    /// Primary ray through continuous window position `(px, py)`; integer
    /// coordinates map to pixel centers. Valid positions cover the union of
    /// pixel footprints, `[-0.5, width - 0.5] x [-0.5, height - 0.5]`.
    pub fn generate_ray(&self, px: f64, py: f64) -> Result<Ray, SensorError> {
        let in_window = |v: f64, n: u32| v.is_finite() && v >= -0.5 && v <= n as f64 - 0.5;
        if !in_window(px, self.width) || !in_window(py, self.height) {
            return Err(SensorError::PixelOutOfWindow {
                px,
                py,
                w: self.width,
                h: self.height,
            });
        }
        let sx = self.crop_x as f64 + px + 0.5;
        let sy = self.crop_y as f64 + py + 0.5;
        let d_cam = Vec3 {
            x: (sx - self.cx) / self.fx,
            y: (sy - self.cy) / self.fy,
            z: 1.0,
        };
        Ok(Ray::new(self.center, self.rotation.mul_vec(d_cam).normalized()))
    }

    /// Projects a world point to continuous window coordinates; `None` when
    /// the point is at or behind the camera plane.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let q = self.rotation.transpose().mul_vec(p - self.center);
        if q.z <= 0.0 {
            return None;
        }
        let sx = self.cx + self.fx * q.x / q.z;
        let sy = self.cy + self.fy * q.y / q.z;
        Some((sx - 0.5 - self.crop_x as f64, sy - 0.5 - self.crop_y as f64))
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Rectangular area light: a planar quad with uniform two-sided radiance.
/// Corners are stored in perimeter order.
#[derive(Debug, Clone, PartialEq)]
pub struct LightSource {
    corners: [Vec3; 4],
    normal: Vec3,
    pub radiance: Rgb,
}

impl LightSource {
    pub fn new(corners: [Vec3; 4], radiance: Rgb) -> Result<LightSource, SensorError> {
        if corners.iter().any(|c| !c.is_finite()) {
            return Err(SensorError::BadLightCorner);
        }
        if !radiance.is_finite() || radiance.min_component() < 0.0 {
            return Err(SensorError::BadRadiance);
        }
        let e1 = corners[1] - corners[0];
        let e2 = corners[2] - corners[0];
        let n = e1.cross(e2);
        let scale = e1
            .length()
            .max(e2.length())
            .max((corners[3] - corners[0]).length());
        if n.length() <= 1e-12 * scale * scale {
            return Err(SensorError::DegenerateLight);
        }
        let normal = n.normalized();
        // Coplanarity: the fourth corner must sit on the plane of the first
        // three, to 1e-9 relative to the quad size.
        let dist = (corners[3] - corners[0]).dot(normal).abs();
        if dist > 1e-9 * scale.max(1.0) {
            return Err(SensorError::NonCoplanarLight);
        }
        Ok(LightSource {
            corners,
            normal,
            radiance,
        })
    }

    /// Axis-aligned-free construction: quad centered at `center`, facing
    /// `normal`, spanning `2*half_u x 2*half_v`.
    pub fn rect(
        center: Vec3,
        normal: Vec3,
        half_u: f64,
        half_v: f64,
        radiance: Rgb,
    ) -> Result<LightSource, SensorError> {
        if normal.length_squared() == 0.0 || !normal.is_finite() {
            return Err(SensorError::DegenerateLight);
        }
        let n = normal.normalized();
        let (u, v) = orthonormal_basis(n);
        LightSource::new(
            [
                center - u * half_u - v * half_v,
                center + u * half_u - v * half_v,
                center + u * half_u + v * half_v,
                center - u * half_u + v * half_v,
            ],
            radiance,
        )
    }

    pub fn corners(&self) -> &[Vec3; 4] {
        &self.corners
    }

    pub fn center(&self) -> Vec3 {
        (self.corners[0] + self.corners[1] + self.corners[2] + self.corners[3]) * 0.25
    }

    /// Ray/quad intersection within `[ray.t_near, ray.t_far]`. Returns the hit
    /// parameter and the (uniform, two-sided) radiance. Rays parallel to the
    /// plane miss.
    pub fn light_hit(&self, ray: &Ray) -> Option<(f64, Rgb)> {
        let denom = self.normal.dot(ray.dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(self.corners[0] - ray.origin) / denom;
        if !(t >= ray.t_near && t <= ray.t_far) {
            return None;
        }
        let p = ray.at(t);
        let inside = point_in_triangle(p, self.corners[0], self.corners[1], self.corners[2])
            || point_in_triangle(p, self.corners[0], self.corners[2], self.corners[3]);
        inside.then_some((t, self.radiance))
    }
}

fn point_in_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> bool {
    // Barycentric test with a small edge tolerance so shared quad diagonals
    // do not leak misses.
    let v0 = c - a;
    let v1 = b - a;
    let v2 = p - a;
    let d00 = v0.dot(v0);
    let d01 = v0.dot(v1);
    let d11 = v1.dot(v1);
    let d20 = v2.dot(v0);
    let d21 = v2.dot(v1);
    let denom = d00 * d11 - d01 * d01;
    if denom.abs() < 1e-18 {
        return false;
    }
    let u = (d11 * d20 - d01 * d21) / denom;
    let v = (d00 * d21 - d01 * d20) / denom;
    let eps = -1e-9;
    u >= eps && v >= eps && u + v <= 1.0 - eps * 2.0 + 1e-9
}
