//! Synthetic ground-truth volumes and turntable view sets for desk-scale
//! validation. The fields are analytic, sampled at voxel centers, and sized
//! so that typical attenuation values are reachable by the default
//! optimization schedule from a cold start.

use crate::math::{vec3, Aabb, Vec3};
use crate::color::Rgb;
use crate::sensor::{Camera, SensorError};
use crate::volume::{MediumGrid, VolumeError};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("phantom grids need at least 4 voxels per axis, got {0}x{1}x{2}")]
    TooCoarse(usize, usize, usize),
    #[error("unknown phantom kind '{0}' (expected nested-spheres, checker-slab, or point-absorber)")]
    UnknownKind(String),
    #[error("a view ring needs at least one camera")]
    ZeroViews,
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    /// Translucent shell around a denser, spectrally tinted core.
    NestedSpheres,
    /// Alternating attenuation cells; sharp edges everywhere.
    CheckerSlab,
    /// A single absorbing voxel in an otherwise empty grid.
    PointAbsorber,
}

impl FromStr for PhantomKind {
    type Err = PhantomError;

    fn from_str(s: &str) -> Result<PhantomKind, PhantomError> {
        match s {
            "nested-spheres" => Ok(PhantomKind::NestedSpheres),
            "checker-slab" => Ok(PhantomKind::CheckerSlab),
            "point-absorber" => Ok(PhantomKind::PointAbsorber),
            other => Err(PhantomError::UnknownKind(other.to_string())),
        }
    }
}

impl PhantomKind {
    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::NestedSpheres => "nested-spheres",
            PhantomKind::CheckerSlab => "checker-slab",
            PhantomKind::PointAbsorber => "point-absorber",
        }
    }
}

/// Outer shell radius as a fraction of the smallest box extent.
const SHELL_RADIUS_FRACTION: f64 = 0.40;
/// Attenuation-times-radius products: optical depth through the shell is
/// order one, so brightfield views carry contrast without saturating.
const SHELL_DEPTH: f64 = 0.35;
const CORE_DEPTH: Rgb = Rgb {
    r: 0.55,
    g: 0.48,
    b: 0.40,
};

/// Analytic ground-truth fields sampled at voxel centers.
pub fn make_phantom(
    kind: PhantomKind,
    dims: [usize; 3],
    bounds: Aabb,
) -> Result<MediumGrid, PhantomError> {
    let [nx, ny, nz] = dims;
    if nx < 4 || ny < 4 || nz < 4 {
        return Err(PhantomError::TooCoarse(nx, ny, nz));
    }
    let mut grid = MediumGrid::new(dims, bounds)?;
    let geom = grid.geometry().clone();
    match kind {
        PhantomKind::NestedSpheres => {
            let center = bounds.center();
            let r_shell = SHELL_RADIUS_FRACTION * bounds.extent().min_component();
            let r_core = 0.5 * r_shell;
            let sigma_shell = Rgb::splat(SHELL_DEPTH / r_shell);
            let sigma_core = CORE_DEPTH / r_shell;
            for v in 0..grid.voxel_count() {
                let (x, y, z) = geom.voxel_coords(v);
                let r = (geom.voxel_center(x, y, z) - center).length();
                let (sigma, albedo) = if r <= r_core {
                    (sigma_core, 0.55)
                } else if r <= r_shell {
                    (sigma_shell, 0.45)
                } else {
                    (Rgb::BLACK, 0.5)
                };
                grid.set_sigma_t_voxel(v, sigma);
                grid.set_albedo_voxel(v, Rgb::splat(albedo));
                grid.set_g_voxel(v, 0.0);
            }
        }
        PhantomKind::CheckerSlab => {
            // Cells a quarter of the smallest axis wide; parity alternates
            // attenuation so every cell face is an edge.
            let cell = (nx.min(ny).min(nz) / 4).max(1);
            let unit = 1.0 / bounds.extent().min_component();
            let hi = Rgb::splat(1.4 * unit);
            let lo = Rgb::splat(0.35 * unit);
            for v in 0..grid.voxel_count() {
                let (x, y, z) = geom.voxel_coords(v);
                let parity = (x / cell + y / cell + z / cell) % 2;
                grid.set_sigma_t_voxel(v, if parity == 0 { hi } else { lo });
                grid.set_albedo_voxel(v, Rgb::splat(0.5));
                grid.set_g_voxel(v, 0.0);
            }
        }
        PhantomKind::PointAbsorber => {
            for v in 0..grid.voxel_count() {
                grid.set_sigma_t_voxel(v, Rgb::BLACK);
                grid.set_albedo_voxel(v, Rgb::splat(0.5));
                grid.set_g_voxel(v, 0.0);
            }
            let v = geom.voxel_index(nx / 2, ny / 2, nz / 2);
            // Optical depth about one across its own cell.
            let sigma = 1.0 / geom.voxel_size().min_component();
            grid.set_sigma_t_voxel(v, Rgb::splat(sigma));
            grid.set_albedo_voxel(v, Rgb::BLACK);
        }
    }
    Ok(grid)
}

/// `n` cameras on a horizontal ring of radius `ring_radius` around the
/// medium center, raised by the elevation angle (radians), all aimed at the
/// center. Azimuths start at 0 and step uniformly. The turntable capture —
/// fixed camera and light, rotating object — is expressed with the object
/// fixed instead, which is only equivalent when the backlight turns along;
/// set `Scene::orbit_light` when rendering these views.
pub fn make_views(
    center: Vec3,
    n: u32,
    ring_radius: f64,
    elevation: f64,
    width: u32,
    height: u32,
    focal_px: f64,
) -> Result<Vec<Camera>, PhantomError> {
    if n == 0 {
        return Err(PhantomError::ZeroViews);
    }
    let mut cameras = Vec::with_capacity(n as usize);
    for k in 0..n {
        let azimuth = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let eye = center
            + vec3(
                ring_radius * elevation.cos() * azimuth.cos(),
                ring_radius * elevation.cos() * azimuth.sin(),
                ring_radius * elevation.sin(),
            );
        cameras.push(Camera::look_at(
            eye,
            center,
            vec3(0.0, 0.0, 1.0),
            width,
            height,
            focal_px,
        )?);
    }
    Ok(cameras)
}
