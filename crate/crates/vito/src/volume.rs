//! Voxel grids for the medium parameters and the emissive stand-in, plus the
//! homogeneous medium used for immersion.
//!
//! Field layout is channel-major with z fastest: element `(c, x, y, z)` lives
//! at `((c*nx + x)*ny + y)*nz + z`, matching the on-disk container so I/O is
//! a straight copy. Voxel `(i, j, k)` is centered at
//! `bounds.min + (i + 0.5) * voxel_size`.
//!
//! Lookups are trilinear over voxel centers. Inside the bounds the stencil
//! clamps to edge voxels (constant extension across the outer half-voxel
//! rim), so a constant grid reads back exactly constant over the whole box;
//! strictly outside the bounds every field reads as zero — the medium's
//! support is the grid box.

use crate::color::Rgb;
use crate::math::{Aabb, Vec3};
use thiserror::Error;

pub const G_LIMIT: f64 = 0.99;

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("grid dimensions must be nonzero, got {0}x{1}x{2}")]
    ZeroDimension(usize, usize, usize),
    #[error("grid of {0}x{1}x{2} voxels is too large to allocate")]
    TooLarge(usize, usize, usize),
    #[error("grid bounds must be finite with min < max on every axis")]
    InvalidBounds,
    #[error("non-finite {field} at voxel ({x}, {y}, {z})")]
    NonFinite {
        field: &'static str,
        x: usize,
        y: usize,
        z: usize,
    },
    #[error("field length {got} does not match {expected} for the grid shape")]
    FieldShape { expected: usize, got: usize },
    #[error("homogeneous medium parameters out of range: {0}")]
    BadHomogeneous(&'static str),
}

/// Trilinear interpolation stencil: eight (voxel index, weight) pairs.
/// Weights are non-negative and sum to one.
#[derive(Debug, Clone, Copy)]
pub struct TriStencil {
    pub taps: [(u32, f64); 8],
}

fn checked_len(nx: usize, ny: usize, nz: usize, channels: usize) -> Result<usize, VolumeError> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(VolumeError::ZeroDimension(nx, ny, nz));
    }
    nx.checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .and_then(|v| v.checked_mul(channels))
        .filter(|&v| v <= (u32::MAX as usize) * channels)
        .ok_or(VolumeError::TooLarge(nx, ny, nz))
}

/// Shared geometry of a voxel lattice over an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub bounds: Aabb,
}

impl GridGeometry {
    fn new(dims: [usize; 3], bounds: Aabb) -> Result<GridGeometry, VolumeError> {
        if !bounds.is_valid() {
            return Err(VolumeError::InvalidBounds);
        }
        checked_len(dims[0], dims[1], dims[2], 1)?;
        Ok(GridGeometry {
            nx: dims[0],
            ny: dims[1],
            nz: dims[2],
            bounds,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn voxel_size(&self) -> Vec3 {
        let e = self.bounds.extent();
        Vec3 {
            x: e.x / self.nx as f64,
            y: e.y / self.ny as f64,
            z: e.z / self.nz as f64,
        }
    }

    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        (x * self.ny + y) * self.nz + z
    }

    pub fn voxel_coords(&self, v: usize) -> (usize, usize, usize) {
        let z = v % self.nz;
        let y = (v / self.nz) % self.ny;
        let x = v / (self.nz * self.ny);
        (x, y, z)
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let s = self.voxel_size();
        self.bounds.min
            + Vec3 {
                x: (x as f64 + 0.5) * s.x,
                y: (y as f64 + 0.5) * s.y,
                z: (z as f64 + 0.5) * s.z,
            }
    }

    /// Trilinear stencil at `p`, or `None` outside the bounds.
    pub fn stencil(&self, p: Vec3) -> Option<TriStencil> {
        if !self.bounds.contains(p) {
            return None;
        }
        let s = self.voxel_size();
        let q = Vec3 {
            x: (p.x - self.bounds.min.x) / s.x - 0.5,
            y: (p.y - self.bounds.min.y) / s.y - 0.5,
            z: (p.z - self.bounds.min.z) / s.z - 0.5,
        };
        let (ix, fx) = split_axis(q.x, self.nx);
        let (iy, fy) = split_axis(q.y, self.ny);
        let (iz, fz) = split_axis(q.z, self.nz);
        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        let wz = [1.0 - fz, fz];
        let mut taps = [(0u32, 0.0f64); 8];
        let mut n = 0;
        for (dx, &wxv) in wx.iter().enumerate() {
            for (dy, &wyv) in wy.iter().enumerate() {
                for (dz, &wzv) in wz.iter().enumerate() {
                    let v = self.voxel_index(ix[dx], iy[dy], iz[dz]);
                    taps[n] = (v as u32, wxv * wyv * wzv);
                    n += 1;
                }
            }
        }
        Some(TriStencil { taps })
    }
}

/// Splits a continuous voxel-center coordinate into clamped neighbor indices
/// and the interpolation fraction.
fn split_axis(q: f64, n: usize) -> ([usize; 2], f64) {
    let lo = q.floor();
    let f = q - lo;
    let i0 = (lo as isize).clamp(0, n as isize - 1) as usize;
    let i1 = (lo as isize + 1).clamp(0, n as isize - 1) as usize;
    ([i0, i1], f)
}

fn interp(field: &[f64], st: &TriStencil) -> f64 {
    st.taps
        .iter()
        .map(|&(v, w)| field[v as usize] * w)
        .sum()
}

fn interp3(field: &[f64], n: usize, st: &TriStencil) -> Rgb {
    Rgb {
        r: interp(&field[..n], st),
        g: interp(&field[n..2 * n], st),
        b: interp(&field[2 * n..], st),
    }
}

fn scan_finite(field: &[f64], geom: &GridGeometry, name: &'static str) -> Result<(), VolumeError> {
    let n = geom.voxel_count();
    for (i, v) in field.iter().enumerate() {
        if !v.is_finite() {
            let (x, y, z) = geom.voxel_coords(i % n);
            return Err(VolumeError::NonFinite { field: name, x, y, z });
        }
    }
    Ok(())
}

/// Per-voxel medium parameters: attenuation `sigma_t` (RGB), single-scatter
/// albedo (RGB), and Henyey-Greenstein asymmetry `g` (scalar).
#[derive(Debug, Clone, PartialEq)]
pub struct MediumGrid {
    geom: GridGeometry,
    sigma_t: Vec<f64>,
    albedo: Vec<f64>,
    g: Vec<f64>,
}

impl MediumGrid {
    /// Uniform reconstruction init: `sigma_t = 0`, `albedo = 0.5`, `g = 0`.
    pub fn new(dims: [usize; 3], bounds: Aabb) -> Result<MediumGrid, VolumeError> {
        let geom = GridGeometry::new(dims, bounds)?;
        checked_len(dims[0], dims[1], dims[2], 7)?;
        let n = geom.voxel_count();
        Ok(MediumGrid {
            geom,
            sigma_t: vec![0.0; 3 * n],
            albedo: vec![0.5; 3 * n],
            g: vec![0.0; n],
        })
    }

    pub fn from_fields(
        dims: [usize; 3],
        bounds: Aabb,
        sigma_t: Vec<f64>,
        albedo: Vec<f64>,
        g: Vec<f64>,
    ) -> Result<MediumGrid, VolumeError> {
        let mut grid = MediumGrid::new(dims, bounds)?;
        let n = grid.geom.voxel_count();
        for (field, len) in [(&sigma_t, 3 * n), (&albedo, 3 * n), (&g, n)] {
            if field.len() != len {
                return Err(VolumeError::FieldShape {
                    expected: len,
                    got: field.len(),
                });
            }
        }
        grid.sigma_t = sigma_t;
        grid.albedo = albedo;
        grid.g = g;
        grid.validate()?;
        Ok(grid)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.geom.nx, self.geom.ny, self.geom.nz]
    }

    pub fn bounds(&self) -> Aabb {
        self.geom.bounds
    }

    pub fn voxel_count(&self) -> usize {
        self.geom.voxel_count()
    }

    pub fn sigma_t_raw(&self) -> &[f64] {
        &self.sigma_t
    }

    pub fn albedo_raw(&self) -> &[f64] {
        &self.albedo
    }

    pub fn g_raw(&self) -> &[f64] {
        &self.g
    }

    pub fn sigma_t_voxel(&self, v: usize) -> Rgb {
        let n = self.voxel_count();
        Rgb {
            r: self.sigma_t[v],
            g: self.sigma_t[n + v],
            b: self.sigma_t[2 * n + v],
        }
    }

    pub fn albedo_voxel(&self, v: usize) -> Rgb {
        let n = self.voxel_count();
        Rgb {
            r: self.albedo[v],
            g: self.albedo[n + v],
            b: self.albedo[2 * n + v],
        }
    }

    pub fn g_voxel(&self, v: usize) -> f64 {
        self.g[v]
    }

    pub fn set_sigma_t_voxel(&mut self, v: usize, value: Rgb) {
        let n = self.voxel_count();
        self.sigma_t[v] = value.r;
        self.sigma_t[n + v] = value.g;
        self.sigma_t[2 * n + v] = value.b;
    }

    pub fn set_albedo_voxel(&mut self, v: usize, value: Rgb) {
        let n = self.voxel_count();
        self.albedo[v] = value.r;
        self.albedo[n + v] = value.g;
        self.albedo[2 * n + v] = value.b;
    }

    pub fn set_g_voxel(&mut self, v: usize, value: f64) {
        self.g[v] = value;
    }

    /// Adds `delta` to one channel of one voxel's `sigma_t`; finite-difference
    /// probes use this.
    pub fn nudge_sigma_t(&mut self, v: usize, channel: usize, delta: f64) {
        let n = self.voxel_count();
        self.sigma_t[channel * n + v] += delta;
    }

    pub fn nudge_albedo(&mut self, v: usize, channel: usize, delta: f64) {
        let n = self.voxel_count();
        self.albedo[channel * n + v] += delta;
    }

    pub fn nudge_g(&mut self, v: usize, delta: f64) {
        self.g[v] += delta;
    }

    /// Absorption part, `sigma_t - albedo * sigma_t`.
    pub fn sigma_a_voxel(&self, v: usize) -> Rgb {
        let st = self.sigma_t_voxel(v);
        st - st * self.albedo_voxel(v)
    }

    /// Scattering part, `albedo * sigma_t` up to one rounding: taking the
    /// complement of `sigma_a` (itself a complement) makes
    /// `sigma_a + sigma_s == sigma_t` hold bit-exactly for every voxel —
    /// whichever of the two subtractions rounds, the other is exact by
    /// Sterbenz's lemma and the sum reassembles.
    pub fn sigma_s_voxel(&self, v: usize) -> Rgb {
        self.sigma_t_voxel(v) - self.sigma_a_voxel(v)
    }

    pub fn stencil(&self, p: Vec3) -> Option<TriStencil> {
        self.geom.stencil(p)
    }

    pub fn sigma_t_stencil(&self, st: &TriStencil) -> Rgb {
        interp3(&self.sigma_t, self.voxel_count(), st)
    }

    pub fn albedo_stencil(&self, st: &TriStencil) -> Rgb {
        interp3(&self.albedo, self.voxel_count(), st)
    }

    pub fn g_stencil(&self, st: &TriStencil) -> f64 {
        interp(&self.g, st)
    }

    /// Interpolated `sigma_t` at `p`; zero outside the bounds.
    pub fn lookup_sigma_t(&self, p: Vec3) -> Rgb {
        match self.stencil(p) {
            Some(st) => self.sigma_t_stencil(&st),
            None => Rgb::BLACK,
        }
    }

    pub fn lookup_albedo(&self, p: Vec3) -> Rgb {
        match self.stencil(p) {
            Some(st) => self.albedo_stencil(&st),
            None => Rgb::BLACK,
        }
    }

    pub fn lookup_g(&self, p: Vec3) -> f64 {
        match self.stencil(p) {
            Some(st) => self.g_stencil(&st),
            None => 0.0,
        }
    }

    /// Per-channel maximum of `sigma_t` over all voxels. Interpolated values
    /// never exceed it (stencil weights are a convex combination).
    pub fn majorant_sigma_t(&self) -> Rgb {
        let n = self.voxel_count();
        let max_of = |s: &[f64]| s.iter().cloned().fold(0.0f64, f64::max);
        Rgb {
            r: max_of(&self.sigma_t[..n]),
            g: max_of(&self.sigma_t[n..2 * n]),
            b: max_of(&self.sigma_t[2 * n..]),
        }
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        scan_finite(&self.sigma_t, &self.geom, "sigma_t")?;
        scan_finite(&self.albedo, &self.geom, "albedo")?;
        scan_finite(&self.g, &self.geom, "g")?;
        Ok(())
    }

    /// Projects every parameter back to its physical range:
    /// `sigma_t >= 0`, `albedo in [0, 1]`, `|g| <= 0.99`.
    /// Non-finite values are an error naming the first offending voxel.
    pub fn clamp_parameters(&mut self) -> Result<(), VolumeError> {
        self.validate()?;
        for v in &mut self.sigma_t {
            *v = v.max(0.0);
        }
        for v in &mut self.albedo {
            *v = v.clamp(0.0, 1.0);
        }
        for v in &mut self.g {
            *v = v.clamp(-G_LIMIT, G_LIMIT);
        }
        Ok(())
    }
}

/// Emissive stand-in recovered by the radiance-field stage: scalar density
/// and an RGB color per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissiveGrid {
    geom: GridGeometry,
    density: Vec<f64>,
    color: Vec<f64>,
}

impl EmissiveGrid {
    pub fn new(dims: [usize; 3], bounds: Aabb) -> Result<EmissiveGrid, VolumeError> {
        let geom = GridGeometry::new(dims, bounds)?;
        checked_len(dims[0], dims[1], dims[2], 4)?;
        let n = geom.voxel_count();
        Ok(EmissiveGrid {
            geom,
            density: vec![0.0; n],
            color: vec![0.0; 3 * n],
        })
    }

    pub fn from_fields(
        dims: [usize; 3],
        bounds: Aabb,
        density: Vec<f64>,
        color: Vec<f64>,
    ) -> Result<EmissiveGrid, VolumeError> {
        let mut grid = EmissiveGrid::new(dims, bounds)?;
        let n = grid.geom.voxel_count();
        if density.len() != n {
            return Err(VolumeError::FieldShape {
                expected: n,
                got: density.len(),
            });
        }
        if color.len() != 3 * n {
            return Err(VolumeError::FieldShape {
                expected: 3 * n,
                got: color.len(),
            });
        }
        grid.density = density;
        grid.color = color;
        Ok(grid)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.geom.nx, self.geom.ny, self.geom.nz]
    }

    pub fn voxel_count(&self) -> usize {
        self.geom.voxel_count()
    }

    pub fn bounds(&self) -> Aabb {
        self.geom.bounds
    }

    pub fn density_raw(&self) -> &[f64] {
        &self.density
    }

    pub fn color_raw(&self) -> &[f64] {
        &self.color
    }

    pub fn density_voxel(&self, v: usize) -> f64 {
        self.density[v]
    }

    pub fn color_voxel(&self, v: usize) -> Rgb {
        let n = self.geom.voxel_count();
        Rgb {
            r: self.color[v],
            g: self.color[n + v],
            b: self.color[2 * n + v],
        }
    }

    pub fn set_density_voxel(&mut self, v: usize, d: f64) {
        self.density[v] = d;
    }

    pub fn set_color_voxel(&mut self, v: usize, c: Rgb) {
        let n = self.geom.voxel_count();
        self.color[v] = c.r;
        self.color[n + v] = c.g;
        self.color[2 * n + v] = c.b;
    }

    pub fn lookup_density(&self, p: Vec3) -> f64 {
        match self.geom.stencil(p) {
            Some(st) => interp(&self.density, &st),
            None => 0.0,
        }
    }

    pub fn lookup_color(&self, p: Vec3) -> Rgb {
        match self.geom.stencil(p) {
            Some(st) => interp3(&self.color, self.geom.voxel_count(), &st),
            None => Rgb::BLACK,
        }
    }

    /// Color emitted from voxel `v` toward `_dir`.
    ///
    /// The stand-in stores a single color per voxel, so the direction is
    /// ignored; a view-dependent emitter would dispatch on it here.
    pub fn color_toward(&self, v: usize, _dir: Vec3) -> Rgb {
        self.color_voxel(v)
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        scan_finite(&self.density, &self.geom, "density")?;
        scan_finite(&self.color, &self.geom, "color")?;
        Ok(())
    }
}

/// Spatially constant medium (immersion fluid).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousMedium {
    pub sigma_t: Rgb,
    pub albedo: Rgb,
    pub g: f64,
}

impl HomogeneousMedium {
    pub fn new(sigma_t: Rgb, albedo: Rgb, g: f64) -> Result<HomogeneousMedium, VolumeError> {
        if !sigma_t.is_finite() || sigma_t.min_component() < 0.0 {
            return Err(VolumeError::BadHomogeneous("sigma_t must be finite and >= 0"));
        }
        if !albedo.is_finite() || albedo.min_component() < 0.0 || albedo.max_component() > 1.0 {
            return Err(VolumeError::BadHomogeneous("albedo must be within [0, 1]"));
        }
        if !g.is_finite() || g.abs() > G_LIMIT {
            return Err(VolumeError::BadHomogeneous("|g| must be <= 0.99"));
        }
        Ok(HomogeneousMedium { sigma_t, albedo, g })
    }

    pub fn vacuum() -> HomogeneousMedium {
        HomogeneousMedium {
            sigma_t: Rgb::BLACK,
            albedo: Rgb::BLACK,
            g: 0.0,
        }
    }
}
