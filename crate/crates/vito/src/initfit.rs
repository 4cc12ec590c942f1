//! Warm-start helpers: convert an emissive volume into a first guess for the
//! physical medium, find the specimen's bounding box, and bootstrap the
//! light radiance from the reference images themselves.

use crate::color::Rgb;
use crate::math::{vec3, Aabb, Vec3};
use crate::transport::Image;
use crate::volume::{EmissiveGrid, MediumGrid, VolumeError};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum InitFitError {
    #[error("light radiance must be finite")]
    NonFiniteLight,
    #[error("no voxel density exceeds the threshold {threshold}; nothing to bound")]
    EmptySpecimen { threshold: f64 },
    #[error("density threshold must be >= 0, got {0}")]
    NegativeThreshold(f64),
    #[error("light bootstrap needs at least one image")]
    NoImages,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Directional samples per voxel when averaging the emitted color. The
/// stored emissive stand-in is isotropic, so every direction returns the
/// same value; the loop is kept so a view-dependent emitter drops in
/// without touching the conversion.
const EMITTANCE_DIRECTIONS: usize = 32;

fn fibonacci_directions(n: usize) -> Vec<Vec3> {
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * i as f64 / golden;
            vec3(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Reinterpret an emissive volume as a passive attenuating medium lit by
/// `light`: a voxel that glows at the light's own color must not attenuate,
/// while a dark voxel in a bright scene must have absorbed the difference.
/// Per channel, `sigma_t = density * (light - mean emitted color)`, clamped
/// below at zero (emission above the light level has no passive analogue).
/// Albedo starts at 0.5 and g at 0, the same uniform values a cold start
/// uses.
pub fn inverse_emittance(em: &EmissiveGrid, light: Rgb) -> Result<MediumGrid, InitFitError> {
    if !light.is_finite() {
        return Err(InitFitError::NonFiniteLight);
    }
    em.validate()?;
    let mut grid = MediumGrid::new(em.dims(), em.bounds())?;
    let dirs = fibonacci_directions(EMITTANCE_DIRECTIONS);
    for v in 0..em.voxel_count() {
        let mut mean = Rgb::BLACK;
        for d in &dirs {
            mean = mean + em.color_toward(v, *d);
        }
        mean = mean / dirs.len() as f64;
        let density = em.density_voxel(v);
        let sigma = (light - mean).map(|x| (density * x).max(0.0));
        grid.set_sigma_t_voxel(v, sigma);
        grid.set_albedo_voxel(v, Rgb::splat(0.5));
        grid.set_g_voxel(v, 0.0);
    }
    Ok(grid)
}

/// Tightest axis-aligned box around the voxels whose density exceeds
/// `threshold`, grown by one voxel on every side (clamped to the grid).
pub fn extract_boundary(em: &EmissiveGrid, threshold: f64) -> Result<Aabb, InitFitError> {
    if !(threshold >= 0.0) {
        return Err(InitFitError::NegativeThreshold(threshold));
    }
    let geom = em.geometry();
    let [nx, ny, nz] = em.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for v in 0..em.voxel_count() {
        if em.density_voxel(v) > threshold {
            let (x, y, z) = geom.voxel_coords(v);
            for (axis, idx) in [x, y, z].into_iter().enumerate() {
                lo[axis] = lo[axis].min(idx);
                hi[axis] = hi[axis].max(idx);
            }
            any = true;
        }
    }
    if !any {
        return Err(InitFitError::EmptySpecimen { threshold });
    }
    let dims = [nx, ny, nz];
    let bounds = em.bounds();
    let size = geom.voxel_size();
    let mut min = Vec3::ZERO;
    let mut max = Vec3::ZERO;
    for axis in 0..3 {
        let lo_idx = lo[axis].saturating_sub(1);
        let hi_idx = (hi[axis] + 2).min(dims[axis]); // exclusive
        let origin = bounds.min.axis(axis);
        min.set_axis(axis, origin + lo_idx as f64 * size.axis(axis));
        max.set_axis(axis, origin + hi_idx as f64 * size.axis(axis));
    }
    Ok(Aabb::new(min, max))
}

/// Per-channel 99th percentile of the linear pixel values over every image:
/// in a brightfield capture the unobstructed background dominates and is
/// the brightest content, so its level is a robust estimate of the emitter
/// radiance even before any medium exists.
pub fn light_bootstrap(images: &[Image]) -> Result<Rgb, InitFitError> {
    if images.is_empty() {
        return Err(InitFitError::NoImages);
    }
    let mut light = Rgb::BLACK;
    let total: usize = images.iter().map(|i| i.pixels.len()).sum();
    let mut values = Vec::with_capacity(total);
    for c in 0..3 {
        values.clear();
        for img in images {
            values.extend(img.pixels.iter().map(|p| p.channel(c)));
        }
        values.sort_by(|a, b| a.total_cmp(b));
        let rank = ((0.99 * values.len() as f64).ceil() as usize)
            .clamp(1, values.len())
            - 1;
        light.set_channel(c, values[rank]);
    }
    Ok(light)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emissive(dims: [usize; 3]) -> EmissiveGrid {
        let bounds = Aabb::new(vec3(-2.0, -1.0, -1.5), vec3(2.0, 1.0, 1.5));
        EmissiveGrid::new(dims, bounds).unwrap()
    }

    #[test]
    fn conversion_distributes_the_density_per_channel() {
        let mut em = emissive([2, 2, 2]);
        em.set_density_voxel(3, 2.0);
        em.set_color_voxel(
            3,
            Rgb {
                r: 1.0,
                g: 0.5,
                b: 0.0,
            },
        );
        let grid = inverse_emittance(&em, Rgb::WHITE).unwrap();
        assert_eq!(
            grid.sigma_t_voxel(3),
            Rgb {
                r: 0.0,
                g: 1.0,
                b: 2.0
            }
        );
    }

    #[test]
    fn fully_emissive_voxel_does_not_attenuate() {
        let mut em = emissive([2, 2, 2]);
        em.set_density_voxel(5, 3.0);
        em.set_color_voxel(5, Rgb::splat(0.8));
        let grid = inverse_emittance(&em, Rgb::splat(0.8)).unwrap();
        assert_eq!(grid.sigma_t_voxel(5), Rgb::BLACK);
    }

    #[test]
    fn emission_above_the_light_level_clamps_to_zero() {
        let mut em = emissive([2, 2, 2]);
        em.set_density_voxel(0, 1.0);
        em.set_color_voxel(
            0,
            Rgb {
                r: 1.5,
                g: 0.2,
                b: 0.2,
            },
        );
        let grid = inverse_emittance(&em, Rgb::WHITE).unwrap();
        let s = grid.sigma_t_voxel(0);
        assert_eq!(s.r, 0.0);
        assert!((s.g - 0.8).abs() < 1e-12 && (s.b - 0.8).abs() < 1e-12);
    }

    #[test]
    fn conversion_sets_uniform_scattering_defaults() {
        let mut em = emissive([3, 3, 3]);
        for v in 0..em.voxel_count() {
            em.set_density_voxel(v, v as f64 * 0.1);
            em.set_color_voxel(v, Rgb::splat(0.3));
        }
        let grid = inverse_emittance(&em, Rgb::WHITE).unwrap();
        for v in 0..grid.voxel_count() {
            assert_eq!(grid.albedo_voxel(v), Rgb::splat(0.5));
            assert_eq!(grid.g_voxel(v), 0.0);
        }
        grid.validate().unwrap();
    }

    #[test]
    fn more_density_never_means_less_attenuation() {
        let mut a = emissive([2, 2, 2]);
        a.set_density_voxel(1, 0.5);
        a.set_color_voxel(1, Rgb::splat(0.4));
        let mut b = a.clone();
        b.set_density_voxel(1, 1.5);
        let light = Rgb {
            r: 1.0,
            g: 0.4,
            b: 0.1,
        };
        let ga = inverse_emittance(&a, light).unwrap();
        let gb = inverse_emittance(&b, light).unwrap();
        for c in 0..3 {
            assert!(gb.sigma_t_voxel(1).channel(c) >= ga.sigma_t_voxel(1).channel(c));
        }
    }

    #[test]
    fn non_finite_light_is_rejected() {
        let em = emissive([2, 2, 2]);
        assert_eq!(
            inverse_emittance(&em, Rgb::splat(f64::NAN)).unwrap_err(),
            InitFitError::NonFiniteLight
        );
    }

    #[test]
    fn boundary_of_single_voxel_is_that_voxel_dilated() {
        let mut em = emissive([4, 4, 4]);
        em.set_density_voxel(em.geometry().voxel_index(2, 1, 3), 5.0);
        let b = extract_boundary(&em, 1.0).unwrap();
        let size = em.geometry().voxel_size();
        let origin = em.bounds().min;
        // Indices 2,1,3 dilated by one: x 1..=3, y 0..=2, z 2..=3 (clamped).
        let want_min = vec3(
            origin.x + size.x,
            origin.y,
            origin.z + 2.0 * size.z,
        );
        let want_max = vec3(
            origin.x + 4.0 * size.x,
            origin.y + 3.0 * size.y,
            origin.z + 4.0 * size.z,
        );
        assert!((b.min - want_min).length() < 1e-12, "{:?}", b.min);
        assert!((b.max - want_max).length() < 1e-12, "{:?}", b.max);
    }

    #[test]
    fn boundary_of_uniform_grid_is_the_full_bounds() {
        let mut em = emissive([4, 3, 5]);
        for v in 0..em.voxel_count() {
            em.set_density_voxel(v, 2.0);
        }
        let b = extract_boundary(&em, 1.0).unwrap();
        assert!((b.min - em.bounds().min).length() < 1e-12);
        assert!((b.max - em.bounds().max).length() < 1e-12);
        // Extracting again from a grid that fills the returned box changes
        // nothing: the bound is a fixed point.
        let again = extract_boundary(&em, 1.0).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn threshold_above_every_density_is_an_error() {
        let mut em = emissive([2, 2, 2]);
        for v in 0..em.voxel_count() {
            em.set_density_voxel(v, 0.5);
        }
        assert_eq!(
            extract_boundary(&em, 0.5).unwrap_err(),
            InitFitError::EmptySpecimen { threshold: 0.5 }
        );
        assert!(matches!(
            extract_boundary(&em, -1.0).unwrap_err(),
            InitFitError::NegativeThreshold(_)
        ));
    }

    #[test]
    fn bootstrap_reads_the_background_level() {
        let mut img = Image::new(10, 10, 1);
        for p in &mut img.pixels {
            *p = Rgb {
                r: 0.9,
                g: 0.8,
                b: 0.7,
            };
        }
        // A dark specimen covering 40% of the frame must not drag the
        // estimate down.
        for p in img.pixels.iter_mut().take(40) {
            *p = Rgb::splat(0.05);
        }
        let light = light_bootstrap(&[img]).unwrap();
        assert_eq!(
            light,
            Rgb {
                r: 0.9,
                g: 0.8,
                b: 0.7
            }
        );
    }

    #[test]
    fn bootstrap_of_white_images_is_white() {
        let mut img = Image::new(4, 4, 1);
        for p in &mut img.pixels {
            *p = Rgb::WHITE;
        }
        assert_eq!(light_bootstrap(&[img.clone(), img]).unwrap(), Rgb::WHITE);
        assert_eq!(light_bootstrap(&[]).unwrap_err(), InitFitError::NoImages);
    }

    #[test]
    fn direction_set_covers_the_sphere() {
        let dirs = fibonacci_directions(EMITTANCE_DIRECTIONS);
        let mean: Vec3 = dirs
            .iter()
            .fold(Vec3::ZERO, |acc, d| acc + *d)
            / dirs.len() as f64;
        assert!(mean.length() < 0.1, "directions should balance: {mean:?}");
        for d in &dirs {
            assert!((d.length() - 1.0).abs() < 1e-12);
        }
    }
}
