//! Shared scene assembly and image path helpers for the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use vito::color::Rgb;
use vito::io::{read_image_pfm, read_image_png, write_image_pfm, write_image_png};
use vito::math::{vec3, Aabb, Vec3};
use vito::phantom::make_views;
use vito::sensor::{Camera, LightSource};
use vito::transport::{Image, Scene};
use vito::volume::MediumGrid;

use crate::{LightArgs, RingArgs, SceneArgs};

pub fn rgb(v: [f64; 3]) -> Rgb {
    Rgb {
        r: v[0],
        g: v[1],
        b: v[2],
    }
}

/// Scene boundary: the volume box padded on every side by `padding` times
/// its largest extent.
pub fn padded_boundary(bounds: Aabb, padding: f64) -> Aabb {
    let pad = bounds.extent().max_component() * padding;
    let d = vec3(pad, pad, pad);
    Aabb::new(bounds.min - d, bounds.max + d)
}

/// Backlight panel at `distance` from `center`, initially on the +z axis
/// facing back at the specimen. With the orbit flag it is re-placed opposite
/// each camera at render time, so the initial placement only fixes distance
/// and size.
pub fn backlight(
    center: Vec3,
    radiance: Rgb,
    distance: f64,
    half_size: f64,
) -> Result<LightSource> {
    Ok(LightSource::rect(
        center + vec3(0.0, 0.0, distance),
        vec3(0.0, 0.0, -1.0),
        half_size,
        half_size,
        radiance,
    )?)
}

/// A volume on its capture ring: cameras, backlight, padded boundary.
pub fn ring_scene(
    medium: MediumGrid,
    ring: &RingArgs,
    light: &LightArgs,
    scene_args: &SceneArgs,
) -> Result<(Scene, Vec<Camera>)> {
    let center = medium.bounds().center();
    let cameras = make_views(
        center,
        ring.views,
        ring.radius,
        ring.elevation,
        ring.width,
        ring.height,
        ring.focal,
    )?;
    let source = backlight(
        center,
        rgb(light.light),
        light.light_distance,
        light.light_half_size,
    )?;
    let boundary = padded_boundary(medium.bounds(), scene_args.padding);
    let mut scene = Scene::new(medium, boundary, source);
    scene.orbit_light = !light.fixed_light;
    scene.seed = scene_args.seed;
    scene.cameras = cameras.clone();
    scene.validate()?;
    Ok((scene, cameras))
}

pub fn pick_view(cameras: &[Camera], view: u32) -> Result<&Camera> {
    cameras.get(view as usize).with_context(|| {
        format!(
            "view index {view} is out of range for a ring of {}",
            cameras.len()
        )
    })
}

pub fn view_stem(i: usize) -> String {
    format!("view_{i:03}")
}

fn extension_of(path: &Path) -> Result<&str> {
    path.extension()
        .and_then(|e| e.to_str())
        .with_context(|| format!("{} has no file extension", path.display()))
}

/// Writes `.pfm` or `.png` according to the extension.
pub fn write_image_auto(path: &Path, img: &Image) -> Result<()> {
    match extension_of(path)? {
        "pfm" => write_image_pfm(path, img)?,
        "png" => write_image_png(path, img)?,
        other => bail!("unsupported image extension '{other}' (use pfm or png)"),
    }
    Ok(())
}

/// Reads `.pfm` or `.png` according to the extension.
pub fn read_image_auto(path: &Path) -> Result<Image> {
    let img = match extension_of(path)? {
        "pfm" => read_image_pfm(path)?,
        "png" => read_image_png(path)?,
        other => bail!("unsupported image extension '{other}' (use pfm or png)"),
    };
    Ok(img)
}

/// Finds `dir/stem.pfm` or `dir/stem.png`, preferring the float image.
pub fn read_view_image(dir: &Path, stem: &str) -> Result<Image> {
    for ext in ["pfm", "png"] {
        let candidate = dir.join(format!("{stem}.{ext}"));
        if candidate.is_file() {
            return read_image_auto(&candidate);
        }
    }
    bail!(
        "no reference image {stem}.pfm or {stem}.png in {}",
        dir.display()
    )
}

/// All images in a directory (by extension), sorted by filename.
pub fn read_image_dir(dir: &Path) -> Result<Vec<(String, Image)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("pfm") | Some("png")
                )
        })
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let name = p
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let img = read_image_auto(&p).with_context(|| format!("reading {}", p.display()))?;
        out.push((name, img));
    }
    if out.is_empty() {
        bail!("no .pfm or .png images in {}", dir.display());
    }
    Ok(out)
}
