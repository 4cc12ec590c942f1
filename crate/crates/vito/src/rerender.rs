//! Scenario builders for presenting a reconstructed volume: relighting
//! (brightfield / darkfield / inverse darkfield), slicing, and immersion in
//! a homogeneous fluid. Every scenario is a pure `Scene` transform; the
//! renderer itself is untouched.

use crate::color::{encode_255, srgb_decode, Rgb};
use crate::math::Vec3;
use crate::sensor::{LightSource, SensorError};
use crate::transport::{Image, Scene, SlicePlane};
use crate::volume::{HomogeneousMedium, VolumeError};
use thiserror::Error;

/// Samples per pixel used for presentation-quality re-renders.
pub const HIGH_QUALITY_SPP: u32 = 2048;

#[derive(Debug, Error, PartialEq)]
pub enum RerenderError {
    #[error("slice plane normal must have unit length, got {0}")]
    NonUnitNormal(f64),
    #[error("water table line {line}: {reason}")]
    WaterTable { line: usize, reason: String },
    #[error("no water type named '{0}' in the table")]
    UnknownWater(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// The capture configuration itself: light behind the specimen (kept
/// orbiting with the camera if the scene was set up that way).
pub fn scenario_brightfield(scene: &Scene) -> Scene {
    scene.clone()
}

/// Move the emitter to a quad hovering one container-extent above the +z
/// face, pointing down, with the container's footprint. Ring cameras aimed
/// at the medium center never see it directly, so only scattered light
/// reaches the sensor. Orbiting is disabled: the overhead light stays put.
pub fn scenario_darkfield(scene: &Scene) -> Result<Scene, RerenderError> {
    let mut out = scene.clone();
    let b = out.boundary;
    let extent = b.extent();
    let gap = extent.max_component();
    let center = b.center();
    let quad_center = Vec3 {
        x: center.x,
        y: center.y,
        z: b.max.z + gap,
    };
    out.light = LightSource::rect(
        quad_center,
        Vec3 {
            x: 0.0,
            y: 0.0,
            z: -1.0,
        },
        0.5 * extent.x,
        0.5 * extent.y,
        scene.light.radiance,
    )?;
    out.orbit_light = false;
    Ok(out)
}

/// Same geometry as darkfield; pair with [`invert_encoded`] on the rendered
/// output to get the bright-background presentation.
pub fn scenario_inverse_darkfield(scene: &Scene) -> Result<Scene, RerenderError> {
    scenario_darkfield(scene)
}

/// Per-channel inversion on the 8-bit display scale: a pixel that would
/// encode to v comes back encoding to 255 - v. Operates in the continuous
/// encoded domain (clamped, like any display path) and returns a linear
/// image, so writing the result as PNG yields exactly the inverted bytes.
pub fn invert_encoded(img: &Image) -> Image {
    let mut out = img.clone();
    for p in &mut out.pixels {
        *p = p.map(|x| srgb_decode((255.0 - encode_255(x)) / 255.0));
    }
    out
}

/// Clip the medium on the positive side of the plane `dot(p, normal) >
/// offset`: lookups there return vacuum, exposing the interior.
pub fn scenario_slice(scene: &Scene, normal: Vec3, offset: f64) -> Result<Scene, RerenderError> {
    let len = normal.length();
    if !(len.is_finite() && (len - 1.0).abs() < 1e-6) {
        return Err(RerenderError::NonUnitNormal(len));
    }
    let mut out = scene.clone();
    out.slice = Some(SlicePlane { normal, offset });
    Ok(out)
}

/// Fill the container around the specimen grid with a homogeneous fluid.
pub fn scenario_immerse(scene: &Scene, water: HomogeneousMedium) -> Scene {
    let mut out = scene.clone();
    out.immersion = Some(water);
    out
}

/// One row of the measured-water table.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterType {
    pub name: String,
    pub sigma_a: Rgb,
    pub sigma_s: Rgb,
    pub g: f64,
}

impl WaterType {
    /// Combine absorption and scattering into the renderer's parameter set:
    /// `sigma_t = sigma_a + sigma_s`, `albedo = sigma_s / sigma_t` (zero
    /// where nothing attenuates).
    pub fn medium(&self) -> Result<HomogeneousMedium, RerenderError> {
        let sigma_t = self.sigma_a + self.sigma_s;
        let mut albedo = Rgb::BLACK;
        for c in 0..3 {
            let t = sigma_t.channel(c);
            albedo.set_channel(c, if t > 0.0 { self.sigma_s.channel(c) / t } else { 0.0 });
        }
        Ok(HomogeneousMedium::new(sigma_t, albedo, self.g)?)
    }
}

/// Parse the plain-text water table: one row per water type, whitespace
/// separated — `name sigma_a.r sigma_a.g sigma_a.b sigma_s.r sigma_s.g
/// sigma_s.b g` — with `#` comments and blank lines ignored. The repository
/// ships a template whose rows are placeholders to be filled from published
/// measurements; values are never invented here.
pub fn parse_water_table(text: &str) -> Result<Vec<WaterType>, RerenderError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(RerenderError::WaterTable {
                line,
                reason: format!("expected 8 fields (name, 3x sigma_a, 3x sigma_s, g), got {}", fields.len()),
            });
        }
        let mut nums = [0.0f64; 7];
        for (k, slot) in nums.iter_mut().enumerate() {
            *slot = fields[k + 1].parse().map_err(|_| RerenderError::WaterTable {
                line,
                reason: format!("field '{}' is not a number", fields[k + 1]),
            })?;
        }
        let w = WaterType {
            name: fields[0].to_string(),
            sigma_a: Rgb {
                r: nums[0],
                g: nums[1],
                b: nums[2],
            },
            sigma_s: Rgb {
                r: nums[3],
                g: nums[4],
                b: nums[5],
            },
            g: nums[6],
        };
        // Surface bad physics at parse time, pointing at the line.
        w.medium().map_err(|e| RerenderError::WaterTable {
            line,
            reason: e.to_string(),
        })?;
        out.push(w);
    }
    Ok(out)
}

pub fn lookup_water<'a>(
    table: &'a [WaterType],
    name: &str,
) -> Result<&'a WaterType, RerenderError> {
    table
        .iter()
        .find(|w| w.name == name)
        .ok_or_else(|| RerenderError::UnknownWater(name.to_string()))
}
