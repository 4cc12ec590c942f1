//! Reconstruction run configuration.
//!
//! Strict TOML: unknown keys anywhere are an error, so a typo cannot
//! silently fall back to a default. Every section and key is optional; an
//! empty file yields the standard brightfield run. See docs/formats.md for
//! the full schema.

use std::path::PathBuf;

use serde::Deserialize;

use crate::optimize::{InitMode, LrSchedule, RunConfig};

use super::IoError;

/// Which unknowns the optimizer touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// Medium only: the light estimate stays fixed at its initial value.
    MediumOnly,
    /// Medium and light, from a cold start.
    MediumAndLight,
    /// Medium and light, starting from an emissive-field conversion.
    MediumLightInit,
}

impl std::str::FromStr for Condition {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Condition, IoError> {
        match s {
            "MO" => Ok(Condition::MediumOnly),
            "MO+LO" => Ok(Condition::MediumAndLight),
            "MO+LO+INIT" => Ok(Condition::MediumLightInit),
            other => Err(IoError::BadCondition(other.to_string())),
        }
    }
}

impl Condition {
    pub fn optimize_light(self) -> bool {
        !matches!(self, Condition::MediumOnly)
    }

    pub fn init_mode(self) -> InitMode {
        match self {
            Condition::MediumLightInit => InitMode::Emissive,
            _ => InitMode::Cold,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::MediumOnly => "MO",
            Condition::MediumAndLight => "MO+LO",
            Condition::MediumLightInit => "MO+LO+INIT",
        }
    }
}

/// Reconstruction grid shape: `dims` voxels over a box of world size
/// `extent` centered at the origin, with the scene boundary padded out by
/// `padding * max(extent)` on every side.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub extent: [f64; 3],
    pub padding: f64,
}

/// Synthetic capture ring (ignored when COLMAP poses are given).
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSpec {
    pub count: u32,
    pub radius: f64,
    pub elevation: f64,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub orbit_light: bool,
}

/// Backlight panel: a square emitter behind the specimen as seen from each
/// camera.
#[derive(Debug, Clone, PartialEq)]
pub struct LightSpec {
    pub radiance: [f64; 3],
    pub bootstrap: bool,
    pub distance: f64,
    pub half_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPaths {
    pub cameras: PathBuf,
    pub images: PathBuf,
    pub crop: Option<(u32, u32, u32, u32)>,
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub condition: Condition,
    pub grid: GridSpec,
    pub views: ViewSpec,
    pub light: LightSpec,
    pub colmap: Option<ColmapPaths>,
    pub references: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    run: RunSection,
    grid: GridSection,
    views: ViewsSection,
    light: LightSection,
    colmap: Option<ColmapSection>,
    data: DataSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunSection {
    iterations: u32,
    spp: u32,
    schedule: Vec<(u32, f64)>,
    condition: String,
    light_stop_iteration: u32,
    seed: u64,
}

impl Default for RunSection {
    fn default() -> RunSection {
        let rc = RunConfig::default();
        RunSection {
            iterations: rc.iterations,
            spp: rc.spp,
            schedule: rc.schedule.entries().to_vec(),
            condition: "MO+LO".to_string(),
            light_stop_iteration: rc.light_stop_iteration,
            seed: rc.seed,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GridSection {
    dims: [usize; 3],
    extent: [f64; 3],
    padding: f64,
}

impl Default for GridSection {
    fn default() -> GridSection {
        GridSection {
            dims: [32, 32, 32],
            extent: [100.0, 100.0, 100.0],
            padding: 0.08,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ViewsSection {
    count: u32,
    radius: f64,
    elevation: f64,
    width: u32,
    height: u32,
    focal: f64,
    orbit_light: bool,
}

impl Default for ViewsSection {
    fn default() -> ViewsSection {
        ViewsSection {
            count: 16,
            radius: 260.0,
            elevation: 0.25,
            width: 64,
            height: 64,
            focal: 80.0,
            orbit_light: true,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LightSection {
    radiance: [f64; 3],
    bootstrap: bool,
    distance: f64,
    half_size: f64,
}

impl Default for LightSection {
    fn default() -> LightSection {
        LightSection {
            radiance: [1.0, 1.0, 1.0],
            bootstrap: false,
            distance: 240.0,
            half_size: 150.0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ColmapSection {
    cameras: String,
    images: String,
    #[serde(default)]
    crop: Option<[u32; 4]>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct DataSection {
    references: Option<String>,
}

fn check(ok: bool, what: &str) -> Result<(), IoError> {
    if ok {
        Ok(())
    } else {
        Err(IoError::Config(what.to_string()))
    }
}

pub fn load_run_config(text: &str) -> Result<LoadedConfig, IoError> {
    let fc: FileConfig = toml::from_str(text)?;

    let condition: Condition = fc.run.condition.parse()?;
    let schedule =
        LrSchedule::new(fc.run.schedule).map_err(|e| IoError::Config(e.to_string()))?;
    let run = RunConfig {
        iterations: fc.run.iterations,
        spp: fc.run.spp,
        schedule,
        optimize_light: condition.optimize_light(),
        light_stop_iteration: fc.run.light_stop_iteration,
        init_mode: condition.init_mode(),
        seed: fc.run.seed,
    };
    run.validate().map_err(|e| IoError::Config(e.to_string()))?;

    let grid = GridSpec {
        dims: fc.grid.dims,
        extent: fc.grid.extent,
        padding: fc.grid.padding,
    };
    check(grid.dims.iter().all(|&d| d > 0), "grid dims must be nonzero")?;
    check(
        grid.extent.iter().all(|&e| e.is_finite() && e > 0.0),
        "grid extent must be finite and positive",
    )?;
    check(
        grid.padding.is_finite() && grid.padding >= 0.0,
        "grid padding must be finite and non-negative",
    )?;

    let views = ViewSpec {
        count: fc.views.count,
        radius: fc.views.radius,
        elevation: fc.views.elevation,
        width: fc.views.width,
        height: fc.views.height,
        focal: fc.views.focal,
        orbit_light: fc.views.orbit_light,
    };
    check(views.count > 0, "views count must be nonzero")?;
    check(
        views.width > 0 && views.height > 0,
        "view size must be nonzero",
    )?;
    check(
        views.radius.is_finite() && views.radius > 0.0,
        "view radius must be finite and positive",
    )?;
    check(views.elevation.is_finite(), "view elevation must be finite")?;
    check(
        views.focal.is_finite() && views.focal > 0.0,
        "view focal length must be finite and positive",
    )?;

    let light = LightSpec {
        radiance: fc.light.radiance,
        bootstrap: fc.light.bootstrap,
        distance: fc.light.distance,
        half_size: fc.light.half_size,
    };
    check(
        light.radiance.iter().all(|&v| v.is_finite() && v >= 0.0),
        "light radiance must be finite and non-negative",
    )?;
    check(
        light.distance.is_finite() && light.distance > 0.0,
        "light distance must be finite and positive",
    )?;
    check(
        light.half_size.is_finite() && light.half_size > 0.0,
        "light half size must be finite and positive",
    )?;

    let colmap = fc.colmap.map(|c| ColmapPaths {
        cameras: PathBuf::from(c.cameras),
        images: PathBuf::from(c.images),
        crop: c.crop.map(|[x, y, w, h]| (x, y, w, h)),
    });

    Ok(LoadedConfig {
        run,
        condition,
        grid,
        views,
        light,
        colmap,
        references: fc.data.references.map(PathBuf::from),
    })
}

pub fn load_run_config_file(path: impl AsRef<std::path::Path>) -> Result<LoadedConfig, IoError> {
    load_run_config(&std::fs::read_to_string(path)?)
}
