//! On-disk interchange: volume containers, PNG/PFM images, COLMAP pose
//! ingestion, and the run configuration file.

use thiserror::Error;

use crate::sensor::SensorError;
use crate::volume::VolumeError;

mod colmap;
mod config;
mod image_io;
mod volume_io;

pub use colmap::{
    assemble_cameras, parse_colmap_cameras, parse_colmap_images, ColmapCamera, ColmapImage,
};
pub use config::{
    load_run_config, load_run_config_file, ColmapPaths, Condition, GridSpec, LightSpec,
    LoadedConfig, ViewSpec,
};
pub use image_io::{
    read_image_pfm, read_image_pfm_from, read_image_png, write_image_pfm, write_image_pfm_to,
    write_image_png,
};
pub use volume_io::{
    read_emissive_grid, read_medium_grid, read_volume, read_volume_from, write_emissive_grid,
    write_emissive_grid_to, write_medium_grid, write_medium_grid_to, VolumeFile,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a volume container (bad magic)")]
    BadMagic,
    #[error("unknown volume kind {0}")]
    UnknownVolumeKind(u32),
    #[error("expected a {expected} volume, found {found}")]
    WrongVolumeKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("volume kind {kind} stores {expected} channels, header says {got}")]
    ChannelCount { kind: u32, expected: u32, got: u32 },
    #[error("file ends early: expected {expected} data bytes, got {got}")]
    Truncated { expected: u64, got: u64 },
    #[error("{extra} unexpected bytes after the volume data")]
    TrailingData { extra: u64 },
    #[error("png: {0}")]
    Png(String),
    #[error("pfm: {0}")]
    Pfm(String),
    #[error("image contains non-finite samples")]
    NonFiniteImage,
    #[error("line {line}: {reason}")]
    Colmap { line: usize, reason: String },
    #[error("line {line}: unsupported camera model {model:?} (only PINHOLE and SIMPLE_PINHOLE)")]
    UnknownCameraModel { line: usize, model: String },
    #[error("line {line}: zero-length quaternion")]
    ZeroQuaternion { line: usize },
    #[error("image {name:?} references unknown camera id {camera_id}")]
    UnknownCameraId { name: String, camera_id: u32 },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("unknown condition {0:?} (expected MO, MO+LO, or MO+LO+INIT)")]
    BadCondition(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}
