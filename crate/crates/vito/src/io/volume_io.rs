//! Binary volume container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic   5 bytes  "VITO1"
//! kind    u32      1 = medium (7 channels), 2 = emissive (4 channels)
//! nx      u32
//! ny      u32
//! nz      u32
//! ch      u32      channel count, fixed by the kind
//! bounds  6 x f64  min.x min.y min.z max.x max.y max.z
//! data    ch * nx*ny*nz * f32, channel-major, z fastest within a channel
//! ```
//!
//! Medium channels: sigma_t R,G,B then albedo R,G,B then g.
//! Emissive channels: density then color R,G,B.
//!
//! This matches the in-memory field layout, so write/read is a straight
//! copy through binary32. Finiteness is enforced on read; physical ranges
//! are the optimizer's business (it projects after every step), which keeps
//! the reader a bijection on all finite data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::math::{Aabb, Vec3};
use crate::volume::{EmissiveGrid, MediumGrid, VolumeError};

use super::IoError;

const MAGIC: &[u8; 5] = b"VITO1";
const KIND_MEDIUM: u32 = 1;
const KIND_EMISSIVE: u32 = 2;
const MEDIUM_CHANNELS: u32 = 7;
const EMISSIVE_CHANNELS: u32 = 4;
const HEADER_BYTES: u64 = 5 + 5 * 4 + 6 * 8;

/// A parsed volume file of either kind.
#[derive(Debug, Clone)]
pub enum VolumeFile {
    Medium(MediumGrid),
    Emissive(EmissiveGrid),
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<(), IoError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f32s(w: &mut impl Write, values: &[f64]) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(4 * values.len().min(16384));
    for chunk in values.chunks(16384) {
        buf.clear();
        for &v in chunk {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn write_header(
    w: &mut impl Write,
    kind: u32,
    dims: [usize; 3],
    channels: u32,
    bounds: Aabb,
) -> Result<(), IoError> {
    w.write_all(MAGIC)?;
    write_u32(w, kind)?;
    for d in dims {
        write_u32(w, d as u32)?;
    }
    write_u32(w, channels)?;
    for v in [
        bounds.min.x,
        bounds.min.y,
        bounds.min.z,
        bounds.max.x,
        bounds.max.y,
        bounds.max.z,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_medium_grid_to(w: &mut impl Write, grid: &MediumGrid) -> Result<(), IoError> {
    write_header(w, KIND_MEDIUM, grid.dims(), MEDIUM_CHANNELS, grid.bounds())?;
    write_f32s(w, grid.sigma_t_raw())?;
    write_f32s(w, grid.albedo_raw())?;
    write_f32s(w, grid.g_raw())
}

pub fn write_emissive_grid_to(w: &mut impl Write, grid: &EmissiveGrid) -> Result<(), IoError> {
    write_header(w, KIND_EMISSIVE, grid.dims(), EMISSIVE_CHANNELS, grid.bounds())?;
    write_f32s(w, grid.density_raw())?;
    write_f32s(w, grid.color_raw())
}

pub fn write_medium_grid(path: impl AsRef<Path>, grid: &MediumGrid) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_medium_grid_to(&mut w, grid)?;
    w.flush()?;
    Ok(())
}

pub fn write_emissive_grid(path: impl AsRef<Path>, grid: &EmissiveGrid) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_emissive_grid_to(&mut w, grid)?;
    w.flush()?;
    Ok(())
}

/// Reads until `buf` is full or the stream ends; returns bytes read.
fn read_fully(r: &mut impl Read, buf: &mut [u8]) -> Result<usize, IoError> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(IoError::Io(e)),
        }
    }
    Ok(n)
}

fn read_exact_counted(
    r: &mut impl Read,
    buf: &mut [u8],
    consumed: &mut u64,
    expected: u64,
) -> Result<(), IoError> {
    let got = read_fully(r, buf)?;
    *consumed += got as u64;
    if got < buf.len() {
        return Err(IoError::Truncated {
            expected,
            got: *consumed,
        });
    }
    Ok(())
}

fn read_u32(r: &mut impl Read, consumed: &mut u64, expected: u64) -> Result<u32, IoError> {
    let mut b = [0u8; 4];
    read_exact_counted(r, &mut b, consumed, expected)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, consumed: &mut u64, expected: u64) -> Result<f64, IoError> {
    let mut b = [0u8; 8];
    read_exact_counted(r, &mut b, consumed, expected)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads `count` binary32 values, growing the output as data actually
/// arrives so a fuzzed header cannot provoke a huge allocation.
fn read_plane(
    r: &mut impl Read,
    count: u64,
    consumed: &mut u64,
    expected: u64,
) -> Result<Vec<f64>, IoError> {
    let mut out: Vec<f64> = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut remaining = count * 4;
    let mut buf = [0u8; 65536];
    while remaining > 0 {
        let take = remaining.min(buf.len() as u64) as usize;
        let got = read_fully(r, &mut buf[..take])?;
        *consumed += got as u64;
        for b in buf[..got].chunks_exact(4) {
            out.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        }
        if got < take {
            return Err(IoError::Truncated {
                expected,
                got: *consumed,
            });
        }
        remaining -= take as u64;
    }
    Ok(out)
}

pub fn read_volume_from(r: &mut impl Read) -> Result<VolumeFile, IoError> {
    let mut consumed = 0u64;
    let mut magic = [0u8; 5];
    read_exact_counted(r, &mut magic, &mut consumed, HEADER_BYTES)?;
    if &magic != MAGIC {
        return Err(IoError::BadMagic);
    }
    let kind = read_u32(r, &mut consumed, HEADER_BYTES)?;
    let nx = read_u32(r, &mut consumed, HEADER_BYTES)?;
    let ny = read_u32(r, &mut consumed, HEADER_BYTES)?;
    let nz = read_u32(r, &mut consumed, HEADER_BYTES)?;
    let channels = read_u32(r, &mut consumed, HEADER_BYTES)?;
    let mut b = [0.0f64; 6];
    for v in &mut b {
        *v = read_f64(r, &mut consumed, HEADER_BYTES)?;
    }
    let bounds = Aabb {
        min: Vec3 {
            x: b[0],
            y: b[1],
            z: b[2],
        },
        max: Vec3 {
            x: b[3],
            y: b[4],
            z: b[5],
        },
    };

    let expected_channels = match kind {
        KIND_MEDIUM => MEDIUM_CHANNELS,
        KIND_EMISSIVE => EMISSIVE_CHANNELS,
        other => return Err(IoError::UnknownVolumeKind(other)),
    };
    if channels != expected_channels {
        return Err(IoError::ChannelCount {
            kind,
            expected: expected_channels,
            got: channels,
        });
    }
    let dims = [nx as usize, ny as usize, nz as usize];
    let too_large = || VolumeError::TooLarge(dims[0], dims[1], dims[2]);
    let voxels = (nx as u64)
        .checked_mul(ny as u64)
        .and_then(|v| v.checked_mul(nz as u64))
        .ok_or_else(too_large)?;
    let expected = voxels
        .checked_mul(channels as u64 * 4)
        .and_then(|v| v.checked_add(HEADER_BYTES))
        .ok_or_else(too_large)?;

    let parsed = match kind {
        KIND_MEDIUM => {
            let sigma_t = read_plane(r, 3 * voxels, &mut consumed, expected)?;
            let albedo = read_plane(r, 3 * voxels, &mut consumed, expected)?;
            let g = read_plane(r, voxels, &mut consumed, expected)?;
            VolumeFile::Medium(MediumGrid::from_fields(dims, bounds, sigma_t, albedo, g)?)
        }
        _ => {
            let density = read_plane(r, voxels, &mut consumed, expected)?;
            let color = read_plane(r, 3 * voxels, &mut consumed, expected)?;
            let grid = EmissiveGrid::from_fields(dims, bounds, density, color)?;
            grid.validate()?;
            VolumeFile::Emissive(grid)
        }
    };

    let mut probe = [0u8; 1];
    if read_fully(r, &mut probe)? > 0 {
        let rest = std::io::copy(r, &mut std::io::sink())?;
        return Err(IoError::TrailingData { extra: 1 + rest });
    }
    Ok(parsed)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<VolumeFile, IoError> {
    read_volume_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_medium_grid(path: impl AsRef<Path>) -> Result<MediumGrid, IoError> {
    match read_volume(path)? {
        VolumeFile::Medium(g) => Ok(g),
        VolumeFile::Emissive(_) => Err(IoError::WrongVolumeKind {
            expected: "medium",
            found: "emissive",
        }),
    }
}

pub fn read_emissive_grid(path: impl AsRef<Path>) -> Result<EmissiveGrid, IoError> {
    match read_volume(path)? {
        VolumeFile::Emissive(g) => Ok(g),
        VolumeFile::Medium(_) => Err(IoError::WrongVolumeKind {
            expected: "emissive",
            found: "medium",
        }),
    }
}
