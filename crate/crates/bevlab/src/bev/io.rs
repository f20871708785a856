//! BEVF: a little-endian binary container for dense f32 grids.
//!
//! Layout: magic `BEVF`, then version, nx, ny, channels as u32 LE (20-byte
//! header), then nx*ny*channels f32 values row-major over (iy, ix) with
//! channels fastest. A JSON sidecar at `<file>.json` records the grid spec
//! and modalities so the map can be reconstructed exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bev::{BevFeatureMap, BevGridSpec, ModalitySet};
use crate::error::{Error, Result};

pub const BEVF_MAGIC: [u8; 4] = *b"BEVF";
pub const BEVF_VERSION: u32 = 1;

/// Writes a raw BEVF block. `dims` are (nx, ny, channels).
pub fn write_float_block(path: &Path, dims: (u32, u32, u32), data: &[f32]) -> Result<()> {
    let (nx, ny, channels) = dims;
    let expected = nx as usize * ny as usize * channels as usize;
    if data.len() != expected {
        return Err(Error::invalid(format!(
            "float block has {} values, header promises {expected}",
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(20 + data.len() * 4);
    buf.extend_from_slice(&BEVF_MAGIC);
    for v in [BEVF_VERSION, nx, ny, channels] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a raw BEVF block back as ((nx, ny, channels), data).
pub fn read_float_block(path: &Path) -> Result<((u32, u32, u32), Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |detail: String| Error::Format {
        what: "BEVF file",
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 20 {
        return Err(fail(format!("only {} bytes, header needs 20", bytes.len())));
    }
    if bytes[0..4] != BEVF_MAGIC {
        return Err(fail("bad magic, expected `BEVF`".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + i * 4..8 + i * 4].try_into().unwrap());
    let version = word(0);
    if version != BEVF_VERSION {
        return Err(fail(format!(
            "unsupported version {version}, expected {BEVF_VERSION}"
        )));
    }
    let (nx, ny, channels) = (word(1), word(2), word(3));
    let count = nx as usize * ny as usize * channels as usize;
    let expected_len = 20 + count * 4;
    if bytes.len() != expected_len {
        return Err(fail(format!(
            "{} bytes for {nx}x{ny}x{channels}, expected {expected_len}",
            bytes.len()
        )));
    }
    let data = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(((nx, ny, channels), data))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BevfSidecar {
    pub schema_version: u32,
    pub dtype: String,
    pub spec: BevGridSpec,
    pub channels: usize,
    pub modalities: ModalitySet,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

pub fn write_bevf(path: &Path, map: &BevFeatureMap) -> Result<()> {
    write_float_block(
        path,
        (
            map.spec.nx as u32,
            map.spec.ny as u32,
            map.channels as u32,
        ),
        map.data(),
    )?;
    let sidecar = BevfSidecar {
        schema_version: BEVF_VERSION,
        dtype: "f32le".into(),
        spec: map.spec,
        channels: map.channels,
        modalities: map.modalities,
    };
    let text = serde_json::to_string_pretty(&sidecar)?;
    let sp = sidecar_path(path);
    std::fs::write(&sp, text).map_err(|e| Error::io(sp, e))
}

pub fn read_bevf(path: &Path) -> Result<BevFeatureMap> {
    let ((nx, ny, channels), data) = read_float_block(path)?;
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let sidecar: BevfSidecar = serde_json::from_str(&text)?;
    sidecar.spec.validate()?;
    let consistent = sidecar.spec.nx == nx as usize
        && sidecar.spec.ny == ny as usize
        && sidecar.channels == channels as usize;
    if !consistent {
        return Err(Error::Format {
            what: "BEVF sidecar",
            path: sp,
            detail: format!(
                "sidecar says {}x{}x{}, binary header says {nx}x{ny}x{channels}",
                sidecar.spec.nx, sidecar.spec.ny, sidecar.channels
            ),
        });
    }
    BevFeatureMap::from_vec(sidecar.spec, sidecar.channels, sidecar.modalities, data)
}
