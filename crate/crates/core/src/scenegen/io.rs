//! Depth images as 16-bit binary PGM (millimeters, big-endian per Netpbm)
//! and cameras as JSON.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Camera, DepthImage, Intrinsics, Pose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub intrinsics: Intrinsics,
    /// Row-major 4x4 camera-to-world matrix, meters.
    pub camera_to_world: [[f64; 4]; 4],
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        Self {
            intrinsics: c.intrinsics.clone(),
            camera_to_world: c.pose.matrix(),
        }
    }
}

impl From<CameraFile> for Camera {
    fn from(f: CameraFile) -> Self {
        Camera {
            intrinsics: f.intrinsics,
            pose: Pose::from_matrix(&f.camera_to_world),
        }
    }
}

pub fn depth_to_millimeters(depth: &DepthImage) -> Vec<u16> {
    depth
        .depths
        .iter()
        .map(|&d| (d as f64 * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect()
}

pub fn encode_pgm16(width: usize, height: usize, mm: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(mm.len() * 2);
    for v in mm {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn decode_pgm16(bytes: &[u8]) -> io::Result<(usize, usize, Vec<u16>)> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    // Header: magic, width, height, maxval separated by whitespace, then a
    // single whitespace byte before the raster. Comments are not emitted by
    // this crate and not supported.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?);
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 65535 {
        return Err(bad("expected 16-bit PGM"));
    }
    let raster = bytes.get(pos..pos + w * h * 2).ok_or_else(|| bad("truncated raster"))?;
    let mm = raster
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((w, h, mm))
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthImage) -> io::Result<()> {
    fs::write(
        path,
        encode_pgm16(depth.width, depth.height, &depth_to_millimeters(depth)),
    )
}

pub fn write_camera(path: impl AsRef<Path>, camera: &Camera) -> io::Result<()> {
    let json = serde_json::to_string_pretty(&CameraFile::from(camera))?;
    fs::write(path, json)
}

pub fn read_camera(path: impl AsRef<Path>) -> io::Result<Camera> {
    let text = fs::read_to_string(path)?;
    let file: CameraFile = serde_json::from_str(&text)?;
    Ok(file.into())
}

/// Loads a PGM depth map and its camera into a [`DepthImage`] in meters.
pub fn read_depth(pgm: impl AsRef<Path>, camera: impl AsRef<Path>) -> io::Result<DepthImage> {
    let (width, height, mm) = decode_pgm16(&fs::read(pgm)?)?;
    let camera = read_camera(camera)?;
    if camera.intrinsics.width != width || camera.intrinsics.height != height {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "depth image size disagrees with camera intrinsics",
        ));
    }
    Ok(DepthImage {
        width,
        height,
        depths: mm.into_iter().map(|v| v as f32 / 1000.0).collect(),
        camera,
    })
}
