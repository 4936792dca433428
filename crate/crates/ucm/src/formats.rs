//! On-disk formats: PNG frames and masks, raw depth rasters, pose files and
//! JSON documents.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ucm_core::geometry::{CameraPose, DepthMap, Intrinsics, Trajectory};
use ucm_core::image::Image;

pub const DEPTH_MAGIC: &[u8; 4] = b"UCMD";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: png decode: {source}")]
    PngDecode { path: PathBuf, source: png::DecodingError },
    #[error("{path}: png encode: {source}")]
    PngEncode { path: PathBuf, source: png::EncodingError },
    #[error("{path}: json: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub fn create_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(|e| IoError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| IoError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|e| IoError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let mut w = create(path)?;
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| IoError::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_reader(open(path)?).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<(), IoError> {
    let out = create(path)?;
    let mut enc = png::Encoder::new(out, w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let err = |source| IoError::PngEncode {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = enc.write_header().map_err(err)?;
    writer.write_image_data(data).map_err(err)?;
    writer.finish().map_err(err)
}

fn read_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>), IoError> {
    let err = |source| IoError::PngDecode {
        path: path.to_path_buf(),
        source,
    };
    let mut dec = png::Decoder::new(open(path)?);
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// 8-bit RGB PNG.
pub fn write_image(path: &Path, img: &Image) -> Result<(), IoError> {
    write_png(path, img.width, img.height, png::ColorType::Rgb, png::BitDepth::Eight, &img.to_u8())
}

pub fn read_image(path: &Path) -> Result<Image, IoError> {
    let (info, buf) = read_png(path)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(IoError::format(path, "expected 8-bit RGB"));
    }
    Ok(Image::from_u8(info.width as usize, info.height as usize, &buf))
}

/// 1-bit grayscale PNG; white marks `true`.
pub fn write_mask(path: &Path, mask: &[bool], w: usize, h: usize) -> Result<(), IoError> {
    if mask.len() != w * h {
        return Err(IoError::format(path, "mask size does not match dimensions"));
    }
    let stride = w.div_ceil(8);
    let mut data = vec![0u8; stride * h];
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                data[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    write_png(path, w, h, png::ColorType::Grayscale, png::BitDepth::One, &data)
}

pub fn read_mask(path: &Path) -> Result<(Vec<bool>, usize, usize), IoError> {
    let (info, buf) = read_png(path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::One {
        return Err(IoError::format(path, "expected 1-bit grayscale"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mask = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            buf[y * stride + x / 8] & (0x80 >> (x % 8)) != 0
        })
        .collect();
    Ok((mask, w, h))
}

/// `UCMD` depth raster: 16-byte header then little-endian `f32` values.
pub fn encode_depth(d: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * d.depth.len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(d.width as u32).to_le_bytes());
    out.extend_from_slice(&(d.height as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &z in &d.depth {
        out.extend_from_slice(&(z as f32).to_le_bytes());
    }
    out
}

pub fn decode_depth(path: &Path, bytes: &[u8]) -> Result<DepthMap, IoError> {
    if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
        return Err(IoError::format(path, "missing UCMD header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (w, h) = (u32_at(4), u32_at(8));
    if bytes.len() != 16 + 4 * w * h {
        return Err(IoError::format(path, format!("{} bytes for a {w}x{h} raster", bytes.len())));
    }
    let depth = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(DepthMap::from_values(w, h, depth))
}

pub fn write_depth(path: &Path, d: &DepthMap) -> Result<(), IoError> {
    write_bytes(path, &encode_depth(d))
}

pub fn read_depth(path: &Path) -> Result<DepthMap, IoError> {
    decode_depth(path, &read_bytes(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&Intrinsics> for IntrinsicsRecord {
    fn from(k: &Intrinsics) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

/// Pose file: intrinsics plus row-major camera-to-world 4x4 matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub intrinsics: IntrinsicsRecord,
    pub poses: Vec<[[f64; 4]; 4]>,
}

impl PoseFile {
    pub fn new(k: &Intrinsics, traj: &Trajectory) -> Self {
        Self {
            intrinsics: k.into(),
            poses: traj.poses().iter().map(CameraPose::to_rows).collect(),
        }
    }

    pub fn decode(&self, path: &Path) -> Result<(Intrinsics, Trajectory), IoError> {
        let r = &self.intrinsics;
        let k = Intrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height).map_err(|e| IoError::format(path, e.to_string()))?;
        let poses = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, m)| CameraPose::from_rows(m).map_err(|e| IoError::format(path, format!("pose {i}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let traj = Trajectory::new(poses).map_err(|e| IoError::format(path, e.to_string()))?;
        Ok((k, traj))
    }
}

pub fn write_poses(path: &Path, k: &Intrinsics, traj: &Trajectory) -> Result<(), IoError> {
    write_json(path, &PoseFile::new(k, traj))
}

pub fn read_poses(path: &Path) -> Result<(Intrinsics, Trajectory), IoError> {
    read_json::<PoseFile>(path)?.decode(path)
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s).map_err(|e| IoError::io(path, e))?;
    Ok(s)
}
