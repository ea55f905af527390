//! Raw raster files with JSON sidecars, binary PPM previews, and JSON-lines.
//!
//! A raster `foo.bin` holds little-endian samples; `foo.json` next to it
//! describes `{"width", "height", "dtype"}` with dtype `f32le` or `u16le`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthImage, LabelImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleType {
    F32le,
    U16le,
}

impl SampleType {
    pub fn byte_width(self) -> usize {
        match self {
            SampleType::F32le => 4,
            SampleType::U16le => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterSidecar {
    pub width: u32,
    pub height: u32,
    pub dtype: SampleType,
}

/// `frame.bin` -> `frame.json`.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn f32_to_le_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub fn le_bytes_to_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            (bytes.len() - bytes.len() % 4) as u64,
            "f32 payload length is not a multiple of 4",
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_raster(bin: &Path, sidecar: RasterSidecar, payload: &[u8]) -> Result<()> {
    write_bytes(bin, payload)?;
    write_json(&sidecar_path(bin), &sidecar)
}

fn read_raster(bin: &Path, expect: SampleType) -> Result<(RasterSidecar, Vec<u8>)> {
    let sidecar: RasterSidecar = read_json(&sidecar_path(bin))?;
    if sidecar.dtype != expect {
        return Err(Error::input(format!(
            "{} has dtype {:?}, expected {:?}",
            bin.display(),
            sidecar.dtype,
            expect
        )));
    }
    let bytes = read_bytes(bin)?;
    let want = sidecar.width as usize * sidecar.height as usize * expect.byte_width();
    if bytes.len() != want {
        return Err(Error::format(
            bytes.len().min(want) as u64,
            format!(
                "{}: {} bytes on disk, sidecar implies {want}",
                bin.display(),
                bytes.len()
            ),
        ));
    }
    Ok((sidecar, bytes))
}

pub fn write_f32_raster(bin: &Path, width: u32, height: u32, values: &[f32]) -> Result<()> {
    debug_assert_eq!(values.len(), width as usize * height as usize);
    let sidecar = RasterSidecar {
        width,
        height,
        dtype: SampleType::F32le,
    };
    write_raster(bin, sidecar, &f32_to_le_bytes(values.iter().copied()))
}

pub fn write_u16_raster(bin: &Path, width: u32, height: u32, values: &[u16]) -> Result<()> {
    debug_assert_eq!(values.len(), width as usize * height as usize);
    let sidecar = RasterSidecar {
        width,
        height,
        dtype: SampleType::U16le,
    };
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_raster(bin, sidecar, &payload)
}

pub fn read_f32_raster(bin: &Path) -> Result<(RasterSidecar, Vec<f32>)> {
    let (sidecar, bytes) = read_raster(bin, SampleType::F32le)?;
    Ok((sidecar, le_bytes_to_f32(&bytes)?))
}

pub fn read_depth(bin: &Path) -> Result<DepthImage> {
    let (sc, values) = read_f32_raster(bin)?;
    DepthImage::new(sc.width, sc.height, values.into_iter().map(f64::from).collect())
        .map_err(|e| Error::Input(format!("{}: {e}", bin.display())))
}

pub fn write_depth(bin: &Path, depth: &DepthImage) -> Result<()> {
    let values: Vec<f32> = depth.values.iter().map(|v| *v as f32).collect();
    write_f32_raster(bin, depth.width, depth.height, &values)
}

pub fn read_labels(bin: &Path) -> Result<LabelImage> {
    let (sc, bytes) = read_raster(bin, SampleType::U16le)?;
    let values = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    LabelImage::new(sc.width, sc.height, values)
}

pub fn write_labels(bin: &Path, labels: &LabelImage) -> Result<()> {
    write_u16_raster(bin, labels.width, labels.height, &labels.values)
}

/// Binary PPM (P6), 8-bit.
pub fn encode_ppm(width: u32, height: u32, rgb: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(rgb.len() * 3);
    for px in rgb {
        out.extend_from_slice(px);
    }
    out
}

pub fn write_ppm(path: &Path, width: u32, height: u32, rgb: &[[u8; 3]]) -> Result<()> {
    let mut buf = Vec::new();
    buf.write_all(&encode_ppm(width, height, rgb))
        .map_err(|e| Error::io(path, e))?;
    write_bytes(path, &buf)
}

/// Parses a P6 file with maxval 255. Comments are not supported.
pub fn decode_ppm(bytes: &[u8]) -> Result<(u32, u32, Vec<[u8; 3]>)> {
    let mut pos = 0usize;
    let next_token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(start as u64, "truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if next_token(&mut pos)? != "P6" {
        return Err(Error::format(0, "not a binary PPM (P6)"));
    }
    let parse = |tok: String, at: usize| {
        tok.parse::<u32>()
            .map_err(|_| Error::format(at as u64, format!("bad PPM header field {tok:?}")))
    };
    let width = parse(next_token(&mut pos)?, pos)?;
    let height = parse(next_token(&mut pos)?, pos)?;
    let maxval = parse(next_token(&mut pos)?, pos)?;
    if maxval != 255 {
        return Err(Error::format(pos as u64, "only maxval 255 is supported"));
    }
    pos += 1;
    let n = width as usize * height as usize;
    if bytes.len() < pos + n * 3 {
        return Err(Error::format(bytes.len() as u64, "truncated PPM pixel data"));
    }
    let rgb = bytes[pos..pos + n * 3]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok((width, height, rgb))
}
