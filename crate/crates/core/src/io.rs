//! PNG and PFM file access plus content checksums.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image::{ColorImage, DepthMap};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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

    pub fn path(&self) -> &Path {
        match self {
            Self::Io { path, .. } | Self::Format { path, .. } => path,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| IoError::io(path, e))
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_u8(v: u8) -> f32 {
    f32::from(v) / 255.0
}

/// Rounds every channel to the nearest 8-bit level, as a PNG round trip would.
pub fn quantize(image: &ColorImage) -> ColorImage {
    image.map(|p| p.map(|c| from_u8(to_u8(c))))
}

pub fn write_png(path: &Path, image: &ColorImage) -> Result<(), IoError> {
    let w = create(path)?;
    let mut enc = png::Encoder::new(w, image.width() as u32, image.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = image.data().iter().flat_map(|p| p.map(to_u8)).collect();
    let mut writer = enc.write_header().map_err(|e| IoError::format(path, e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| IoError::format(path, e.to_string()))?;
    writer.finish().map_err(|e| IoError::format(path, e.to_string()))
}

/// Reads 8-bit RGB, RGBA or grayscale PNG. Alpha is dropped.
pub fn read_png(path: &Path) -> Result<ColorImage, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| IoError::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| IoError::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| IoError::format(path, e.to_string()))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(IoError::format(path, format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    Ok(ColorImage::from_fn(w, h, |x, y| {
        let p = &buf[y * stride + x * channels..];
        if channels < 3 {
            [from_u8(p[0]); 3]
        } else {
            [from_u8(p[0]), from_u8(p[1]), from_u8(p[2])]
        }
    }))
}

/// Single-channel little-endian PFM, rows stored bottom to top.
pub fn write_pfm(path: &Path, map: &DepthMap) -> Result<(), IoError> {
    let mut w = create(path)?;
    let (width, height) = map.dims();
    let mut bytes = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    bytes.reserve(width * height * 4);
    for y in (0..height).rev() {
        for x in 0..width {
            bytes.extend_from_slice(&map[(x, y)].to_le_bytes());
        }
    }
    w.write_all(&bytes).map_err(|e| IoError::io(path, e))?;
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap, IoError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| IoError::io(path, e))?;
    let bad = |m: &str| IoError::format(path, format!("malformed PFM: {m}"));
    let mut fields = Vec::new();
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
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    match fields[0].as_str() {
        "Pf" => {}
        "PF" => return Err(bad("three-channel PFM where one channel was expected")),
        _ => return Err(bad("missing Pf magic")),
    }
    let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let scale: f32 = fields[3].parse().map_err(|_| bad("scale"))?;
    let little = scale < 0.0;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != width * height * 4 {
        return Err(bad(&format!(
            "expected {} raster bytes, found {}",
            width * height * 4,
            raster.len()
        )));
    }
    let value = |i: usize| {
        let b: [u8; 4] = raster[i * 4..i * 4 + 4].try_into().expect("4 bytes");
        if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    Ok(DepthMap::from_fn(width, height, |x, y| value((height - 1 - y) * width + x)))
}

/// First 64 bits of SHA-256, as 16 hex digits.
pub fn checksum_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn checksum_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    Ok(checksum_bytes(&bytes))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| IoError::io(path, e))?;
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}
