//! Image ingestion and export.
//!
//! Binary PPM/PGM are always supported so the test suite has no codec
//! dependency; PNG covers real datasets; a raw-tensor container (JSON header
//! + little-endian f32 payload) gives bit-exact fixtures.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ImageTensor;

const RAW_IMAGE_EXT: &str = "rawimg";

/// Load an image as a channels-last tensor scaled to [0, 1].
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_raw_image(path) {
        return decode_raw_image(&bytes, path);
    }
    match bytes.first() {
        Some(b'P') => {
            let (w, h, maxval, channels, samples) = decode_pnm(&bytes, path)?;
            let scale = 1.0 / maxval as f32;
            Ok(ImageTensor {
                height: h,
                width: w,
                channels,
                data: samples.iter().map(|&v| v as f32 * scale).collect(),
            })
        }
        Some(0x89) => decode_png_color(&bytes, path),
        _ => Err(Error::Decode(format!(
            "{}: unrecognized image format",
            path.display()
        ))),
    }
}

/// Load an integer label map (class indices, no scaling). PGM and grayscale
/// PNG, 8- or 16-bit.
pub fn load_label_map(path: &Path) -> Result<(usize, usize, Vec<u32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.first() {
        Some(b'P') => {
            let (w, h, _maxval, channels, samples) = decode_pnm(&bytes, path)?;
            if channels != 1 {
                return Err(Error::Decode(format!(
                    "{}: label map must be single-channel",
                    path.display()
                )));
            }
            Ok((h, w, samples))
        }
        Some(0x89) => {
            let img = image::load_from_memory(&bytes)
                .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
            // Raw sample values only; to_luma16 would rescale 8-bit data.
            match img {
                image::DynamicImage::ImageLuma8(g) => {
                    let (w, h) = (g.width() as usize, g.height() as usize);
                    Ok((h, w, g.into_raw().iter().map(|&v| v as u32).collect()))
                }
                image::DynamicImage::ImageLuma16(g) => {
                    let (w, h) = (g.width() as usize, g.height() as usize);
                    Ok((h, w, g.into_raw().iter().map(|&v| v as u32).collect()))
                }
                _ => Err(Error::Decode(format!(
                    "{}: label PNG must be 8- or 16-bit grayscale",
                    path.display()
                ))),
            }
        }
        _ => Err(Error::Decode(format!(
            "{}: unrecognized label-map format",
            path.display()
        ))),
    }
}

/// Image dimensions from the header alone (used for manifest validation,
/// where decoding every file up front would be wasteful).
pub fn probe_dimensions(path: &Path) -> Result<(usize, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_raw_image(path) {
        let header = raw_image_header(&bytes, path)?;
        return Ok((header.height, header.width));
    }
    match bytes.first() {
        Some(b'P') => {
            let mut cursor = PnmHeader::new(&bytes);
            cursor.magic(path)?;
            let w = cursor.int(path)?;
            let h = cursor.int(path)?;
            Ok((h, w))
        }
        Some(0x89) if bytes.len() >= 24 => {
            let w = u32::from_be_bytes(bytes[16..20].try_into().unwrap()) as usize;
            let h = u32::from_be_bytes(bytes[20..24].try_into().unwrap()) as usize;
            Ok((h, w))
        }
        _ => Err(Error::Decode(format!(
            "{}: unrecognized image format",
            path.display()
        ))),
    }
}

fn is_raw_image(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some(RAW_IMAGE_EXT)
}

// --- PNM (binary PPM P6 / PGM P5) ------------------------------------------

struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
    channels: usize,
}

impl<'a> PnmHeader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            pos: 0,
            channels: 0,
        }
    }

    fn magic(&mut self, path: &Path) -> Result<()> {
        if self.bytes.len() < 2 {
            return Err(Error::Decode(format!("{}: truncated", path.display())));
        }
        self.channels = match &self.bytes[..2] {
            b"P6" => 3,
            b"P5" => 1,
            other => {
                return Err(Error::Decode(format!(
                    "{}: unsupported magic {:?} (binary P5/P6 only)",
                    path.display(),
                    String::from_utf8_lossy(other)
                )))
            }
        };
        self.pos = 2;
        Ok(())
    }

    fn skip_space(&mut self) {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn int(&mut self, path: &Path) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit())
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::Decode(format!(
                "{}: malformed header",
                path.display()
            )));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Decode(format!("{}: malformed header", path.display())))
    }
}

fn decode_pnm(bytes: &[u8], path: &Path) -> Result<(usize, usize, u32, usize, Vec<u32>)> {
    let mut h = PnmHeader::new(bytes);
    h.magic(path)?;
    let width = h.int(path)?;
    let height = h.int(path)?;
    let maxval = h.int(path)? as u32;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Decode(format!(
            "{}: maxval {maxval} outside 1..=65535",
            path.display()
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    h.pos += 1;
    let channels = h.channels;
    let count = width * height * channels;
    let data = &bytes[h.pos.min(bytes.len())..];
    let samples: Vec<u32> = if maxval < 256 {
        if data.len() < count {
            return Err(Error::Decode(format!(
                "{}: raster has {} of {count} bytes",
                path.display(),
                data.len()
            )));
        }
        data[..count].iter().map(|&b| b as u32).collect()
    } else {
        // 16-bit samples are big-endian per the format definition.
        if data.len() < 2 * count {
            return Err(Error::Decode(format!(
                "{}: raster has {} of {} bytes",
                path.display(),
                data.len(),
                2 * count
            )));
        }
        data[..2 * count]
            .chunks_exact(2)
            .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    };
    Ok((width, height, maxval, channels, samples))
}

/// Write a [0, 1] image as binary PPM (3 channels) or PGM (1 channel).
pub fn save_pnm(path: &Path, img: &ImageTensor) -> Result<()> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        n => {
            return Err(Error::Parameter(format!(
                "PNM supports 1 or 3 channels, image has {n}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(
        img.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write raw integer samples as a binary PGM; values above 255 switch to the
/// 16-bit big-endian encoding.
pub fn save_pgm_indices(path: &Path, width: usize, height: usize, values: &[u32]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape("label buffer does not match dimensions".into()));
    }
    let maxval = values.iter().copied().max().unwrap_or(0).max(1);
    if maxval > 65535 {
        return Err(Error::Parameter(format!(
            "label value {maxval} exceeds the 16-bit PGM limit"
        )));
    }
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    if maxval < 256 {
        out.extend(values.iter().map(|&v| v as u8));
    } else {
        for &v in values {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// --- PNG --------------------------------------------------------------------

fn decode_png_color(bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(ImageTensor {
        height: h,
        width: w,
        channels: 3,
        data: rgb.into_raw().iter().map(|&b| b as f32 / 255.0).collect(),
    })
}

/// Write integer samples as an 8- or 16-bit grayscale PNG.
pub fn save_png_indices(path: &Path, width: usize, height: usize, values: &[u32]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape("label buffer does not match dimensions".into()));
    }
    let maxval = values.iter().copied().max().unwrap_or(0);
    let mut encoded = Vec::new();
    if maxval < 256 {
        let buf: Vec<u8> = values.iter().map(|&v| v as u8).collect();
        image::write_buffer_with_format(
            &mut Cursor::new(&mut encoded),
            &buf,
            width as u32,
            height as u32,
            image::ExtendedColorType::L8,
            image::ImageFormat::Png,
        )
    } else if maxval < 65536 {
        let mut buf = Vec::with_capacity(values.len() * 2);
        for &v in values {
            buf.extend_from_slice(&(v as u16).to_be_bytes());
        }
        image::write_buffer_with_format(
            &mut Cursor::new(&mut encoded),
            &buf,
            width as u32,
            height as u32,
            image::ExtendedColorType::L16,
            image::ImageFormat::Png,
        )
    } else {
        return Err(Error::Parameter(format!(
            "label value {maxval} exceeds the 16-bit PNG limit"
        )));
    }
    .map_err(|e| Error::Decode(format!("{}: png encode: {e}", path.display())))?;
    fs::write(path, encoded).map_err(|e| Error::io(path, e))
}

// --- Raw-tensor container ----------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RawImageHeader {
    height: usize,
    width: usize,
    channels: usize,
    dtype: String,
}

fn raw_image_header(bytes: &[u8], path: &Path) -> Result<RawImageHeader> {
    if bytes.len() < 8 {
        return Err(Error::Decode(format!("{}: truncated", path.display())));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + len {
        return Err(Error::Decode(format!("{}: truncated header", path.display())));
    }
    serde_json::from_slice(&bytes[8..8 + len])
        .map_err(|e| Error::Decode(format!("{}: header json: {e}", path.display())))
}

fn decode_raw_image(bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    let header = raw_image_header(bytes, path)?;
    if header.dtype != "F32" {
        return Err(Error::Decode(format!(
            "{}: raw image dtype {} unsupported",
            path.display(),
            header.dtype
        )));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let payload = &bytes[8 + len..];
    let count = header.height * header.width * header.channels;
    if payload.len() != count * 4 {
        return Err(Error::Decode(format!(
            "{}: payload {} bytes, expected {}",
            path.display(),
            payload.len(),
            count * 4
        )));
    }
    Ok(ImageTensor {
        height: header.height,
        width: header.width,
        channels: header.channels,
        data: payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    })
}

/// Bit-exact image container for fixtures: little-endian f32 payload behind
/// a JSON header.
pub fn save_raw_image(path: &Path, img: &ImageTensor) -> Result<()> {
    let header = serde_json::to_vec(&RawImageHeader {
        height: img.height,
        width: img.width,
        channels: img.channels,
        dtype: "F32".into(),
    })
    .map_err(|e| Error::Decode(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(8 + header.len() + img.data.len() * 4);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn solid_gray_ppm_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gray.ppm");
        let img = ImageTensor {
            height: 2,
            width: 2,
            channels: 3,
            data: vec![128.0 / 255.0; 12],
        };
        save_pnm(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.height, 2);
        assert!(back.data.iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-6));
    }

    #[test]
    fn one_pixel_image_shape() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("px.ppm");
        let img = ImageTensor {
            height: 1,
            width: 1,
            channels: 3,
            data: vec![0.2, 0.4, 0.6],
        };
        save_pnm(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!((back.height, back.width, back.channels), (1, 1, 3));
    }

    #[test]
    fn raw_image_roundtrip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("fixture.rawimg");
        let img = ImageTensor {
            height: 3,
            width: 2,
            channels: 3,
            data: (0..18).map(|i| (i as f32).sin()).collect(),
        };
        save_raw_image(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_label_roundtrip_and_probe() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.pgm");
        let values = vec![0u32, 1, 2, 300];
        save_pgm_indices(&path, 2, 2, &values).unwrap();
        let (h, w, back) = load_label_map(&path).unwrap();
        assert_eq!((h, w), (2, 2));
        assert_eq!(back, values);
        assert_eq!(probe_dimensions(&path).unwrap(), (2, 2));
    }

    #[test]
    fn png_label_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.png");
        let values = vec![7u32, 0, 255, 3, 9, 1];
        save_png_indices(&path, 3, 2, &values).unwrap();
        let (h, w, back) = load_label_map(&path).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(back, values);
        assert_eq!(probe_dimensions(&path).unwrap(), (2, 3));
    }

    #[test]
    fn corrupt_file_is_decode_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.ppm");
        fs::write(&path, b"not an image").unwrap();
        assert!(matches!(load_image(&path), Err(Error::Decode(_))));
    }
}
