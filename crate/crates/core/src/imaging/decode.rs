//! Netpbm decoding and the decoder plug-in point.

use super::{GrayImage, ImagingError, RgbImage};

/// A decoded file, before grayscale conversion.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodedImage {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl DecodedImage {
    pub fn into_gray(self) -> GrayImage {
        match self {
            DecodedImage::Gray(g) => g,
            DecodedImage::Rgb(c) => super::to_grayscale(&c),
        }
    }
}

/// Turns file bytes into pixels. Register extra implementations with
/// [`super::ingest`] to read formats beyond binary Netpbm.
pub trait ImageDecoder: Send + Sync {
    fn name(&self) -> &str;
    /// Cheap check on the leading bytes.
    fn accepts(&self, bytes: &[u8]) -> bool;
    fn decode(&self, bytes: &[u8]) -> Result<DecodedImage, ImagingError>;
}

/// Binary PGM (`P5`) and PPM (`P6`), 8- or 16-bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct NetpbmDecoder;

impl ImageDecoder for NetpbmDecoder {
    fn name(&self) -> &str {
        "netpbm"
    }

    fn accepts(&self, bytes: &[u8]) -> bool {
        bytes.starts_with(b"P5") || bytes.starts_with(b"P6")
    }

    fn decode(&self, bytes: &[u8]) -> Result<DecodedImage, ImagingError> {
        decode_netpbm(bytes)
    }
}

fn bad(offset: usize, detail: impl Into<String>) -> ImagingError {
    ImagingError::Decode {
        offset,
        detail: detail.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, ImagingError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(start, format!("expected {what}")))
    }
}

pub fn decode_netpbm(bytes: &[u8]) -> Result<DecodedImage, ImagingError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad(0, "not a binary PGM/PPM file")),
    };
    let mut c = Cursor { bytes, pos: 2 };
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(bad(2, format!("zero extent {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(c.pos, format!("maxval {maxval} outside 1-65535")));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad(c.pos, "missing whitespace before raster"));
    }
    let start = c.pos + 1;
    let depth = if maxval < 256 { 1 } else { 2 };
    let need = width * height * channels * depth;
    let raster = bytes
        .get(start..start + need)
        .ok_or_else(|| bad(bytes.len(), format!("raster truncated, expected {need} bytes")))?;
    let scale = 1.0 / maxval as f64;
    let samples: Vec<f64> = if depth == 1 {
        raster.iter().map(|&v| (v as f64 * scale).min(1.0)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|p| (u16::from_be_bytes([p[0], p[1]]) as f64 * scale).min(1.0))
            .collect()
    };
    Ok(if channels == 1 {
        DecodedImage::Gray(GrayImage::new(width, height, samples)?)
    } else {
        let px = samples.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
        DecodedImage::Rgb(RgbImage::new(width, height, px)?)
    })
}

/// Binary PGM bytes for an image with 8-bit depth.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
