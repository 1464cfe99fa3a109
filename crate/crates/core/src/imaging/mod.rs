//! Image loading and preprocessing for the 7-class expression task.

mod dataset;
mod decode;
mod synth;
mod transform;

pub use dataset::{
    ingest, ingest_with, split_stratified, write_manifest, Dataset, ImageSample, IngestReport, Split, SplitConfig,
};
pub use decode::{decode_netpbm, encode_pgm, DecodedImage, ImageDecoder, NetpbmDecoder};
pub use synth::{make_synthetic_dataset, render_face, Expression};
pub use transform::{edge_detect, luminance, preprocess, resize_bilinear, to_grayscale};

use std::path::PathBuf;

use thiserror::Error;

/// Side length of every network input image.
pub const SIDE: usize = 48;

/// Default edge threshold on the normalised Sobel magnitude.
pub const EDGE_THETA: f64 = 0.1;

/// Expression classes in label order (alphabetical).
pub const CLASS_NAMES: [&str; 7] = ["anger", "contempt", "disgust", "fear", "happiness", "sadness", "surprise"];

/// Label of a class directory name. `happy` is accepted for `happiness`.
pub fn class_index(name: &str) -> Option<usize> {
    let name = name.to_ascii_lowercase();
    let name = if name == "happy" { "happiness" } else { name.as_str() };
    CLASS_NAMES.iter().position(|&c| c == name)
}

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown class directory '{0}'")]
    UnknownClass(String),
    #[error("decode error at byte {offset}: {detail}")]
    Decode { offset: usize, detail: String },
    #[error("no registered decoder accepts this file")]
    NoDecoder,
    #[error("image extent {width}x{height} is too small")]
    Degenerate { width: usize, height: usize },
    #[error("pixel buffer of {found} values does not match {width}x{height}")]
    Extent { width: usize, height: usize, found: usize },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("no images found under {0}")]
    Empty(PathBuf),
    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
}

/// Single-channel image, row-major, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImagingError> {
        if pixels.len() != width * height {
            return Err(ImagingError::Extent {
                width,
                height,
                found: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let pixels = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Fraction of pixels that are exactly zero.
    pub fn zero_fraction(&self) -> f64 {
        self.pixels.iter().filter(|&&v| v == 0.0).count() as f64 / self.pixels.len() as f64
    }

    /// `height × width × 1` network input.
    pub fn to_tensor(&self) -> crate::tensor::Tensor {
        crate::tensor::Tensor::new(vec![self.height, self.width, 1], self.pixels.clone()).expect("extent checked")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self, ImagingError> {
        if pixels.len() != width * height {
            return Err(ImagingError::Extent {
                width,
                height,
                found: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }
}
