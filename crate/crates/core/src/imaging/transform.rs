use super::{GrayImage, ImagingError, RgbImage, SIDE};

/// ITU-R BT.601 luma, `0.299 r + 0.587 g + 0.114 b`, arranged so gray
/// triplets map to themselves exactly.
pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    g + 0.299 * (r - g) + 0.114 * (b - g)
}

pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    let pixels = rgb.pixels().iter().map(|&[r, g, b]| luminance(r, g, b)).collect();
    GrayImage::new(rgb.width(), rgb.height(), pixels).expect("same extent")
}

/// Bilinear resampling with pixel centres aligned (`src = (dst + ½)·scale − ½`)
/// and edge clamping.
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage, ImagingError> {
    if img.width() < 2 || img.height() < 2 || width == 0 || height == 0 {
        return Err(ImagingError::Degenerate {
            width: img.width(),
            height: img.height(),
        });
    }
    let axis = |n_src: usize, n_dst: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_src as f64 / n_dst as f64;
        (0..n_dst)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
                let i0 = (s.floor() as usize).min(n_src - 2);
                (i0, i0 + 1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(img.width(), width);
    let ys = axis(img.height(), height);
    let mut out = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    GrayImage::new(width, height, out)
}

/// Resizes to the network input extent and clamps into `[0, 1]`.
pub fn preprocess(img: &GrayImage) -> Result<GrayImage, ImagingError> {
    let resized = if img.width() == SIDE && img.height() == SIDE {
        img.clone()
    } else {
        resize_bilinear(img, SIDE, SIDE)?
    };
    Ok(resized.map(|v| v.clamp(0.0, 1.0)))
}

/// Sobel gradient magnitude with replicated borders, divided by the image
/// maximum, with values below `theta` set to exactly zero.
pub fn edge_detect(img: &GrayImage, theta: f64) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let at = |x: isize, y: isize| {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        img.get(cx, cy)
    };
    let mut mag = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag.push(gx.hypot(gy));
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let out = if max > 0.0 {
        mag.iter()
            .map(|&m| {
                let v = m / max;
                if v < theta {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    } else {
        vec![0.0; w * h]
    };
    GrayImage::new(w, h, out).expect("same extent")
}
