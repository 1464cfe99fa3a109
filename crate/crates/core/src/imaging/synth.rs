//! Parametric face-like images, one expression per class, as a stand-in
//! corpus when the real dataset is not available.

use rand::Rng as _;

use super::dataset::{Dataset, ImageSample, Split};
use super::{GrayImage, CLASS_NAMES, SIDE};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expression {
    Anger,
    Contempt,
    Disgust,
    Fear,
    Happiness,
    Sadness,
    Surprise,
}

impl Expression {
    pub const ALL: [Expression; 7] = [
        Expression::Anger,
        Expression::Contempt,
        Expression::Disgust,
        Expression::Fear,
        Expression::Happiness,
        Expression::Sadness,
        Expression::Surprise,
    ];

    pub fn label(self) -> usize {
        Self::ALL.iter().position(|&e| e == self).expect("listed")
    }
}

type Pt = (f64, f64);

enum Shape {
    Stroke(Vec<Pt>, f64),
    Blob { c: Pt, rx: f64, ry: f64 },
}

fn curve(a: Pt, mid: Pt, b: Pt) -> Vec<Pt> {
    // Quadratic Bézier passing through `mid` at t = 1/2.
    let ctrl = (2.0 * mid.0 - 0.5 * (a.0 + b.0), 2.0 * mid.1 - 0.5 * (a.1 + b.1));
    (0..=10)
        .map(|i| {
            let t = i as f64 / 10.0;
            let u = 1.0 - t;
            (
                u * u * a.0 + 2.0 * u * t * ctrl.0 + t * t * b.0,
                u * u * a.1 + 2.0 * u * t * ctrl.1 + t * t * b.1,
            )
        })
        .collect()
}

fn segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

impl Shape {
    /// Fraction of a pixel at face-space point `p` covered by the shape,
    /// with `scale` face units per pixel inverted.
    fn coverage(&self, p: Pt, scale: f64) -> f64 {
        match self {
            Shape::Stroke(pts, width) => {
                let d = pts.windows(2).map(|w| segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min);
                (0.5 * width + 0.5 - d * scale).clamp(0.0, 1.0)
            }
            Shape::Blob { c, rx, ry } => {
                let r = ((p.0 - c.0) / rx).hypot((p.1 - c.1) / ry);
                (0.5 - (r - 1.0) * rx.min(*ry) * scale).clamp(0.0, 1.0)
            }
        }
    }
}

fn features(expr: Expression, r: &mut Rng, width: f64) -> Vec<Shape> {
    let mut j = |v: f64| v + r.random_range(-0.7..0.7);
    let eye_ry = match expr {
        Expression::Fear | Expression::Surprise => 2.3,
        Expression::Anger | Expression::Disgust => 1.0,
        _ => 1.5,
    };
    let mut shapes = vec![
        Shape::Blob { c: (j(-6.0), j(-4.0)), rx: 2.2, ry: eye_ry },
        Shape::Blob { c: (j(6.0), j(-4.0)), rx: 2.2, ry: eye_ry },
    ];
    // Brows as (outer y, inner y), mirrored about the vertical axis.
    let brow = |outer: f64, inner: f64, j: &mut dyn FnMut(f64) -> f64| -> [Shape; 2] {
        let (o, i) = (j(outer), j(inner));
        [
            Shape::Stroke(vec![(-10.0, o), (-3.0, i)], width),
            Shape::Stroke(vec![(10.0, o), (3.0, i)], width),
        ]
    };
    match expr {
        Expression::Anger => shapes.extend(brow(-10.0, -7.0, &mut j)),
        Expression::Sadness => shapes.extend(brow(-8.5, -11.0, &mut j)),
        Expression::Fear => shapes.extend(brow(-11.5, -13.0, &mut j)),
        Expression::Disgust => shapes.extend(brow(-9.0, -7.5, &mut j)),
        Expression::Surprise => {
            let (o, m, i) = (j(-11.0), j(-14.5), j(-12.0));
            shapes.push(Shape::Stroke(curve((-10.0, o), (-6.5, m), (-3.0, i)), width));
            shapes.push(Shape::Stroke(curve((10.0, o), (6.5, m), (3.0, i)), width));
        }
        Expression::Contempt | Expression::Happiness => shapes.extend(brow(-9.5, -9.5, &mut j)),
    }
    let y = j(10.5);
    match expr {
        Expression::Happiness => shapes.push(Shape::Stroke(curve((-7.0, y - 2.5), (0.0, y + 2.0), (7.0, y - 2.5)), width)),
        Expression::Sadness => shapes.push(Shape::Stroke(curve((-6.0, y + 2.0), (0.0, y - 1.5), (6.0, y + 2.0)), width)),
        Expression::Anger => shapes.push(Shape::Stroke(vec![(-5.0, y), (5.0, y)], width + 0.8)),
        Expression::Contempt => shapes.push(Shape::Stroke(vec![(-5.0, y), (0.0, y), (6.0, y - 3.0)], width)),
        Expression::Disgust => {
            shapes.push(Shape::Stroke(
                vec![(-6.0, y + 0.5), (-3.0, y - 1.5), (0.0, y - 0.5), (3.0, y - 1.5), (6.0, y + 0.5)],
                width,
            ));
            for dy in [0.5, 2.5] {
                shapes.push(Shape::Stroke(vec![(-2.5, dy), (2.5, dy)], width * 0.7));
            }
        }
        Expression::Fear => shapes.push(Shape::Blob { c: (0.0, y), rx: 5.0, ry: 1.8 }),
        Expression::Surprise => shapes.push(Shape::Blob { c: (0.0, y + 1.0), rx: 3.0, ry: 4.0 }),
    }
    shapes
}

/// One 48×48 face with random placement, scale, tilt, contrast and noise.
pub fn render_face(expr: Expression, r: &mut Rng) -> GrayImage {
    let center = (24.0 + r.random_range(-2.5..2.5), 25.0 + r.random_range(-2.5..2.5));
    let scale = r.random_range(0.9..1.1);
    let angle: f64 = r.random_range(-0.12..0.12);
    let mirror = if r.random_bool(0.5) { -1.0 } else { 1.0 };
    let background = r.random_range(0.2..0.35);
    let skin = r.random_range(0.55..0.7);
    let dark = r.random_range(0.05..0.15);
    let width = r.random_range(1.2..1.8);
    let face = Shape::Blob { c: (0.0, 0.0), rx: 15.0, ry: 19.0 };
    let parts = features(expr, r, width);
    let (sin, cos) = angle.sin_cos();
    let mut pixels = Vec::with_capacity(SIDE * SIDE);
    for py in 0..SIDE {
        for px in 0..SIDE {
            let (dx, dy) = ((px as f64 + 0.5 - center.0) / scale, (py as f64 + 0.5 - center.1) / scale);
            let p = (mirror * (cos * dx + sin * dy), -sin * dx + cos * dy);
            let f = face.coverage(p, scale);
            let mut v = background * (1.0 - f) + skin * f;
            for s in &parts {
                let c = s.coverage(p, scale);
                v = v * (1.0 - c) + dark * c;
            }
            let noise = (r.random::<f64>() + r.random::<f64>() - 1.0) * 0.03;
            pixels.push((v + noise).clamp(0.0, 1.0));
        }
    }
    GrayImage::new(SIDE, SIDE, pixels).expect("square")
}

/// `n_per_class` images of every expression, interleaved by class.
pub fn make_synthetic_dataset(n_per_class: usize, seed: u64) -> Dataset {
    let mut samples = Vec::with_capacity(n_per_class * 7);
    for (label, expr) in Expression::ALL.iter().enumerate() {
        let mut r = rng::seeded(rng::derive_seed(seed, label as u64));
        for i in 0..n_per_class {
            samples.push(ImageSample {
                pixels: render_face(*expr, &mut r),
                label,
                source_id: format!("synthetic/{}/{i:04}", CLASS_NAMES[label]),
            });
        }
    }
    Dataset {
        samples,
        split: Split::Train,
    }
}
