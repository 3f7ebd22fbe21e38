//! Procedural toy corpus: gradients, anti-aliased shapes and oriented stripes.

use super::{ImageItem, ImageSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

const SUPERSAMPLE: usize = 4;

enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Band { nx: f64, ny: f64, offset: f64, half_width: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Shape::Band {
                nx,
                ny,
                offset,
                half_width,
            } => (x * nx + y * ny - offset).abs() <= half_width,
        }
    }

    /// Fraction of the pixel `(px, py)` covered, by supersampling.
    fn coverage(&self, px: usize, py: usize) -> f64 {
        let mut hits = 0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                hits += self.contains(x, y) as usize;
            }
        }
        hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    }
}

fn random_shape(size: f64, rng: &mut impl Rng) -> Shape {
    match rng.gen_range(0..3) {
        0 => Shape::Ellipse {
            cx: rng.gen_range(0.0..size),
            cy: rng.gen_range(0.0..size),
            rx: rng.gen_range(0.08..0.35) * size,
            ry: rng.gen_range(0.08..0.35) * size,
        },
        1 => {
            let (x0, y0) = (rng.gen_range(0.0..0.8) * size, rng.gen_range(0.0..0.8) * size);
            Shape::Rect {
                x0,
                y0,
                x1: x0 + rng.gen_range(0.1..0.5) * size,
                y1: y0 + rng.gen_range(0.1..0.5) * size,
            }
        }
        _ => {
            let angle = rng.gen_range(0.0..TAU);
            Shape::Band {
                nx: angle.cos(),
                ny: angle.sin(),
                offset: rng.gen_range(-0.2..1.2) * size,
                half_width: rng.gen_range(0.6..3.0),
            }
        }
    }
}

/// One `[1, 3, size, size]` image quantized to 8-bit levels.
pub fn synthetic_image<T: Scalar>(size: usize, rng: &mut impl Rng) -> Tensor4<T> {
    let s = size as f64;
    let mut img = vec![[0.0f64; 3]; size * size];

    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
    let gx: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.3..0.3) / s);
    let gy: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.3..0.3) / s);
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                img[y * size + x][c] = base[c] + gx[c] * x as f64 + gy[c] * y as f64;
            }
        }
    }

    for _ in 0..rng.gen_range(3..7) {
        let shape = random_shape(s, rng);
        let color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        for y in 0..size {
            for x in 0..size {
                let a = shape.coverage(x, y);
                if a > 0.0 {
                    let px = &mut img[y * size + x];
                    for c in 0..3 {
                        px[c] = (1.0 - a) * px[c] + a * color[c];
                    }
                }
            }
        }
    }

    // oriented stripes inside a soft disk
    for _ in 0..rng.gen_range(1..3) {
        let freq = rng.gen_range(0.04..0.22);
        let angle = rng.gen_range(0.0..TAU);
        let phase = rng.gen_range(0.0..TAU);
        let amp = rng.gen_range(0.1..0.3);
        let (cx, cy) = (rng.gen_range(0.2..0.8) * s, rng.gen_range(0.2..0.8) * s);
        let radius = rng.gen_range(0.2..0.45) * s;
        let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..1.0));
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let d = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt() / radius;
                if d >= 1.0 {
                    continue;
                }
                let window = 0.5 * (1.0 + (std::f64::consts::PI * d).cos());
                let wave =
                    (TAU * freq * (fx * angle.cos() + fy * angle.sin()) + phase).sin();
                for c in 0..3 {
                    img[y * size + x][c] += amp * window * wave * tint[c];
                }
            }
        }
    }

    Tensor4::from_fn([1, 3, size, size], |[_, c, y, x]| {
        let v = img[y * size + x][c].clamp(0.0, 1.0);
        T::lit((v * 255.0).round() / 255.0)
    })
}

/// `n` deterministic images with ids `toy_000.png`, `toy_001.png`, ...
pub fn synthetic_image_set<T: Scalar>(n: usize, size: usize, seed: u64) -> ImageSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n)
        .map(|i| ImageItem {
            id: format!("toy_{i:03}.png"),
            hr: synthetic_image(size, &mut rng),
        })
        .collect();
    ImageSet {
        items,
        source_dir: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_deterministic_and_in_range() {
        let a = synthetic_image_set::<f32>(4, 32, 9);
        let b = synthetic_image_set::<f32>(4, 32, 9);
        assert_eq!(a, b);
        for it in &a.items {
            assert_eq!(it.hr.shape(), [1, 3, 32, 32]);
            assert!(it.hr.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert_ne!(a.items[0].hr, a.items[1].hr);
    }
}
