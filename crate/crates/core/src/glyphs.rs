//! Procedural glyph-like fixtures: high-contrast random strokes on textured
//! backgrounds, degraded into LR/HR pairs for desk-scale training and tests.
//! No dataset download is required anywhere in CI.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datapipe::synth_degrade;
use crate::error::Result;
use crate::manifest::RegionPair;
use crate::raster::{gaussian_blur, resize_bicubic, RasterImage};

struct Stroke {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    radius: f64,
}

impl Stroke {
    fn distance(&self, px: f64, py: f64) -> f64 {
        let (vx, vy) = (self.x1 - self.x0, self.y1 - self.y0);
        let (wx, wy) = (px - self.x0, py - self.y0);
        let len_sq = vx * vx + vy * vy;
        let t = if len_sq > 0.0 {
            ((wx * vx + wy * vy) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (cx, cy) = (self.x0 + t * vx, self.y0 + t * vy);
        ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
    }
}

/// Renders one glyph-like image: a smooth light background with dark stroke
/// clusters arranged on a cell grid, lightly blurred for anti-aliasing.
pub fn render_glyph_image(seed: u64, height: usize, width: usize) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Smooth textured background from a coarse random grid.
    let coarse = RasterImage::from_array(Array3::from_shape_fn(
        ((height / 16).max(2), (width / 16).max(2), 3),
        |_| rng.random_range(0.65..0.95f32),
    ))
    .expect("background values in range");
    let background = resize_bicubic(&coarse, height, width).expect("valid size");

    // Stroke clusters per cell, like rows of dense characters.
    let cell = 24usize.min(height).min(width).max(12);
    let mut strokes: Vec<Stroke> = Vec::new();
    let mut y = 0;
    while y < height {
        let mut x = 0;
        while x < width {
            let ch = cell.min(height - y);
            let cw = cell.min(width - x);
            if ch >= 10 && cw >= 10 {
                let margin = 2.0;
                let n = rng.random_range(3..=6);
                for _ in 0..n {
                    let horizontal = rng.random_bool(0.5);
                    let radius = rng.random_range(0.8..1.6);
                    let (x0, y0, x1, y1) = if horizontal {
                        let yy = rng.random_range(margin..(ch as f64 - margin));
                        let xa = rng.random_range(margin..(cw as f64 / 2.0));
                        let xb = rng.random_range((cw as f64 / 2.0)..(cw as f64 - margin));
                        (xa, yy, xb, yy + rng.random_range(-3.0..3.0))
                    } else {
                        let xx = rng.random_range(margin..(cw as f64 - margin));
                        let ya = rng.random_range(margin..(ch as f64 / 2.0));
                        let yb = rng.random_range((ch as f64 / 2.0)..(ch as f64 - margin));
                        (xx, ya, xx + rng.random_range(-3.0..3.0), yb)
                    };
                    strokes.push(Stroke {
                        x0: x as f64 + x0,
                        y0: y as f64 + y0,
                        x1: x as f64 + x1,
                        y1: y as f64 + y1,
                        radius,
                    });
                }
            }
            x += cell;
        }
        y += cell;
    }

    let ink = rng.random_range(0.02..0.15f32);
    let img = RasterImage::from_fn(height, width, 3, |py, px, c| {
        let mut v = background.get(py, px, c);
        // Coverage from the nearest stroke with a 1px soft edge.
        let mut coverage = 0.0f32;
        for s in &strokes {
            let d = s.distance(px as f64, py as f64);
            if d < s.radius + 1.0 {
                let a = ((s.radius + 1.0 - d).min(1.0)) as f32;
                coverage = coverage.max(a);
            }
        }
        v = v * (1.0 - coverage) + ink * coverage;
        v.clamp(0.0, 1.0)
    })
    .expect("values clamped");
    gaussian_blur(&img, 0.5)
}

/// A dataset of degraded glyph pairs. Pure function of its arguments.
pub fn glyph_dataset(
    count: usize,
    hr_size: usize,
    scale: u32,
    blur_sigma: f64,
    noise_sigma: f64,
    base_seed: u64,
) -> Result<Vec<RegionPair>> {
    (0..count)
        .map(|i| {
            let seed = base_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
            let hr = render_glyph_image(seed, hr_size, hr_size);
            synth_degrade(&hr, scale, blur_sigma, noise_sigma, seed ^ 0x5bf0_3635)
        })
        .collect()
}
