//! Deterministic synthetic fixtures shared by the integration suites.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stisr_core::raster::{resize_bicubic, RasterImage};

/// Single-channel image: left half 0.0, right half 1.0.
pub fn step_image(height: usize, width: usize) -> RasterImage {
    RasterImage::from_fn(height, width, 1, |_, x, _| {
        if x < width / 2 {
            0.0
        } else {
            1.0
        }
    })
    .unwrap()
}

/// Black single-channel image with a centered white square of `side` pixels.
pub fn square_image(size: usize, side: usize) -> RasterImage {
    let lo = (size - side) / 2;
    let hi = lo + side;
    RasterImage::from_fn(size, size, 1, |y, x, _| {
        if (lo..hi).contains(&y) && (lo..hi).contains(&x) {
            1.0
        } else {
            0.0
        }
    })
    .unwrap()
}

/// Smooth random image built by bicubic-upsampling a coarse random grid.
/// Non-trivial gradients everywhere, no aliasing; good for registration and
/// metric fixtures.
pub fn smooth_noise(seed: u64, height: usize, width: usize, channels: usize) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gh = (height / 8).max(2);
    let gw = (width / 8).max(2);
    let coarse = Array3::from_shape_fn((gh, gw, channels), |_| rng.random_range(0.0..1.0f32));
    let coarse = RasterImage::from_array(coarse).unwrap();
    resize_bicubic(&coarse, height, width).unwrap()
}

/// Luminance plane in the nested-`Vec` form the reference oracle consumes.
pub fn to_plane(img: &RasterImage) -> Vec<Vec<f64>> {
    let lum = img.luminance();
    (0..img.height())
        .map(|y| (0..img.width()).map(|x| lum[(y, x)]).collect())
        .collect()
}

/// Per-pixel uniform noise in `[-amplitude, amplitude]`, clamped to range.
pub fn add_noise(img: &RasterImage, amplitude: f32, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img.data().mapv(|v| {
        (v + rng.random_range(-amplitude..=amplitude)).clamp(0.0, 1.0)
    });
    RasterImage::from_array(data).unwrap()
}
