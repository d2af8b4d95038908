//! Shared fixture builders for the benchmark targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stisr_core::raster::{resize_bicubic, RasterImage};

/// Smooth random image with structure at several scales.
pub fn smooth_image(seed: u64, height: usize, width: usize, channels: usize) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = RasterImage::from_fn(
        (height / 8).max(2),
        (width / 8).max(2),
        channels,
        |_, _, _| rng.random_range(0.0..1.0f32),
    )
    .unwrap();
    resize_bicubic(&coarse, height, width).unwrap()
}

/// Random string over a small alphabet.
pub fn random_text(seed: u64, len: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const ALPHABET: [char; 8] = ['a', 'b', 'c', 'd', '中', '文', '本', '字'];
    (0..len)
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())])
        .collect()
}
