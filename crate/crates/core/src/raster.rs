//! In-memory raster images and basic resampling.
//!
//! Images are stored as `(height, width, channels)` arrays of `f32` in the
//! canonical `[0, 1]` range. On-disk payloads are 8-bit PNG; a `u8` sample
//! round-trips losslessly through `u8 -> f32 -> u8`.

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// BT.601 luma weights used everywhere RGB is reduced to a single channel.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A raster image with 1, 3 or 4 channels and values in `[0, 1]`.
///
/// The 4-channel form only appears as the edge-augmented network input; file
/// i/o is limited to 1 and 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    data: Array3<f32>,
}

impl RasterImage {
    /// Wraps an `(H, W, C)` array, validating the channel count and value range.
    pub fn from_array(data: Array3<f32>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h < 1 || w < 1 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be at least 1x1, got {h}x{w}"
            )));
        }
        if !matches!(c, 1 | 3 | 4) {
            return Err(Error::InvalidInput(format!(
                "channel count must be 1, 3 or 4, got {c}"
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(
                "image values must lie in [0, 1]".to_string(),
            ));
        }
        Ok(Self { data })
    }

    /// A constant image.
    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::from_array(Array3::from_elem((height, width, channels), value))
            .expect("constant image parameters must be valid")
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::constant(height, width, channels, 0.0)
    }

    /// Builds an image from a per-pixel closure; the closure must return
    /// values in `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        Self::from_array(Array3::from_shape_fn((height, width, channels), |(y, x, c)| {
            f(y, x, c)
        }))
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_array(self) -> Array3<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y, x, c)]
    }

    /// Decodes 8-bit samples (row-major, interleaved channels).
    pub fn from_u8(height: usize, width: usize, channels: usize, samples: &[u8]) -> Result<Self> {
        if samples.len() != height * width * channels {
            return Err(Error::InvalidInput(format!(
                "sample buffer has {} bytes, expected {}",
                samples.len(),
                height * width * channels
            )));
        }
        let data = Array3::from_shape_fn((height, width, channels), |(y, x, c)| {
            f32::from(samples[(y * width + x) * channels + c]) / 255.0
        });
        Self::from_array(data)
    }

    /// Quantizes to 8-bit samples (round half away from zero is irrelevant on
    /// `[0, 1]`; plain rounding is used).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Loads a PNG. Grayscale maps to 1 channel, RGB to 3; an alpha channel,
    /// if present, is dropped.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            image::DynamicImage::ImageLuma8(g) => Self::from_u8(h, w, 1, g.as_raw()),
            other => {
                let rgb = other.to_rgb8();
                Self::from_u8(h, w, 3, rgb.as_raw())
            }
        }
    }

    /// Saves as 8-bit PNG (grayscale for 1 channel, RGB for 3).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (h, w) = (self.height() as u32, self.width() as u32);
        let bytes = self.to_u8();
        let result = match self.channels() {
            1 => image::GrayImage::from_raw(w, h, bytes)
                .expect("buffer sized from image dims")
                .save(path),
            3 => image::RgbImage::from_raw(w, h, bytes)
                .expect("buffer sized from image dims")
                .save(path),
            c => {
                return Err(Error::InvalidInput(format!(
                    "cannot save {c}-channel image as PNG"
                )))
            }
        };
        result.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// BT.601 luminance as an `f64` plane. For single-channel images this is
    /// a plain copy; a fourth channel is ignored.
    pub fn luminance(&self) -> Array2<f64> {
        let (h, w, c) = self.data.dim();
        Array2::from_shape_fn((h, w), |(y, x)| {
            if c == 1 {
                f64::from(self.data[(y, x, 0)])
            } else {
                LUMA_WEIGHTS
                    .iter()
                    .enumerate()
                    .map(|(i, wt)| wt * f64::from(self.data[(y, x, i)]))
                    .sum()
            }
        })
    }

    /// One channel as an `f64` plane.
    pub fn plane(&self, channel: usize) -> Array2<f64> {
        let (h, w, _) = self.data.dim();
        Array2::from_shape_fn((h, w), |(y, x)| f64::from(self.data[(y, x, channel)]))
    }

    /// Replicates a single-channel image to 3 channels; 3-channel input is
    /// returned unchanged.
    pub fn to_rgb(&self) -> Result<Self> {
        match self.channels() {
            3 => Ok(self.clone()),
            1 => {
                let (h, w, _) = self.data.dim();
                Self::from_array(Array3::from_shape_fn((h, w, 3), |(y, x, _)| {
                    self.data[(y, x, 0)]
                }))
            }
            c => Err(Error::InvalidInput(format!(
                "cannot promote {c}-channel image to RGB"
            ))),
        }
    }

    /// Axis-aligned crop. The window must lie inside the image.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || y0 + height > self.height() || x0 + width > self.width() {
            return Err(Error::InvalidInput(format!(
                "crop window {height}x{width}+{y0}+{x0} outside {}x{}",
                self.height(),
                self.width()
            )));
        }
        let view = self
            .data
            .slice(ndarray::s![y0..y0 + height, x0..x0 + width, ..]);
        Self::from_array(view.to_owned())
    }

    /// Content fingerprint over the canonical 8-bit form, for keyed adapters.
    pub fn content_key(&self) -> u64 {
        let mut hash = fnv1a64(0xcbf2_9ce4_8422_2325, &self.to_u8());
        for dim in [self.height(), self.width(), self.channels()] {
            hash = fnv1a64(hash, &(dim as u64).to_le_bytes());
        }
        hash
    }
}

fn fnv1a64(mut state: u64, bytes: &[u8]) -> u64 {
    // Seed already folded into `state`.
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(0x0000_0100_0000_01b3);
    }
    state
}

/// Bilinear sample of an `f64` plane with clamp-to-edge addressing.
pub fn bilinear(plane: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = plane.dim();
    let cx = x.clamp(0.0, (w - 1) as f64);
    let cy = y.clamp(0.0, (h - 1) as f64);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = cx - x0 as f64;
    let fy = cy - y0 as f64;
    let top = plane[(y0, x0)] * (1.0 - fx) + plane[(y0, x1)] * fx;
    let bot = plane[(y1, x0)] * (1.0 - fx) + plane[(y1, x1)] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Catmull-Rom cubic kernel (a = -0.5).
fn catmull_rom(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Precomputed filter taps for one output coordinate along one axis.
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

/// Builds resampling taps for one axis. When minifying, the kernel support is
/// widened by the scale ratio so the result is anti-aliased.
fn axis_taps(src: usize, dst: usize) -> Vec<Taps> {
    let ratio = src as f64 / dst as f64;
    let scale = ratio.max(1.0);
    let radius = 2.0 * scale;
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let lo = (center - radius).ceil() as isize;
            let hi = (center + radius).floor() as isize;
            let mut weights = Vec::with_capacity((hi - lo + 1) as usize);
            let mut sum = 0.0;
            for t in lo..=hi {
                let w = catmull_rom((t as f64 - center) / scale);
                weights.push(w);
                sum += w;
            }
            if sum.abs() > f64::EPSILON {
                for w in &mut weights {
                    *w /= sum;
                }
            }
            // Fold out-of-range taps onto the clamped border sample.
            let start = lo.max(0) as usize;
            let mut clamped = vec![0.0; (hi.min(src as isize - 1) - start as isize + 1) as usize];
            for (k, w) in weights.iter().enumerate() {
                let idx = (lo + k as isize).clamp(0, src as isize - 1) as usize - start;
                clamped[idx] += w;
            }
            Taps {
                start,
                weights: clamped,
            }
        })
        .collect()
}

/// Separable bicubic (Catmull-Rom) resize to an explicit output size.
///
/// Downsampling widens the kernel by the scale ratio, matching the usual
/// anti-aliased convention for bicubic minification.
pub fn resize_bicubic(img: &RasterImage, out_height: usize, out_width: usize) -> Result<RasterImage> {
    if out_height == 0 || out_width == 0 {
        return Err(Error::InvalidInput(
            "resize target must be at least 1x1".to_string(),
        ));
    }
    let (h, w, c) = img.data().dim();
    let col_taps = axis_taps(w, out_width);
    let row_taps = axis_taps(h, out_height);

    // Horizontal pass in f64.
    let mut horiz = Array3::<f64>::zeros((h, out_width, c));
    for y in 0..h {
        for (x_out, taps) in col_taps.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in taps.weights.iter().enumerate() {
                    acc += wt * f64::from(img.get(y, taps.start + k, ch));
                }
                horiz[(y, x_out, ch)] = acc;
            }
        }
    }
    // Vertical pass.
    let mut out = Array3::<f32>::zeros((out_height, out_width, c));
    for (y_out, taps) in row_taps.iter().enumerate() {
        for x in 0..out_width {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in taps.weights.iter().enumerate() {
                    acc += wt * horiz[(taps.start + k, x, ch)];
                }
                out[(y_out, x, ch)] = acc.clamp(0.0, 1.0) as f32;
            }
        }
    }
    RasterImage::from_array(out)
}

/// Separable bilinear resize (center-aligned sampling, clamp at borders).
pub fn resize_bilinear(img: &RasterImage, out_height: usize, out_width: usize) -> Result<RasterImage> {
    if out_height == 0 || out_width == 0 {
        return Err(Error::InvalidInput(
            "resize target must be at least 1x1".to_string(),
        ));
    }
    let (h, w, c) = img.data().dim();
    let planes: Vec<Array2<f64>> = (0..c).map(|ch| img.plane(ch)).collect();
    let ry = h as f64 / out_height as f64;
    let rx = w as f64 / out_width as f64;
    let out = Array3::from_shape_fn((out_height, out_width, c), |(y, x, ch)| {
        let sy = (y as f64 + 0.5) * ry - 0.5;
        let sx = (x as f64 + 0.5) * rx - 0.5;
        bilinear(&planes[ch], sx, sy).clamp(0.0, 1.0) as f32
    });
    RasterImage::from_array(out)
}

/// Pads an image to at least `(min_height, min_width)` by mirror reflection
/// (no repeated edge sample), keeping the original content centered.
pub fn pad_reflect(img: &RasterImage, min_height: usize, min_width: usize) -> RasterImage {
    let (h, w, c) = img.data().dim();
    if h >= min_height && w >= min_width {
        return img.clone();
    }
    let (oh, ow) = (h.max(min_height), w.max(min_width));
    let (top, left) = ((oh - h) / 2, (ow - w) / 2);
    let reflect = |v: i64, len: usize| -> usize {
        let len = len as i64;
        let mut v = v;
        // Mirror without repeating the border sample; degenerate axes clamp.
        loop {
            if v < 0 {
                v = -v;
            } else if v >= len {
                v = 2 * len - 2 - v;
            } else {
                return v as usize;
            }
            if len == 1 {
                return 0;
            }
        }
    };
    let data = Array3::from_shape_fn((oh, ow, c), |(y, x, ch)| {
        let sy = reflect(y as i64 - top as i64, h);
        let sx = reflect(x as i64 - left as i64, w);
        img.get(sy, sx, ch)
    });
    RasterImage::from_array(data).expect("padding preserves range")
}

/// Normalized Gaussian kernel with radius `ceil(3 sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "gaussian sigma must be positive");
    let radius = (3.0 * sigma).ceil() as usize;
    let mut kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

/// Separable Gaussian blur with clamp-to-edge borders. `sigma <= 0` returns
/// the input unchanged.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> RasterImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let (h, w, c) = img.data().dim();
    let planes: Vec<Array2<f64>> = (0..c)
        .map(|ch| gaussian_blur_plane(&img.plane(ch), sigma))
        .collect();
    let out = Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
        planes[ch][(y, x)].clamp(0.0, 1.0) as f32
    });
    RasterImage::from_array(out).expect("blur preserves range")
}

/// Gaussian blur of a single `f64` plane (used by the edge detector, where
/// values must not be re-quantized between stages).
pub fn gaussian_blur_plane(plane: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return plane.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;
    let (h, w) = plane.dim();
    let mut horiz = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sx = (x + k).saturating_sub(radius).min(w - 1);
                acc += wt * plane[(y, sx)];
            }
            horiz[(y, x)] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sy = (y + k).saturating_sub(radius).min(h - 1);
                acc += wt * horiz[(sy, x)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}
