//! Text edge maps: a from-scratch Canny detector and the edge-augmented
//! network input.
//!
//! The detector follows the classic pipeline: Gaussian smoothing, Sobel
//! gradients, non-maximum suppression along the quantized gradient direction
//! (4 bins), and double-threshold hysteresis where weak pixels survive only
//! if 8-connected to a strong pixel. Thresholds are fractions of the maximum
//! suppressed gradient magnitude, so they are invariant to global contrast.
//!
//! Local conventions (the published algorithm leaves these open):
//! - RGB input is reduced to BT.601 luminance first;
//! - kernel radius is `ceil(3 sigma)` with clamp-to-edge borders;
//! - suppression keeps a pixel iff its magnitude is strictly greater than
//!   the neighbor against the gradient direction and `>=` the neighbor along
//!   it, which resolves symmetric ridges to a single pixel deterministically;
//! - border pixels are never edges.

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::manifest::RegionPair;
use crate::raster::{gaussian_blur_plane, RasterImage};

/// Binary edge raster: 1 on text contours, 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    data: Array2<u8>,
}

impl EdgeMap {
    /// Wraps a strictly binary array.
    pub fn from_array(data: Array2<u8>) -> Result<Self> {
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput(
                "edge map values must be 0 or 1".to_string(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    #[inline]
    pub fn is_edge(&self, y: usize, x: usize) -> bool {
        self.data[(y, x)] == 1
    }

    /// Number of edge pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// As a single-channel raster image with values {0.0, 1.0}.
    pub fn to_raster(&self) -> RasterImage {
        let (h, w) = self.data.dim();
        RasterImage::from_array(Array3::from_shape_fn((h, w, 1), |(y, x, _)| {
            f32::from(self.data[(y, x)])
        }))
        .expect("binary values are in range")
    }

    /// As an `f64` plane.
    pub fn to_plane(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    /// Writes a 1-bit grayscale PNG. `invert` renders edges black on white
    /// (a visualization convention only; stored maps always use 1 = edge).
    pub fn save_png_1bit(&self, path: impl AsRef<Path>, invert: bool) -> Result<()> {
        let path = path.as_ref();
        let (h, w) = self.data.dim();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::One);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::InvalidInput(format!("png encode failed for {}: {e}", path.display())))?;
        let row_bytes = w.div_ceil(8);
        let mut packed = vec![0u8; row_bytes * h];
        for y in 0..h {
            for x in 0..w {
                let mut bit = self.data[(y, x)];
                if invert {
                    bit ^= 1;
                }
                if bit == 1 {
                    packed[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        writer
            .write_image_data(&packed)
            .map_err(|e| Error::InvalidInput(format!("png encode failed for {}: {e}", path.display())))
    }

    /// Reads an edge map from PNG (any grayscale depth; nonzero means edge).
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = RasterImage::load_png(path.as_ref())?;
        if img.channels() != 1 {
            return Err(Error::InvalidInput(
                "edge map PNG must be single-channel".to_string(),
            ));
        }
        let (h, w) = (img.height(), img.width());
        let data = Array2::from_shape_fn((h, w), |(y, x)| u8::from(img.get(y, x, 0) >= 0.5));
        Ok(Self { data })
    }
}

/// Canny detector parameters. Thresholds are fractions of the maximum
/// suppressed gradient magnitude.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CannyParams {
    pub gaussian_sigma: f64,
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            gaussian_sigma: 1.4,
            low_threshold: 0.1,
            high_threshold: 0.3,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::InvalidInput("gaussian_sigma must be > 0".to_string()));
        }
        for (name, v) in [("low_threshold", self.low_threshold), ("high_threshold", self.high_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.low_threshold >= self.high_threshold {
            return Err(Error::InvalidInput(
                "low_threshold must be strictly below high_threshold".to_string(),
            ));
        }
        Ok(())
    }
}

/// Intermediate buffers of the detector, exposed so the suppression invariant
/// can be asserted directly.
#[derive(Debug, Clone)]
pub struct CannyStages {
    pub magnitude: Array2<f64>,
    /// Quantized gradient direction per pixel: 0, 1, 2, 3 for 0/45/90/135
    /// degrees. Only meaningful where `magnitude > 0`.
    pub direction_bin: Array2<u8>,
    /// Magnitudes surviving non-maximum suppression.
    pub suppressed: Array2<f64>,
    pub edges: EdgeMap,
}

/// Offsets (dy, dx) against and along the gradient direction per bin.
const BIN_OFFSETS: [((i64, i64), (i64, i64)); 4] = [
    ((0, -1), (0, 1)),   // 0 deg: horizontal gradient
    ((-1, -1), (1, 1)),  // 45 deg (y axis down)
    ((-1, 0), (1, 0)),   // 90 deg: vertical gradient
    ((-1, 1), (1, -1)),  // 135 deg
];

fn quantize_direction(gx: f64, gy: f64) -> u8 {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        0
    } else if angle < 67.5 {
        1
    } else if angle < 112.5 {
        2
    } else {
        3
    }
}

/// Runs the detector and returns all intermediate stages.
pub fn canny_stages(img: &RasterImage, params: &CannyParams) -> Result<CannyStages> {
    params.validate()?;
    let (h, w) = (img.height(), img.width());
    if h < 3 || w < 3 {
        return Err(Error::InvalidInput(format!(
            "canny requires at least 3x3 input, got {h}x{w}"
        )));
    }
    if img.channels() == 4 {
        return Err(Error::InvalidInput(
            "canny input must have 1 or 3 channels".to_string(),
        ));
    }

    let blurred = gaussian_blur_plane(&img.luminance(), params.gaussian_sigma);

    // Sobel gradients; the one-pixel border stays zero.
    let mut gx = Array2::<f64>::zeros((h, w));
    let mut gy = Array2::<f64>::zeros((h, w));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dy: usize, dx: usize| blurred[(y + dy - 1, x + dx - 1)];
            gx[(y, x)] = (p(0, 2) + 2.0 * p(1, 2) + p(2, 2)) - (p(0, 0) + 2.0 * p(1, 0) + p(2, 0));
            gy[(y, x)] = (p(2, 0) + 2.0 * p(2, 1) + p(2, 2)) - (p(0, 0) + 2.0 * p(0, 1) + p(0, 2));
        }
    }

    let mut magnitude = Array2::<f64>::zeros((h, w));
    let mut direction_bin = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            magnitude[(y, x)] = gx[(y, x)].hypot(gy[(y, x)]);
            direction_bin[(y, x)] = quantize_direction(gx[(y, x)], gy[(y, x)]);
        }
    }

    // Non-maximum suppression. Strictly greater than the `prev` neighbor and
    // `>=` the `next` neighbor: symmetric two-pixel ridges keep exactly one.
    let mut suppressed = Array2::<f64>::zeros((h, w));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let m = magnitude[(y, x)];
            if m == 0.0 {
                continue;
            }
            let (prev, next) = BIN_OFFSETS[direction_bin[(y, x)] as usize];
            let at = |(dy, dx): (i64, i64)| {
                magnitude[((y as i64 + dy) as usize, (x as i64 + dx) as usize)]
            };
            if m > at(prev) && m >= at(next) {
                suppressed[(y, x)] = m;
            }
        }
    }

    // Double threshold on the normalized magnitude range + hysteresis.
    let peak = suppressed.iter().cloned().fold(0.0_f64, f64::max);
    let mut edges = Array2::<u8>::zeros((h, w));
    if peak > 0.0 {
        let lo = params.low_threshold * peak;
        let hi = params.high_threshold * peak;
        let mut queue: Vec<(usize, usize)> = Vec::new();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                if suppressed[(y, x)] >= hi {
                    edges[(y, x)] = 1;
                    queue.push((y, x));
                }
            }
        }
        while let Some((y, x)) = queue.pop() {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 1 || nx < 1 || ny >= h as i64 - 1 || nx >= w as i64 - 1 {
                        continue;
                    }
                    let (ny, nx) = (ny as usize, nx as usize);
                    if edges[(ny, nx)] == 0 && suppressed[(ny, nx)] >= lo {
                        edges[(ny, nx)] = 1;
                        queue.push((ny, nx));
                    }
                }
            }
        }
    }

    Ok(CannyStages {
        magnitude,
        direction_bin,
        suppressed,
        edges: EdgeMap { data: edges },
    })
}

/// Binary text edge map of an image.
pub fn canny(img: &RasterImage, params: &CannyParams) -> Result<EdgeMap> {
    Ok(canny_stages(img, params)?.edges)
}

/// Concatenates the LR edge map as a fourth channel: channels 0-2 are the
/// input image unchanged, channel 3 is the edge map.
pub fn concat_edge_channel(lr: &RasterImage, c_lr: &EdgeMap) -> Result<RasterImage> {
    if lr.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "edge-augmented input requires a 3-channel image, got {} channels",
            lr.channels()
        )));
    }
    if (lr.height(), lr.width()) != (c_lr.height(), c_lr.width()) {
        return Err(Error::shape(
            "concat_edge_channel",
            format!("{}x{}", lr.height(), lr.width()),
            format!("{}x{}", c_lr.height(), c_lr.width()),
        ));
    }
    let (h, w) = (lr.height(), lr.width());
    let data = Array3::from_shape_fn((h, w, 4), |(y, x, c)| {
        if c < 3 {
            lr.get(y, x, c)
        } else {
            f32::from(c_lr.data()[(y, x)])
        }
    });
    RasterImage::from_array(data)
}

/// Edge maps for both sides of a pair: (LR map for network input, HR map for
/// supervision).
pub fn edge_for_pair(pair: &RegionPair, params: &CannyParams) -> Result<(EdgeMap, EdgeMap)> {
    Ok((canny(&pair.lr, params)?, canny(&pair.hr, params)?))
}
