//! Perceptual distance in the feature space of a pluggable backend.
//!
//! The score follows the usual recipe: extract feature maps per layer,
//! unit-normalize each spatial feature vector across channels, take weighted
//! squared differences, average spatially and sum over layers.
//!
//! No pretrained weights ship with the toolkit. The [`PerceptualBackend`]
//! trait accepts any deterministic extractor; [`ConvPerceptualBackend`]
//! provides a fixed-seed random convolution stack so the metric is fully
//! deterministic in tests and CI.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Deterministic feature extractor for perceptual scoring.
///
/// Implementations must be pure: identical input yields identical features.
/// Feature maps are `(channels, height, width)` with positive spatial size.
pub trait PerceptualBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Feature maps per layer for a 1- or 3-channel image.
    fn features(&self, img: &RasterImage) -> Result<Vec<Array3<f64>>>;

    /// Per-layer, per-channel linear weights applied to squared differences.
    fn layer_weights(&self) -> Vec<Vec<f64>>;

    /// Smallest (height, width) the backend accepts; callers pad smaller
    /// inputs (the evaluation protocol uses reflection padding).
    fn min_input_size(&self) -> (usize, usize) {
        (1, 1)
    }
}

/// Perceptual distance between two equally sized images.
pub fn lpips(a: &RasterImage, b: &RasterImage, backend: &dyn PerceptualBackend) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(
            "lpips",
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    let fa = backend.features(a)?;
    let fb = backend.features(b)?;
    let weights = backend.layer_weights();
    if fa.len() != fb.len() || fa.len() != weights.len() {
        return Err(Error::Backend(format!(
            "backend {} returned inconsistent layer counts ({} vs {} features, {} weight sets)",
            backend.name(),
            fa.len(),
            fb.len(),
            weights.len()
        )));
    }
    let mut total = 0.0;
    for (layer, ((ma, mb), w)) in fa.iter().zip(&fb).zip(&weights).enumerate() {
        if ma.dim() != mb.dim() {
            return Err(Error::Backend(format!(
                "layer {layer} feature shapes differ: {:?} vs {:?}",
                ma.dim(),
                mb.dim()
            )));
        }
        let (c, h, w_dim) = ma.dim();
        if h == 0 || w_dim == 0 {
            return Err(Error::Backend(format!(
                "layer {layer} has empty spatial extent"
            )));
        }
        if w.len() != c {
            return Err(Error::Backend(format!(
                "layer {layer} weight count {} does not match {} channels",
                w.len(),
                c
            )));
        }
        let na = unit_normalize(ma);
        let nb = unit_normalize(mb);
        let mut layer_sum = 0.0;
        for y in 0..h {
            for x in 0..w_dim {
                let mut px = 0.0;
                for ch in 0..c {
                    let d = na[(ch, y, x)] - nb[(ch, y, x)];
                    px += w[ch] * d * d;
                }
                layer_sum += px;
            }
        }
        total += layer_sum / (h * w_dim) as f64;
    }
    Ok(total)
}

/// Normalizes each spatial feature vector to unit length across channels.
fn unit_normalize(m: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = m.dim();
    let mut out = Array3::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let mut sq = 0.0;
            for ch in 0..c {
                sq += m[(ch, y, x)] * m[(ch, y, x)];
            }
            let norm = sq.sqrt() + 1e-10;
            for ch in 0..c {
                out[(ch, y, x)] = m[(ch, y, x)] / norm;
            }
        }
    }
    out
}

fn image_to_chw(img: &RasterImage) -> Result<Array3<f64>> {
    let rgb = img.to_rgb()?;
    let (h, w, _) = rgb.data().dim();
    Ok(Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        f64::from(rgb.get(y, x, c))
    }))
}

/// Single-layer backend whose features are the image itself. With unit
/// weights the score reduces to the mean squared difference of
/// channel-normalized pixels; useful for algebraic checks.
#[derive(Debug, Default)]
pub struct IdentityBackend;

impl PerceptualBackend for IdentityBackend {
    fn name(&self) -> &str {
        "identity"
    }

    fn features(&self, img: &RasterImage) -> Result<Vec<Array3<f64>>> {
        Ok(vec![image_to_chw(img)?])
    }

    fn layer_weights(&self) -> Vec<Vec<f64>> {
        vec![vec![1.0; 3]]
    }
}

struct ConvLayer {
    /// (out, in, 3, 3) kernel, flattened.
    weight: Vec<f64>,
    out_channels: usize,
    in_channels: usize,
    /// 2x2 average pooling before this layer.
    pool_before: bool,
}

/// Fixed-seed random convolution stack: three 3x3 conv + ReLU layers with
/// 2x average pooling between them, echoing the multi-scale structure of the
/// pretrained networks commonly used for this metric.
pub struct ConvPerceptualBackend {
    layers: Vec<ConvLayer>,
    seed: u64,
}

impl ConvPerceptualBackend {
    /// The deterministic test configuration: channels 3 -> 8 -> 12 -> 16.
    pub fn seeded(seed: u64) -> Self {
        let spec = [(3usize, 8usize, false), (8, 12, true), (12, 16, true)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .iter()
            .map(|&(ci, co, pool_before)| {
                let fan_in = (ci * 9) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid stddev");
                let weight = (0..co * ci * 9).map(|_| normal.sample(&mut rng)).collect();
                ConvLayer {
                    weight,
                    out_channels: co,
                    in_channels: ci,
                    pool_before,
                }
            })
            .collect();
        Self { layers, seed }
    }
}

impl PerceptualBackend for ConvPerceptualBackend {
    fn name(&self) -> &str {
        "conv-random"
    }

    fn features(&self, img: &RasterImage) -> Result<Vec<Array3<f64>>> {
        let (min_h, min_w) = self.min_input_size();
        if img.height() < min_h || img.width() < min_w {
            return Err(Error::Backend(format!(
                "input {}x{} below backend minimum {min_h}x{min_w}",
                img.height(),
                img.width()
            )));
        }
        let mut current = image_to_chw(img)?;
        let mut maps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            if layer.pool_before {
                current = avg_pool2(&current);
            }
            current = conv3x3_relu(&current, &layer.weight, layer.in_channels, layer.out_channels);
            maps.push(current.clone());
        }
        Ok(maps)
    }

    fn layer_weights(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .map(|l| vec![1.0; l.out_channels])
            .collect()
    }

    fn min_input_size(&self) -> (usize, usize) {
        // Two pooling stages; keep at least one pixel at the deepest layer.
        (4, 4)
    }
}

impl std::fmt::Debug for ConvPerceptualBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ConvPerceptualBackend(seed={})", self.seed)
    }
}

/// 3x3 convolution with zero padding followed by ReLU.
fn conv3x3_relu(input: &Array3<f64>, weight: &[f64], ci: usize, co: usize) -> Array3<f64> {
    let (c, h, w) = input.dim();
    debug_assert_eq!(c, ci);
    let mut out = Array3::zeros((co, h, w));
    for o in 0..co {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for i in 0..ci {
                    for ky in 0..3usize {
                        let sy = y as i64 + ky as i64 - 1;
                        if sy < 0 || sy >= h as i64 {
                            continue;
                        }
                        for kx in 0..3usize {
                            let sx = x as i64 + kx as i64 - 1;
                            if sx < 0 || sx >= w as i64 {
                                continue;
                            }
                            acc += weight[((o * ci + i) * 3 + ky) * 3 + kx]
                                * input[(i, sy as usize, sx as usize)];
                        }
                    }
                }
                out[(o, y, x)] = acc.max(0.0);
            }
        }
    }
    out
}

fn avg_pool2(input: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = input.dim();
    let (oh, ow) = ((h / 2).max(1), (w / 2).max(1));
    let mut out = Array3::zeros((c, oh, ow));
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let y0 = (y * 2).min(h - 1);
                let x0 = (x * 2).min(w - 1);
                let y1 = (y * 2 + 1).min(h - 1);
                let x1 = (x * 2 + 1).min(w - 1);
                out[(ch, y, x)] = (input[(ch, y0, x0)]
                    + input[(ch, y0, x1)]
                    + input[(ch, y1, x0)]
                    + input[(ch, y1, x1)])
                    / 4.0;
            }
        }
    }
    out
}
