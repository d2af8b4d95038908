//! Paired-data preparation: LR-to-HR registration, central text-region
//! cropping, and a synthetic degradation generator for desk-scale fixtures.
//!
//! Registration is a transparent simplified pipeline, not a reproduction of
//! any published method: alternating per-channel gain/bias least squares and
//! a coarse-to-fine affine refinement by gradient descent (normalized
//! coordinates, backtracking line search) on the photometric L2 error. Pairs
//! that fail to reach the residual threshold are flagged for human review
//! rather than silently accepted.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::manifest::{default_focals, RegionPair, RegistrationTransform};
use crate::raster::{bilinear, gaussian_blur, resize_bicubic, RasterImage, LUMA_WEIGHTS};

/// Tuning knobs of the registration loop.
#[derive(Debug, Clone, Copy)]
pub struct RegistrationConfig {
    /// Total alternating rounds across all pyramid levels.
    pub max_rounds: usize,
    /// A round improving the residual by less than this advances the level.
    pub improvement_tol: f64,
    /// Final mean-absolute residual above this flags the pair.
    pub residual_threshold: f64,
    pub pyramid_levels: usize,
    /// Gradient-descent steps per round.
    pub descent_steps: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_rounds: 20,
            improvement_tol: 1e-4,
            residual_threshold: 0.1,
            pyramid_levels: 3,
            descent_steps: 12,
        }
    }
}

/// Result of registering one pair.
#[derive(Debug, Clone)]
pub struct RegistrationOutcome {
    /// Color-corrected, warped LR paired with the (possibly center-cropped) HR.
    pub pair: RegionPair,
    pub transform: RegistrationTransform,
    /// Full-resolution mean-absolute residual after each round.
    /// Non-increasing by construction.
    pub residual_history: Vec<f64>,
    /// False when the final residual stays above the configured threshold;
    /// such pairs belong in the exceptions list for manual review.
    pub converged: bool,
}

/// Affine in normalized coordinates, row-major `[a11 a12 tx a21 a22 ty]`.
type AffineParams = [f64; 6];

const IDENTITY: AffineParams = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

#[derive(Clone, Copy)]
struct Frame {
    cx: f64,
    cy: f64,
    scale: f64,
}

impl Frame {
    fn of(height: usize, width: usize) -> Self {
        Self {
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            scale: width.max(height) as f64 / 2.0,
        }
    }

    #[inline]
    fn normalize(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.scale, (y - self.cy) / self.scale)
    }

    #[inline]
    fn warp(&self, a: &AffineParams, x: f64, y: f64) -> (f64, f64) {
        let (qx, qy) = self.normalize(x, y);
        let wx = a[0] * qx + a[1] * qy + a[2];
        let wy = a[3] * qx + a[4] * qy + a[5];
        (wx * self.scale + self.cx, wy * self.scale + self.cy)
    }
}

struct Level {
    lr_channels: Vec<Array2<f64>>,
    hr_channels: Vec<Array2<f64>>,
    lr_lum: Array2<f64>,
    lr_grad_x: Array2<f64>,
    lr_grad_y: Array2<f64>,
    frame: Frame,
}

/// Registers an LR image onto its HR counterpart.
///
/// Preconditions: same channel count (1 or 3); `hr` at least `scale` times
/// `lr` in both dimensions. An HR larger than `scale * lr` is center-cropped
/// to the exact size first.
pub fn register_pair(lr: &RasterImage, hr: &RasterImage, scale: u32) -> Result<RegistrationOutcome> {
    register_pair_with(lr, hr, scale, &RegistrationConfig::default())
}

pub fn register_pair_with(
    lr: &RasterImage,
    hr: &RasterImage,
    scale: u32,
    cfg: &RegistrationConfig,
) -> Result<RegistrationOutcome> {
    if scale != 2 && scale != 4 {
        return Err(Error::InvalidInput("scale must be 2 or 4".to_string()));
    }
    if lr.channels() != hr.channels() || !matches!(lr.channels(), 1 | 3) {
        return Err(Error::InvalidInput(format!(
            "registration requires matching 1- or 3-channel images, got {} and {}",
            lr.channels(),
            hr.channels()
        )));
    }
    let s = scale as usize;
    let (want_h, want_w) = (lr.height() * s, lr.width() * s);
    if hr.height() < want_h || hr.width() < want_w {
        return Err(Error::shape(
            "register_pair",
            format!("hr at least {want_h}x{want_w}"),
            format!("{}x{}", hr.height(), hr.width()),
        ));
    }
    let hr = if (hr.height(), hr.width()) == (want_h, want_w) {
        hr.clone()
    } else {
        hr.crop((hr.height() - want_h) / 2, (hr.width() - want_w) / 2, want_h, want_w)?
    };

    let channels = lr.channels();
    let upsampled = resize_bicubic(lr, want_h, want_w)?;

    // Pyramid, finest last.
    let mut levels = Vec::with_capacity(cfg.pyramid_levels);
    for li in (0..cfg.pyramid_levels).rev() {
        let factor = 1usize << li;
        let (lh, lw) = ((want_h / factor).max(8), (want_w / factor).max(8));
        let l_img = resize_bicubic(&upsampled, lh, lw)?;
        let h_img = resize_bicubic(&hr, lh, lw)?;
        let lr_lum = l_img.luminance();
        let (gx, gy) = central_gradients(&lr_lum);
        levels.push(Level {
            lr_channels: (0..channels).map(|c| l_img.plane(c)).collect(),
            hr_channels: (0..channels).map(|c| h_img.plane(c)).collect(),
            lr_lum,
            lr_grad_x: gx,
            lr_grad_y: gy,
            frame: Frame::of(lh, lw),
        });
    }
    let full = levels.last().expect("at least one level");
    let full_frame = Frame::of(want_h, want_w);

    let mut ahat = IDENTITY;
    let (mut gain, mut bias) = fit_gain_bias(full, &ahat);
    let mut residual = full_res_residual(full, &ahat, &gain, &bias);
    let mut history = vec![residual];

    let mut rounds_used = 0usize;
    'levels: for level in &levels {
        loop {
            if rounds_used >= cfg.max_rounds {
                break 'levels;
            }
            rounds_used += 1;
            let saved = (ahat, gain.clone(), bias.clone());

            descend_affine(level, &mut ahat, &gain, &bias, cfg.descent_steps);
            let (g2, b2) = fit_gain_bias(full, &ahat);
            gain = g2;
            bias = b2;

            let next = full_res_residual(full, &ahat, &gain, &bias);
            if next > residual {
                // Revert the round; the monotone residual contract wins.
                let (a0, g0, b0) = saved;
                ahat = a0;
                gain = g0;
                bias = b0;
                history.push(residual);
                break 'levels;
            }
            let improvement = residual - next;
            residual = next;
            history.push(residual);
            if improvement < cfg.improvement_tol {
                continue 'levels; // next (finer) level
            }
        }
    }

    let affine = denormalize(&ahat, &full_frame);
    let transform = RegistrationTransform {
        affine,
        gain: gain.clone(),
        bias: bias.clone(),
        residual,
    };
    let corrected = corrected_lr(lr, &transform, scale)?;
    let pair = RegionPair::new(
        corrected,
        hr,
        scale,
        default_focals(scale).0,
        default_focals(scale).1,
        Some(transform.clone()),
    )?;
    Ok(RegistrationOutcome {
        pair,
        transform,
        residual_history: history,
        converged: residual <= cfg.residual_threshold,
    })
}

fn central_gradients(plane: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = plane.dim();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            gx[(y, x)] = (plane[(y, xp)] - plane[(y, xm)]) / (xp - xm).max(1) as f64;
            gy[(y, x)] = (plane[(yp, x)] - plane[(ym, x)]) / (yp - ym).max(1) as f64;
        }
    }
    (gx, gy)
}

/// Least-squares fit of `warped_lr ~ gain * hr + bias` per channel, i.e. the
/// forward photometric degradation from HR to LR.
fn fit_gain_bias(level: &Level, ahat: &AffineParams) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = level.lr_lum.dim();
    let mut gain = Vec::with_capacity(level.lr_channels.len());
    let mut bias = Vec::with_capacity(level.lr_channels.len());
    for (lp, hp) in level.lr_channels.iter().zip(&level.hr_channels) {
        let mut sum_h = 0.0;
        let mut sum_l = 0.0;
        let mut sum_hh = 0.0;
        let mut sum_hl = 0.0;
        let n = (h * w) as f64;
        for y in 0..h {
            for x in 0..w {
                let (wx, wy) = level.frame.warp(ahat, x as f64, y as f64);
                let lv = bilinear(lp, wx, wy);
                let hv = hp[(y, x)];
                sum_h += hv;
                sum_l += lv;
                sum_hh += hv * hv;
                sum_hl += hv * lv;
            }
        }
        let var = sum_hh / n - (sum_h / n) * (sum_h / n);
        let cov = sum_hl / n - (sum_h / n) * (sum_l / n);
        let g = if var > 1e-12 { cov / var } else { 1.0 };
        let b = sum_l / n - g * sum_h / n;
        gain.push(g);
        bias.push(b);
    }
    (gain, bias)
}

/// Mean absolute error between the gain/bias-corrected warped LR and the HR,
/// at the finest level.
fn full_res_residual(full: &Level, ahat: &AffineParams, gain: &[f64], bias: &[f64]) -> f64 {
    let (h, w) = full.lr_lum.dim();
    let mut acc = 0.0;
    for (c, (lp, hp)) in full.lr_channels.iter().zip(&full.hr_channels).enumerate() {
        let g = if gain[c].abs() > 1e-6 { gain[c] } else { 1.0 };
        for y in 0..h {
            for x in 0..w {
                let (wx, wy) = full.frame.warp(ahat, x as f64, y as f64);
                let corrected = (bilinear(lp, wx, wy) - bias[c]) / g;
                acc += (corrected - hp[(y, x)]).abs();
            }
        }
    }
    acc / (h * w * full.lr_channels.len()) as f64
}

/// Luminance L2 objective at one level, with the HR side pushed through the
/// estimated photometric degradation (avoids amplifying noise by 1/gain).
fn level_objective(level: &Level, ahat: &AffineParams, gain: &[f64], bias: &[f64]) -> f64 {
    let (h, w) = level.lr_lum.dim();
    let target = degraded_lum(level, gain, bias);
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (wx, wy) = level.frame.warp(ahat, x as f64, y as f64);
            let d = bilinear(&level.lr_lum, wx, wy) - target[(y, x)];
            acc += d * d;
        }
    }
    acc / (h * w) as f64
}

fn degraded_lum(level: &Level, gain: &[f64], bias: &[f64]) -> Array2<f64> {
    let (h, w) = level.lr_lum.dim();
    let single = level.hr_channels.len() == 1;
    Array2::from_shape_fn((h, w), |(y, x)| {
        if single {
            gain[0] * level.hr_channels[0][(y, x)] + bias[0]
        } else {
            (0..3)
                .map(|c| LUMA_WEIGHTS[c] * (gain[c] * level.hr_channels[c][(y, x)] + bias[c]))
                .sum()
        }
    })
}

/// Normalized-gradient descent with backtracking line search on the level
/// objective. Accepted steps never increase the objective.
fn descend_affine(
    level: &Level,
    ahat: &mut AffineParams,
    gain: &[f64],
    bias: &[f64],
    steps: usize,
) {
    let (h, w) = level.lr_lum.dim();
    let target = degraded_lum(level, gain, bias);
    let mut eta = 0.05;
    let mut current = level_objective(level, ahat, gain, bias);

    for _ in 0..steps {
        // Gradient of the objective w.r.t. normalized affine parameters.
        let mut g = [0.0f64; 6];
        for y in 0..h {
            for x in 0..w {
                let (qx, qy) = level.frame.normalize(x as f64, y as f64);
                let (wx, wy) = level.frame.warp(ahat, x as f64, y as f64);
                let e = bilinear(&level.lr_lum, wx, wy) - target[(y, x)];
                let lx = bilinear(&level.lr_grad_x, wx, wy) * level.frame.scale;
                let ly = bilinear(&level.lr_grad_y, wx, wy) * level.frame.scale;
                g[0] += e * lx * qx;
                g[1] += e * lx * qy;
                g[2] += e * lx;
                g[3] += e * ly * qx;
                g[4] += e * ly * qy;
                g[5] += e * ly;
            }
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-14 {
            break;
        }
        let dir: Vec<f64> = g.iter().map(|v| -v / norm).collect();

        let mut accepted = false;
        let mut try_eta = eta;
        for _ in 0..10 {
            let mut cand = *ahat;
            for (i, d) in dir.iter().enumerate() {
                cand[i] += try_eta * d;
            }
            let value = level_objective(level, &cand, gain, bias);
            if value < current {
                *ahat = cand;
                current = value;
                accepted = true;
                break;
            }
            try_eta *= 0.5;
        }
        if !accepted {
            break;
        }
        eta = (try_eta * 1.5).min(0.1);
    }
}

/// Expands normalized-coordinate parameters to a 2x3 affine on HR pixels.
fn denormalize(ahat: &AffineParams, frame: &Frame) -> [[f64; 3]; 2] {
    let (cx, cy, s) = (frame.cx, frame.cy, frame.scale);
    let tx = s * ahat[2] + cx - (ahat[0] * cx + ahat[1] * cy);
    let ty = s * ahat[5] + cy - (ahat[3] * cx + ahat[4] * cy);
    [[ahat[0], ahat[1], tx], [ahat[3], ahat[4], ty]]
}

/// Applies the estimated transform to the original LR: geometric warp in LR
/// coordinates plus inversion of the photometric degradation.
fn corrected_lr(lr: &RasterImage, t: &RegistrationTransform, scale: u32) -> Result<RasterImage> {
    let s = f64::from(scale);
    let (h, w, channels) = lr.data().dim();
    let planes: Vec<Array2<f64>> = (0..channels).map(|c| lr.plane(c)).collect();
    let a = &t.affine;
    RasterImage::from_fn(h, w, channels, |y, x, c| {
        // LR pixel center in HR coordinates.
        let hx = (x as f64 + 0.5) * s - 0.5;
        let hy = (y as f64 + 0.5) * s - 0.5;
        let wx = a[0][0] * hx + a[0][1] * hy + a[0][2];
        let wy = a[1][0] * hx + a[1][1] * hy + a[1][2];
        // Back to LR coordinates of the original image.
        let lx = (wx + 0.5) / s - 0.5;
        let ly = (wy + 0.5) / s - 0.5;
        let g = if t.gain[c].abs() > 1e-6 { t.gain[c] } else { 1.0 };
        let v = (bilinear(&planes[c], lx, ly) - t.bias[c]) / g;
        v.clamp(0.0, 1.0) as f32
    })
}

/// Concentric crop of a registered pair. The HR window is `crop_fraction` of
/// the HR extent snapped to multiples of the scale factor; the LR window is
/// exactly the HR window divided by scale, so the cropped pair satisfies the
/// strict (slack-free) size relation.
pub fn central_crop_pair(pair: &RegionPair, crop_fraction: f64) -> Result<RegionPair> {
    if !(crop_fraction > 0.0 && crop_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "crop_fraction must lie in (0, 1], got {crop_fraction}"
        )));
    }
    let s = pair.scale as usize;
    let snap = |extent: usize| -> usize {
        let want = (crop_fraction * extent as f64).round() as usize;
        let snapped = (want / s) * s;
        snapped.clamp(s, (extent / s) * s)
    };
    let ch = snap(pair.hr.height());
    let cw = snap(pair.hr.width());
    if ch / s < 16 || cw / s < 16 {
        return Err(Error::InvalidInput(format!(
            "central crop would be {}x{} in LR space; minimum is 16x16",
            ch / s,
            cw / s
        )));
    }
    if (ch, cw) == (pair.hr.height(), pair.hr.width()) {
        return Ok(pair.clone());
    }
    // Snap offsets to multiples of scale so the LR offset is integral.
    let hy0 = ((pair.hr.height() - ch) / 2) / s * s;
    let hx0 = ((pair.hr.width() - cw) / 2) / s * s;
    let hr = pair.hr.crop(hy0, hx0, ch, cw)?;
    let lr = pair.lr.crop(hy0 / s, hx0 / s, ch / s, cw / s)?;
    RegionPair::new(
        lr,
        hr,
        pair.scale,
        pair.lr_focal_mm,
        pair.hr_focal_mm,
        pair.registration.clone(),
    )
}

/// Synthesizes an LR counterpart of `hr`: Gaussian blur, bicubic downsample
/// by `scale`, seeded additive Gaussian noise, clamp to `[0, 1]`. A pure
/// function of `(hr, scale, blur_sigma, noise_sigma, seed)`.
pub fn synth_degrade(
    hr: &RasterImage,
    scale: u32,
    blur_sigma: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<RegionPair> {
    if scale != 2 && scale != 4 {
        return Err(Error::InvalidInput("scale must be 2 or 4".to_string()));
    }
    let s = scale as usize;
    if hr.height() % s != 0 || hr.width() % s != 0 {
        return Err(Error::InvalidInput(format!(
            "hr dimensions {}x{} not divisible by scale {s}",
            hr.height(),
            hr.width()
        )));
    }
    let blurred = gaussian_blur(hr, blur_sigma);
    let mut lr = resize_bicubic(&blurred, hr.height() / s, hr.width() / s)?.into_array();
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| {
            Error::InvalidInput(format!("invalid noise sigma {noise_sigma}: {e}"))
        })?;
        // Deterministic order: ndarray iterates row-major over standard layout.
        for v in lr.iter_mut() {
            *v = (*v + normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
        }
    }
    let lr = RasterImage::from_array(lr)?;
    RegionPair::synthetic(lr, hr.clone(), scale)
}
