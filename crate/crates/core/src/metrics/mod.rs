//! The five benchmark metrics: PSNR, SSIM, LPIPS, word accuracy and
//! normalized edit distance, plus the per-line report structure.

mod lpips;
mod text;

pub use lpips::{lpips, ConvPerceptualBackend, IdentityBackend, PerceptualBackend};
pub use text::{edit_distance, ned, normalize_transcript, word_accuracy};

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Language;
use crate::raster::RasterImage;

/// Peak signal-to-noise ratio in dB for images on `[0, 1]` (peak = 1).
///
/// MSE is taken per pixel per channel. Identical images return
/// `f64::INFINITY`, the sentinel for a zero-error reconstruction; it
/// serializes as the string `"inf"` in reports.
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    if a.data().dim() != b.data().dim() {
        return Err(Error::shape(
            "psnr",
            format!("{:?}", a.data().dim()),
            format!("{:?}", b.data().dim()),
        ));
    }
    let mut acc = 0.0_f64;
    for (&va, &vb) in a.data().iter().zip(b.data().iter()) {
        let d = f64::from(va) - f64::from(vb);
        acc += d * d;
    }
    let mse = acc / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01; // (k1 * peak)^2
const SSIM_C2: f64 = 0.03 * 0.03;

/// Structural similarity over an 11x11 Gaussian window (sigma 1.5),
/// constants C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2, averaged over the
/// valid region. RGB input is converted to luminance first.
pub fn ssim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    if a.data().dim() != b.data().dim() {
        return Err(Error::shape(
            "ssim",
            format!("{:?}", a.data().dim()),
            format!("{:?}", b.data().dim()),
        ));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim requires images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let pa = a.luminance();
    let pb = b.luminance();
    let window = gaussian_window();
    let half = SSIM_WINDOW / 2;

    let mut sum = 0.0;
    let mut count = 0usize;
    for y in half..h - half {
        for x in half..w - half {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let wgt = window[(ky, kx)];
                    let va = pa[(y + ky - half, x + kx - half)];
                    let vb = pb[(y + ky - half, x + kx - half)];
                    mu_a += wgt * va;
                    mu_b += wgt * vb;
                    aa += wgt * va * va;
                    bb += wgt * vb * vb;
                    ab += wgt * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
            sum += num / den;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

fn gaussian_window() -> Array2<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = Array2::from_shape_fn((SSIM_WINDOW, SSIM_WINDOW), |(y, x)| {
        let dy = y as f64 - half;
        let dx = x as f64 - half;
        (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let sum = w.sum();
    w.mapv_inplace(|v| v / sum);
    w
}

/// Serializes a PSNR value, mapping the zero-error infinity sentinel to the
/// JSON string `"inf"` (JSON has no infinity literal).
mod opt_psnr_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
        None,
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, ser: S) -> Result<S::Ok, S::Error> {
        match v {
            None => Repr::None.serialize(ser),
            Some(x) if x.is_finite() => Repr::Num(*x).serialize(ser),
            Some(_) => Repr::Text("inf".to_string()).serialize(ser),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(de)? {
            Repr::Num(v) => Ok(Some(v)),
            Repr::Text(s) if s == "inf" => Ok(Some(f64::INFINITY)),
            Repr::Text(s) => Err(serde::de::Error::custom(format!(
                "expected a number, \"inf\" or null, got {s:?}"
            ))),
            Repr::None => Ok(None),
        }
    }
}

/// Scores for one cropped text line. Image-metric fields are `None` when the
/// corresponding metric was toggled off for the run; recognition fields are
/// `None` when the line was excluded (illegible ground truth) or recognition
/// was disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineScore {
    /// Stable identifier, `<entry id>:<line index>`.
    pub id: String,
    pub language: Language,
    #[serde(with = "opt_psnr_serde", default)]
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub lpips: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ned: Option<f64>,
}

/// Arithmetic means over per-line scores. Image metrics average over all
/// lines; ACC and NED average over the recognition-scored subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    pub lines: usize,
    /// Lines that entered ACC/NED (legible ground truth).
    pub scored_lines: usize,
    #[serde(with = "opt_psnr_serde")]
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub lpips: Option<f64>,
    pub acc: Option<f64>,
    pub ned: Option<f64>,
}

/// Per-line and aggregate results of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_line: Vec<LineScore>,
    pub aggregate: AggregateScores,
    pub language_counts: BTreeMap<Language, usize>,
}

impl MetricReport {
    /// Builds a report, computing the aggregate block and language counts
    /// from the rows.
    pub fn from_lines(per_line: Vec<LineScore>) -> Self {
        let aggregate = aggregate_lines(&per_line);
        let mut language_counts = BTreeMap::new();
        for line in &per_line {
            *language_counts.entry(line.language).or_insert(0) += 1;
        }
        Self {
            per_line,
            aggregate,
            language_counts,
        }
    }
}

/// Recomputes the aggregate block from per-line rows. Means are taken over
/// the rows where the metric is present.
pub fn aggregate_lines(lines: &[LineScore]) -> AggregateScores {
    let mean = |f: &dyn Fn(&LineScore) -> Option<f64>| -> Option<f64> {
        let values: Vec<f64> = lines.iter().filter_map(|l| f(l)).collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    let scored: Vec<&LineScore> = lines.iter().filter(|l| l.exact_match.is_some()).collect();
    let acc = if scored.is_empty() {
        None
    } else {
        Some(
            scored.iter().filter(|l| l.exact_match == Some(true)).count() as f64
                / scored.len() as f64,
        )
    };
    let ned = if scored.is_empty() {
        None
    } else {
        Some(scored.iter().filter_map(|l| l.ned).sum::<f64>() / scored.len() as f64)
    };
    AggregateScores {
        lines: lines.len(),
        scored_lines: scored.len(),
        psnr_db: mean(&|l| l.psnr_db),
        ssim: mean(&|l| l.ssim),
        lpips: mean(&|l| l.lpips),
        acc,
        ned,
    }
}
