//! The benchmark evaluation protocol: run a super-resolution model over a
//! manifest, crop predicted text lines at native aspect ratio, recognize,
//! and score with the five-metric suite.
//!
//! Two inference modes exist. In region mode the model consumes each full LR
//! region and predicted lines are cropped from its HR output using the
//! HR-space quads; image metrics compare those crops against ground-truth HR
//! line crops at native resolution. In line mode (the fixed-size protocol
//! that older text-SR models require) LR line crops are resized to the
//! model's fixed input and image metrics are computed against
//! correspondingly resized ground truth.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::edge::{canny, concat_edge_channel, CannyParams, EdgeMap};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Language, RegionPair, TextLineAnnotation};
use crate::metrics::{
    aggregate_lines, lpips, ned, normalize_transcript, psnr, ssim, LineScore, MetricReport,
    PerceptualBackend,
};
use crate::raster::{pad_reflect, resize_bicubic, resize_bilinear, RasterImage};
use crate::trainer::ToyModel;

/// Whether a model consumes whole LR regions or fixed-size text-line crops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    Region,
    Line,
}

/// Output of one super-resolution call.
#[derive(Debug, Clone)]
pub struct SrOutput {
    pub image: RasterImage,
    /// Optional edge prediction (thresholded at 0.5), for inspection only;
    /// the protocol never feeds it into metrics.
    pub edge: Option<EdgeMap>,
}

/// A super-resolution model adapter.
pub trait SrModel: Send + Sync {
    fn name(&self) -> &str;
    fn mode(&self) -> InferenceMode;
    fn scale(&self) -> u32;

    /// Detector parameters when the model wants the 4-channel edge-augmented
    /// input; the harness computes and concatenates the LR edge map.
    fn edge_params(&self) -> Option<CannyParams> {
        None
    }

    /// Whether concurrent `run` calls are allowed. Unsafe adapters are
    /// serialized behind the worker queue.
    fn concurrency_safe(&self) -> bool {
        true
    }

    /// Maps an LR image (3-channel, or 4-channel when [`Self::edge_params`]
    /// returns parameters) to an HR estimate with values in `[0, 1]` and
    /// spatial size `scale` times the input.
    fn run(&self, input: &RasterImage) -> Result<SrOutput>;
}

/// A text recognizer adapter. Must be deterministic and total: on a valid
/// image it returns a transcript, possibly empty.
pub trait Recognizer: Send + Sync {
    fn name(&self) -> &str;

    fn languages(&self) -> Vec<Language> {
        vec![Language::Zh, Language::En, Language::Mixed]
    }

    fn concurrency_safe(&self) -> bool {
        true
    }

    fn recognize(&self, line: &RasterImage) -> String;
}

/// Which metrics to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricToggles {
    pub psnr: bool,
    pub ssim: bool,
    pub lpips: bool,
    pub recognition: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            psnr: true,
            ssim: true,
            lpips: true,
            recognition: true,
        }
    }
}

/// Cropping strategy for text lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropMode {
    /// Bounding-rectangle subimage.
    AxisAligned,
    /// Perspective warp to a rectangle sized by the quad's mean edge
    /// lengths, preserving the native aspect ratio.
    #[default]
    Rectified,
}

/// Protocol configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub mode: InferenceMode,
    /// Recognizer input height; widths scale proportionally.
    pub line_target_height: usize,
    /// Fixed (height, width) of the model input in line mode.
    pub line_input: (usize, usize),
    pub crop: CropMode,
    pub metrics: MetricToggles,
    /// Worker pool size; 1 runs serially. Ignored for adapters that are not
    /// concurrency-safe.
    pub jobs: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            mode: InferenceMode::Region,
            line_target_height: 32,
            line_input: (32, 128),
            crop: CropMode::default(),
            metrics: MetricToggles::default(),
            jobs: 1,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.line_target_height == 0 {
            return Err(Error::InvalidInput(
                "line_target_height must be positive".to_string(),
            ));
        }
        if self.line_input.0 == 0 || self.line_input.1 == 0 {
            return Err(Error::InvalidInput("line_input must be positive".to_string()));
        }
        Ok(())
    }
}

/// Evaluation result: the metric report plus per-entry failures that were
/// skipped (at most 10% of the manifest, or the run aborts).
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub skipped: Vec<(String, String)>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn quad_is_degenerate(quad: &[[f64; 2]; 4]) -> bool {
    let area = crate::manifest::polygon_area(quad).abs();
    if area < 4.0 {
        return true;
    }
    // Any three collinear corners make the perspective map singular.
    for i in 0..4 {
        let (a, b, c) = (quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4]);
        if cross(a, b, c).abs() < 1e-9 * area.max(1.0) {
            return true;
        }
    }
    false
}

/// Solves an 8x8 linear system by Gaussian elimination with partial
/// pivoting. Small and local; the only linear solve the toolkit needs.
fn solve8(mut a: [[f64; 9]; 8]) -> Option<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .expect("finite pivots")
        })?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut x = [0.0; 8];
    for i in 0..8 {
        x[i] = a[i][8] / a[i][i];
    }
    Some(x)
}

/// Homography mapping source points to destination points (4 pairs).
fn homography(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Option<[f64; 9]> {
    let mut sys = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let [x, y] = src[i];
        let [u, v] = dst[i];
        sys[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        sys[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    let h = solve8(sys)?;
    Some([h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0])
}

fn apply_homography(h: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let w = h[6] * x + h[7] * y + h[8];
    ((h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w)
}

/// Crops one annotated text line out of an image.
///
/// Quad coordinates are corner-based: pixel `(i, j)` occupies the unit
/// square at `(j, i)`. Axis-aligned mode returns the bounding-rectangle
/// subimage (pixel-identical to a slice for integer rectangles). Rectified
/// mode warps the quad to a rectangle of width = mean of the top/bottom edge
/// lengths and height = mean of the left/right edge lengths.
pub fn crop_text_line(
    img: &RasterImage,
    quad: &[[f64; 2]; 4],
    mode: CropMode,
) -> Result<RasterImage> {
    if quad_is_degenerate(quad) {
        return Err(Error::DegenerateQuad(format!("{quad:?}")));
    }
    match mode {
        CropMode::AxisAligned => {
            let xs = quad.iter().map(|p| p[0]);
            let ys = quad.iter().map(|p| p[1]);
            let x0 = xs.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let y0 = ys.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let x1 = (xs.fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(img.width());
            let y1 = (ys.fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(img.height());
            if x1 <= x0 || y1 <= y0 {
                return Err(Error::DegenerateQuad("empty bounding rectangle".to_string()));
            }
            img.crop(y0, x0, y1 - y0, x1 - x0)
        }
        CropMode::Rectified => {
            let edge_len =
                |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            let width = ((edge_len(quad[0], quad[1]) + edge_len(quad[3], quad[2])) / 2.0)
                .round()
                .max(1.0) as usize;
            let height = ((edge_len(quad[0], quad[3]) + edge_len(quad[1], quad[2])) / 2.0)
                .round()
                .max(1.0) as usize;
            let rect = [
                [0.0, 0.0],
                [width as f64, 0.0],
                [width as f64, height as f64],
                [0.0, height as f64],
            ];
            let h = homography(&rect, quad)
                .ok_or_else(|| Error::DegenerateQuad("singular perspective map".to_string()))?;
            let planes: Vec<ndarray::Array2<f64>> =
                (0..img.channels()).map(|c| img.plane(c)).collect();
            RasterImage::from_fn(height, width, img.channels(), |y, x, c| {
                let (sx, sy) = apply_homography(&h, x as f64 + 0.5, y as f64 + 0.5);
                crate::raster::bilinear(&planes[c], sx - 0.5, sy - 0.5).clamp(0.0, 1.0) as f32
            })
        }
    }
}

/// Resizes a line crop to the recognizer's input height, preserving the
/// aspect ratio (bilinear).
pub fn resize_for_recognition(line: &RasterImage, target_height: usize) -> Result<RasterImage> {
    let w = ((line.width() as f64) * target_height as f64 / line.height() as f64)
        .round()
        .max(1.0) as usize;
    resize_bilinear(line, target_height, w)
}

struct EntryOutcome {
    lines: Vec<LineScore>,
}

fn model_input(lr: &RasterImage, model: &dyn SrModel) -> Result<RasterImage> {
    match model.edge_params() {
        Some(params) => {
            let edges = canny(lr, &params)?;
            concat_edge_channel(lr, &edges)
        }
        None => Ok(lr.clone()),
    }
}

fn score_line(
    id: String,
    line: &TextLineAnnotation,
    pred_crop: &RasterImage,
    gt_crop: &RasterImage,
    recognizer: &dyn Recognizer,
    backend: &dyn PerceptualBackend,
    cfg: &ProtocolConfig,
) -> Result<LineScore> {
    let psnr_db = cfg.metrics.psnr.then(|| psnr(pred_crop, gt_crop)).transpose()?;
    let ssim_v = cfg.metrics.ssim.then(|| ssim(pred_crop, gt_crop)).transpose()?;
    let lpips_v = cfg
        .metrics
        .lpips
        .then(|| {
            let (mh, mw) = backend.min_input_size();
            let a = pad_reflect(pred_crop, mh, mw);
            let b = pad_reflect(gt_crop, mh, mw);
            lpips(&a, &b, backend)
        })
        .transpose()?;

    let (prediction, exact_match, ned_v) = if cfg.metrics.recognition && !line.is_illegible() {
        let input = resize_for_recognition(pred_crop, cfg.line_target_height)?;
        let raw = recognizer.recognize(&input);
        let pred_norm = normalize_transcript(&raw);
        let gt_norm = normalize_transcript(&line.transcript);
        let equal = pred_norm == gt_norm;
        let n = ned(&pred_norm, &gt_norm);
        (Some(raw), Some(equal), Some(n))
    } else {
        (None, None, None)
    };

    Ok(LineScore {
        id,
        language: line.language,
        psnr_db,
        ssim: ssim_v,
        lpips: lpips_v,
        prediction,
        exact_match,
        ned: ned_v,
    })
}

fn evaluate_entry_region(
    entry_id: &str,
    pair: &RegionPair,
    lines: &[TextLineAnnotation],
    model: &dyn SrModel,
    recognizer: &dyn Recognizer,
    backend: &dyn PerceptualBackend,
    cfg: &ProtocolConfig,
) -> Result<EntryOutcome> {
    let input = model_input(&pair.lr, model)?;
    let out = model.run(&input)?;
    let s = model.scale() as usize;
    let expected = (pair.lr.height() * s, pair.lr.width() * s);
    if (out.image.height(), out.image.width()) != expected {
        return Err(Error::Adapter(format!(
            "model {} returned {}x{}, expected {}x{}",
            model.name(),
            out.image.height(),
            out.image.width(),
            expected.0,
            expected.1
        )));
    }
    let mut scores = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let pred_crop = crop_text_line(&out.image, &line.quad, cfg.crop)?;
        let gt_crop = crop_text_line(&pair.hr, &line.quad, cfg.crop)?;
        // The prediction spans exactly scale*LR pixels while the ground
        // truth may carry the +-1 registration slack; trim to the common
        // extent so shapes agree.
        let (pred_crop, gt_crop) = harmonize(pred_crop, gt_crop)?;
        scores.push(score_line(
            format!("{entry_id}:{i}"),
            line,
            &pred_crop,
            &gt_crop,
            recognizer,
            backend,
            cfg,
        )?);
    }
    Ok(EntryOutcome { lines: scores })
}

/// Trims both crops to their common extent (differs by at most one pixel).
fn harmonize(a: RasterImage, b: RasterImage) -> Result<(RasterImage, RasterImage)> {
    if (a.height(), a.width()) == (b.height(), b.width()) {
        return Ok((a, b));
    }
    let h = a.height().min(b.height());
    let w = a.width().min(b.width());
    Ok((a.crop(0, 0, h, w)?, b.crop(0, 0, h, w)?))
}

fn evaluate_entry_line(
    entry_id: &str,
    pair: &RegionPair,
    lines: &[TextLineAnnotation],
    model: &dyn SrModel,
    recognizer: &dyn Recognizer,
    backend: &dyn PerceptualBackend,
    cfg: &ProtocolConfig,
) -> Result<EntryOutcome> {
    let s = model.scale() as usize;
    let (in_h, in_w) = cfg.line_input;
    let mut scores = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let lr_quad = line.lr_quad(pair.scale);
        let lr_crop = crop_text_line(&pair.lr, &lr_quad, cfg.crop)?;
        let lr_fixed = resize_bilinear(&lr_crop, in_h, in_w)?;
        let input = model_input(&lr_fixed, model)?;
        let out = model.run(&input)?;
        if (out.image.height(), out.image.width()) != (in_h * s, in_w * s) {
            return Err(Error::Adapter(format!(
                "model {} returned {}x{}, expected {}x{}",
                model.name(),
                out.image.height(),
                out.image.width(),
                in_h * s,
                in_w * s
            )));
        }
        let gt_crop = crop_text_line(&pair.hr, &line.quad, cfg.crop)?;
        let gt_fixed = resize_bilinear(&gt_crop, in_h * s, in_w * s)?;
        scores.push(score_line(
            format!("{entry_id}:{i}"),
            line,
            &out.image,
            &gt_fixed,
            recognizer,
            backend,
            cfg,
        )?);
    }
    Ok(EntryOutcome { lines: scores })
}

/// Runs the evaluation protocol over a manifest.
///
/// Per-entry adapter failures are recorded and skipped; if more than 10% of
/// entries fail the whole run aborts with [`Error::TooManyFailures`].
/// Aggregation is a deterministic order-independent reduction.
pub fn evaluate(
    manifest: &DatasetManifest,
    model: &dyn SrModel,
    recognizer: &dyn Recognizer,
    backend: &dyn PerceptualBackend,
    cfg: &ProtocolConfig,
) -> Result<Evaluation> {
    cfg.validate()?;
    if model.mode() != cfg.mode {
        return Err(Error::InvalidInput(format!(
            "model {} runs in {:?} mode but the protocol requested {:?}",
            model.name(),
            model.mode(),
            cfg.mode
        )));
    }
    for entry in &manifest.entries {
        if entry.scale != model.scale() {
            return Err(Error::InvalidInput(format!(
                "entry {} has scale {}, model {} expects {}",
                entry.id,
                entry.scale,
                model.name(),
                model.scale()
            )));
        }
    }

    let run_entry = |entry: &crate::manifest::ManifestEntry| -> Result<EntryOutcome> {
        let pair = entry.load_pair(manifest.root())?;
        match cfg.mode {
            InferenceMode::Region => evaluate_entry_region(
                &entry.id, &pair, &entry.lines, model, recognizer, backend, cfg,
            ),
            InferenceMode::Line => evaluate_entry_line(
                &entry.id, &pair, &entry.lines, model, recognizer, backend, cfg,
            ),
        }
    };

    let parallel = cfg.jobs > 1 && model.concurrency_safe() && recognizer.concurrency_safe();
    let outcomes: Vec<(usize, Result<EntryOutcome>)> = if parallel {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            manifest
                .entries
                .par_iter()
                .enumerate()
                .map(|(i, e)| (i, run_entry(e)))
                .collect()
        })
    } else {
        manifest
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, run_entry(e)))
            .collect()
    };

    let mut per_line = Vec::new();
    let mut skipped = Vec::new();
    for (i, outcome) in outcomes {
        match outcome {
            Ok(entry) => per_line.extend(entry.lines),
            Err(e) => skipped.push((manifest.entries[i].id.clone(), e.to_string())),
        }
    }
    let total = manifest.entries.len();
    if total > 0 && skipped.len() * 10 > total {
        return Err(Error::TooManyFailures {
            failed: skipped.len(),
            total,
        });
    }
    Ok(Evaluation {
        report: MetricReport::from_lines(per_line),
        skipped,
    })
}

/// Splits a report by language tag and recomputes aggregates per partition.
/// Languages with no lines are absent from the result.
pub fn aggregate_by_language(report: &MetricReport) -> BTreeMap<Language, MetricReport> {
    let mut buckets: BTreeMap<Language, Vec<LineScore>> = BTreeMap::new();
    for line in &report.per_line {
        buckets.entry(line.language).or_default().push(line.clone());
    }
    buckets
        .into_iter()
        .map(|(lang, lines)| (lang, MetricReport::from_lines(lines)))
        .collect()
}

/// Checks that a report's aggregate block matches its own rows.
pub fn verify_aggregate(report: &MetricReport) -> bool {
    aggregate_lines(&report.per_line) == report.aggregate
}

// ---------------------------------------------------------------------------
// Built-in adapters
// ---------------------------------------------------------------------------

/// Bicubic upsampling baseline; needs no trained artifacts.
pub struct BicubicModel {
    scale: u32,
    mode: InferenceMode,
}

impl BicubicModel {
    pub fn new(scale: u32, mode: InferenceMode) -> Self {
        Self { scale, mode }
    }
}

impl SrModel for BicubicModel {
    fn name(&self) -> &str {
        "bicubic"
    }

    fn mode(&self) -> InferenceMode {
        self.mode
    }

    fn scale(&self) -> u32 {
        self.scale
    }

    fn run(&self, input: &RasterImage) -> Result<SrOutput> {
        let s = self.scale as usize;
        let image = resize_bicubic(input, input.height() * s, input.width() * s)?;
        Ok(SrOutput { image, edge: None })
    }
}

/// Constant-gray predictor; the sanity floor for adapter wiring.
pub struct ConstantModel {
    scale: u32,
    value: f32,
}

impl ConstantModel {
    pub fn new(scale: u32, value: f32) -> Self {
        Self { scale, value }
    }
}

impl SrModel for ConstantModel {
    fn name(&self) -> &str {
        "constant"
    }

    fn mode(&self) -> InferenceMode {
        InferenceMode::Region
    }

    fn scale(&self) -> u32 {
        self.scale
    }

    fn run(&self, input: &RasterImage) -> Result<SrOutput> {
        let s = self.scale as usize;
        Ok(SrOutput {
            image: RasterImage::constant(input.height() * s, input.width() * s, 3, self.value),
            edge: None,
        })
    }
}

/// Returns the ground-truth HR image for each LR region of a manifest,
/// keyed by image content. Measures the recognizer ceiling and exercises
/// protocol self-consistency.
pub struct GroundTruthModel {
    scale: u32,
    by_key: HashMap<u64, PathBuf>,
}

impl GroundTruthModel {
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let mut by_key = HashMap::new();
        let mut scale = None;
        for entry in &manifest.entries {
            let pair = entry.load_pair(manifest.root())?;
            by_key.insert(pair.lr.content_key(), manifest.root().join(&entry.hr));
            scale.get_or_insert(entry.scale);
        }
        Ok(Self {
            scale: scale.unwrap_or(2),
            by_key,
        })
    }
}

impl SrModel for GroundTruthModel {
    fn name(&self) -> &str {
        "ground-truth"
    }

    fn mode(&self) -> InferenceMode {
        InferenceMode::Region
    }

    fn scale(&self) -> u32 {
        self.scale
    }

    fn run(&self, input: &RasterImage) -> Result<SrOutput> {
        let path = self.by_key.get(&input.content_key()).ok_or_else(|| {
            Error::Adapter("ground-truth model has no HR image for this input".to_string())
        })?;
        let mut image = RasterImage::load_png(path)?;
        // Trim the +-1 slack so the output obeys the adapter size contract.
        let s = self.scale as usize;
        let (want_h, want_w) = (input.height() * s, input.width() * s);
        if (image.height(), image.width()) != (want_h, want_w) {
            image = image.crop(0, 0, want_h.min(image.height()), want_w.min(image.width()))?;
        }
        Ok(SrOutput { image, edge: None })
    }
}

/// Serves precomputed prediction images from a directory, `<entry id>.png`,
/// keyed by LR content. Backs the `score` command.
pub struct PredictionDirModel {
    scale: u32,
    mode: InferenceMode,
    by_key: HashMap<u64, PathBuf>,
}

impl PredictionDirModel {
    pub fn from_manifest(manifest: &DatasetManifest, pred_dir: &Path) -> Result<Self> {
        let mut by_key = HashMap::new();
        let mut scale = None;
        for entry in &manifest.entries {
            let pair = entry.load_pair(manifest.root())?;
            let pred = pred_dir.join(format!("{}.png", entry.id));
            if !pred.is_file() {
                return Err(Error::InvalidInput(format!(
                    "missing prediction image {}",
                    pred.display()
                )));
            }
            by_key.insert(pair.lr.content_key(), pred);
            scale.get_or_insert(entry.scale);
        }
        Ok(Self {
            scale: scale.unwrap_or(2),
            mode: InferenceMode::Region,
            by_key,
        })
    }
}

impl SrModel for PredictionDirModel {
    fn name(&self) -> &str {
        "prediction-dir"
    }

    fn mode(&self) -> InferenceMode {
        self.mode
    }

    fn scale(&self) -> u32 {
        self.scale
    }

    fn run(&self, input: &RasterImage) -> Result<SrOutput> {
        let path = self
            .by_key
            .get(&input.content_key())
            .ok_or_else(|| Error::Adapter("no prediction image for this input".to_string()))?;
        let image = RasterImage::load_png(path)?;
        let s = self.scale as usize;
        if (image.height(), image.width()) != (input.height() * s, input.width() * s) {
            return Err(Error::Adapter(format!(
                "prediction {} has size {}x{}, expected {}x{}",
                path.display(),
                image.height(),
                image.width(),
                input.height() * s,
                input.width() * s
            )));
        }
        Ok(SrOutput { image, edge: None })
    }
}

/// Adapter around a trained (or freshly built) toy model.
pub struct ToyModelAdapter {
    model: ToyModel,
    mode: InferenceMode,
}

impl ToyModelAdapter {
    pub fn new(model: ToyModel, mode: InferenceMode) -> Self {
        Self { model, mode }
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }
}

impl SrModel for ToyModelAdapter {
    fn name(&self) -> &str {
        "toy"
    }

    fn mode(&self) -> InferenceMode {
        self.mode
    }

    fn scale(&self) -> u32 {
        self.model.config().scale
    }

    fn edge_params(&self) -> Option<CannyParams> {
        self.model
            .config()
            .use_edge_input
            .then(|| self.model.config().canny)
    }

    fn run(&self, input: &RasterImage) -> Result<SrOutput> {
        let (image, edge) = self.model.infer(input)?;
        let edge = edge.map(|e| {
            let (h, w) = (e.height(), e.width());
            EdgeMap::from_array(ndarray::Array2::from_shape_fn((h, w), |(y, x)| {
                u8::from(e.get(y, x, 0) >= 0.5)
            }))
            .expect("binary by construction")
        });
        Ok(SrOutput { image, edge })
    }
}

/// Recognizer that reads nothing: always the empty string.
pub struct NullRecognizer;

impl Recognizer for NullRecognizer {
    fn name(&self) -> &str {
        "null"
    }

    fn recognize(&self, _line: &RasterImage) -> String {
        String::new()
    }
}

/// Deterministic stand-in recognizer: emits a pseudo-transcript derived from
/// the image content. Identical crops produce identical transcripts, which
/// is exactly what protocol self-consistency checks need. Not a real OCR.
pub struct StubRecognizer;

impl Recognizer for StubRecognizer {
    fn name(&self) -> &str {
        "stub"
    }

    fn recognize(&self, line: &RasterImage) -> String {
        format!("{:08x}", line.content_key() & 0xffff_ffff)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ConvPerceptualBackend;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth(seed: u64, h: usize, w: usize) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coarse = RasterImage::from_array(Array3::from_shape_fn(
            ((h / 6).max(2), (w / 6).max(2), 3),
            |_| rng.random_range(0.0..1.0f32),
        ))
        .unwrap();
        resize_bicubic(&coarse, h, w).unwrap()
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> [[f64; 2]; 4] {
        [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    #[test]
    fn axis_aligned_crop_is_pixel_identical_to_slice() {
        let img = smooth(1, 64, 64);
        let crop =
            crop_text_line(&img, &rect(10.0, 10.0, 50.0, 30.0), CropMode::AxisAligned).unwrap();
        assert_eq!((crop.height(), crop.width()), (20, 40));
        let slice = img.crop(10, 10, 20, 40).unwrap();
        assert_eq!(crop, slice);
    }

    #[test]
    fn rectified_crop_of_axis_aligned_rect_matches_slice() {
        let img = smooth(2, 64, 64);
        let crop =
            crop_text_line(&img, &rect(10.0, 10.0, 50.0, 30.0), CropMode::Rectified).unwrap();
        let slice = img.crop(10, 10, 20, 40).unwrap();
        assert_eq!((crop.height(), crop.width()), (20, 40));
        let p = psnr(&crop, &slice).unwrap();
        assert!(p > 50.0, "rectified crop should match the slice, psnr {p}");
    }

    #[test]
    fn rectified_crop_undoes_rotation() {
        // Paste a patch rotated by 90 degrees, then crop with the rotated quad.
        let patch = smooth(3, 20, 40);
        let mut canvas = RasterImage::constant(80, 80, 3, 0.5).into_array();
        // Rotate 90 deg clockwise: (y, x) -> (x, 19 - y); the 20x40 patch
        // occupies rows 10..50, cols 30..50 of the canvas.
        for y in 0..20 {
            for x in 0..40 {
                for c in 0..3 {
                    canvas[(10 + x, 30 + (19 - y), c)] = patch.get(y, x, c);
                }
            }
        }
        let canvas = RasterImage::from_array(canvas).unwrap();
        // Patch corners in canvas coordinates, clockwise from the patch's
        // top-left: (0,0)->(50,10), (40,0)->(50,50), (40,20)->(30,50),
        // (0,20)->(30,10).
        let quad = [[50.0, 10.0], [50.0, 50.0], [30.0, 50.0], [30.0, 10.0]];
        let crop = crop_text_line(&canvas, &quad, CropMode::Rectified).unwrap();
        assert_eq!((crop.height(), crop.width()), (20, 40));
        let p = psnr(&crop, &patch).unwrap();
        assert!(p > 40.0, "rotated patch should rectify back, psnr {p}");
    }

    #[test]
    fn collinear_quad_is_degenerate() {
        let img = smooth(4, 32, 32);
        let quad = [[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [10.0, 10.0]];
        let err = crop_text_line(&img, &quad, CropMode::Rectified).unwrap_err();
        assert!(matches!(err, Error::DegenerateQuad(_)), "{err}");
        let tiny = rect(0.0, 0.0, 1.0, 1.0);
        assert!(crop_text_line(&img, &tiny, CropMode::AxisAligned).is_err());
    }

    #[test]
    fn rectified_crop_preserves_aspect_ratio() {
        let img = smooth(5, 96, 96);
        // A slanted quad.
        let quad = [[12.0, 8.0], [70.0, 14.0], [68.0, 36.0], [10.0, 30.0]];
        let crop = crop_text_line(&img, &quad, CropMode::Rectified).unwrap();
        let top = ((70.0f64 - 12.0).powi(2) + (14.0f64 - 8.0).powi(2)).sqrt();
        let bottom = ((68.0f64 - 10.0).powi(2) + (36.0f64 - 30.0).powi(2)).sqrt();
        let left = ((10.0f64 - 12.0).powi(2) + (30.0f64 - 8.0).powi(2)).sqrt();
        let right = ((68.0f64 - 70.0).powi(2) + (36.0f64 - 14.0).powi(2)).sqrt();
        let want_w = (top + bottom) / 2.0;
        let want_h = (left + right) / 2.0;
        assert!((crop.width() as f64 - want_w).abs() <= 0.5 + 1e-9);
        assert!((crop.height() as f64 - want_h).abs() <= 0.5 + 1e-9);
    }

    #[test]
    fn recognition_resize_preserves_ratio() {
        let line = smooth(6, 20, 60);
        let resized = resize_for_recognition(&line, 32).unwrap();
        assert_eq!(resized.height(), 32);
        assert_eq!(resized.width(), 96);
    }

    #[test]
    fn aggregate_by_language_partitions_rows() {
        let mk = |id: &str, lang: Language, psnr: f64| LineScore {
            id: id.into(),
            language: lang,
            psnr_db: Some(psnr),
            ssim: Some(0.5),
            lpips: Some(0.2),
            prediction: Some("p".into()),
            exact_match: Some(true),
            ned: Some(1.0),
        };
        let report = MetricReport::from_lines(vec![
            mk("a:0", Language::Zh, 20.0),
            mk("a:1", Language::Zh, 30.0),
            mk("b:0", Language::En, 10.0),
        ]);
        let parts = aggregate_by_language(&report);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[&Language::Zh].aggregate.psnr_db, Some(25.0));
        assert_eq!(parts[&Language::En].aggregate.psnr_db, Some(10.0));
        assert!(!parts.contains_key(&Language::Mixed));
        // Single-language report: the partition equals the input aggregate.
        let zh_only = MetricReport::from_lines(vec![mk("a:0", Language::Zh, 20.0)]);
        let p = aggregate_by_language(&zh_only);
        assert_eq!(p[&Language::Zh].aggregate, zh_only.aggregate);
    }

    #[test]
    fn stub_recognizer_is_deterministic_and_content_sensitive() {
        let a = smooth(7, 16, 48);
        let b = smooth(8, 16, 48);
        let r = StubRecognizer;
        assert_eq!(r.recognize(&a), r.recognize(&a));
        assert_ne!(r.recognize(&a), r.recognize(&b));
        assert_eq!(NullRecognizer.recognize(&a), "");
    }

    #[test]
    fn bicubic_model_obeys_size_contract() {
        let lr = smooth(9, 24, 30);
        let out = BicubicModel::new(2, InferenceMode::Region).run(&lr).unwrap();
        assert_eq!((out.image.height(), out.image.width()), (48, 60));
        let b = ConvPerceptualBackend::seeded(0);
        let zero = lpips(&out.image, &out.image, &b).unwrap();
        assert_eq!(zero, 0.0);
    }
}
