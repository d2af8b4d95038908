//! On-disk dataset manifest: paired text-region images with line-level
//! annotations.
//!
//! A manifest is a line-delimited JSON file. The first record is a header
//! carrying the schema marker, split and dataset version tag; every following
//! line is one region entry. The format is streamable and diff-friendly; see
//! `docs/manifest-format.md` for the field-by-field description.
//!
//! Conventions baked into the schema:
//! - line quadrilaterals are stored in HR pixel coordinates only; LR-space
//!   boxes are derived by dividing by the scale factor and rounding half away
//!   from zero;
//! - the transcript `"###"` marks an illegible line, which recognition
//!   metrics skip;
//! - image payloads are 8-bit PNG referenced by path relative to the
//!   manifest file.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Transcript marker for lines that cannot be read by a human annotator.
pub const ILLEGIBLE_MARKER: &str = "###";

const FORMAT_MARKER: &str = "stisr-manifest";
const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
    Mixed,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Language::Zh => write!(f, "zh"),
            Language::En => write!(f, "en"),
            Language::Mixed => write!(f, "mixed"),
        }
    }
}

/// Photometric + geometric alignment estimated for a pair.
///
/// `affine` maps HR pixel coordinates into the upsampled-LR frame; `gain` and
/// `bias` describe the forward photometric degradation `lr ~ gain * hr + bias`
/// per channel. `residual` is the final mean absolute photometric error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationTransform {
    pub affine: [[f64; 3]; 2],
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub residual: f64,
}

impl RegistrationTransform {
    pub fn identity(channels: usize) -> Self {
        Self {
            affine: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            gain: vec![1.0; channels],
            bias: vec![0.0; channels],
            residual: 0.0,
        }
    }

    /// Determinant of the linear 2x2 part.
    pub fn linear_det(&self) -> f64 {
        self.affine[0][0] * self.affine[1][1] - self.affine[0][1] * self.affine[1][0]
    }

    fn validate(&self, entry: Option<usize>) -> Result<()> {
        if self.linear_det().abs() < 1e-12 {
            return Err(Error::schema(
                entry,
                "registration.affine",
                "linear part is singular",
            ));
        }
        if self.residual < 0.0 || !self.residual.is_finite() {
            return Err(Error::schema(
                entry,
                "registration.residual",
                "must be finite and nonnegative",
            ));
        }
        if self.gain.len() != self.bias.len() || self.gain.is_empty() {
            return Err(Error::schema(
                entry,
                "registration.gain",
                "gain/bias must be nonempty and equal length",
            ));
        }
        Ok(())
    }
}

/// One annotated text line: quadrilateral box (clockwise from top-left, HR
/// pixel coordinates), transcript and language tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextLineAnnotation {
    pub quad: [[f64; 2]; 4],
    pub transcript: String,
    pub language: Language,
    /// Optional per-line LR crop payload, for layouts that distribute
    /// line-level pairs alongside region pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_crop: Option<String>,
}

impl TextLineAnnotation {
    pub fn is_illegible(&self) -> bool {
        self.transcript == ILLEGIBLE_MARKER
    }

    /// Axis-aligned bounding box as (min_x, min_y, max_x, max_y).
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let xs = self.quad.iter().map(|p| p[0]);
        let ys = self.quad.iter().map(|p| p[1]);
        (
            xs.clone().fold(f64::INFINITY, f64::min),
            ys.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Quad scaled into LR coordinates, rounding half away from zero.
    pub fn lr_quad(&self, scale: u32) -> [[f64; 2]; 4] {
        let s = f64::from(scale);
        self.quad
            .map(|[x, y]| [round_half_away(x / s), round_half_away(y / s)])
    }

    fn validate(&self, entry: usize, index: usize, hr_w: u32, hr_h: u32) -> Result<()> {
        let field = format!("lines[{index}].quad");
        let area = polygon_area(&self.quad);
        if area.abs() <= 0.0 {
            return Err(Error::schema(Some(entry), field, "polygon area must be positive"));
        }
        if self_intersects(&self.quad) {
            return Err(Error::schema(Some(entry), field, "polygon is self-intersecting"));
        }
        let (x0, y0, x1, y1) = self.bbox();
        if x0 < 0.0 || y0 < 0.0 || x1 > f64::from(hr_w) || y1 > f64::from(hr_h) {
            return Err(Error::schema(
                Some(entry),
                field,
                format!("quad exceeds HR image bounds {hr_w}x{hr_h}"),
            ));
        }
        if self.transcript.is_empty() {
            return Err(Error::schema(
                Some(entry),
                format!("lines[{index}].transcript"),
                "transcript must be non-empty (use \"###\" for illegible lines)",
            ));
        }
        Ok(())
    }
}

fn round_half_away(v: f64) -> f64 {
    // f64::round already rounds half away from zero.
    v.round()
}

/// Signed shoelace area (positive for clockwise order in image coordinates
/// with the y axis pointing down).
pub(crate) fn polygon_area(quad: &[[f64; 2]; 4]) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        let [x0, y0] = quad[i];
        let [x1, y1] = quad[(i + 1) % 4];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let d1 = orient(a, b, c);
    let d2 = orient(a, b, d);
    let d3 = orient(c, d, a);
    let d4 = orient(c, d, b);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn self_intersects(quad: &[[f64; 2]; 4]) -> bool {
    // For a quadrilateral only the two pairs of opposite edges can cross.
    segments_cross(quad[0], quad[1], quad[2], quad[3])
        || segments_cross(quad[1], quad[2], quad[3], quad[0])
}

/// One aligned LR/HR text-region pair with its annotations, referenced by
/// relative paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub lr: String,
    pub hr: String,
    pub scale: u32,
    pub lr_focal_mm: u32,
    pub hr_focal_mm: u32,
    pub hr_width: u32,
    pub hr_height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registration: Option<RegistrationTransform>,
    pub lines: Vec<TextLineAnnotation>,
}

/// Valid zoom configurations: (lr focal, hr focal, scale).
pub const FOCAL_MODES: [(u32, u32, u32); 3] = [(13, 26, 2), (26, 52, 2), (13, 52, 4)];

pub(crate) fn focal_mode_valid(lr_focal: u32, hr_focal: u32, scale: u32) -> bool {
    FOCAL_MODES.contains(&(lr_focal, hr_focal, scale))
}

/// Default focal pair for synthetic fixtures of a given scale.
pub fn default_focals(scale: u32) -> (u32, u32) {
    match scale {
        2 => (13, 26),
        _ => (13, 52),
    }
}

impl ManifestEntry {
    fn validate(&self, entry: usize) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::schema(Some(entry), "id", "must be non-empty"));
        }
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::schema(Some(entry), "scale", "scale must be 2 or 4"));
        }
        if !focal_mode_valid(self.lr_focal_mm, self.hr_focal_mm, self.scale) {
            return Err(Error::schema(
                Some(entry),
                "lr_focal_mm/hr_focal_mm",
                format!(
                    "focal pair ({}, {}) inconsistent with scale {} (valid: 13->26 at 2x, 26->52 at 2x, 13->52 at 4x)",
                    self.lr_focal_mm, self.hr_focal_mm, self.scale
                ),
            ));
        }
        if self.hr_width == 0 || self.hr_height == 0 {
            return Err(Error::schema(Some(entry), "hr_width/hr_height", "must be positive"));
        }
        if let Some(reg) = &self.registration {
            reg.validate(Some(entry))?;
        }
        for (i, line) in self.lines.iter().enumerate() {
            line.validate(entry, i, self.hr_width, self.hr_height)?;
        }
        Ok(())
    }

    /// Loads the referenced image pair and checks the size relation
    /// `hr = scale * lr ± 1` in both dimensions.
    pub fn load_pair(&self, root: &Path) -> Result<RegionPair> {
        let lr = RasterImage::load_png(root.join(&self.lr))?;
        let hr = RasterImage::load_png(root.join(&self.hr))?;
        RegionPair::new(
            lr,
            hr,
            self.scale,
            self.lr_focal_mm,
            self.hr_focal_mm,
            self.registration.clone(),
        )
    }
}

/// An aligned LR/HR image pair in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPair {
    pub lr: RasterImage,
    pub hr: RasterImage,
    pub scale: u32,
    pub lr_focal_mm: u32,
    pub hr_focal_mm: u32,
    pub registration: Option<RegistrationTransform>,
}

impl RegionPair {
    pub fn new(
        lr: RasterImage,
        hr: RasterImage,
        scale: u32,
        lr_focal_mm: u32,
        hr_focal_mm: u32,
        registration: Option<RegistrationTransform>,
    ) -> Result<Self> {
        if scale != 2 && scale != 4 {
            return Err(Error::InvalidInput("scale must be 2 or 4".to_string()));
        }
        if !focal_mode_valid(lr_focal_mm, hr_focal_mm, scale) {
            return Err(Error::InvalidInput(format!(
                "focal pair ({lr_focal_mm}, {hr_focal_mm}) inconsistent with scale {scale}"
            )));
        }
        let s = scale as i64;
        let dh = hr.height() as i64 - s * lr.height() as i64;
        let dw = hr.width() as i64 - s * lr.width() as i64;
        if dh.abs() > 1 || dw.abs() > 1 {
            return Err(Error::shape(
                "region pair",
                format!("hr within +-1 of {}x{}", s * lr.height() as i64, s * lr.width() as i64),
                format!("{}x{}", hr.height(), hr.width()),
            ));
        }
        Ok(Self {
            lr,
            hr,
            scale,
            lr_focal_mm,
            hr_focal_mm,
            registration,
        })
    }

    /// Builds a pair for synthetic fixtures with the conventional focal pair
    /// for `scale` and identity registration.
    pub fn synthetic(lr: RasterImage, hr: RasterImage, scale: u32) -> Result<Self> {
        let (lf, hf) = default_focals(scale);
        let channels = lr.channels();
        Self::new(
            lr,
            hr,
            scale,
            lf,
            hf,
            Some(RegistrationTransform::identity(channels)),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    schema: u32,
    version: String,
    split: Split,
}

/// A validated dataset manifest. Immutable after load; cheap to share.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub split: Split,
    /// Dataset version tag, free-form.
    pub version: String,
    pub entries: Vec<ManifestEntry>,
    root: PathBuf,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        // The resolution root is a load-time artifact, not manifest content.
        self.split == other.split && self.version == other.version && self.entries == other.entries
    }
}

impl DatasetManifest {
    pub fn new(split: Split, version: impl Into<String>, entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        Self {
            split,
            version: version.into(),
            entries,
            root: root.into(),
        }
    }

    /// Directory against which relative image paths resolve.
    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Schema-level validation (no file access).
    pub fn validate_schema(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, entry) in self.entries.iter().enumerate() {
            entry.validate(i)?;
            if !seen.insert(entry.id.clone()) {
                return Err(Error::schema(Some(i), "id", format!("duplicate id {:?}", entry.id)));
            }
        }
        Ok(())
    }

    /// Checks that every referenced image exists under `root`.
    pub fn validate_references(&self) -> Result<()> {
        for (i, entry) in self.entries.iter().enumerate() {
            for rel in std::iter::once(&entry.lr)
                .chain(std::iter::once(&entry.hr))
                .chain(entry.lines.iter().filter_map(|l| l.lr_crop.as_ref()))
            {
                let path = self.root.join(rel);
                if !path.is_file() {
                    return Err(Error::DanglingReference { entry: i, path });
                }
            }
        }
        Ok(())
    }
}

/// Loads and fully validates a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header_line = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::schema(None, "header", "empty manifest file")),
    };
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| Error::schema(None, "header", e.to_string()))?;
    if header.format != FORMAT_MARKER {
        return Err(Error::schema(
            None,
            "header.format",
            format!("expected {FORMAT_MARKER:?}, got {:?}", header.format),
        ));
    }
    if header.schema != SCHEMA_VERSION {
        return Err(Error::schema(
            None,
            "header.schema",
            format!("unsupported schema version {}", header.schema),
        ));
    }

    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::schema(Some(i), "entry", e.to_string()))?;
        entries.push(entry);
    }

    let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let manifest = DatasetManifest::new(header.split, header.version, entries, root);
    manifest.validate_schema()?;
    manifest.validate_references()?;
    Ok(manifest)
}

/// Writes a manifest with canonical field ordering, one entry per line.
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    manifest.validate_schema()?;
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        format: FORMAT_MARKER.to_string(),
        schema: SCHEMA_VERSION,
        version: manifest.version.clone(),
        split: manifest.split,
    };
    let mut write_line = |value: String| -> Result<()> {
        out.write_all(value.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    write_line(serde_json::to_string(&header).expect("header serializes"))?;
    for entry in &manifest.entries {
        write_line(serde_json::to_string(entry).expect("entry serializes"))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Aggregate counts mirroring the dataset statistics table: regions, lines,
/// per-language line counts, and extreme resolutions (width x height,
/// compared by area).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatisticsRecord {
    pub regions: usize,
    pub lines: usize,
    pub chinese_lines: usize,
    pub english_lines: usize,
    pub mixed_lines: usize,
    pub illegible_lines: usize,
    pub min_region_resolution: Option<(u32, u32)>,
    pub max_region_resolution: Option<(u32, u32)>,
    pub min_line_resolution: Option<(u32, u32)>,
    pub max_line_resolution: Option<(u32, u32)>,
}

impl StatisticsRecord {
    pub fn empty() -> Self {
        Self {
            regions: 0,
            lines: 0,
            chinese_lines: 0,
            english_lines: 0,
            mixed_lines: 0,
            illegible_lines: 0,
            min_region_resolution: None,
            max_region_resolution: None,
            min_line_resolution: None,
            max_line_resolution: None,
        }
    }

    /// Combines two records: counts add, extremes compare by pixel area.
    pub fn merge(&self, other: &Self) -> Self {
        let area = |r: (u32, u32)| u64::from(r.0) * u64::from(r.1);
        let pick = |a: Option<(u32, u32)>, b: Option<(u32, u32)>, smaller: bool| match (a, b) {
            (None, x) | (x, None) => x,
            (Some(a), Some(b)) => Some(if (area(a) < area(b)) == smaller { a } else { b }),
        };
        Self {
            regions: self.regions + other.regions,
            lines: self.lines + other.lines,
            chinese_lines: self.chinese_lines + other.chinese_lines,
            english_lines: self.english_lines + other.english_lines,
            mixed_lines: self.mixed_lines + other.mixed_lines,
            illegible_lines: self.illegible_lines + other.illegible_lines,
            min_region_resolution: pick(self.min_region_resolution, other.min_region_resolution, true),
            max_region_resolution: pick(self.max_region_resolution, other.max_region_resolution, false),
            min_line_resolution: pick(self.min_line_resolution, other.min_line_resolution, true),
            max_line_resolution: pick(self.max_line_resolution, other.max_line_resolution, false),
        }
    }
}

/// Computes dataset statistics from manifest fields alone (no image i/o).
pub fn manifest_statistics(manifest: &DatasetManifest) -> StatisticsRecord {
    let mut acc = StatisticsRecord::empty();
    for entry in &manifest.entries {
        let region = StatisticsRecord {
            regions: 1,
            min_region_resolution: Some((entry.hr_width, entry.hr_height)),
            max_region_resolution: Some((entry.hr_width, entry.hr_height)),
            ..StatisticsRecord::empty()
        };
        acc = acc.merge(&region);
        for line in &entry.lines {
            let (x0, y0, x1, y1) = line.bbox();
            let res = ((x1 - x0).round().max(1.0) as u32, (y1 - y0).round().max(1.0) as u32);
            let rec = StatisticsRecord {
                lines: 1,
                chinese_lines: usize::from(line.language == Language::Zh),
                english_lines: usize::from(line.language == Language::En),
                mixed_lines: usize::from(line.language == Language::Mixed),
                illegible_lines: usize::from(line.is_illegible()),
                min_line_resolution: Some(res),
                max_line_resolution: Some(res),
                ..StatisticsRecord::empty()
            };
            acc = acc.merge(&rec);
        }
    }
    acc
}
