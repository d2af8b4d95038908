//! Edge-aware scene text image super-resolution toolkit.
//!
//! Modules:
//! - [`raster`] — in-memory images, PNG i/o, bicubic resampling, Gaussian blur
//! - [`manifest`] — paired-dataset manifest schema, validation and statistics
//! - [`edge`] — from-scratch Canny detector and edge-augmented network input
//! - [`metrics`] — PSNR / SSIM / LPIPS / edit-distance / word-accuracy benchmark metrics
//! - [`autodiff`] — small reverse-mode tape over 4-D `f64` tensors
//! - [`loss`] — edge-aware loss family with exact gradients
//! - [`datapipe`] — LR/HR registration, central cropping, synthetic degradation
//! - [`glyphs`] — procedural glyph-like fixtures for desk-scale training
//! - [`trainer`] — toy residual SR network, Adam training loop, checkpoints
//! - [`protocol`] — region/line evaluation protocol and adapter interfaces

pub mod autodiff;
pub mod datapipe;
pub mod edge;
pub mod error;
pub mod glyphs;
pub mod loss;
pub mod manifest;
pub mod metrics;
pub mod protocol;
pub mod raster;
pub mod trainer;

pub use edge::{canny, concat_edge_channel, edge_for_pair, CannyParams, EdgeMap};
pub use error::{Error, Result};
pub use loss::{
    ea_feature_loss, ea_pixel_loss, gradient_check, l1_loss, total_loss, FeatureExtractor,
    LossBreakdown, LossWeights,
};
pub use manifest::{
    load_manifest, manifest_statistics, save_manifest, DatasetManifest, Language, ManifestEntry,
    RegionPair, RegistrationTransform, Split, StatisticsRecord, TextLineAnnotation,
};
pub use metrics::{
    edit_distance, lpips, ned, normalize_transcript, psnr, ssim, word_accuracy, MetricReport,
    PerceptualBackend,
};
pub use protocol::{
    aggregate_by_language, crop_text_line, evaluate, CropMode, InferenceMode, ProtocolConfig,
    Recognizer, SrModel,
};
pub use raster::RasterImage;
pub use trainer::{build_toy_model, train, ToyModel, ToySRConfig, TrainConfig};
