//! End-to-end behavior across modules: protocol wiring, registration under
//! composed warps, and desk-scale training convergence.

mod common;

use common::fixtures;
use ndarray::Array2;
use stisr_core::datapipe::{register_pair, synth_degrade};
use stisr_core::edge::{canny, CannyParams};
use stisr_core::glyphs::glyph_dataset;
use stisr_core::loss::ConvFeatureExtractor;
use stisr_core::manifest::{
    DatasetManifest, Language, ManifestEntry, RegionPair, Split, TextLineAnnotation,
};
use stisr_core::metrics::ConvPerceptualBackend;
use stisr_core::protocol::{
    evaluate, BicubicModel, ConstantModel, GroundTruthModel, InferenceMode, NullRecognizer,
    ProtocolConfig, SrModel, StubRecognizer, ToyModelAdapter,
};
use stisr_core::raster::{bilinear, resize_bicubic, RasterImage};
use stisr_core::trainer::{train, ToyModel, ToySRConfig, TrainConfig};
use stisr_core::LossWeights;

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> [[f64; 2]; 4] {
    [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

/// Writes a small glyph manifest: `n` region pairs, two legible lines plus
/// one illegible line each.
fn write_glyph_manifest(dir: &std::path::Path, n: usize, seed: u64) -> DatasetManifest {
    let mut entries = Vec::new();
    for i in 0..n {
        let pair = glyph_dataset(1, 96, 2, 0.6, 0.01, seed + i as u64).unwrap().remove(0);
        let lr_name = format!("e{i}_lr.png");
        let hr_name = format!("e{i}_hr.png");
        pair.lr.save_png(dir.join(&lr_name)).unwrap();
        pair.hr.save_png(dir.join(&hr_name)).unwrap();
        entries.push(ManifestEntry {
            id: format!("e{i}"),
            lr: lr_name,
            hr: hr_name,
            scale: 2,
            lr_focal_mm: 13,
            hr_focal_mm: 26,
            hr_width: 96,
            hr_height: 96,
            registration: None,
            lines: vec![
                TextLineAnnotation {
                    quad: rect(4.0, 6.0, 68.0, 40.0),
                    transcript: format!("text{i}"),
                    language: Language::En,
                    lr_crop: None,
                },
                TextLineAnnotation {
                    quad: rect(10.0, 48.0, 90.0, 78.0),
                    transcript: "样例文本".to_string(),
                    language: Language::Zh,
                    lr_crop: None,
                },
                TextLineAnnotation {
                    quad: rect(60.0, 10.0, 92.0, 36.0),
                    transcript: "###".to_string(),
                    language: Language::Mixed,
                    lr_crop: None,
                },
            ],
        });
    }
    let m = DatasetManifest::new(Split::Test, "fixture", entries, dir);
    stisr_core::save_manifest(&m, dir.join("manifest.jsonl")).unwrap();
    stisr_core::load_manifest(dir.join("manifest.jsonl")).unwrap()
}

#[test]
fn evaluation_is_invariant_to_entry_order_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_glyph_manifest(dir.path(), 4, 100);
    let model = BicubicModel::new(2, InferenceMode::Region);
    let backend = ConvPerceptualBackend::seeded(0);
    let cfg = ProtocolConfig::default();

    let serial = evaluate(&manifest, &model, &StubRecognizer, &backend, &cfg).unwrap();
    let parallel = evaluate(
        &manifest,
        &model,
        &StubRecognizer,
        &backend,
        &ProtocolConfig { jobs: 2, ..cfg },
    )
    .unwrap();
    assert_eq!(serial.report, parallel.report);

    // Reversed manifest: same per-line values, different order.
    let mut reversed_entries = manifest.entries.clone();
    reversed_entries.reverse();
    let reversed = DatasetManifest::new(Split::Test, "fixture", reversed_entries, dir.path());
    let rev = evaluate(&reversed, &model, &StubRecognizer, &backend, &cfg).unwrap();
    let mut a = serial.report.per_line.clone();
    let mut b = rev.report.per_line.clone();
    a.sort_by(|x, y| x.id.cmp(&y.id));
    b.sort_by(|x, y| x.id.cmp(&y.id));
    assert_eq!(a, b);
    assert_eq!(serial.report.aggregate, rev.report.aggregate);
}

#[test]
fn illegible_lines_skip_recognition_but_keep_image_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_glyph_manifest(dir.path(), 2, 200);
    let model = BicubicModel::new(2, InferenceMode::Region);
    let backend = ConvPerceptualBackend::seeded(0);
    let out = evaluate(&manifest, &model, &NullRecognizer, &backend, &ProtocolConfig::default())
        .unwrap();
    let illegible: Vec<_> = out
        .report
        .per_line
        .iter()
        .filter(|l| l.language == Language::Mixed)
        .collect();
    assert_eq!(illegible.len(), 2);
    for line in illegible {
        assert!(line.exact_match.is_none());
        assert!(line.ned.is_none());
        assert!(line.psnr_db.is_some());
        assert!(line.ssim.is_some());
    }
    assert_eq!(out.report.aggregate.scored_lines, 4);
    assert_eq!(out.report.aggregate.lines, 6);
}

#[test]
fn model_psnr_beats_constant_predictor_on_nearly_all_lines() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_glyph_manifest(dir.path(), 6, 300);
    let backend = ConvPerceptualBackend::seeded(0);
    let cfg = ProtocolConfig::default();
    let bicubic = evaluate(
        &manifest,
        &BicubicModel::new(2, InferenceMode::Region),
        &NullRecognizer,
        &backend,
        &cfg,
    )
    .unwrap();
    let gray = evaluate(
        &manifest,
        &ConstantModel::new(2, 0.5),
        &NullRecognizer,
        &backend,
        &cfg,
    )
    .unwrap();
    let total = bicubic.report.per_line.len();
    let wins = bicubic
        .report
        .per_line
        .iter()
        .zip(&gray.report.per_line)
        .filter(|(m, g)| m.psnr_db.unwrap() >= g.psnr_db.unwrap())
        .count();
    assert!(
        wins * 100 >= total * 95,
        "model beat the gray floor on only {wins}/{total} lines"
    );
}

#[test]
fn line_mode_runs_fixed_size_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_glyph_manifest(dir.path(), 2, 400);
    let backend = ConvPerceptualBackend::seeded(0);
    let cfg = ProtocolConfig {
        mode: InferenceMode::Line,
        ..ProtocolConfig::default()
    };
    let model = BicubicModel::new(2, InferenceMode::Line);
    let out = evaluate(&manifest, &model, &StubRecognizer, &backend, &cfg).unwrap();
    assert_eq!(out.report.per_line.len(), 6);
    assert!(out.report.aggregate.psnr_db.unwrap().is_finite());
    // Mode mismatch is rejected up front.
    let err = evaluate(
        &manifest,
        &BicubicModel::new(2, InferenceMode::Region),
        &StubRecognizer,
        &backend,
        &cfg,
    )
    .unwrap_err();
    assert!(err.to_string().contains("mode"), "{err}");
}

#[test]
fn failing_adapter_below_threshold_is_skipped_above_aborts() {
    struct FailingModel {
        fail_keys: std::collections::HashSet<u64>,
        inner: BicubicModel,
    }
    impl SrModel for FailingModel {
        fn name(&self) -> &str {
            "failing"
        }
        fn mode(&self) -> InferenceMode {
            InferenceMode::Region
        }
        fn scale(&self) -> u32 {
            2
        }
        fn run(&self, input: &RasterImage) -> stisr_core::Result<stisr_core::protocol::SrOutput> {
            if self.fail_keys.contains(&input.content_key()) {
                return Err(stisr_core::Error::Adapter("synthetic failure".to_string()));
            }
            self.inner.run(input)
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let manifest = write_glyph_manifest(dir.path(), 11, 500);
    let backend = ConvPerceptualBackend::seeded(0);
    let cfg = ProtocolConfig::default();
    let key_of = |i: usize| {
        manifest.entries[i]
            .load_pair(manifest.root())
            .unwrap()
            .lr
            .content_key()
    };

    // One failure out of 11 entries: skipped with a warning.
    let one = FailingModel {
        fail_keys: [key_of(0)].into_iter().collect(),
        inner: BicubicModel::new(2, InferenceMode::Region),
    };
    let out = evaluate(&manifest, &one, &NullRecognizer, &backend, &cfg).unwrap();
    assert_eq!(out.skipped.len(), 1);
    assert_eq!(out.report.per_line.len(), 30);

    // Two failures out of 11 crosses the 10% threshold: abort.
    let two = FailingModel {
        fail_keys: [key_of(0), key_of(1)].into_iter().collect(),
        inner: BicubicModel::new(2, InferenceMode::Region),
    };
    let err = evaluate(&manifest, &two, &NullRecognizer, &backend, &cfg).unwrap_err();
    assert!(matches!(err, stisr_core::Error::TooManyFailures { failed: 2, total: 11 }), "{err}");
}

#[test]
fn nearest_downsampled_step_edge_maps_agree() {
    // LR = nearest-neighbor downsample of a step-edge HR: both edge maps
    // contain exactly one straight vertical segment.
    let hr = fixtures::step_image(64, 64).to_rgb().unwrap();
    let lr = RasterImage::from_fn(32, 32, 3, |y, x, c| hr.get(y * 2, x * 2, c)).unwrap();
    let pair = RegionPair::synthetic(lr, hr, 2).unwrap();
    let (c_lr, c_h) = stisr_core::edge_for_pair(&pair, &CannyParams::default()).unwrap();
    for (map, w) in [(&c_lr, 32), (&c_h, 64)] {
        let cols: Vec<usize> = (0..w)
            .filter(|&x| (0..map.height()).any(|y| map.is_edge(y, x)))
            .collect();
        assert_eq!(cols.len(), 1, "expected one edge column, got {cols:?}");
        for y in 1..map.height() - 1 {
            assert!(map.is_edge(y, cols[0]));
        }
    }
}

#[test]
fn registration_handles_rotation_and_translation() {
    // Recovered transform composed with the ground truth stays within one
    // pixel of identity at the image corners.
    for seed in 0..6u64 {
        let hr = fixtures::smooth_noise(700 + seed, 96, 96, 3);
        let theta = (seed as f64 - 2.5) * 0.8_f64.to_radians(); // up to 2 degrees
        let (tx, ty) = (4.0 - seed as f64, seed as f64 - 3.0);
        let (cx, cy) = (47.5, 47.5);
        let (cos, sin) = (theta.cos(), theta.sin());
        // Ground-truth warp in HR coordinates (rotation about center + shift).
        let a_gt = [
            [cos, -sin, cx - cos * cx + sin * cy + tx],
            [sin, cos, cy - sin * cx - cos * cy + ty],
        ];
        let planes: Vec<Array2<f64>> = (0..3).map(|c| hr.plane(c)).collect();
        let warped = RasterImage::from_fn(96, 96, 3, |y, x, c| {
            let (xf, yf) = (x as f64, y as f64);
            let sx = a_gt[0][0] * xf + a_gt[0][1] * yf + a_gt[0][2];
            let sy = a_gt[1][0] * xf + a_gt[1][1] * yf + a_gt[1][2];
            bilinear(&planes[c], sx, sy).clamp(0.0, 1.0) as f32
        })
        .unwrap();
        let lr = resize_bicubic(&warped, 48, 48).unwrap();
        let out = register_pair(&lr, &hr, 2).unwrap();
        let a = out.transform.affine;
        // Compose: p -> a_gt(a(p)) should be identity.
        for corner in [[8.0, 8.0], [88.0, 8.0], [88.0, 88.0], [8.0, 88.0]] {
            let [x, y] = corner;
            let wx = a[0][0] * x + a[0][1] * y + a[0][2];
            let wy = a[1][0] * x + a[1][1] * y + a[1][2];
            let fx = a_gt[0][0] * wx + a_gt[0][1] * wy + a_gt[0][2];
            let fy = a_gt[1][0] * wx + a_gt[1][1] * wy + a_gt[1][2];
            let disp = ((fx - x).powi(2) + (fy - y).powi(2)).sqrt();
            assert!(
                disp < 1.0,
                "seed {seed}: corner {corner:?} displaced by {disp:.3} px"
            );
        }
    }
}

#[test]
fn overfitting_four_glyph_pairs_reaches_low_l1() {
    // Desk-scale convergence: 4 pairs, 500 steps.
    let dataset = glyph_dataset(4, 64, 2, 0.6, 0.0, 42).unwrap();
    let cfg = ToySRConfig {
        scale: 2,
        base_channels: 12,
        num_blocks: 1,
        use_edge_input: true,
        predict_edge_head: true,
        canny: CannyParams::default(),
        seed: 7,
    };
    let tc = TrainConfig {
        step_size: 2e-3,
        batch_size: 4,
        patch_size: 32,
        weights: LossWeights::default(),
        checkpoint_interval: 0,
        max_steps: Some(500),
        seed: 9,
        ..TrainConfig::default()
    };
    let extractor = ConvFeatureExtractor::seeded_test(0);
    let out = train(ToyModel::new(&cfg).unwrap(), &dataset, &tc, &extractor, None).unwrap();
    let final_l1 = out.history.last().unwrap().l1;
    assert!(
        final_l1 < 0.02,
        "training L1 after 500 steps should be < 0.02, got {final_l1}"
    );
}

#[test]
fn toy_adapter_round_trips_through_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_glyph_manifest(dir.path(), 2, 600);
    let cfg = ToySRConfig {
        scale: 2,
        base_channels: 8,
        num_blocks: 1,
        use_edge_input: true,
        predict_edge_head: true,
        canny: CannyParams::default(),
        seed: 3,
    };
    let adapter = ToyModelAdapter::new(ToyModel::new(&cfg).unwrap(), InferenceMode::Region);
    let backend = ConvPerceptualBackend::seeded(0);
    let out = evaluate(
        &manifest,
        &adapter,
        &NullRecognizer,
        &backend,
        &ProtocolConfig::default(),
    )
    .unwrap();
    assert_eq!(out.report.per_line.len(), 6);
    assert!(out.skipped.is_empty());
    assert!(out.report.aggregate.psnr_db.unwrap().is_finite());
}

#[test]
fn ground_truth_model_requires_known_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_glyph_manifest(dir.path(), 2, 700);
    let model = GroundTruthModel::from_manifest(&manifest).unwrap();
    let unknown = fixtures::smooth_noise(1, 48, 48, 3);
    assert!(model.run(&unknown).is_err());
}

#[test]
fn degraded_pair_edges_survive_for_training_supervision() {
    // C_H should be dense enough to supervise, C_LR sparser after degradation.
    let pairs = glyph_dataset(3, 64, 2, 0.8, 0.02, 900).unwrap();
    for pair in &pairs {
        let (c_lr, c_h) = stisr_core::edge_for_pair(&pair, &CannyParams::default()).unwrap();
        assert!(c_h.count() > 50, "HR edge map too sparse: {}", c_h.count());
        assert!(c_lr.count() > 0);
    }
}
