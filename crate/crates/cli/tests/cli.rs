//! End-to-end tests of the `stisr` binary: wiring, exit codes, artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stisr_core::glyphs::glyph_dataset;
use stisr_core::manifest::{
    DatasetManifest, Language, ManifestEntry, Split, TextLineAnnotation,
};
use stisr_core::RasterImage;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stisr"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> [[f64; 2]; 4] {
    [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

/// Builds a small on-disk manifest of glyph pairs.
fn write_manifest(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let mut entries = Vec::new();
    for i in 0..n {
        let pair = glyph_dataset(1, 64, 2, 0.6, 0.01, seed + i as u64)
            .unwrap()
            .remove(0);
        let lr = format!("e{i}_lr.png");
        let hr = format!("e{i}_hr.png");
        pair.lr.save_png(dir.join(&lr)).unwrap();
        pair.hr.save_png(dir.join(&hr)).unwrap();
        entries.push(ManifestEntry {
            id: format!("e{i}"),
            lr,
            hr,
            scale: 2,
            lr_focal_mm: 13,
            hr_focal_mm: 26,
            hr_width: 64,
            hr_height: 64,
            registration: None,
            lines: vec![TextLineAnnotation {
                quad: rect(4.0, 8.0, 58.0, 40.0),
                transcript: format!("word{i}"),
                language: Language::En,
                lr_crop: None,
            }],
        });
    }
    let m = DatasetManifest::new(Split::Test, "cli-test", entries, dir);
    let path = dir.join("manifest.jsonl");
    stisr_core::save_manifest(&m, &path).unwrap();
    path
}

#[test]
fn unknown_subcommand_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["frobnicate"], dir.path());
    assert_exit(&out, 2);
}

#[test]
fn train_without_config_exits_2_with_synopsis() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train"], dir.path());
    assert_exit(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn eval_bicubic_null_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), 2, 10);
    let out = run(
        &[
            "eval",
            "--manifest",
            manifest.to_str().unwrap(),
            "--model",
            "bicubic",
            "--recognizer",
            "null",
            "--mode",
            "region",
            "--out",
            "report.json",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["config"]["model"], "bicubic");
    assert_eq!(doc["report"]["aggregate"]["lines"], 2);
    // The null recognizer never matches non-empty transcripts.
    assert_eq!(doc["report"]["aggregate"]["acc"], 0.0);
}

#[test]
fn eval_domain_error_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "eval",
            "--manifest",
            "missing.jsonl",
            "--model",
            "bicubic",
            "--recognizer",
            "null",
            "--mode",
            "region",
            "--out",
            "report.json",
        ],
        dir.path(),
    );
    assert_exit(&out, 1);
}

#[test]
fn edges_writes_one_bit_png_and_rejects_tiny_images() {
    let dir = tempfile::tempdir().unwrap();
    let img = RasterImage::from_fn(24, 24, 3, |_, x, _| if x < 12 { 0.1 } else { 0.9 }).unwrap();
    img.save_png(dir.path().join("in.png")).unwrap();
    let out = run(
        &["edges", "--in", "in.png", "--out", "edges.png"],
        dir.path(),
    );
    assert_exit(&out, 0);
    let map = stisr_core::EdgeMap::load_png(dir.path().join("edges.png")).unwrap();
    assert!(map.count() > 0);

    let tiny = RasterImage::constant(2, 8, 3, 0.5);
    tiny.save_png(dir.path().join("tiny.png")).unwrap();
    let out = run(
        &["edges", "--in", "tiny.png", "--out", "t.png"],
        dir.path(),
    );
    assert_exit(&out, 1);
}

#[test]
fn prep_synth_crop_register_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let hr = glyph_dataset(1, 64, 2, 0.0, 0.0, 77).unwrap().remove(0).hr;
    hr.save_png(dir.path().join("hr.png")).unwrap();

    let out = run(
        &[
            "prep", "synth", "--hr", "hr.png", "--scale", "2", "--blur", "0.5", "--noise", "0.0",
            "--seed", "3", "--out-dir", "out", "--id", "p",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    assert!(dir.path().join("out/p_lr.png").is_file());

    let out = run(
        &[
            "prep", "crop", "--lr", "out/p_lr.png", "--hr", "hr.png", "--scale", "2",
            "--fraction", "1.0", "--out-dir", "out", "--id", "c",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);

    let out = run(
        &[
            "prep", "register", "--lr", "out/p_lr.png", "--hr", "hr.png", "--scale", "2",
            "--out-dir", "out", "--id", "r",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"converged\""), "{stdout}");

    // scale=3 is a usage error caught by the parser.
    let out = run(
        &[
            "prep", "synth", "--hr", "hr.png", "--scale", "3", "--out-dir", "out",
        ],
        dir.path(),
    );
    assert_exit(&out, 2);
}

fn write_train_config(dir: &Path) -> PathBuf {
    let cfg = r#"
[model]
scale = 2
base_channels = 8
num_blocks = 1
seed = 5

[train]
step_size = 1e-3
batch_size = 2
patch_size = 16
checkpoint_interval = 0
max_steps = 3
seed = 6

[loss]
alpha = 1.0
beta = 0.001
extractor = "test:0"

[data]
source = "glyphs"
count = 2
hr_size = 32
blur = 0.5
noise = 0.0
seed = 11
"#;
    let path = dir.join("train.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn train_then_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_train_config(dir.path());
    let out = run(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "ckpts",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    assert!(dir.path().join("ckpts/resolved.toml").is_file());
    assert!(dir.path().join("ckpts/history.csv").is_file());
    let ckpt = dir.path().join("ckpts/step-000003.ckpt");
    assert!(ckpt.is_file());

    let lr = RasterImage::constant(16, 16, 3, 0.4);
    lr.save_png(dir.path().join("lr.png")).unwrap();
    let out = run(
        &[
            "infer",
            "--ckpt",
            "ckpts/step-000003.ckpt",
            "--in",
            "lr.png",
            "--out",
            "sr.png",
            "--edge-out",
            "edge.png",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let sr = RasterImage::load_png(dir.path().join("sr.png")).unwrap();
    assert_eq!((sr.height(), sr.width()), (32, 32));
    assert!(dir.path().join("edge.png").is_file());
}

#[test]
fn resolved_config_reproduces_run_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_train_config(dir.path());
    let out = run(
        &["train", "--config", cfg.to_str().unwrap(), "--out", "a"],
        dir.path(),
    );
    assert_exit(&out, 0);
    // Re-run from the resolved echo.
    let out = run(
        &["train", "--config", "a/resolved.toml", "--out", "b"],
        dir.path(),
    );
    assert_exit(&out, 0);
    let a = std::fs::read(dir.path().join("a/step-000003.ckpt")).unwrap();
    let b = std::fs::read(dir.path().join("b/step-000003.ckpt")).unwrap();
    assert_eq!(a, b, "checkpoint bytes must be reproducible from the echo");
    let ha = std::fs::read(dir.path().join("a/history.csv")).unwrap();
    let hb = std::fs::read(dir.path().join("b/history.csv")).unwrap();
    assert_eq!(ha, hb);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_train_config(dir.path());
    let out = run(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "o",
            "--alpha",
            "0.0",
            "--beta",
            "0.0",
            "--max-steps",
            "2",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let resolved = std::fs::read_to_string(dir.path().join("o/resolved.toml")).unwrap();
    assert!(resolved.contains("alpha = 0.0"), "{resolved}");
    assert!(dir.path().join("o/step-000002.ckpt").is_file());
}

#[test]
fn score_command_scores_prediction_directory() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), 2, 20);
    // Predictions: bicubic upsampling of each LR, written as <id>.png.
    std::fs::create_dir_all(dir.path().join("preds")).unwrap();
    let loaded = stisr_core::load_manifest(&manifest).unwrap();
    for entry in &loaded.entries {
        let pair = entry.load_pair(loaded.root()).unwrap();
        let up = stisr_core::raster::resize_bicubic(&pair.lr, 64, 64).unwrap();
        up.save_png(dir.path().join(format!("preds/{}.png", entry.id)))
            .unwrap();
    }
    let out = run(
        &[
            "score",
            "--manifest",
            manifest.to_str().unwrap(),
            "--pred-dir",
            "preds",
            "--recognizer",
            "stub",
            "--out",
            "score.json",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    assert!(dir.path().join("score.json").is_file());
    assert!(dir.path().join("score.csv").is_file());
}

#[test]
fn report_formats_render() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), 2, 30);
    let out = run(
        &[
            "eval",
            "--manifest",
            manifest.to_str().unwrap(),
            "--model",
            "bicubic",
            "--recognizer",
            "stub",
            "--mode",
            "region",
            "--out",
            "r1.json",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let out = run(
        &[
            "eval",
            "--manifest",
            manifest.to_str().unwrap(),
            "--model",
            "constant:0.5",
            "--recognizer",
            "stub",
            "--mode",
            "region",
            "--out",
            "r2.json",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);

    // Table with one row per model.
    let out = run(
        &[
            "report", "--in", "r1.json", "--in", "r2.json", "--format", "table", "--out",
            "cmp.txt",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let table = std::fs::read_to_string(dir.path().join("cmp.txt")).unwrap();
    assert!(table.contains("bicubic"));
    assert!(table.contains("constant"));
    assert!(table.contains("PSNR^"));

    // CSV round-trips through a standard parser.
    let out = run(
        &["report", "--in", "r1.json", "--format", "csv", "--out", "r1.csv"],
        dir.path(),
    );
    assert_exit(&out, 0);
    let mut reader = csv::Reader::from_path(dir.path().join("r1.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3); // 2 lines + aggregate
    assert_eq!(&rows[2][0], "AGGREGATE");

    // Plot renders a PNG with grouped bars.
    let out = run(
        &[
            "report", "--in", "r1.json", "--in", "r2.json", "--format", "plot", "--out",
            "cmp.png",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let img = RasterImage::load_png(dir.path().join("cmp.png")).unwrap();
    assert!(img.width() > 100);

    // Unknown format is a usage error.
    let out = run(
        &["report", "--in", "r1.json", "--format", "sparkline", "--out", "x"],
        dir.path(),
    );
    assert_exit(&out, 2);
}

#[test]
fn plot_matches_golden_fixture_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    // A fixed two-model comparison fixture.
    let fixture = include_str!("data/golden_reports.json");
    std::fs::write(dir.path().join("a.json"), fixture).unwrap();
    let doc: serde_json::Value = serde_json::from_str(fixture).unwrap();
    let mut second = doc.clone();
    second["config"]["model"] = serde_json::json!("other");
    for line in second["report"]["per_line"].as_array_mut().unwrap() {
        line["psnr_db"] = serde_json::json!(15.0);
        line["lpips"] = serde_json::json!(0.4);
    }
    // Recompute the aggregate for the doctored copy.
    let report: stisr_core::MetricReport =
        serde_json::from_value(second["report"].clone()).unwrap();
    let fixed = stisr_core::MetricReport::from_lines(report.per_line);
    second["report"] = serde_json::to_value(&fixed).unwrap();
    std::fs::write(dir.path().join("b.json"), second.to_string()).unwrap();

    let out = run(
        &[
            "report", "--in", "a.json", "--in", "b.json", "--format", "plot", "--out",
            "plot.png",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);

    let rendered = RasterImage::load_png(dir.path().join("plot.png")).unwrap();
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_plot.png");
    if std::env::var("STISR_BLESS_GOLDEN").is_ok() {
        rendered.save_png(&golden_path).unwrap();
    }
    let golden = RasterImage::load_png(&golden_path).unwrap();
    assert_eq!((rendered.height(), rendered.width()), (golden.height(), golden.width()));
    let mut diff = 0.0f64;
    for (a, b) in rendered.data().iter().zip(golden.data().iter()) {
        diff += f64::from((a - b).abs());
    }
    let mad = diff / rendered.data().len() as f64;
    assert!(mad < 0.01, "mean absolute difference {mad} exceeds tolerance");
}
