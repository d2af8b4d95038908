//! `stisr` — command-line front end for the scene text super-resolution
//! toolkit.
//!
//! Exit codes: 0 on success, 1 on domain errors (bad data, failed runs),
//! 2 on usage errors.

mod registry;
mod render;
mod train_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use stisr_core::datapipe::{central_crop_pair, register_pair, synth_degrade};
use stisr_core::edge::{canny, CannyParams};
use stisr_core::manifest::RegionPair;
use stisr_core::protocol::{evaluate, InferenceMode, PredictionDirModel, ProtocolConfig};
use stisr_core::RasterImage;

#[derive(Parser)]
#[command(
    name = "stisr",
    version,
    about = "Edge-aware scene text image super-resolution toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Data preparation: registration, cropping, synthetic degradation.
    Prep {
        #[command(subcommand)]
        command: PrepCommand,
    },
    /// Compute a binary text edge map for one image.
    Edges(EdgesArgs),
    /// Train the toy super-resolution model.
    Train(train_cmd::TrainArgs),
    /// Super-resolve one image with a trained checkpoint.
    Infer(InferArgs),
    /// Run a model over a manifest and score it.
    Eval(EvalArgs),
    /// Score precomputed prediction images against a manifest.
    Score(ScoreArgs),
    /// Render a report as a table, CSV or bar-chart image.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum PrepCommand {
    /// Register an LR image onto its HR counterpart.
    Register(RegisterArgs),
    /// Concentric central crop of an aligned pair.
    Crop(CropArgs),
    /// Synthesize a degraded LR counterpart for an HR image.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    lr: PathBuf,
    #[arg(long)]
    hr: PathBuf,
    #[arg(long, value_parser = parse_scale)]
    scale: u32,
    /// Output directory for the registered pair.
    #[arg(long, default_value = "prep-out")]
    out_dir: PathBuf,
    /// Pair id used in output file names.
    #[arg(long, default_value = "pair")]
    id: String,
    /// File collecting ids of pairs that failed to converge.
    #[arg(long)]
    exceptions: Option<PathBuf>,
}

#[derive(Args)]
struct CropArgs {
    #[arg(long)]
    lr: PathBuf,
    #[arg(long)]
    hr: PathBuf,
    #[arg(long, value_parser = parse_scale)]
    scale: u32,
    /// Fraction of the HR extent to keep, in (0, 1].
    #[arg(long)]
    fraction: f64,
    #[arg(long, default_value = "prep-out")]
    out_dir: PathBuf,
    #[arg(long, default_value = "pair")]
    id: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    hr: PathBuf,
    #[arg(long, value_parser = parse_scale)]
    scale: u32,
    /// Gaussian blur sigma applied before downsampling.
    #[arg(long, default_value_t = 0.8)]
    blur: f64,
    /// Additive Gaussian noise sigma.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "prep-out")]
    out_dir: PathBuf,
    #[arg(long, default_value = "pair")]
    id: String,
}

#[derive(Args)]
struct EdgesArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, default_value_t = 1.4)]
    sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    low: f64,
    #[arg(long, default_value_t = 0.3)]
    high: f64,
    /// Render edges black-on-white (visualization only).
    #[arg(long)]
    invert: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// Also write the continuous edge-head output.
    #[arg(long)]
    edge_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Model adapter spec: `bicubic`, `constant:<v>`, `gt`, `toy:<ckpt>`.
    #[arg(long)]
    model: String,
    /// Recognizer adapter spec: `null` or `stub`.
    #[arg(long, default_value = "null")]
    recognizer: String,
    #[arg(long, value_enum, default_value = "region")]
    mode: ModeArg,
    #[arg(long = "out")]
    output: PathBuf,
    /// Worker pool size for per-entry evaluation.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Line cropping strategy.
    #[arg(long, value_enum, default_value = "rectified")]
    crop: CropArg,
    /// Recognizer input height.
    #[arg(long, default_value_t = 32)]
    line_height: usize,
    /// Seed of the deterministic perceptual backend.
    #[arg(long, default_value_t = 0)]
    lpips_seed: u64,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<entry id>.png` prediction images.
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long, default_value = "null")]
    recognizer: String,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    lpips_seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON files produced by `eval` or `score`; several files
    /// render as a side-by-side comparison.
    #[arg(long = "in", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    format: FormatArg,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Region,
    Line,
}

impl From<ModeArg> for InferenceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Region => InferenceMode::Region,
            ModeArg::Line => InferenceMode::Line,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CropArg {
    Rectified,
    AxisAligned,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Table,
    Csv,
    Plot,
}

fn parse_scale(s: &str) -> Result<u32, String> {
    match s {
        "2" => Ok(2),
        "4" => Ok(4),
        _ => Err("scale must be 2 or 4".to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 0 for --help/--version and 2 for usage errors.
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prep { command } => match command {
            PrepCommand::Register(args) => prep_register(args),
            PrepCommand::Crop(args) => prep_crop(args),
            PrepCommand::Synth(args) => prep_synth(args),
        },
        Command::Edges(args) => edges(args),
        Command::Train(args) => train_cmd::run(args),
        Command::Infer(args) => infer(args),
        Command::Eval(args) => eval(args),
        Command::Score(args) => score(args),
        Command::Report(args) => report(args),
    }
}

fn prep_register(args: RegisterArgs) -> anyhow::Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let lr = RasterImage::load_png(&args.lr)?;
    let hr = RasterImage::load_png(&args.hr)?;
    let outcome = register_pair(&lr, &hr, args.scale)?;

    let lr_out = args.out_dir.join(format!("{}_lr.png", args.id));
    let hr_out = args.out_dir.join(format!("{}_hr.png", args.id));
    outcome.pair.lr.save_png(&lr_out)?;
    outcome.pair.hr.save_png(&hr_out)?;

    println!(
        "{}",
        serde_json::json!({
            "id": args.id,
            "transform": outcome.transform,
            "converged": outcome.converged,
            "rounds": outcome.residual_history.len(),
            "lr": lr_out,
            "hr": hr_out,
        })
    );
    if !outcome.converged {
        let exceptions = args
            .exceptions
            .unwrap_or_else(|| args.out_dir.join("exceptions.txt"));
        let mut line = args.id.clone();
        line.push('\n');
        use std::io::Write;
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&exceptions)?
            .write_all(line.as_bytes())?;
        eprintln!(
            "warning: pair {} did not converge (residual {:.4}); listed in {}",
            args.id,
            outcome.transform.residual,
            exceptions.display()
        );
    }
    Ok(())
}

fn prep_crop(args: CropArgs) -> anyhow::Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let lr = RasterImage::load_png(&args.lr)?;
    let hr = RasterImage::load_png(&args.hr)?;
    let pair = RegionPair::synthetic(lr, hr, args.scale)?;
    let cropped = central_crop_pair(&pair, args.fraction)?;
    let lr_out = args.out_dir.join(format!("{}_lr.png", args.id));
    let hr_out = args.out_dir.join(format!("{}_hr.png", args.id));
    cropped.lr.save_png(&lr_out)?;
    cropped.hr.save_png(&hr_out)?;
    println!(
        "{}",
        serde_json::json!({
            "id": args.id,
            "fraction": args.fraction,
            "lr": lr_out,
            "hr": hr_out,
            "lr_size": [cropped.lr.width(), cropped.lr.height()],
            "hr_size": [cropped.hr.width(), cropped.hr.height()],
        })
    );
    Ok(())
}

fn prep_synth(args: SynthArgs) -> anyhow::Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let hr = RasterImage::load_png(&args.hr)?;
    let pair = synth_degrade(&hr, args.scale, args.blur, args.noise, args.seed)?;
    let lr_out = args.out_dir.join(format!("{}_lr.png", args.id));
    pair.lr.save_png(&lr_out)?;
    println!(
        "{}",
        serde_json::json!({
            "id": args.id,
            "scale": args.scale,
            "blur": args.blur,
            "noise": args.noise,
            "seed": args.seed,
            "lr": lr_out,
        })
    );
    Ok(())
}

fn edges(args: EdgesArgs) -> anyhow::Result<()> {
    let img = RasterImage::load_png(&args.input)?;
    let params = CannyParams {
        gaussian_sigma: args.sigma,
        low_threshold: args.low,
        high_threshold: args.high,
    };
    let map = canny(&img, &params)?;
    map.save_png_1bit(&args.output, args.invert)?;
    println!(
        "{}",
        serde_json::json!({
            "in": args.input,
            "out": args.output,
            "params": params,
            "edge_pixels": map.count(),
        })
    );
    Ok(())
}

fn infer(args: InferArgs) -> anyhow::Result<()> {
    let model = stisr_core::ToyModel::load(&args.ckpt)?;
    let input = RasterImage::load_png(&args.input)?;
    let (sr, edge) = model.infer(&input)?;
    sr.save_png(&args.output)?;
    println!(
        "{}",
        serde_json::json!({
            "ckpt": args.ckpt,
            "in": args.input,
            "out": args.output,
            "scale": model.config().scale,
            "out_size": [sr.width(), sr.height()],
        })
    );
    if let Some(edge_path) = args.edge_out {
        match edge {
            Some(edge_img) => edge_img.save_png(&edge_path)?,
            None => bail!("checkpoint has no edge head; cannot write {}", edge_path.display()),
        }
    }
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let manifest = stisr_core::load_manifest(&args.manifest)
        .with_context(|| format!("loading manifest {}", args.manifest.display()))?;
    let mode: InferenceMode = args.mode.into();
    let model = registry::resolve_model(&args.model, &manifest, mode)?;
    let recognizer = registry::resolve_recognizer(&args.recognizer)?;
    let backend = stisr_core::metrics::ConvPerceptualBackend::seeded(args.lpips_seed);
    let cfg = ProtocolConfig {
        mode,
        line_target_height: args.line_height,
        crop: match args.crop {
            CropArg::Rectified => stisr_core::CropMode::Rectified,
            CropArg::AxisAligned => stisr_core::CropMode::AxisAligned,
        },
        jobs: args.jobs,
        ..ProtocolConfig::default()
    };
    let evaluation = evaluate(&manifest, model.as_ref(), recognizer.as_ref(), &backend, &cfg)?;
    write_report_json(
        &args.output,
        &args.model,
        &args.recognizer,
        &cfg,
        &evaluation,
    )?;
    print_aggregate(&evaluation.report);
    for (id, reason) in &evaluation.skipped {
        eprintln!("warning: entry {id} skipped: {reason}");
    }
    Ok(())
}

fn score(args: ScoreArgs) -> anyhow::Result<()> {
    let manifest = stisr_core::load_manifest(&args.manifest)?;
    let model = PredictionDirModel::from_manifest(&manifest, &args.pred_dir)?;
    let recognizer = registry::resolve_recognizer(&args.recognizer)?;
    let backend = stisr_core::metrics::ConvPerceptualBackend::seeded(args.lpips_seed);
    let cfg = ProtocolConfig {
        jobs: args.jobs,
        ..ProtocolConfig::default()
    };
    let evaluation = evaluate(&manifest, &model, recognizer.as_ref(), &backend, &cfg)?;
    write_report_json(
        &args.output,
        "prediction-dir",
        &args.recognizer,
        &cfg,
        &evaluation,
    )?;
    print_aggregate(&evaluation.report);
    // A CSV companion next to the JSON, as scoring runs feed spreadsheets.
    let csv_path = args.output.with_extension("csv");
    render::write_csv(&evaluation.report, &csv_path)?;
    Ok(())
}

/// The on-disk report document: resolved configuration plus results, enough
/// to reproduce the run.
fn write_report_json(
    path: &std::path::Path,
    model: &str,
    recognizer: &str,
    cfg: &ProtocolConfig,
    evaluation: &stisr_core::protocol::Evaluation,
) -> anyhow::Result<()> {
    let by_language: std::collections::BTreeMap<String, _> =
        stisr_core::aggregate_by_language(&evaluation.report)
            .into_iter()
            .map(|(lang, rep)| (lang.to_string(), rep.aggregate))
            .collect();
    let doc = serde_json::json!({
        "config": {
            "model": model,
            "recognizer": recognizer,
            "protocol": cfg,
        },
        "report": evaluation.report,
        "by_language": by_language,
        "skipped": evaluation.skipped,
    });
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

fn print_aggregate(report: &stisr_core::MetricReport) {
    let agg = &report.aggregate;
    let fmt = |v: Option<f64>| match v {
        Some(x) if x.is_infinite() => "inf".to_string(),
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    };
    println!(
        "lines {}  PSNR {}  SSIM {}  LPIPS {}  ACC {}  NED {}",
        agg.lines,
        fmt(agg.psnr_db),
        fmt(agg.ssim),
        fmt(agg.lpips),
        fmt(agg.acc),
        fmt(agg.ned),
    );
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let mut reports = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading report {}", path.display()))?;
        let doc: serde_json::Value = serde_json::from_str(&text)?;
        let report: stisr_core::MetricReport = serde_json::from_value(
            doc.get("report")
                .cloned()
                .unwrap_or_else(|| doc.clone()),
        )
        .with_context(|| format!("parsing report {}", path.display()))?;
        let label = doc
            .pointer("/config/model")
            .and_then(|v| v.as_str())
            .unwrap_or("report")
            .to_string();
        reports.push((label, report));
    }
    match args.format {
        FormatArg::Table => {
            let text = render::render_table(&reports);
            std::fs::write(&args.output, &text)?;
            print!("{text}");
        }
        FormatArg::Csv => {
            if reports.len() != 1 {
                bail!("csv format renders exactly one report");
            }
            render::write_csv(&reports[0].1, &args.output)?;
        }
        FormatArg::Plot => {
            let img = render::render_bar_chart(&reports)?;
            img.save_png(&args.output)?;
        }
    }
    Ok(())
}
