//! The `train` subcommand: TOML configuration with flag overrides, dataset
//! assembly (synthetic glyphs or a manifest), the training run itself, and
//! its artifacts (checkpoints, per-step loss CSV, resolved-config echo).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};

use stisr_core::glyphs::glyph_dataset;
use stisr_core::loss::{ConvFeatureExtractor, FeatureExtractor, IdentityExtractor, LossWeights};
use stisr_core::manifest::RegionPair;
use stisr_core::trainer::{train, ToyModel, ToySRConfig, TrainConfig};
use stisr_core::CannyParams;

#[derive(Args)]
pub struct TrainArgs {
    /// Training configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoints, history and the resolved config.
    #[arg(long = "out", default_value = "train-out")]
    out_dir: PathBuf,
    /// Overrides (flags win over the config file).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Model initialization seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// On-disk training configuration. Every field has a default, so a minimal
/// file can be just `[data]\nsource = "glyphs"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainToml {
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub data: DataSection,
}

impl Default for TrainToml {
    fn default() -> Self {
        Self {
            model: ModelSection::default(),
            train: TrainSection::default(),
            loss: LossSection::default(),
            data: DataSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub scale: u32,
    pub base_channels: usize,
    pub num_blocks: usize,
    pub use_edge_input: bool,
    pub predict_edge_head: bool,
    pub seed: u64,
    pub canny_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let canny = CannyParams::default();
        let cfg = ToySRConfig::default();
        Self {
            scale: cfg.scale,
            base_channels: cfg.base_channels,
            num_blocks: cfg.num_blocks,
            use_edge_input: cfg.use_edge_input,
            predict_edge_head: cfg.predict_edge_head,
            seed: cfg.seed,
            canny_sigma: canny.gaussian_sigma,
            canny_low: canny.low_threshold,
            canny_high: canny.high_threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub step_size: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub checkpoint_interval: usize,
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let tc = TrainConfig::default();
        Self {
            step_size: tc.step_size,
            epochs: tc.epochs,
            batch_size: tc.batch_size,
            patch_size: tc.patch_size,
            checkpoint_interval: tc.checkpoint_interval,
            max_steps: tc.max_steps,
            seed: tc.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub alpha: f64,
    pub beta: f64,
    /// `identity`, or `test:<seed>` for the fixed-seed conv extractor.
    pub extractor: String,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            extractor: "test:0".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `glyphs` (procedural fixtures) or `manifest`.
    pub source: String,
    /// Manifest path when `source = "manifest"`.
    pub path: Option<PathBuf>,
    pub count: usize,
    pub hr_size: usize,
    pub blur: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: "glyphs".to_string(),
            path: None,
            count: 64,
            hr_size: 64,
            blur: 0.8,
            noise: 0.02,
            seed: 1234,
        }
    }
}

fn resolve_extractor(spec: &str) -> anyhow::Result<Box<dyn FeatureExtractor>> {
    if spec == "identity" {
        return Ok(Box::new(IdentityExtractor));
    }
    if let Some(seed) = spec.strip_prefix("test:") {
        let seed: u64 = seed.parse().context("extractor seed")?;
        return Ok(Box::new(ConvFeatureExtractor::seeded_test(seed)));
    }
    if spec == "test" {
        return Ok(Box::new(ConvFeatureExtractor::seeded_test(0)));
    }
    bail!("unknown extractor {spec:?} (known: identity, test:<seed>)")
}

fn load_dataset(data: &DataSection, cfg_scale: u32) -> anyhow::Result<Vec<RegionPair>> {
    match data.source.as_str() {
        "glyphs" => {
            if let Ok(cache_root) = std::env::var("STISR_CACHE_DIR") {
                return glyphs_cached(data, cfg_scale, Path::new(&cache_root));
            }
            Ok(glyph_dataset(
                data.count,
                data.hr_size,
                cfg_scale,
                data.blur,
                data.noise,
                data.seed,
            )?)
        }
        "manifest" => {
            let path = data
                .path
                .as_ref()
                .context("data.source = \"manifest\" requires data.path")?;
            let manifest = stisr_core::load_manifest(path)?;
            manifest
                .entries
                .iter()
                .map(|e| Ok(e.load_pair(manifest.root())?))
                .collect()
        }
        other => bail!("unknown data source {other:?} (known: glyphs, manifest)"),
    }
}

/// Renders the glyph dataset through an on-disk cache keyed by the data
/// parameters, honoring the `STISR_CACHE_DIR` environment variable.
fn glyphs_cached(data: &DataSection, scale: u32, root: &Path) -> anyhow::Result<Vec<RegionPair>> {
    let key = format!(
        "glyphs-c{}-s{}-x{}-b{}-n{}-seed{}",
        data.count, data.hr_size, scale, data.blur, data.noise, data.seed
    );
    let dir = root.join(key);
    let manifest_like = |i: usize| {
        (
            dir.join(format!("{i}_lr.png")),
            dir.join(format!("{i}_hr.png")),
        )
    };
    let complete = (0..data.count).all(|i| {
        let (lr, hr) = manifest_like(i);
        lr.is_file() && hr.is_file()
    });
    if complete {
        let mut pairs = Vec::with_capacity(data.count);
        for i in 0..data.count {
            let (lr, hr) = manifest_like(i);
            pairs.push(RegionPair::synthetic(
                stisr_core::RasterImage::load_png(lr)?,
                stisr_core::RasterImage::load_png(hr)?,
                scale,
            )?);
        }
        return Ok(pairs);
    }
    let pairs = glyph_dataset(data.count, data.hr_size, scale, data.blur, data.noise, data.seed)?;
    std::fs::create_dir_all(&dir)?;
    for (i, pair) in pairs.iter().enumerate() {
        let (lr, hr) = manifest_like(i);
        pair.lr.save_png(lr)?;
        pair.hr.save_png(hr)?;
    }
    Ok(pairs)
}

pub fn run(args: TrainArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let mut cfg: TrainToml = toml::from_str(&text)
        .with_context(|| format!("parsing config {}", args.config.display()))?;

    // Flags override file values.
    if let Some(v) = args.alpha {
        cfg.loss.alpha = v;
    }
    if let Some(v) = args.beta {
        cfg.loss.beta = v;
    }
    if let Some(v) = args.step_size {
        cfg.train.step_size = v;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.max_steps {
        cfg.train.max_steps = Some(v);
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.seed {
        cfg.model.seed = v;
    }

    let model_cfg = ToySRConfig {
        scale: cfg.model.scale,
        base_channels: cfg.model.base_channels,
        num_blocks: cfg.model.num_blocks,
        use_edge_input: cfg.model.use_edge_input,
        predict_edge_head: cfg.model.predict_edge_head,
        canny: CannyParams {
            gaussian_sigma: cfg.model.canny_sigma,
            low_threshold: cfg.model.canny_low,
            high_threshold: cfg.model.canny_high,
        },
        seed: cfg.model.seed,
    };
    let train_cfg = TrainConfig {
        step_size: cfg.train.step_size,
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        patch_size: cfg.train.patch_size,
        weights: LossWeights {
            alpha: cfg.loss.alpha,
            beta: cfg.loss.beta,
        },
        checkpoint_interval: cfg.train.checkpoint_interval,
        max_steps: cfg.train.max_steps,
        seed: cfg.train.seed,
    };
    let extractor = resolve_extractor(&cfg.loss.extractor)?;
    let dataset = load_dataset(&cfg.data, cfg.model.scale)?;

    std::fs::create_dir_all(&args.out_dir)?;
    // The resolved configuration is the reproduction recipe for this run.
    std::fs::write(
        args.out_dir.join("resolved.toml"),
        toml::to_string_pretty(&cfg)?,
    )?;

    let model = ToyModel::new(&model_cfg)?;
    println!(
        "training: {} pairs, {} parameters, scale {}x",
        dataset.len(),
        model.param_count(),
        model_cfg.scale
    );
    let outcome = train(model, &dataset, &train_cfg, extractor.as_ref(), Some(&args.out_dir))?;

    let mut csv = csv::Writer::from_path(args.out_dir.join("history.csv"))?;
    csv.write_record(["step", "l1", "ea_pixel", "ea_feature", "total"])?;
    for row in &outcome.history {
        csv.write_record([
            row.step.to_string(),
            row.l1.to_string(),
            row.ea_pixel.to_string(),
            row.ea_feature.to_string(),
            row.total.to_string(),
        ])?;
    }
    csv.flush()?;

    let last = outcome.history.last().expect("at least one step");
    let final_ckpt = outcome
        .checkpoints
        .last()
        .map(|(_, p)| p.clone())
        .expect("final checkpoint written");
    println!(
        "done: {} steps, final loss {:.5} (l1 {:.5}), checkpoint {}",
        last.step,
        last.total,
        last.l1,
        final_ckpt.display()
    );
    Ok(())
}
