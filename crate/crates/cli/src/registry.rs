//! Adapter registry: resolves `name` or `name:path` specs into model and
//! recognizer instances.

use anyhow::{bail, Context};

use stisr_core::manifest::DatasetManifest;
use stisr_core::protocol::{
    BicubicModel, ConstantModel, GroundTruthModel, InferenceMode, NullRecognizer, Recognizer,
    SrModel, StubRecognizer, ToyModelAdapter,
};
use stisr_core::ToyModel;

fn manifest_scale(manifest: &DatasetManifest) -> anyhow::Result<u32> {
    let mut scales: Vec<u32> = manifest.entries.iter().map(|e| e.scale).collect();
    scales.sort_unstable();
    scales.dedup();
    match scales.as_slice() {
        [] => bail!("manifest has no entries; cannot infer the scale factor"),
        [s] => Ok(*s),
        many => bail!("manifest mixes scale factors {many:?}; split it per zooming mode"),
    }
}

pub fn resolve_model(
    spec: &str,
    manifest: &DatasetManifest,
    mode: InferenceMode,
) -> anyhow::Result<Box<dyn SrModel>> {
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (spec, None),
    };
    match name {
        "bicubic" => Ok(Box::new(BicubicModel::new(manifest_scale(manifest)?, mode))),
        "constant" => {
            let value: f32 = arg.unwrap_or("0.5").parse().context("constant model value")?;
            Ok(Box::new(ConstantModel::new(manifest_scale(manifest)?, value)))
        }
        "gt" => Ok(Box::new(GroundTruthModel::from_manifest(manifest)?)),
        "toy" => {
            let path = arg.context("toy model spec needs a checkpoint: toy:<path>")?;
            let model = ToyModel::load(path)?;
            Ok(Box::new(ToyModelAdapter::new(model, mode)))
        }
        other => bail!("unknown model adapter {other:?} (known: bicubic, constant, gt, toy)"),
    }
}

pub fn resolve_recognizer(spec: &str) -> anyhow::Result<Box<dyn Recognizer>> {
    match spec {
        "null" => Ok(Box::new(NullRecognizer)),
        "stub" => Ok(Box::new(StubRecognizer)),
        other => bail!("unknown recognizer adapter {other:?} (known: null, stub)"),
    }
}
