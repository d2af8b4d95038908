//! Edge-aware training losses with exact gradients.
//!
//! Three terms combine into the training objective: a plain L1 term on RGB
//! output, a pixel-level edge term (L1 between the predicted continuous edge
//! map and the binary target map), and a feature-level edge term — the L1
//! distance between extractor features of the image weighted element-wise by
//! extractor features of its edge map, for the estimate and the ground
//! truth:
//!
//! `total = l1 + alpha * edge_pixel + beta * edge_feature`
//!
//! Absolute differences are reduced by the mean over all elements, which
//! keeps the weights independent of image size (stated here because it
//! changes the effective magnitude of `alpha` and `beta` relative to a
//! sum-reduced convention).
//!
//! Every loss is available in two forms: a scalar convenience function on
//! tensors, and a tape form that participates in backpropagation. The edge
//! prediction is kept continuous in `[0, 1]` (no thresholding) so gradients
//! flow; single-channel edge maps are replicated to the extractor's input
//! channel count before feature extraction.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::edge::EdgeMap;
use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Balancing weights of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight on the pixel-level edge term.
    pub alpha: f64,
    /// Weight on the feature-level edge term.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 5e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "loss weight {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Differentiable feature extractor with fixed (non-trained) parameters.
///
/// Implementations register their weights as tape constants, so gradients
/// flow through the extractor to its input but never into it.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    /// Channels the extractor expects; inputs with one channel are
    /// replicated up to this count.
    fn input_channels(&self) -> usize {
        3
    }

    /// Builds the feature volume for `input` on the tape.
    fn apply(&self, tape: &mut Tape, input: Var) -> Var;
}

/// `F(x) = x`. Makes the feature-level loss algebraically transparent.
#[derive(Debug, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn name(&self) -> &str {
        "identity"
    }

    fn apply(&self, _tape: &mut Tape, input: Var) -> Var {
        input
    }
}

/// Small fixed-seed convolutional extractor: two 3x3 conv layers with tanh,
/// channels 3 -> 6 -> 8. Smooth everywhere, so finite-difference gradient
/// checks are well conditioned.
pub struct ConvFeatureExtractor {
    layers: Vec<(Tensor, Tensor)>,
    seed: u64,
}

impl ConvFeatureExtractor {
    pub fn seeded_test(seed: u64) -> Self {
        let spec = [(3usize, 6usize), (6, 8)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .iter()
            .map(|&(ci, co)| {
                let std = (1.0 / (ci as f64 * 9.0)).sqrt();
                let w = Tensor::from_shape_fn((co, ci, 3, 3), |_| {
                    rng.random_range(-1.0..1.0) * std * 1.7320508
                });
                let b = Tensor::from_shape_fn((1, co, 1, 1), |_| rng.random_range(-0.1..0.1));
                (w, b)
            })
            .collect();
        Self { layers, seed }
    }
}

impl std::fmt::Debug for ConvFeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ConvFeatureExtractor(seed={})", self.seed)
    }
}

impl FeatureExtractor for ConvFeatureExtractor {
    fn name(&self) -> &str {
        "conv-test"
    }

    fn apply(&self, tape: &mut Tape, input: Var) -> Var {
        let mut current = input;
        for (w, b) in &self.layers {
            let wv = tape.constant(w.clone());
            let bv = tape.constant(b.clone());
            let conv = tape.conv2d(current, wv, Some(bv), 1);
            current = tape.tanh(conv);
        }
        current
    }
}

/// `(1, C, H, W)` tensor from a raster image.
pub fn raster_to_tensor(img: &RasterImage) -> Tensor {
    let (h, w, c) = img.data().dim();
    Tensor::from_shape_fn((1, c, h, w), |(_, ch, y, x)| f64::from(img.get(y, x, ch)))
}

/// `(1, 1, H, W)` tensor from a binary edge map.
pub fn edge_map_to_tensor(map: &EdgeMap) -> Tensor {
    let (h, w) = (map.height(), map.width());
    Tensor::from_shape_fn((1, 1, h, w), |(_, _, y, x)| map.to_plane()[(y, x)])
}

/// Raster image from the first sample of a tensor, clamped to `[0, 1]`.
pub fn tensor_to_raster(t: &Tensor) -> Result<RasterImage> {
    let (_, c, h, w) = t.dim();
    RasterImage::from_array(Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
        t[(0, ch, y, x)].clamp(0.0, 1.0) as f32
    }))
}

fn check_same_shape(context: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            context,
            format!("{:?}", a.dim()),
            format!("{:?}", b.dim()),
        ));
    }
    Ok(())
}

/// Mean absolute difference over all elements.
///
/// Mirrors the tape computation step for step, so scalar and tape routes
/// agree bitwise.
pub fn l1_loss(est: &Tensor, gt: &Tensor) -> Result<f64> {
    check_same_shape("l1_loss", est, gt)?;
    let mut d = est.clone();
    d.zip_mut_with(gt, |a, &b| *a -= b);
    d.mapv_inplace(f64::abs);
    Ok(d.sum() / d.len() as f64)
}

/// Pixel-level edge loss: mean absolute difference between the continuous
/// edge prediction and the binary target.
pub fn ea_pixel_loss(c_est: &Tensor, c_gt: &Tensor) -> Result<f64> {
    check_same_shape("ea_pixel_loss", c_est, c_gt)?;
    l1_loss(c_est, c_gt)
}

fn feature_product(tape: &mut Tape, image: Var, edge: Var, extractor: &dyn FeatureExtractor) -> Var {
    let reps = extractor.input_channels();
    let edge_in = if tape.value(edge).dim().1 == reps {
        edge
    } else {
        tape.repeat_channels(edge, reps)
    };
    let fi = extractor.apply(tape, image);
    let fc = extractor.apply(tape, edge_in);
    tape.mul(fi, fc)
}

/// Feature-level edge loss on the tape.
pub fn ea_feature_loss_on_tape(
    tape: &mut Tape,
    i_est: Var,
    c_est: Var,
    i_gt: Var,
    c_gt: Var,
    extractor: &dyn FeatureExtractor,
) -> Var {
    let est = feature_product(tape, i_est, c_est, extractor);
    let gt = feature_product(tape, i_gt, c_gt, extractor);
    tape.mean_abs_diff(est, gt)
}

fn validate_feature_inputs(i_est: &Tensor, c_est: &Tensor, i_gt: &Tensor, c_gt: &Tensor) -> Result<()> {
    check_same_shape("ea_feature_loss images", i_est, i_gt)?;
    check_same_shape("ea_feature_loss edge maps", c_est, c_gt)?;
    let (n, ci, h, w) = i_est.dim();
    let (ne, ce, he, we) = c_est.dim();
    if ci != 3 {
        return Err(Error::InvalidInput(format!(
            "feature loss expects 3-channel images, got {ci}"
        )));
    }
    if ce != 1 {
        return Err(Error::InvalidInput(format!(
            "feature loss expects 1-channel edge maps, got {ce}"
        )));
    }
    if (n, h, w) != (ne, he, we) {
        return Err(Error::shape(
            "ea_feature_loss image/edge",
            format!("{:?}", (n, h, w)),
            format!("{:?}", (ne, he, we)),
        ));
    }
    Ok(())
}

/// Feature-level edge loss: mean absolute difference between edge-weighted
/// feature volumes of the estimate and the ground truth.
pub fn ea_feature_loss(
    i_est: &Tensor,
    c_est: &Tensor,
    i_gt: &Tensor,
    c_gt: &Tensor,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    validate_feature_inputs(i_est, c_est, i_gt, c_gt)?;
    let mut tape = Tape::new();
    let ie = tape.constant(i_est.clone());
    let ce = tape.constant(c_est.clone());
    let ig = tape.constant(i_gt.clone());
    let cg = tape.constant(c_gt.clone());
    let v = ea_feature_loss_on_tape(&mut tape, ie, ce, ig, cg, extractor);
    Ok(tape.scalar(v))
}

/// The three loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub ea_pixel: f64,
    pub ea_feature: f64,
}

/// Tape handles for the total loss and its components.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub l1: Var,
    pub ea_pixel: Var,
    pub ea_feature: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            total: tape.scalar(self.total),
            l1: tape.scalar(self.l1),
            ea_pixel: tape.scalar(self.ea_pixel),
            ea_feature: tape.scalar(self.ea_feature),
        }
    }
}

/// Builds the combined loss on the tape.
pub fn total_loss_on_tape(
    tape: &mut Tape,
    i_est: Var,
    c_est: Var,
    i_gt: Var,
    c_gt: Var,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
) -> LossVars {
    let l1 = tape.mean_abs_diff(i_est, i_gt);
    let ea_pixel = tape.mean_abs_diff(c_est, c_gt);
    let ea_feature = ea_feature_loss_on_tape(tape, i_est, c_est, i_gt, c_gt, extractor);
    let alpha_term = tape.scale(ea_pixel, weights.alpha);
    let beta_term = tape.scale(ea_feature, weights.beta);
    let partial = tape.add(l1, alpha_term);
    let total = tape.add(partial, beta_term);
    LossVars {
        total,
        l1,
        ea_pixel,
        ea_feature,
    }
}

/// Combined loss with per-component values for logging.
pub fn total_loss(
    i_est: &Tensor,
    c_est: &Tensor,
    i_gt: &Tensor,
    c_gt: &Tensor,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
) -> Result<LossBreakdown> {
    weights.validate()?;
    validate_feature_inputs(i_est, c_est, i_gt, c_gt)?;
    let mut tape = Tape::new();
    let ie = tape.constant(i_est.clone());
    let ce = tape.constant(c_est.clone());
    let ig = tape.constant(i_gt.clone());
    let cg = tape.constant(c_gt.clone());
    let vars = total_loss_on_tape(&mut tape, ie, ce, ig, cg, weights, extractor);
    Ok(vars.breakdown(&tape))
}

/// Compares analytic gradients of a scalar tape function against central
/// finite differences, element by element, over every input.
///
/// Returns the maximum relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`. Fails if the loss is non-finite at
/// any perturbed point.
pub fn gradient_check<F>(build: F, inputs: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    if !(1e-6..=1e-2).contains(&epsilon) {
        return Err(Error::InvalidInput(format!(
            "gradient_check epsilon must lie in [1e-6, 1e-2], got {epsilon}"
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().cloned().map(|t| tape.leaf(t)).collect();
    let root = build(&mut tape, &vars);
    if !tape.scalar(root).is_finite() {
        return Err(Error::InvalidInput(
            "loss is non-finite at the evaluation point".to_string(),
        ));
    }
    let grads = tape.backward(root);

    let eval = |perturbed: Vec<Tensor>| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.into_iter().map(|x| t.leaf(x)).collect();
        let r = build(&mut t, &vs);
        let v = t.scalar(r);
        if !v.is_finite() {
            return Err(Error::InvalidInput(
                "loss is non-finite at a perturbed point".to_string(),
            ));
        }
        Ok(v)
    };

    let mut max_rel = 0.0_f64;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[which])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.dim()));
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[which].as_slice_mut().expect("standard layout")[i] += epsilon;
            let mut minus = inputs.to_vec();
            minus[which].as_slice_mut().expect("standard layout")[i] -= epsilon;
            let numeric = (eval(plus)? - eval(minus)?) / (2.0 * epsilon);
            let a = analytic.as_slice().expect("standard layout")[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
