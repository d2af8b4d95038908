//! Minimal reverse-mode automatic differentiation over `(N, C, H, W)`
//! tensors of `f64`.
//!
//! A [`Tape`] records operations as they execute; [`Tape::backward`] walks
//! the record in reverse and accumulates exact gradients. The op set is just
//! what a small convolutional super-resolution network and its losses need.
//! Shape violations are programmer errors and panic.

use ndarray::{Array2, Array4};
use rayon::prelude::*;

/// Tensor layout used throughout training: batch, channels, height, width.
pub type Tensor = Array4<f64>;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Abs(Var),
    Mean(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        pad: usize,
    },
    NearestUp(Var, usize),
    PixelShuffle(Var, usize),
    ConcatChannels(Var, Var),
    RepeatChannels(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Operation tape. Create leaves, apply ops, then call [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to tape nodes.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; `None` if `v` does not influence the root or was
    /// created as a constant.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input (targets, fixed extractor weights).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a `(1,1,1,1)` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar() on non-scalar node of shape {:?}", t.dim());
        t[(0, 0, 0, 0)]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = same_shape_zip(self.value(a), self.value(b), "add", |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = same_shape_zip(self.value(a), self.value(b), "sub", |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), needs)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = same_shape_zip(self.value(a), self.value(b), "mul", |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).mapv(|x| x * factor);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, factor), needs)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::abs);
        let needs = self.needs(a);
        self.push(value, Op::Abs(a), needs)
    }

    /// Mean over every element, yielding a `(1,1,1,1)` scalar node.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.sum() / t.len() as f64;
        let needs = self.needs(a);
        self.push(Tensor::from_elem((1, 1, 1, 1), m), Op::Mean(a), needs)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| if x >= 0.0 { x } else { slope * x });
        let needs = self.needs(a);
        self.push(value, Op::LeakyRelu(a, slope), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let needs = self.needs(a);
        self.push(value, Op::Tanh(a), needs)
    }

    /// `mean(|a - b|)` as a scalar node.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean(d)
    }

    /// 2-D convolution, stride 1, zero padding `pad`. `weight` is
    /// `(out_c, in_c, kh, kw)`; `bias`, when given, is `(1, out_c, 1, 1)`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, pad: usize) -> Var {
        let x = self.value(input);
        let w = self.value(weight);
        let (n, ci, h, wd) = x.dim();
        let (co, wci, kh, kw) = w.dim();
        assert_eq!(ci, wci, "conv2d channel mismatch: input {ci}, weight {wci}");
        let (oh, ow) = (h + 2 * pad + 1 - kh, wd + 2 * pad + 1 - kw);
        let wmat = w
            .view()
            .into_shape_with_order((co, wci * kh * kw))
            .expect("weight is contiguous");

        let outputs: Vec<Array2<f64>> = (0..n)
            .into_par_iter()
            .map(|s| {
                let cols = im2col(x, s, kh, kw, pad);
                wmat.dot(&cols)
            })
            .collect();
        let mut out = Tensor::zeros((n, co, oh, ow));
        {
            let os = out.as_slice_mut().expect("standard layout");
            let plane = co * oh * ow;
            for (s, o) in outputs.into_iter().enumerate() {
                os[s * plane..(s + 1) * plane]
                    .copy_from_slice(o.as_slice().expect("gemm output is contiguous"));
            }
        }
        if let Some(b) = bias {
            let bv = self.value(b);
            assert_eq!(bv.dim(), (1, co, 1, 1), "conv2d bias shape");
            let biases: Vec<f64> = (0..co).map(|c| bv[(0, c, 0, 0)]).collect();
            let os = out.as_slice_mut().expect("standard layout");
            let hw = oh * ow;
            for s in 0..n {
                for (c, add) in biases.iter().enumerate() {
                    let start = (s * co + c) * hw;
                    for v in &mut os[start..start + hw] {
                        *v += add;
                    }
                }
            }
        }
        let needs =
            self.needs(input) || self.needs(weight) || bias.map(|b| self.needs(b)).unwrap_or(false);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            },
            needs,
        )
    }

    /// Nearest-neighbor spatial upsampling by an integer factor.
    pub fn nearest_up(&mut self, a: Var, factor: usize) -> Var {
        let x = self.value(a);
        let (n, c, h, w) = x.dim();
        let mut out = Tensor::zeros((n, c, h * factor, w * factor));
        {
            let xs = x.as_slice().expect("standard layout");
            let os = out.as_slice_mut().expect("standard layout");
            let (ow, oplane) = (w * factor, h * factor * w * factor);
            for p in 0..n * c {
                let ibase = p * h * w;
                let obase = p * oplane;
                for y in 0..h {
                    for dy in 0..factor {
                        let orow = obase + (y * factor + dy) * ow;
                        for xx in 0..w {
                            let v = xs[ibase + y * w + xx];
                            let start = orow + xx * factor;
                            for slot in &mut os[start..start + factor] {
                                *slot = v;
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(a);
        self.push(out, Op::NearestUp(a, factor), needs)
    }

    /// Rearranges `(N, C*r^2, H, W)` into `(N, C, H*r, W*r)`.
    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Var {
        let x = self.value(a);
        let (n, c_in, h, w) = x.dim();
        assert_eq!(c_in % (r * r), 0, "pixel_shuffle channels {c_in} not divisible by r^2");
        let c = c_in / (r * r);
        let mut out = Tensor::zeros((n, c, h * r, w * r));
        {
            let xs = x.as_slice().expect("standard layout");
            let os = out.as_slice_mut().expect("standard layout");
            let (ow, ohw) = (w * r, h * r * w * r);
            for s in 0..n {
                for ch in 0..c {
                    let obase = (s * c + ch) * ohw;
                    for dy in 0..r {
                        for dx in 0..r {
                            let ibase = (s * c_in + ch * r * r + dy * r + dx) * h * w;
                            for y in 0..h {
                                let orow = obase + (y * r + dy) * ow + dx;
                                let irow = ibase + y * w;
                                for xx in 0..w {
                                    os[orow + xx * r] = xs[irow + xx];
                                }
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(a);
        self.push(out, Op::PixelShuffle(a, r), needs)
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (xa, xb) = (self.value(a), self.value(b));
        let (n, ca, h, w) = xa.dim();
        let (nb, cb, hb, wb) = xb.dim();
        assert_eq!((n, h, w), (nb, hb, wb), "concat_channels spatial/batch mismatch");
        let mut out = Tensor::zeros((n, ca + cb, h, w));
        {
            let (sa, sb) = (
                xa.as_slice().expect("standard layout"),
                xb.as_slice().expect("standard layout"),
            );
            let os = out.as_slice_mut().expect("standard layout");
            let hw = h * w;
            for s in 0..n {
                let obase = s * (ca + cb) * hw;
                os[obase..obase + ca * hw].copy_from_slice(&sa[s * ca * hw..(s + 1) * ca * hw]);
                os[obase + ca * hw..obase + (ca + cb) * hw]
                    .copy_from_slice(&sb[s * cb * hw..(s + 1) * cb * hw]);
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::ConcatChannels(a, b), needs)
    }

    /// Repeats the channel axis `times` times (e.g. 1-channel map to 3).
    pub fn repeat_channels(&mut self, a: Var, times: usize) -> Var {
        let x = self.value(a);
        let (n, c, h, w) = x.dim();
        let mut out = Tensor::zeros((n, c * times, h, w));
        {
            let xs = x.as_slice().expect("standard layout");
            let os = out.as_slice_mut().expect("standard layout");
            let block = c * h * w;
            for s in 0..n {
                for rep in 0..times {
                    let obase = (s * times + rep) * block;
                    os[obase..obase + block].copy_from_slice(&xs[s * block..(s + 1) * block]);
                }
            }
        }
        let needs = self.needs(a);
        self.push(out, Op::RepeatChannels(a, times), needs)
    }

    /// Reverse pass from a scalar root. Returns gradients for every node
    /// that influences the root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).len(),
            1,
            "backward root must be scalar, got shape {:?}",
            self.value(root).dim()
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::from_elem((1, 1, 1, 1), 1.0));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &grad, &mut grads);
            grads[idx] = Some(grad);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, grad.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, grad.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, grad.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, grad.mapv(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, grad * self.value(*b));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, grad * self.value(*a));
                }
            }
            Op::Scale(a, factor) => {
                if self.needs(*a) {
                    accumulate(grads, *a, grad.mapv(|g| g * factor));
                }
            }
            Op::Abs(a) => {
                if self.needs(*a) {
                    let sign = self.value(*a).mapv(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    accumulate(grads, *a, grad * &sign);
                }
            }
            Op::Mean(a) => {
                if self.needs(*a) {
                    let src = self.value(*a);
                    let g = grad[(0, 0, 0, 0)] / src.len() as f64;
                    accumulate(grads, *a, Tensor::from_elem(src.dim(), g));
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.needs(*a) {
                    let mask = self.value(*a).mapv(|x| if x >= 0.0 { 1.0 } else { *slope });
                    accumulate(grads, *a, grad * &mask);
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(*a) {
                    let s = &self.nodes[idx].value;
                    accumulate(grads, *a, grad * &s.mapv(|v| v * (1.0 - v)));
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let t = &self.nodes[idx].value;
                    accumulate(grads, *a, grad * &t.mapv(|v| 1.0 - v * v));
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            } => {
                self.conv2d_backward(grad, *input, *weight, *bias, *pad, grads);
            }
            Op::NearestUp(a, factor) => {
                if self.needs(*a) {
                    let f = *factor;
                    let (n, c, h, w) = self.value(*a).dim();
                    let mut g = Tensor::zeros((n, c, h, w));
                    {
                        let gs = grad.as_slice().expect("standard layout");
                        let out = g.as_slice_mut().expect("standard layout");
                        let (gw, gplane) = (w * f, h * f * w * f);
                        for p in 0..n * c {
                            let obase = p * h * w;
                            let ibase = p * gplane;
                            for y in 0..h {
                                for dy in 0..f {
                                    let grow = ibase + (y * f + dy) * gw;
                                    for xx in 0..w {
                                        let mut acc = 0.0;
                                        for slot in &gs[grow + xx * f..grow + (xx + 1) * f] {
                                            acc += slot;
                                        }
                                        out[obase + y * w + xx] += acc;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(grads, *a, g);
                }
            }
            Op::PixelShuffle(a, r) => {
                if self.needs(*a) {
                    let r = *r;
                    let (n, c_in, h, w) = self.value(*a).dim();
                    let c = c_in / (r * r);
                    let mut g = Tensor::zeros((n, c_in, h, w));
                    {
                        let gs = grad.as_slice().expect("standard layout");
                        let out = g.as_slice_mut().expect("standard layout");
                        let (gw, ghw) = (w * r, h * r * w * r);
                        for s in 0..n {
                            for ch in 0..c {
                                let gbase = (s * c + ch) * ghw;
                                for dy in 0..r {
                                    for dx in 0..r {
                                        let obase = (s * c_in + ch * r * r + dy * r + dx) * h * w;
                                        for y in 0..h {
                                            let grow = gbase + (y * r + dy) * gw + dx;
                                            let orow = obase + y * w;
                                            for xx in 0..w {
                                                out[orow + xx] = gs[grow + xx * r];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(grads, *a, g);
                }
            }
            Op::ConcatChannels(a, b) => {
                let ca = self.value(*a).dim().1;
                let (n, ct, h, w) = grad.dim();
                let hw = h * w;
                let gs = grad.as_slice().expect("standard layout");
                if self.needs(*a) {
                    let mut g = Tensor::zeros((n, ca, h, w));
                    {
                        let out = g.as_slice_mut().expect("standard layout");
                        for s in 0..n {
                            let src = s * ct * hw;
                            out[s * ca * hw..(s + 1) * ca * hw]
                                .copy_from_slice(&gs[src..src + ca * hw]);
                        }
                    }
                    accumulate(grads, *a, g);
                }
                if self.needs(*b) {
                    let cb = ct - ca;
                    let mut g = Tensor::zeros((n, cb, h, w));
                    {
                        let out = g.as_slice_mut().expect("standard layout");
                        for s in 0..n {
                            let src = s * ct * hw + ca * hw;
                            out[s * cb * hw..(s + 1) * cb * hw]
                                .copy_from_slice(&gs[src..src + cb * hw]);
                        }
                    }
                    accumulate(grads, *b, g);
                }
            }
            Op::RepeatChannels(a, times) => {
                if self.needs(*a) {
                    let (n, c, h, w) = self.value(*a).dim();
                    let mut g = Tensor::zeros((n, c, h, w));
                    {
                        let gs = grad.as_slice().expect("standard layout");
                        let out = g.as_slice_mut().expect("standard layout");
                        let block = c * h * w;
                        for s in 0..n {
                            for rep in 0..*times {
                                let src = (s * times + rep) * block;
                                let dst = s * block;
                                for i in 0..block {
                                    out[dst + i] += gs[src + i];
                                }
                            }
                        }
                    }
                    accumulate(grads, *a, g);
                }
            }
        }
    }

    fn conv2d_backward(
        &self,
        grad: &Tensor,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        pad: usize,
        grads: &mut [Option<Tensor>],
    ) {
        let x = self.value(input);
        let w = self.value(weight);
        let (n, ci, h, wd) = x.dim();
        let (co, _, kh, kw) = w.dim();
        let (_, _, oh, ow) = grad.dim();
        let k = ci * kh * kw;
        let wmat = w
            .view()
            .into_shape_with_order((co, k))
            .expect("weight is contiguous");

        let want_input = self.needs(input);
        let want_weight = self.needs(weight);

        // Per-sample contributions, then a deterministic in-order reduction.
        let gs = grad.as_slice().expect("standard layout");
        let out_plane = co * oh * ow;
        let parts: Vec<(Option<Array2<f64>>, Option<Array2<f64>>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let gout = ndarray::ArrayView2::from_shape(
                    (co, oh * ow),
                    &gs[s * out_plane..(s + 1) * out_plane],
                )
                .expect("contiguous grad sample");
                let dw = want_weight.then(|| {
                    let cols = im2col(x, s, kh, kw, pad);
                    gout.dot(&cols.t())
                });
                let dx = want_input.then(|| wmat.t().dot(&gout));
                (dw, dx)
            })
            .collect();

        if want_weight {
            let mut dw_total = Array2::<f64>::zeros((co, k));
            for (dw, _) in &parts {
                dw_total += dw.as_ref().expect("requested weight grad");
            }
            let dw4 = dw_total
                .into_shape_with_order((co, ci, kh, kw))
                .expect("contiguous")
                .to_owned();
            accumulate(grads, weight, dw4);
        }
        if want_input {
            let mut dx_total = Tensor::zeros((n, ci, h, wd));
            for (s, (_, dcols)) in parts.iter().enumerate() {
                let dcols = dcols.as_ref().expect("requested input grad");
                col2im_into(dcols, &mut dx_total, s, kh, kw, pad);
            }
            accumulate(grads, input, dx_total);
        }
        if let Some(b) = bias {
            if self.needs(b) {
                let mut db = Tensor::zeros((1, co, 1, 1));
                let hw = oh * ow;
                for s in 0..n {
                    for c in 0..co {
                        let start = (s * co + c) * hw;
                        let mut acc = 0.0;
                        for v in &gs[start..start + hw] {
                            acc += v;
                        }
                        db[(0, c, 0, 0)] += acc;
                    }
                }
                accumulate(grads, b, db);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

/// Valid output-column range and matching source start for one kernel x
/// offset: `xx` in `lo..hi` maps to source `sx = xx + kx - pad` inside the
/// image.
#[inline]
fn col_range(w: usize, ow: usize, kx: usize, pad: usize) -> (usize, usize, usize) {
    let lo = pad.saturating_sub(kx);
    let hi = (w + pad - kx).min(ow);
    let sx_lo = lo + kx - pad;
    (lo, hi, sx_lo)
}

/// Unfolds one sample into a `(ci*kh*kw, oh*ow)` patch matrix (zero
/// padding). Interior spans are contiguous copies.
fn im2col(x: &Tensor, sample: usize, kh: usize, kw: usize, pad: usize) -> Array2<f64> {
    let (_, ci, h, w) = x.dim();
    let (oh, ow) = (h + 2 * pad + 1 - kh, w + 2 * pad + 1 - kw);
    let xs = x.as_slice().expect("standard layout");
    let base = sample * ci * h * w;
    let mut cols = Array2::<f64>::zeros((ci * kh * kw, oh * ow));
    let cs = cols.as_slice_mut().expect("standard layout");
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row_off = ((c * kh + ky) * kw + kx) * oh * ow;
                let (lo, hi, sx_lo) = col_range(w, ow, kx, pad);
                if lo >= hi {
                    continue;
                }
                for y in 0..oh {
                    let sy = y + ky;
                    if sy < pad || sy >= h + pad {
                        continue;
                    }
                    let src = base + (c * h + (sy - pad)) * w + sx_lo;
                    let dst = row_off + y * ow + lo;
                    cs[dst..dst + (hi - lo)].copy_from_slice(&xs[src..src + (hi - lo)]);
                }
            }
        }
    }
    cols
}

/// Accumulates a patch-matrix gradient back onto sample `s` of `dx`.
fn col2im_into(dcols: &Array2<f64>, dx: &mut Tensor, sample: usize, kh: usize, kw: usize, pad: usize) {
    let (n_, ci, h, w) = dx.dim();
    debug_assert!(sample < n_);
    let (oh, ow) = (h + 2 * pad + 1 - kh, w + 2 * pad + 1 - kw);
    let ds = dcols.as_slice().expect("standard layout");
    let out = dx.as_slice_mut().expect("standard layout");
    let base = sample * ci * h * w;
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row_off = ((c * kh + ky) * kw + kx) * oh * ow;
                let (lo, hi, sx_lo) = col_range(w, ow, kx, pad);
                if lo >= hi {
                    continue;
                }
                for y in 0..oh {
                    let sy = y + ky;
                    if sy < pad || sy >= h + pad {
                        continue;
                    }
                    let dst = base + (c * h + (sy - pad)) * w + sx_lo;
                    let src = row_off + y * ow + lo;
                    for i in 0..hi - lo {
                        out[dst + i] += ds[src + i];
                    }
                }
            }
        }
    }
}

fn same_shape_zip(a: &Tensor, b: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.dim(), b.dim(), "{op}: shape mismatch {:?} vs {:?}", a.dim(), b.dim());
    let mut out = a.clone();
    out.zip_mut_with(b, |x, &y| *x = f(*x, y));
    out
}
