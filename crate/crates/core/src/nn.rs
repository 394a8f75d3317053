//! Minimal feed-forward engine: dense and 2-D convolution layers, ReLU,
//! flatten, manual backpropagation, SGD with an exponential learning-rate
//! schedule, and softmax cross-entropy training.
//!
//! Weights of projectable layers (dense and conv) are stored as matrices
//! acting on input representations: dense `out × in`, conv
//! `c_out × (c_in·kh·kw)` applied to im2col patches.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{im2row, row2im_add, ConvGeometry, Matrix};

/// Shape of one input sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputShape {
    Flat(usize),
    Image { channels: usize, height: usize, width: usize },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Flat(n) => n,
            InputShape::Image { channels, height, width } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Conv2d {
        c_in: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Relu,
    Flatten,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn dense(input: usize, output: usize) -> Self {
        LayerSpec::Dense { input, output, bias: true }
    }

    pub fn conv2d(c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv2d { c_in, c_out, kh: kernel, kw: kernel, stride, pad, bias: true }
    }

    pub fn is_projectable(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }
}

/// Reference MLP: `d_in → hidden → hidden → classes`.
pub fn mlp_specs(d_in: usize, hidden: usize, classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(d_in, hidden),
        LayerSpec::Relu,
        LayerSpec::dense(hidden, hidden),
        LayerSpec::Relu,
        LayerSpec::dense(hidden, classes),
    ]
}

/// Reference CNN for single-channel `side × side` images.
pub fn cnn_specs(side: usize, classes: usize) -> Vec<LayerSpec> {
    // conv1 keeps the spatial size (pad 1); conv2 halves it (stride 2, pad 1)
    let after = (side + 2 - 3) / 2 + 1;
    vec![
        LayerSpec::conv2d(1, 8, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::conv2d(8, 16, 3, 2, 1),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::dense(16 * after * after, classes),
    ]
}

/// Weights of one projectable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Flat(usize),
    Map { c: usize, h: usize, w: usize },
}

impl Shape {
    fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Map { c, h, w } => c * h * w,
        }
    }
}

impl From<InputShape> for Shape {
    fn from(s: InputShape) -> Self {
        match s {
            InputShape::Flat(n) => Shape::Flat(n),
            InputShape::Image { channels, height, width } => {
                Shape::Map { c: channels, h: height, w: width }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Step {
    Dense { param: usize },
    Conv { param: usize, geom: ConvGeometry, c_out: usize },
    Relu,
    Flatten,
}

/// Resolves shapes layer by layer; returns the execution plan and the
/// output shape.
fn compile(input: InputShape, specs: &[LayerSpec]) -> Result<(Vec<Step>, Shape)> {
    let mut shape = Shape::from(input);
    let mut steps = Vec::with_capacity(specs.len());
    let mut param = 0;
    for (i, spec) in specs.iter().enumerate() {
        match *spec {
            LayerSpec::Dense { input, output, .. } => {
                if shape != Shape::Flat(input) {
                    return Err(Error::validation(format!(
                        "layer {i}: dense expects flat input of {input}, got {shape:?}"
                    )));
                }
                if output == 0 {
                    return Err(Error::validation(format!("layer {i}: dense output must be positive")));
                }
                steps.push(Step::Dense { param });
                param += 1;
                shape = Shape::Flat(output);
            }
            LayerSpec::Conv2d { c_in, c_out, kh, kw, stride, pad, .. } => {
                let Shape::Map { c, h, w } = shape else {
                    return Err(Error::validation(format!("layer {i}: conv2d needs an image input")));
                };
                if c != c_in || c_out == 0 {
                    return Err(Error::validation(format!(
                        "layer {i}: conv2d expects {c_in} channels, got {c}"
                    )));
                }
                let geom = ConvGeometry {
                    channels: c,
                    height: h,
                    width: w,
                    kernel: (kh, kw),
                    stride: (stride, stride),
                    padding: (pad, pad),
                };
                geom.validate().map_err(|e| Error::validation(format!("layer {i}: {e}")))?;
                shape = Shape::Map { c: c_out, h: geom.out_height(), w: geom.out_width() };
                steps.push(Step::Conv { param, geom, c_out });
                param += 1;
            }
            LayerSpec::Relu => steps.push(Step::Relu),
            LayerSpec::Flatten => {
                shape = Shape::Flat(shape.len());
                steps.push(Step::Flatten);
            }
        }
    }
    match specs.last() {
        Some(LayerSpec::Dense { .. }) => Ok((steps, shape)),
        _ => Err(Error::validation("network must end with a dense layer")),
    }
}

/// Ordered layers plus the parameters of every projectable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    input: InputShape,
    specs: Vec<LayerSpec>,
    params: Vec<LayerParams>,
    steps: Vec<Step>,
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
pub fn init_model(input: InputShape, specs: &[LayerSpec], seed: u64) -> Result<NetworkModel> {
    compile(input, specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = specs
        .iter()
        .filter_map(|spec| {
            let (rows, cols, fan_in, fan_out, bias) = match *spec {
                LayerSpec::Dense { input, output, bias } => (output, input, input, output, bias),
                LayerSpec::Conv2d { c_in, c_out, kh, kw, bias, .. } => {
                    (c_out, c_in * kh * kw, c_in * kh * kw, c_out * kh * kw, bias)
                }
                _ => return None,
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound));
            Some(LayerParams { weight, bias: bias.then(|| vec![0.0; rows]) })
        })
        .collect();
    NetworkModel::from_parts(input, specs.to_vec(), params)
}

impl NetworkModel {
    /// Assembles a model from explicit parameters, checking every shape.
    pub fn from_parts(input: InputShape, specs: Vec<LayerSpec>, params: Vec<LayerParams>) -> Result<Self> {
        let (steps, _) = compile(input, &specs)?;
        let projectable: Vec<&LayerSpec> = specs.iter().filter(|s| s.is_projectable()).collect();
        if projectable.len() != params.len() {
            return Err(Error::validation(format!(
                "{} projectable layers but {} parameter sets",
                projectable.len(),
                params.len()
            )));
        }
        for (i, (spec, p)) in projectable.iter().zip(&params).enumerate() {
            let (rows, cols, has_bias) = match **spec {
                LayerSpec::Dense { input, output, bias } => (output, input, bias),
                LayerSpec::Conv2d { c_in, c_out, kh, kw, bias, .. } => (c_out, c_in * kh * kw, bias),
                _ => unreachable!(),
            };
            if p.weight.shape() != (rows, cols) {
                return Err(Error::validation(format!(
                    "layer {i}: weight is {:?}, spec needs {rows}x{cols}",
                    p.weight.shape()
                )));
            }
            match &p.bias {
                Some(b) if !has_bias || b.len() != rows => {
                    return Err(Error::validation(format!("layer {i}: bias shape mismatch")))
                }
                None if has_bias => return Err(Error::validation(format!("layer {i}: missing bias"))),
                _ => {}
            }
            if !p.weight.is_finite() || p.bias.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::numerical(format!("layer {i}: non-finite parameters")));
            }
        }
        Ok(Self { input, specs, params, steps })
    }

    pub fn input_shape(&self) -> InputShape {
        self.input
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Parameters of projectable layers, in network order.
    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn num_projectable(&self) -> usize {
        self.params.len()
    }

    /// Representation dimension `d` of each projectable layer.
    pub fn layer_dims(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.weight.cols()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.params.last().map_or(0, |p| p.weight.rows())
    }

    /// SHA-256 over every weight and bias, little-endian.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for p in &self.params {
            hasher.update((p.weight.rows() as u64).to_le_bytes());
            hasher.update((p.weight.cols() as u64).to_le_bytes());
            for v in p.weight.as_slice() {
                hasher.update(v.to_le_bytes());
            }
            for v in p.bias.iter().flatten() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    /// Deletes output rows (and bias entries) of the final dense layer.
    pub fn drop_output_rows(&mut self, rows: &BTreeSet<usize>) -> Result<()> {
        let classes = self.num_classes();
        if let Some(&bad) = rows.iter().find(|&&r| r >= classes) {
            return Err(Error::validation(format!("class {bad} out of range for {classes} outputs")));
        }
        if rows.len() >= classes {
            return Err(Error::validation("cannot remove every output class"));
        }
        if rows.is_empty() {
            return Ok(());
        }
        let keep: Vec<usize> = (0..classes).filter(|c| !rows.contains(c)).collect();
        let last = self.params.last_mut().expect("network ends with a dense layer");
        last.weight = last.weight.select_rows(&keep);
        if let Some(b) = &mut last.bias {
            *b = keep.iter().map(|&k| b[k]).collect();
        }
        if let Some(LayerSpec::Dense { output, .. }) = self.specs.last_mut() {
            *output = keep.len();
        }
        Ok(())
    }

    /// Forward pass over a `batch × input_len` matrix.
    pub fn forward(&self, batch: &Matrix, capture: bool) -> Result<ForwardTrace> {
        if batch.cols() != self.input.len() {
            return Err(Error::validation(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input.len()
            )));
        }
        let n = batch.rows();
        let mut x = batch.clone();
        let mut inputs = Vec::new();
        let mut captured = Vec::new();
        for (li, step) in self.steps.iter().enumerate() {
            let next = match step {
                Step::Dense { param } => {
                    let p = &self.params[*param];
                    let mut y = x.matmul_t(&p.weight)?;
                    if let Some(b) = &p.bias {
                        for r in 0..n {
                            for (v, bv) in y.row_mut(r).iter_mut().zip(b) {
                                *v += bv;
                            }
                        }
                    }
                    if capture {
                        captured.push(x.clone());
                    }
                    y
                }
                Step::Conv { param, geom, c_out } => {
                    let p = &self.params[*param];
                    let n_patches = geom.n_patches();
                    let mut y = Matrix::zeros(n, c_out * n_patches);
                    let mut all_patches = capture.then(|| Matrix::zeros(n * n_patches, geom.patch_len()));
                    for s in 0..n {
                        let patches = im2row(x.row(s), geom)?;
                        // (P × d)·(c_out × d)ᵀ = P × c_out
                        let out = patches.matmul_t(&p.weight)?;
                        let row = y.row_mut(s);
                        for pos in 0..n_patches {
                            for c in 0..*c_out {
                                let b = p.bias.as_ref().map_or(0.0, |b| b[c]);
                                row[c * n_patches + pos] = out.get(pos, c) + b;
                            }
                        }
                        if let Some(all) = all_patches.as_mut() {
                            let d = geom.patch_len();
                            all.as_mut_slice()[s * n_patches * d..(s + 1) * n_patches * d]
                                .copy_from_slice(patches.as_slice());
                        }
                    }
                    if let Some(all) = all_patches {
                        captured.push(all);
                    }
                    y
                }
                Step::Relu => x.map(|v| v.max(0.0)),
                Step::Flatten => x.clone(),
            };
            if !next.is_finite() {
                return Err(Error::numerical(format!("non-finite activation after layer {li}")));
            }
            if capture {
                inputs.push(std::mem::replace(&mut x, next));
            } else {
                x = next;
            }
        }
        Ok(ForwardTrace { logits: x, captured: capture.then_some(captured), inputs })
    }

    /// Logits for a (possibly large) sample matrix, evaluated in chunks.
    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        const CHUNK: usize = 512;
        let n = features.rows();
        let mut out = Vec::with_capacity(n * self.num_classes());
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let trace = self.forward(&features.select_rows(&idx), false)?;
            out.extend_from_slice(trace.logits.as_slice());
            start = end;
        }
        Matrix::new(n, self.num_classes(), out)
    }

    /// Argmax class per sample; ties go to the lowest index.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        let logits = self.logits(features)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    /// `W ← W − lr·∇W` on unmasked projectable layers; biases only when
    /// `update_bias` is set (training), never during unlearning.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, mask: &LayerMask, update_bias: bool) -> Result<()> {
        if grads.layers.len() != self.params.len() {
            return Err(Error::validation(format!(
                "{} gradient entries for {} layers",
                grads.layers.len(),
                self.params.len()
            )));
        }
        for (i, (p, g)) in self.params.iter().zip(&grads.layers).enumerate() {
            if p.weight.shape() != g.weight.shape() {
                return Err(Error::validation(format!("layer {i}: gradient shape mismatch")));
            }
            if let (Some(b), Some(gb)) = (&p.bias, &g.bias) {
                if b.len() != gb.len() {
                    return Err(Error::validation(format!("layer {i}: bias gradient shape mismatch")));
                }
            }
        }
        if lr == 0.0 {
            return Ok(());
        }
        for (i, (p, g)) in self.params.iter_mut().zip(&grads.layers).enumerate() {
            if !mask.contains(i) {
                continue;
            }
            p.weight.axpy(-lr, &g.weight)?;
            if update_bias {
                if let (Some(b), Some(gb)) = (p.bias.as_mut(), g.bias.as_ref()) {
                    for (bv, gv) in b.iter_mut().zip(gb) {
                        *bv -= lr * gv;
                    }
                }
            }
        }
        Ok(())
    }

    /// Backpropagates `grad_logits` through a captured trace.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: &Matrix) -> Result<Gradients> {
        let Some(captured) = trace.captured.as_ref() else {
            return Err(Error::validation("backward needs a trace recorded with capture enabled"));
        };
        if trace.inputs.len() != self.steps.len() || captured.len() != self.params.len() {
            return Err(Error::validation("trace does not belong to this model"));
        }
        if grad_logits.shape() != trace.logits.shape() {
            return Err(Error::validation(format!(
                "grad_logits is {:?}, logits are {:?}",
                grad_logits.shape(),
                trace.logits.shape()
            )));
        }
        let n = grad_logits.rows();
        let mut layers: Vec<Option<LayerGrad>> = vec![None; self.params.len()];
        let mut g = grad_logits.clone();
        for (li, step) in self.steps.iter().enumerate().rev() {
            let input = &trace.inputs[li];
            match step {
                Step::Dense { param } => {
                    let p = &self.params[*param];
                    let weight = g.t_matmul(&captured[*param])?;
                    let bias = p.bias.as_ref().map(|_| column_sums(&g));
                    layers[*param] = Some(LayerGrad { weight, bias });
                    if li > 0 {
                        g = g.matmul(&p.weight)?;
                    }
                }
                Step::Conv { param, geom, c_out } => {
                    let p = &self.params[*param];
                    let n_patches = geom.n_patches();
                    let d = geom.patch_len();
                    let patches = &captured[*param];
                    let mut weight = Matrix::zeros(*c_out, d);
                    let mut bias = vec![0.0; *c_out];
                    let mut g_in = Matrix::zeros(n, geom.input_len());
                    for s in 0..n {
                        // g_s: c_out × P laid out channel-major in the row
                        let g_s = Matrix::new(*c_out, n_patches, g.row(s).to_vec())?;
                        let r_s = Matrix::new(
                            n_patches,
                            d,
                            patches.as_slice()[s * n_patches * d..(s + 1) * n_patches * d].to_vec(),
                        )?;
                        weight.add_assign(&g_s.matmul(&r_s)?)?;
                        for (c, b) in bias.iter_mut().enumerate() {
                            *b += g_s.row(c).iter().sum::<f64>();
                        }
                        if li > 0 {
                            let d_patches = g_s.t_matmul(&p.weight)?;
                            row2im_add(&d_patches, geom, g_in.row_mut(s));
                        }
                    }
                    layers[*param] = Some(LayerGrad { weight, bias: p.bias.as_ref().map(|_| bias) });
                    g = g_in;
                }
                Step::Relu => {
                    for (gv, &xv) in g.as_mut_slice().iter_mut().zip(input.as_slice()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
                Step::Flatten => {}
            }
        }
        Ok(Gradients { layers: layers.into_iter().map(|l| l.expect("every layer visited")).collect() })
    }
}

/// Output of [`NetworkModel::forward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Matrix,
    /// Per projectable layer, one input representation per row: dense
    /// layers record their input, conv layers every im2col patch.
    pub captured: Option<Vec<Matrix>>,
    inputs: Vec<Matrix>,
}

/// Gradient of one projectable layer, in the weight layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    /// Never projected and never applied during unlearning.
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

/// Set of projectable-layer indices an update touches; `None` means all.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerMask(Option<BTreeSet<usize>>);

impl LayerMask {
    pub fn all() -> Self {
        LayerMask(None)
    }

    pub fn only(layers: impl IntoIterator<Item = usize>) -> Self {
        LayerMask(Some(layers.into_iter().collect()))
    }

    pub fn none() -> Self {
        LayerMask(Some(BTreeSet::new()))
    }

    /// The deepest `k` of `n_layers` projectable layers.
    pub fn top_k(n_layers: usize, k: usize) -> Self {
        Self::only(n_layers.saturating_sub(k)..n_layers)
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.0.as_ref().is_none_or(|s| s.contains(&layer))
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Row-wise softmax.
pub fn softmax(logits: &Matrix) -> Matrix {
    log_softmax(logits).map(f64::exp)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    if labels.len() != n || n == 0 {
        return Err(Error::validation("labels must match a non-empty batch"));
    }
    let logp = log_softmax(logits);
    let mut grad = logp.map(f64::exp);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= logits.cols() {
            return Err(Error::validation(format!("label {y} out of range")));
        }
        loss -= logp.get(r, y);
        grad.set(r, y, grad.get(r, y) - 1.0);
    }
    Ok((loss / n as f64, grad.scale(1.0 / n as f64)))
}

/// Exponential schedule `lr_start·(lr_end/lr_start)^(t/T)`.
pub fn lr_at(t: usize, total: usize, lr_start: f64, lr_end: f64) -> Result<f64> {
    if !(lr_start > 0.0 && lr_end > 0.0) {
        return Err(Error::validation("learning rates must be positive"));
    }
    if total == 0 || t > total {
        return Err(Error::validation(format!("step {t} outside schedule of {total}")));
    }
    Ok(lr_start * (lr_end / lr_start).powf(t as f64 / total as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return Err(Error::validation("need 0 < lr_end <= lr_start"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Percentage of training samples misclassified during the epoch.
    pub train_error: f64,
}

/// Mini-batch SGD on mean softmax cross-entropy. The learning rate decays
/// per epoch, reaching `lr_end` on the final epoch.
pub fn train_ce(model: &mut NetworkModel, data: &Dataset, config: &TrainConfig) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::validation("cannot train on an empty dataset"));
    }
    if data.num_classes() != model.num_classes() {
        return Err(Error::validation(format!(
            "dataset has {} classes, model outputs {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let horizon = config.epochs.saturating_sub(1).max(1);
    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let lr = lr_at(epoch.min(horizon), horizon, config.lr_start, config.lr_end)?;
        let mut loss_sum = 0.0;
        let mut wrong = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.features().select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let trace = model.forward(&batch, true)?;
            let (loss, grad) = cross_entropy(&trace.logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!("training loss diverged in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            wrong += (0..chunk.len()).filter(|&r| argmax(trace.logits.row(r)) != labels[r]).count();
            let grads = model.backward(&trace, &grad)?;
            model.sgd_step(&grads, lr, &LayerMask::all(), true)?;
        }
        log.push(EpochLog {
            epoch,
            loss: loss_sum / data.len() as f64,
            train_error: 100.0 * wrong as f64 / data.len() as f64,
        });
    }
    Ok(log)
}
