//! A small convolutional speaker classifier over MFCC patches, with
//! GMM-tag gating of its output distribution.
//!
//! Patches are single-channel images of `input_height` feature dimensions by
//! `input_width` context frames. Each block is a valid convolution, ReLU and
//! 2x2 max-pool; fully connected layers follow, ReLU on all but the last, and
//! a softmax. All parameters live in one flat vector.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gmm::to_precise_json;

pub const CNN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub channels: usize,
    pub stride: usize,
}

impl ConvBlock {
    pub const fn square(kernel: usize, channels: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            channels,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnSpec {
    /// Feature dimension (rows of a patch).
    pub input_height: usize,
    /// Context frames (columns of a patch).
    pub input_width: usize,
    pub blocks: Vec<ConvBlock>,
    /// Hidden fully connected widths; the output layer is implied.
    pub fc: Vec<usize>,
    pub n_classes: usize,
    /// Extra values concatenated to the flattened conv output.
    #[serde(default)]
    pub aux_inputs: usize,
}

impl CnnSpec {
    pub fn desk_default(n_classes: usize) -> Self {
        Self {
            input_height: 32,
            input_width: 32,
            blocks: vec![ConvBlock::square(3, 8), ConvBlock::square(3, 16), ConvBlock::square(3, 32)],
            fc: vec![64],
            n_classes,
            aux_inputs: 0,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.input_height * self.input_width
    }

    /// (channels, height, width) after each block, starting with the input.
    pub fn block_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut shapes = vec![(1, self.input_height, self.input_width)];
        for (i, b) in self.blocks.iter().enumerate() {
            let (_, h, w) = *shapes.last().expect("non-empty");
            if b.stride == 0 || b.channels == 0 || b.kernel_h == 0 || b.kernel_w == 0 {
                return Err(Error::Config(format!("block {i} has a zero size or stride")));
            }
            if b.kernel_h > h || b.kernel_w > w {
                return Err(Error::Config(format!(
                    "block {i}: kernel {}x{} exceeds input {h}x{w}",
                    b.kernel_h, b.kernel_w
                )));
            }
            let (ch, cw) = ((h - b.kernel_h) / b.stride + 1, (w - b.kernel_w) / b.stride + 1);
            let (ph, pw) = (ch / 2, cw / 2);
            if ph == 0 || pw == 0 {
                return Err(Error::Config(format!("block {i}: pooled output {ph}x{pw} is empty")));
            }
            shapes.push((b.channels, ph, pw));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::Config("input patch is empty".into()));
        }
        if self.fc.contains(&0) {
            return Err(Error::Config("fully connected layer of width 0".into()));
        }
        self.block_shapes().map(|_| ())
    }

    fn layout(&self) -> Result<Layout> {
        self.validate()?;
        let shapes = self.block_shapes()?;
        let mut off = 0;
        let mut convs = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let (cin, hin, win) = shapes[i];
            let w_len = b.channels * cin * b.kernel_h * b.kernel_w;
            let out_h = (hin - b.kernel_h) / b.stride + 1;
            let out_w = (win - b.kernel_w) / b.stride + 1;
            convs.push(ConvLayout {
                block: *b,
                cin,
                hin,
                win,
                hout: out_h,
                wout: out_w,
                w_off: off,
                b_off: off + w_len,
            });
            off += w_len + b.channels;
        }
        let (c, h, w) = *shapes.last().expect("non-empty");
        let flat = c * h * w;
        let mut fcs = Vec::new();
        let mut fan_in = flat + self.aux_inputs;
        for &out in self.fc.iter().chain(std::iter::once(&self.n_classes)) {
            fcs.push(FcLayout {
                fan_in,
                out,
                w_off: off,
                b_off: off + out * fan_in,
            });
            off += out * fan_in + out;
            fan_in = out;
        }
        Ok(Layout {
            convs,
            fcs,
            flat,
            n_params: off,
        })
    }

    pub fn n_params(&self) -> Result<usize> {
        Ok(self.layout()?.n_params)
    }
}

#[derive(Debug, Clone)]
struct ConvLayout {
    block: ConvBlock,
    cin: usize,
    hin: usize,
    win: usize,
    hout: usize,
    wout: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone)]
struct FcLayout {
    fan_in: usize,
    out: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    convs: Vec<ConvLayout>,
    fcs: Vec<FcLayout>,
    flat: usize,
    n_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub seed: u64,
    /// Mean training loss before the first epoch and after each epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainingMeta {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub spec: CnnSpec,
    pub params: Vec<f64>,
    pub meta: TrainingMeta,
}

/// One training or inference input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Row-major `input_height x input_width` patch.
    pub patch: Vec<f64>,
    pub aux: Vec<f64>,
    pub label: usize,
}

/// Fan-in scaled uniform initialisation, zero biases.
pub fn init_cnn(spec: &CnnSpec, seed: u64) -> Result<CnnModel> {
    let layout = spec.layout()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; layout.n_params];
    for c in &layout.convs {
        let fan_in = (c.cin * c.block.kernel_h * c.block.kernel_w) as f64;
        let a = (6.0 / fan_in).sqrt();
        for p in &mut params[c.w_off..c.b_off] {
            *p = rng.gen_range(-a..a);
        }
    }
    let last = layout.fcs.len().saturating_sub(1);
    for (i, f) in layout.fcs.iter().enumerate() {
        // The softmax layer has no ReLU after it, so it gets the smaller
        // fan-in scale.
        let gain = if i == last { 3.0 } else { 6.0 };
        let a = (gain / f.fan_in as f64).sqrt();
        for p in &mut params[f.w_off..f.b_off] {
            *p = rng.gen_range(-a..a);
        }
    }
    Ok(CnnModel {
        spec: spec.clone(),
        params,
        meta: TrainingMeta {
            epochs: 0,
            seed,
            loss_trace: Vec::new(),
        },
    })
}

struct Tape {
    /// Input to each conv block.
    block_in: Vec<Vec<f64>>,
    /// Pre-activation conv outputs.
    conv_z: Vec<Vec<f64>>,
    /// Flat index into the ReLU output chosen by each pooled cell.
    pool_arg: Vec<Vec<usize>>,
    /// Input to each fully connected layer.
    fc_in: Vec<Vec<f64>>,
    /// Pre-activation of each fully connected layer.
    fc_z: Vec<Vec<f64>>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl CnnModel {
    fn check_example(&self, patch: &[f64], aux: &[f64]) -> Result<()> {
        if patch.len() != self.spec.patch_len() {
            return Err(Error::Shape(format!(
                "patch has {} values, network expects {}x{}",
                patch.len(),
                self.spec.input_height,
                self.spec.input_width
            )));
        }
        if aux.len() != self.spec.aux_inputs {
            return Err(Error::Shape(format!(
                "auxiliary input has {} values, network expects {}",
                aux.len(),
                self.spec.aux_inputs
            )));
        }
        Ok(())
    }

    fn forward_tape(&self, layout: &Layout, patch: &[f64], aux: &[f64]) -> Tape {
        let p = &self.params;
        let mut tape = Tape {
            block_in: Vec::new(),
            conv_z: Vec::new(),
            pool_arg: Vec::new(),
            fc_in: Vec::new(),
            fc_z: Vec::new(),
        };
        let mut a = patch.to_vec();
        for c in &layout.convs {
            let (kh, kw, co, s) = (c.block.kernel_h, c.block.kernel_w, c.block.channels, c.block.stride);
            let mut z = vec![0.0; co * c.hout * c.wout];
            for o in 0..co {
                let bias = p[c.b_off + o];
                for y in 0..c.hout {
                    for x in 0..c.wout {
                        let mut acc = bias;
                        for ci in 0..c.cin {
                            let wbase = c.w_off + ((o * c.cin + ci) * kh) * kw;
                            let abase = ci * c.hin * c.win;
                            for u in 0..kh {
                                let row = abase + (y * s + u) * c.win + x * s;
                                let wrow = wbase + u * kw;
                                for v in 0..kw {
                                    acc += p[wrow + v] * a[row + v];
                                }
                            }
                        }
                        z[(o * c.hout + y) * c.wout + x] = acc;
                    }
                }
            }
            let (ph, pw) = (c.hout / 2, c.wout / 2);
            let mut pooled = vec![0.0; co * ph * pw];
            let mut arg = vec![0usize; co * ph * pw];
            for o in 0..co {
                for y in 0..ph {
                    for x in 0..pw {
                        let mut best = f64::NEG_INFINITY;
                        let mut bi = 0;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let idx = (o * c.hout + 2 * y + dy) * c.wout + 2 * x + dx;
                            let v = z[idx].max(0.0);
                            if v > best {
                                best = v;
                                bi = idx;
                            }
                        }
                        pooled[(o * ph + y) * pw + x] = best;
                        arg[(o * ph + y) * pw + x] = bi;
                    }
                }
            }
            tape.block_in.push(a);
            tape.conv_z.push(z);
            tape.pool_arg.push(arg);
            a = pooled;
        }
        a.extend_from_slice(aux);
        let last = layout.fcs.len() - 1;
        for (l, f) in layout.fcs.iter().enumerate() {
            let z: Vec<f64> = (0..f.out)
                .map(|o| {
                    let w = &p[f.w_off + o * f.fan_in..f.w_off + (o + 1) * f.fan_in];
                    p[f.b_off + o] + w.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            let next = if l == last {
                z.clone()
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            tape.fc_in.push(std::mem::replace(&mut a, next));
            tape.fc_z.push(z);
        }
        tape
    }

    /// Pre-softmax class scores.
    pub fn logits(&self, patch: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
        self.check_example(patch, aux)?;
        let layout = self.spec.layout()?;
        Ok(self.forward_tape(&layout, patch, aux).fc_z.pop().expect("output layer"))
    }

    /// Class probabilities.
    pub fn forward(&self, patch: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(patch, aux)?))
    }

    /// Cross-entropy of one example and its parameter gradient, accumulated
    /// into `grad`.
    fn backprop(&self, layout: &Layout, ex: &Example, grad: &mut [f64]) -> f64 {
        let p = &self.params;
        let tape = self.forward_tape(layout, &ex.patch, &ex.aux);
        let probs = softmax(tape.fc_z.last().expect("output layer"));
        let loss = -probs[ex.label].max(f64::MIN_POSITIVE).ln();
        let mut dz: Vec<f64> = probs;
        dz[ex.label] -= 1.0;
        let mut da: Vec<f64> = Vec::new();
        for (l, f) in layout.fcs.iter().enumerate().rev() {
            let input = &tape.fc_in[l];
            if l + 1 < layout.fcs.len() {
                dz = da
                    .iter()
                    .zip(&tape.fc_z[l])
                    .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
                    .collect();
            }
            da = vec![0.0; f.fan_in];
            for o in 0..f.out {
                let g = dz[o];
                grad[f.b_off + o] += g;
                if g == 0.0 {
                    continue;
                }
                let wrow = f.w_off + o * f.fan_in;
                for i in 0..f.fan_in {
                    grad[wrow + i] += g * input[i];
                    da[i] += g * p[wrow + i];
                }
            }
        }
        da.truncate(layout.flat);
        for (bi, c) in layout.convs.iter().enumerate().rev() {
            let (kh, kw, co, s) = (c.block.kernel_h, c.block.kernel_w, c.block.channels, c.block.stride);
            let z = &tape.conv_z[bi];
            let mut dzc = vec![0.0; z.len()];
            for (cell, &idx) in tape.pool_arg[bi].iter().enumerate() {
                if z[idx] > 0.0 {
                    dzc[idx] += da[cell];
                }
            }
            let a = &tape.block_in[bi];
            let need_input_grad = bi > 0;
            let mut din = if need_input_grad { vec![0.0; a.len()] } else { Vec::new() };
            for o in 0..co {
                for y in 0..c.hout {
                    for x in 0..c.wout {
                        let g = dzc[(o * c.hout + y) * c.wout + x];
                        if g == 0.0 {
                            continue;
                        }
                        grad[c.b_off + o] += g;
                        for ci in 0..c.cin {
                            let wbase = c.w_off + ((o * c.cin + ci) * kh) * kw;
                            let abase = ci * c.hin * c.win;
                            for u in 0..kh {
                                let row = abase + (y * s + u) * c.win + x * s;
                                let wrow = wbase + u * kw;
                                for v in 0..kw {
                                    grad[wrow + v] += g * a[row + v];
                                    if need_input_grad {
                                        din[row + v] += g * p[wrow + v];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            da = din;
        }
        loss
    }
}

/// Mean cross-entropy over the batch and its gradient with respect to every
/// parameter. Per-example gradients are summed in batch order.
pub fn cnn_loss_and_gradients(batch: &[Example], model: &CnnModel) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    for ex in batch {
        model.check_example(&ex.patch, &ex.aux)?;
        if ex.label >= model.spec.n_classes {
            return Err(Error::Label(format!(
                "label {} out of range for {} classes",
                ex.label, model.spec.n_classes
            )));
        }
    }
    let layout = model.spec.layout()?;
    let n = model.params.len();
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|ex| {
            let mut g = vec![0.0; n];
            let l = model.backprop(&layout, ex, &mut g);
            (l, g)
        })
        .collect();
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|v| *v *= scale);
    Ok((loss * scale, grad))
}

pub fn mean_loss(examples: &[Example], model: &CnnModel) -> Result<f64> {
    Ok(cnn_loss_and_gradients(examples, model)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnTrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 penalty coefficient, applied as `weight_decay * w` in each step.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 16,
            weight_decay: 0.02,
            seed: 0,
        }
    }
}

/// Mini-batch SGD with momentum from a fresh initialisation.
pub fn train_cnn(examples: &[Example], spec: &CnnSpec, hyper: &CnnTrainConfig) -> Result<CnnModel> {
    let model = init_cnn(spec, hyper.seed)?;
    train_from(model, examples, hyper)
}

/// Continues training `model` on `examples`.
pub fn train_from(mut model: CnnModel, examples: &[Example], hyper: &CnnTrainConfig) -> Result<CnnModel> {
    if hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) {
        return Err(Error::Config("batch_size and learning_rate must be positive".into()));
    }
    if !(hyper.weight_decay >= 0.0) {
        return Err(Error::Config("weight_decay must be non-negative".into()));
    }
    if hyper.epochs == 0 {
        return Ok(model);
    }
    for c in 0..model.spec.n_classes {
        if !examples.iter().any(|e| e.label == c) {
            return Err(Error::Data(format!("class {c} has no training examples")));
        }
    }
    let mut trace = vec![mean_loss(examples, &model)?];
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_cafe);
    let mut velocity = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, grad) = cnn_loss_and_gradients(&batch, &model)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite loss in epoch {epoch} at learning rate {}",
                    hyper.learning_rate
                )));
            }
            total += loss * batch.len() as f64;
            for ((w, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = hyper.momentum * *v - hyper.learning_rate * (g + hyper.weight_decay * *w);
                *w += *v;
            }
        }
        trace.push(total / examples.len() as f64);
        log::debug!("cnn epoch {epoch}: loss {}", trace.last().expect("non-empty"));
    }
    model.meta.epochs += hyper.epochs;
    model.meta.seed = hyper.seed;
    model.meta.loss_trace = trace;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingMode {
    Off,
    TopK,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatingConfig {
    pub mode: GatingMode,
    /// Speakers kept in top-k mode; `None` means max(2, ceil(n / 4)).
    pub k: Option<usize>,
    /// Margin in nats per frame for threshold mode.
    pub threshold_nats: f64,
}

impl Default for GatingConfig {
    fn default() -> Self {
        Self {
            mode: GatingMode::TopK,
            k: None,
            threshold_nats: 1.0,
        }
    }
}

impl GatingConfig {
    pub fn off() -> Self {
        Self {
            mode: GatingMode::Off,
            ..Self::default()
        }
    }

    pub fn top_k(k: usize) -> Self {
        Self {
            mode: GatingMode::TopK,
            k: Some(k),
            ..Self::default()
        }
    }

    pub fn threshold(nats: f64) -> Self {
        Self {
            mode: GatingMode::Threshold,
            threshold_nats: nats,
            ..Self::default()
        }
    }

    pub fn effective_k(&self, n: usize) -> usize {
        self.k.unwrap_or_else(|| 2.max(n.div_ceil(4))).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == GatingMode::TopK && self.k == Some(0) {
            return Err(Error::Config("gating k must be at least 1".into()));
        }
        if self.mode == GatingMode::Threshold && !(self.threshold_nats >= 0.0) {
            return Err(Error::Config("gating threshold must be non-negative".into()));
        }
        Ok(())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Binary speaker mask from GMM scores (one per class, same order), applied
/// to the class probabilities and renormalised.
pub fn gate_with_tags(probs: &[f64], gmm_scores: &[f64], cfg: &GatingConfig) -> Result<Vec<f64>> {
    if probs.len() != gmm_scores.len() {
        return Err(Error::Shape(format!(
            "{} class probabilities but {} GMM scores",
            probs.len(),
            gmm_scores.len()
        )));
    }
    if cfg.mode == GatingMode::Off || probs.is_empty() {
        return Ok(probs.to_vec());
    }
    let n = probs.len();
    let best = argmax(gmm_scores);
    let keep: Vec<bool> = match cfg.mode {
        GatingMode::TopK => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| gmm_scores[b].total_cmp(&gmm_scores[a]));
            let k = cfg.effective_k(n).min(n);
            let mut keep = vec![false; n];
            order[..k].iter().for_each(|&i| keep[i] = true);
            keep
        }
        GatingMode::Threshold => gmm_scores
            .iter()
            .map(|s| *s >= gmm_scores[best] - cfg.threshold_nats)
            .collect(),
        GatingMode::Off => unreachable!(),
    };
    let masked: Vec<f64> = probs
        .iter()
        .zip(&keep)
        .map(|(p, k)| if *k { *p } else { 0.0 })
        .collect();
    let s: f64 = masked.iter().sum();
    if s > 0.0 && s.is_finite() {
        Ok(masked.into_iter().map(|v| v / s).collect())
    } else {
        let mut one_hot = vec![0.0; n];
        one_hot[best] = 1.0;
        Ok(one_hot)
    }
}

/// Window start frames: hop of half a window, plus an end-aligned window when
/// the tiling stops short.
pub fn window_starts(n_frames: usize, width: usize) -> Vec<usize> {
    if n_frames <= width {
        return vec![0];
    }
    let hop = (width / 2).max(1);
    let mut starts: Vec<usize> = (0..=n_frames - width).step_by(hop).collect();
    if *starts.last().expect("non-empty") != n_frames - width {
        starts.push(n_frames - width);
    }
    starts
}

/// Patch of `spec.input_width` frames from `start`, transposed so rows are
/// feature dimensions. Frames past the end replicate the last frame.
pub fn extract_patch(frames: &[Vec<f64>], start: usize, spec: &CnnSpec) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames to build a patch from".into()));
    }
    let (h, w) = (spec.input_height, spec.input_width);
    let mut patch = vec![0.0; h * w];
    for col in 0..w {
        let f = &frames[(start + col).min(frames.len() - 1)];
        if f.len() != h {
            return Err(Error::Shape(format!("frame has {} values, patch height {h}", f.len())));
        }
        for (row, v) in f.iter().enumerate() {
            patch[row * w + col] = *v;
        }
    }
    Ok(patch)
}

/// All tiled patches of an utterance and whether padding was needed.
pub fn utterance_patches(frames: &[Vec<f64>], spec: &CnnSpec) -> Result<(Vec<Vec<f64>>, bool)> {
    let patches = window_starts(frames.len(), spec.input_width)
        .into_iter()
        .map(|s| extract_patch(frames, s, spec))
        .collect::<Result<_>>()?;
    Ok((patches, frames.len() < spec.input_width))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: usize,
    pub confidence: f64,
    /// Gated probabilities averaged over windows.
    pub probs: Vec<f64>,
    pub n_windows: usize,
    /// True when the utterance was shorter than one window.
    pub padded: bool,
}

/// Tiles the utterance, gates each window's distribution and averages.
pub fn classify(
    frames: &[Vec<f64>],
    model: &CnnModel,
    aux: &[f64],
    gmm_scores: Option<&[f64]>,
    cfg: &GatingConfig,
) -> Result<Classification> {
    let (patches, padded) = utterance_patches(frames, &model.spec)?;
    let per_window = patches
        .par_iter()
        .map(|p| {
            let probs = model.forward(p, aux)?;
            match gmm_scores {
                Some(s) => gate_with_tags(&probs, s, cfg),
                None => Ok(probs),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_window.len() as f64;
    let mut probs = vec![0.0; model.spec.n_classes];
    for w in &per_window {
        probs.iter_mut().zip(w).for_each(|(a, b)| *a += b / n);
    }
    let class = argmax(&probs);
    Ok(Classification {
        class,
        confidence: probs[class],
        probs,
        n_windows: per_window.len(),
        padded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnHeader {
    pub format_version: u32,
    pub spec: CnnSpec,
    pub seed: u64,
    pub meta: TrainingMeta,
    pub n_params: usize,
    pub blob_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl CnnModel {
    pub fn blob(&self) -> Vec<u8> {
        self.params.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn header(&self) -> CnnHeader {
        CnnHeader {
            format_version: CNN_FORMAT_VERSION,
            spec: self.spec.clone(),
            seed: self.meta.seed,
            meta: self.meta.clone(),
            n_params: self.params.len(),
            blob_sha256: sha256_hex(&self.blob()),
        }
    }

    pub fn from_parts(header_json: &[u8], blob: &[u8]) -> Result<Self> {
        let h: CnnHeader = serde_json::from_slice(header_json)
            .map_err(|e| Error::CorruptModel(format!("network header: {e}")))?;
        if h.format_version != CNN_FORMAT_VERSION {
            return Err(Error::Version {
                found: h.format_version,
                expected: CNN_FORMAT_VERSION,
            });
        }
        if sha256_hex(blob) != h.blob_sha256 {
            return Err(Error::CorruptModel("network weight blob hash mismatch".into()));
        }
        let expected = h.spec.n_params().map_err(|e| Error::CorruptModel(e.to_string()))?;
        if blob.len() != 8 * expected || h.n_params != expected {
            return Err(Error::CorruptModel(format!(
                "weight blob holds {} bytes, spec needs {expected} parameters",
                blob.len()
            )));
        }
        let params: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptModel("non-finite weight".into()));
        }
        Ok(Self {
            spec: h.spec,
            params,
            meta: h.meta,
        })
    }

    /// Writes `<stem>.json` and `<stem>.bin` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let json = dir.join(format!("{stem}.json"));
        let bin = dir.join(format!("{stem}.bin"));
        fs::write(&bin, self.blob()).map_err(|e| Error::io(&bin, e))?;
        fs::write(&json, to_precise_json(&self.header())?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: String| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::CorruptModel(format!("missing {}", p.display())),
                _ => Error::io(&p, e),
            })
        };
        Self::from_parts(&read(format!("{stem}.json"))?, &read(format!("{stem}.bin"))?)
    }
}
