//! A small feed-forward network with hand-written backpropagation.
//!
//! Layers: dense, ReLU, 2-D convolution (valid padding) and flatten. Heads:
//! softmax cross-entropy over class indices, or mean-squared-error
//! regression. Everything is `f64`; a batch is a row-major
//! `batch x input_dim` slice. Image-shaped activations are laid out
//! `(channel, row, column)` per sample.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{push_f64, push_u32, read_file, u32_len, write_file, ByteReader};
use crate::dataio::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NPK1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense {
        out_dim: usize,
    },
    Relu,
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Head {
    SoftmaxCrossEntropy { n_classes: usize },
    L2Regression { out_dim: usize },
}

impl Head {
    pub fn out_dim(&self) -> usize {
        match *self {
            Head::SoftmaxCrossEntropy { n_classes } => n_classes,
            Head::L2Regression { out_dim } => out_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    /// `[channels, height, width]` for convolutional inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<[usize; 3]>,
    pub layers: Vec<Layer>,
    pub head: Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Image { c: usize, h: usize, w: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(d) => d,
            Shape::Image { c, h, w } => c * h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NetSpec {
    /// Fully connected classifier `input -> hidden... -> n_classes` with
    /// ReLU between dense layers.
    pub fn mlp(input_dim: usize, hidden: &[usize], head: Head) -> Self {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(Layer::Dense { out_dim: h });
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Dense {
            out_dim: head.out_dim(),
        });
        NetSpec {
            input_dim,
            input_shape: None,
            layers,
            head,
        }
    }

    /// Activation shape at the input and after every layer.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let first = match self.input_shape {
            Some([c, h, w]) => {
                if c * h * w != self.input_dim {
                    return Err(Error::InvalidConfig(format!(
                        "input_shape {c}x{h}x{w} does not match input_dim {}",
                        self.input_dim
                    )));
                }
                Shape::Image { c, h, w }
            }
            None => Shape::Flat(self.input_dim),
        };
        if first.is_empty() {
            return Err(Error::InvalidConfig("input_dim must be >= 1".into()));
        }
        let mut shapes = vec![first];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = match (*layer, cur) {
                (Layer::Dense { out_dim }, Shape::Flat(_)) if out_dim > 0 => Shape::Flat(out_dim),
                (Layer::Relu, s) => s,
                (Layer::Flatten, s) => Shape::Flat(s.len()),
                (
                    Layer::Conv2d {
                        out_channels,
                        kernel,
                        stride,
                    },
                    Shape::Image { h, w, .. },
                ) if out_channels > 0 && kernel > 0 && stride > 0 && kernel <= h && kernel <= w => {
                    Shape::Image {
                        c: out_channels,
                        h: (h - kernel) / stride + 1,
                        w: (w - kernel) / stride + 1,
                    }
                }
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "layer {i} ({layer:?}) cannot follow shape {cur:?}"
                    )))
                }
            };
            shapes.push(next);
        }
        let last = *shapes.last().unwrap();
        if last != Shape::Flat(self.head.out_dim()) {
            return Err(Error::InvalidConfig(format!(
                "network output {last:?} does not match head {:?}",
                self.head
            )));
        }
        if let Head::SoftmaxCrossEntropy { n_classes } = self.head {
            if n_classes < 2 {
                return Err(Error::InvalidConfig(
                    "classification needs n_classes >= 2".into(),
                ));
            }
        }
        Ok(shapes)
    }

    /// Index of the last layer carrying parameters.
    fn last_parametric(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, Layer::Dense { .. } | Layer::Conv2d { .. }))
    }
}

/// Weights and biases of one layer (both empty for ReLU and flatten).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    /// Dense: `[out, in]`; conv: `[out_ch, in_ch, k, k]`.
    pub weight_shape: Vec<usize>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn zeros_like(&self) -> Self {
        LayerParams {
            weight_shape: self.weight_shape.clone(),
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Weights then biases.
    pub fn get(&self, i: usize) -> f64 {
        if i < self.weight.len() {
            self.weight[i]
        } else {
            self.bias[i - self.weight.len()]
        }
    }

    pub fn get_mut(&mut self, i: usize) -> &mut f64 {
        let nw = self.weight.len();
        if i < nw {
            &mut self.weight[i]
        } else {
            &mut self.bias[i - nw]
        }
    }
}

/// Parameters of every layer plus the optimizer's momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub layers: Vec<LayerParams>,
    velocity: Vec<LayerParams>,
}

pub type Gradients = Vec<LayerParams>;

impl NetParams {
    pub fn from_layers(layers: Vec<LayerParams>) -> Self {
        let velocity = layers.iter().map(LayerParams::zeros_like).collect();
        NetParams { layers, velocity }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(LayerParams::n_params).sum()
    }

    fn check_against(&self, spec: &NetSpec, shapes: &[Shape]) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::InvalidConfig(format!(
                "parameters for {} layers, spec has {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (lp, layer)) in self.layers.iter().zip(&spec.layers).enumerate() {
            let expect = expected_weight_shape(layer, shapes[i]);
            if lp.weight_shape != expect {
                return Err(Error::InvalidConfig(format!(
                    "layer {i}: weight shape {:?}, expected {expect:?}",
                    lp.weight_shape
                )));
            }
        }
        Ok(())
    }
}

fn expected_weight_shape(layer: &Layer, input: Shape) -> Vec<usize> {
    match (*layer, input) {
        (Layer::Dense { out_dim }, s) => vec![out_dim, s.len()],
        (
            Layer::Conv2d {
                out_channels,
                kernel,
                ..
            },
            Shape::Image { c, .. },
        ) => vec![out_channels, c, kernel, kernel],
        _ => vec![],
    }
}

/// He-uniform weights in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, zero biases.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<NetParams> {
    let shapes = spec.shapes()?;
    let mut rng = Rng::new(seed);
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let ws = expected_weight_shape(layer, shapes[i]);
            if ws.is_empty() {
                return LayerParams::default();
            }
            let fan_in: usize = ws[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = ws.iter().product();
            LayerParams {
                weight: (0..n).map(|_| rng.uniform(-bound, bound)).collect(),
                bias: vec![0.0; ws[0]],
                weight_shape: ws,
            }
        })
        .collect();
    Ok(NetParams::from_layers(layers))
}

/// Activations of every layer for one batch.
#[derive(Debug, Clone)]
pub struct Forward {
    pub batch: usize,
    shapes: Vec<Shape>,
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
}

impl Forward {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    pub fn activation(&self, i: usize) -> &[f64] {
        &self.acts[i]
    }

    pub fn shape(&self, i: usize) -> Shape {
        self.shapes[i]
    }
}

fn dense_forward(x: &[f64], batch: usize, lp: &LayerParams) -> Vec<f64> {
    let (out, inp) = (lp.weight_shape[0], lp.weight_shape[1]);
    let mut y = Vec::with_capacity(batch * out);
    for xb in x.chunks_exact(inp) {
        for (o, wrow) in lp.weight.chunks_exact(inp).enumerate() {
            let dot: f64 = wrow.iter().zip(xb).map(|(w, v)| w * v).sum();
            y.push(dot + lp.bias[o]);
        }
    }
    debug_assert_eq!(y.len(), batch * out);
    y
}

struct ConvGeom {
    ic: usize,
    ih: usize,
    iw: usize,
    oc: usize,
    oh: usize,
    ow: usize,
    k: usize,
    s: usize,
}

fn conv_geom(layer: &Layer, input: Shape, output: Shape) -> ConvGeom {
    match (*layer, input, output) {
        (
            Layer::Conv2d { kernel, stride, .. },
            Shape::Image { c, h, w },
            Shape::Image {
                c: oc,
                h: oh,
                w: ow,
            },
        ) => ConvGeom {
            ic: c,
            ih: h,
            iw: w,
            oc,
            oh,
            ow,
            k: kernel,
            s: stride,
        },
        _ => unreachable!("validated by NetSpec::shapes"),
    }
}

fn conv_forward(x: &[f64], batch: usize, lp: &LayerParams, g: &ConvGeom) -> Vec<f64> {
    let in_len = g.ic * g.ih * g.iw;
    let mut y = vec![0.0; batch * g.oc * g.oh * g.ow];
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        for o in 0..g.oc {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = lp.bias[o];
                    for c in 0..g.ic {
                        for ky in 0..g.k {
                            let row = (c * g.ih + oy * g.s + ky) * g.iw + ox * g.s;
                            let wrow = ((o * g.ic + c) * g.k + ky) * g.k;
                            for kx in 0..g.k {
                                acc += lp.weight[wrow + kx] * xb[row + kx];
                            }
                        }
                    }
                    y[((b * g.oc + o) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    y
}

pub fn forward(spec: &NetSpec, params: &NetParams, input: &[f64], batch: usize) -> Result<Forward> {
    let shapes = spec.shapes()?;
    params.check_against(spec, &shapes)?;
    if input.len() != batch * spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: batch * spec.input_dim,
            found: input.len(),
        });
    }
    if let Some(index) = input.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut acts = vec![input.to_vec()];
    for (i, layer) in spec.layers.iter().enumerate() {
        let x = acts.last().unwrap();
        let lp = &params.layers[i];
        let y = match layer {
            Layer::Dense { .. } => dense_forward(x, batch, lp),
            Layer::Conv2d { .. } => {
                conv_forward(x, batch, lp, &conv_geom(layer, shapes[i], shapes[i + 1]))
            }
            Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            Layer::Flatten => x.clone(),
        };
        acts.push(y);
    }
    Ok(Forward {
        batch,
        shapes,
        acts,
    })
}

/// Training targets for one batch.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Classes(&'a [usize]),
    /// Row-major `batch x out_dim`.
    Values(&'a [f64]),
}

impl<'a> Targets<'a> {
    fn check(&self, head: &Head, batch: usize) -> Result<()> {
        match (*self, *head) {
            (Targets::Classes(t), Head::SoftmaxCrossEntropy { n_classes }) => {
                if t.len() != batch {
                    return Err(Error::DimensionMismatch {
                        expected: batch,
                        found: t.len(),
                    });
                }
                if let Some(&bad) = t.iter().find(|&&l| l >= n_classes) {
                    return Err(Error::OutOfRange {
                        what: "label",
                        value: bad,
                        limit: n_classes,
                    });
                }
                Ok(())
            }
            (Targets::Values(t), Head::L2Regression { out_dim }) => {
                if t.len() != batch * out_dim {
                    return Err(Error::DimensionMismatch {
                        expected: batch * out_dim,
                        found: t.len(),
                    });
                }
                Ok(())
            }
            _ => Err(Error::InvalidConfig(
                "targets do not match the network head".into(),
            )),
        }
    }

    fn select(&self, idx: &[usize], out_dim: usize) -> OwnedTargets {
        match *self {
            Targets::Classes(t) => OwnedTargets::Classes(idx.iter().map(|&i| t[i]).collect()),
            Targets::Values(t) => OwnedTargets::Values(
                idx.iter()
                    .flat_map(|&i| t[i * out_dim..(i + 1) * out_dim].iter().copied())
                    .collect(),
            ),
        }
    }
}

enum OwnedTargets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl OwnedTargets {
    fn view(&self) -> Targets<'_> {
        match self {
            OwnedTargets::Classes(c) => Targets::Classes(c),
            OwnedTargets::Values(v) => Targets::Values(v),
        }
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Batch-mean loss and its gradient with respect to the network output.
fn head_loss(
    head: &Head,
    out: &[f64],
    batch: usize,
    targets: Targets<'_>,
) -> Result<(f64, Vec<f64>)> {
    targets.check(head, batch)?;
    let d = head.out_dim();
    let mut grad = vec![0.0; out.len()];
    let mut total = 0.0;
    match targets {
        Targets::Classes(t) => {
            for (b, (z, g)) in out
                .chunks_exact(d)
                .zip(grad.chunks_exact_mut(d))
                .enumerate()
            {
                let lp = log_softmax(z);
                total -= lp[t[b]];
                for (j, gj) in g.iter_mut().enumerate() {
                    let p = lp[j].exp();
                    *gj = (p - f64::from(u8::from(j == t[b]))) / batch as f64;
                }
            }
        }
        Targets::Values(t) => {
            let scale = (batch * d) as f64;
            for ((o, tv), g) in out.iter().zip(t).zip(grad.iter_mut()) {
                let diff = o - tv;
                total += diff * diff;
                *g = 2.0 * diff / scale;
            }
            total /= d as f64;
        }
    }
    Ok((total / batch as f64, grad))
}

/// Mean loss of a batch of network outputs.
pub fn loss(spec: &NetSpec, outputs: &[f64], batch: usize, targets: Targets<'_>) -> Result<f64> {
    if outputs.len() != batch * spec.head.out_dim() {
        return Err(Error::DimensionMismatch {
            expected: batch * spec.head.out_dim(),
            found: outputs.len(),
        });
    }
    head_loss(&spec.head, outputs, batch, targets).map(|(l, _)| l)
}

/// Exact gradients of the batch-mean loss, via backpropagation through the
/// activations recorded in `fwd`.
pub fn backward(
    spec: &NetSpec,
    params: &NetParams,
    fwd: &Forward,
    targets: Targets<'_>,
) -> Result<(f64, Gradients)> {
    let batch = fwd.batch;
    let (loss, mut delta) = head_loss(&spec.head, fwd.output(), batch, targets)?;
    let mut grads: Gradients = params.layers.iter().map(LayerParams::zeros_like).collect();
    for i in (0..spec.layers.len()).rev() {
        let layer = &spec.layers[i];
        let x = &fwd.acts[i];
        let lp = &params.layers[i];
        let g = &mut grads[i];
        delta = match layer {
            Layer::Relu => delta
                .iter()
                .zip(x)
                .map(|(&d, &v)| if v > 0.0 { d } else { 0.0 })
                .collect(),
            Layer::Flatten => delta,
            Layer::Dense { .. } => {
                let (out, inp) = (lp.weight_shape[0], lp.weight_shape[1]);
                let mut dx = vec![0.0; batch * inp];
                for b in 0..batch {
                    let xb = &x[b * inp..(b + 1) * inp];
                    let db = &delta[b * out..(b + 1) * out];
                    let dxb = &mut dx[b * inp..(b + 1) * inp];
                    for (o, &d) in db.iter().enumerate() {
                        g.bias[o] += d;
                        let wrow = &lp.weight[o * inp..(o + 1) * inp];
                        let grow = &mut g.weight[o * inp..(o + 1) * inp];
                        for j in 0..inp {
                            grow[j] += d * xb[j];
                            dxb[j] += d * wrow[j];
                        }
                    }
                }
                dx
            }
            Layer::Conv2d { .. } => {
                let geo = conv_geom(layer, fwd.shapes[i], fwd.shapes[i + 1]);
                let in_len = geo.ic * geo.ih * geo.iw;
                let mut dx = vec![0.0; batch * in_len];
                for b in 0..batch {
                    let xb = &x[b * in_len..(b + 1) * in_len];
                    let dxb = &mut dx[b * in_len..(b + 1) * in_len];
                    for o in 0..geo.oc {
                        for oy in 0..geo.oh {
                            for ox in 0..geo.ow {
                                let d = delta[((b * geo.oc + o) * geo.oh + oy) * geo.ow + ox];
                                g.bias[o] += d;
                                for c in 0..geo.ic {
                                    for ky in 0..geo.k {
                                        let row =
                                            (c * geo.ih + oy * geo.s + ky) * geo.iw + ox * geo.s;
                                        let wrow = ((o * geo.ic + c) * geo.k + ky) * geo.k;
                                        for kx in 0..geo.k {
                                            g.weight[wrow + kx] += d * xb[row + kx];
                                            dxb[row + kx] += d * lp.weight[wrow + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                dx
            }
        };
    }
    Ok((loss, grads))
}

/// Forward and backward pass in one call.
pub fn loss_and_gradients(
    spec: &NetSpec,
    params: &NetParams,
    input: &[f64],
    batch: usize,
    targets: Targets<'_>,
) -> Result<(f64, Gradients)> {
    let fwd = forward(spec, params, input, batch)?;
    backward(spec, params, &fwd, targets)
}

/// Outcome of comparing backprop gradients with central differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub max_rel_error: f64,
    /// `(layer, parameter index)` of the worst entry.
    pub worst: (usize, usize),
}

/// Magnitudes below this are treated as this in the relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// Central finite differences with step `h` against [`backward`] for every
/// parameter. The relative error of one entry is
/// `|analytic - numeric| / max(|analytic|, |numeric|, GRADCHECK_FLOOR)`.
pub fn gradient_check(
    spec: &NetSpec,
    params: &NetParams,
    input: &[f64],
    batch: usize,
    targets: Targets<'_>,
    h: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradients(spec, params, input, batch, targets)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        n_params: 0,
        max_rel_error: 0.0,
        worst: (0, 0),
    };
    for (li, ga) in analytic.iter().enumerate() {
        for pi in 0..ga.n_params() {
            let orig = probe.layers[li].get(pi);
            *probe.layers[li].get_mut(pi) = orig + h;
            let up = loss(
                spec,
                forward(spec, &probe, input, batch)?.output(),
                batch,
                targets,
            )?;
            *probe.layers[li].get_mut(pi) = orig - h;
            let down = loss(
                spec,
                forward(spec, &probe, input, batch)?.output(),
                batch,
                targets,
            )?;
            *probe.layers[li].get_mut(pi) = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = ga.get(pi);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            report.n_params += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (li, pi);
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// training

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub factor: f64,
    pub every_n_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_schedule: Option<StepDecay>,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 30,
            lr_schedule: None,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(Error::InvalidConfig("lr must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if let Some(s) = self.lr_schedule {
            if s.every_n_epochs == 0 || !(s.factor > 0.0) {
                return Err(Error::InvalidConfig("bad step-decay schedule".into()));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            Some(s) => self.lr * s.factor.powi((epoch / s.every_n_epochs) as i32),
            None => self.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Loss over the full training set after the epoch.
    pub loss: f64,
    /// Training accuracy after the epoch (classification only).
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// One SGD step with momentum and L2 weight decay (weights only).
pub fn sgd_step(
    params: &mut NetParams,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((lp, vel), g) in params
        .layers
        .iter_mut()
        .zip(&mut params.velocity)
        .zip(grads)
    {
        for ((w, v), gw) in lp.weight.iter_mut().zip(&mut vel.weight).zip(&g.weight) {
            *v = momentum * *v - lr * (gw + weight_decay * *w);
            *w += *v;
        }
        for ((b, v), gb) in lp.bias.iter_mut().zip(&mut vel.bias).zip(&g.bias) {
            *v = momentum * *v - lr * gb;
            *b += *v;
        }
    }
}

/// Trains from `init_params(spec, cfg.seed)`.
pub fn train(
    spec: &NetSpec,
    cfg: &TrainConfig,
    data: &FeatureMatrix,
    targets: Targets<'_>,
) -> Result<(NetParams, History)> {
    let params = init_params(spec, cfg.seed)?;
    train_from(spec, cfg, params, data, targets)
}

/// Minibatch SGD with momentum. Sample order is reshuffled every epoch by a
/// Fisher-Yates pass from a stream derived from `cfg.seed`.
pub fn train_from(
    spec: &NetSpec,
    cfg: &TrainConfig,
    mut params: NetParams,
    data: &FeatureMatrix,
    targets: Targets<'_>,
) -> Result<(NetParams, History)> {
    cfg.validate()?;
    let shapes = spec.shapes()?;
    params.check_against(spec, &shapes)?;
    let n = data.n_samples();
    if data.n_dims() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            found: data.n_dims(),
        });
    }
    targets.check(&spec.head, n)?;
    let out_dim = spec.head.out_dim();
    let mut rng = Rng::substream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = History::default();
    let mut batch_input = Vec::with_capacity(cfg.batch_size * spec.input_dim);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        rng.shuffle(&mut order);
        for idx in order.chunks(cfg.batch_size) {
            batch_input.clear();
            for &i in idx {
                batch_input.extend_from_slice(data.row(i));
            }
            let bt = targets.select(idx, out_dim);
            let (l, grads) = loss_and_gradients(spec, &params, &batch_input, idx.len(), bt.view())?;
            if !l.is_finite() {
                return Err(Error::Divergence { epoch, loss: l });
            }
            sgd_step(&mut params, &grads, lr, cfg.momentum, cfg.weight_decay);
        }
        let (loss, accuracy) = evaluate_full(spec, &params, data, targets)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        history.epochs.push(EpochStats {
            epoch,
            lr,
            loss,
            accuracy,
        });
    }
    Ok((params, history))
}

fn evaluate_full(
    spec: &NetSpec,
    params: &NetParams,
    data: &FeatureMatrix,
    targets: Targets<'_>,
) -> Result<(f64, Option<f64>)> {
    let fwd = forward(spec, params, data.data(), data.n_samples())?;
    let l = loss(spec, fwd.output(), data.n_samples(), targets)?;
    let acc = match targets {
        Targets::Classes(t) => {
            let pred = argmax_rows(fwd.output(), spec.head.out_dim());
            Some(crate::metrics::accuracy(&pred, t)?)
        }
        Targets::Values(_) => None,
    };
    Ok((l, acc))
}

fn argmax_rows(out: &[f64], d: usize) -> Vec<usize> {
    out.chunks_exact(d)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Highest-scoring class per sample (lowest index on ties).
pub fn predict(spec: &NetSpec, params: &NetParams, data: &FeatureMatrix) -> Result<Vec<usize>> {
    let fwd = forward(spec, params, data.data(), data.n_samples())?;
    Ok(argmax_rows(fwd.output(), spec.head.out_dim()))
}

pub fn evaluate(
    spec: &NetSpec,
    params: &NetParams,
    data: &FeatureMatrix,
    labels: &LabelVector,
) -> Result<f64> {
    crate::metrics::accuracy(&predict(spec, params, data)?, labels.labels())
}

/// Activations feeding the last parametric layer: the representation a
/// linear probe reads.
pub fn embed(spec: &NetSpec, params: &NetParams, data: &FeatureMatrix) -> Result<FeatureMatrix> {
    let fwd = forward(spec, params, data.data(), data.n_samples())?;
    let at = spec.last_parametric().unwrap_or(0);
    let dims = fwd.shape(at).len();
    FeatureMatrix::new(data.n_samples(), dims, fwd.activation(at).to_vec())
}

// ---------------------------------------------------------------------------
// NPK1 checkpoints: magic, u32 layer count, then per layer u32 weight rank,
// rank x u32 dims, u32 bias length, f64 weights, f64 biases.

pub fn encode_params(params: &NetParams) -> Result<Vec<u8>> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    push_u32(&mut out, u32_len(params.layers.len(), "layer count")?);
    for lp in &params.layers {
        push_u32(&mut out, u32_len(lp.weight_shape.len(), "weight rank")?);
        for &d in &lp.weight_shape {
            push_u32(&mut out, u32_len(d, "weight dim")?);
        }
        push_u32(&mut out, u32_len(lp.bias.len(), "bias length")?);
        for &v in lp.weight.iter().chain(&lp.bias) {
            push_f64(&mut out, v);
        }
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<NetParams> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(&CHECKPOINT_MAGIC)?;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let rank = r.u32()? as usize;
        let weight_shape = (0..rank)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_weight = if rank == 0 {
            0
        } else {
            weight_shape.iter().product()
        };
        let n_bias = r.u32()? as usize;
        r.require((n_weight + n_bias) * 8)?;
        let mut read = |n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|index| {
                    let v = r.f64()?;
                    v.is_finite().then_some(v).ok_or(Error::NonFinite { index })
                })
                .collect()
        };
        let weight = read(n_weight)?;
        let bias = read(n_bias)?;
        layers.push(LayerParams {
            weight_shape,
            weight,
            bias,
        });
    }
    r.finish()?;
    Ok(NetParams::from_layers(layers))
}

pub fn read_params(path: impl AsRef<Path>) -> Result<NetParams> {
    decode_params(&read_file(path.as_ref())?)
}

pub fn write_params(params: &NetParams, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_params(params)?)
}
