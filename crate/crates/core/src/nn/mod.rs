//! Minimal layer-stack neural networks with reverse-mode gradients:
//! dense and direct convolution layers, the activations used by the
//! noise-parameter generators, Adam, and a text checkpoint format.
//!
//! Everything here is f64 and deterministic: initialization draws from a
//! caller-provided generator and training replays bit-identically for a
//! fixed seed.

pub mod io;

use crate::rng::Rng;
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadBuffer { shape: Vec<usize>, len: usize },
    #[error("{0}")]
    InvalidLayer(String),
    #[error("checkpoint parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Row-major tensor with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::BadBuffer {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Attach a zeroed gradient buffer (parameters carry one for life).
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Reinterpret the buffer under a new shape of equal length.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor, NnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NnError::BadBuffer {
                shape,
                len: self.data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
            grad: None,
        })
    }
}

fn glorot(fan_in: usize, fan_out: usize, n: usize, rng: &mut Rng) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

/// One layer of a sequential stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Affine map on [batch, in] -> [batch, out]; weight is [out, in].
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    /// Direct stride-1 convolution with symmetric zero padding that
    /// preserves the spatial size; weight is [oc, ic, k, k], k odd.
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    AmplifiedTanh {
        gamma: f64,
    },
    /// Row-wise softmax on [batch, classes].
    Softmax,
    /// Appends the original network input along the channel axis; used by
    /// the dense-block generator nets.
    SkipConcat,
}

impl Layer {
    pub fn dense(input: usize, output: usize, rng: &mut Rng) -> Layer {
        Layer::Dense {
            weight: Tensor::new(
                vec![output, input],
                glorot(input, output, input * output, rng),
            )
            .unwrap()
            .with_grad(),
            bias: Tensor::zeros(vec![output]).with_grad(),
        }
    }

    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut Rng) -> Layer {
        assert!(kernel % 2 == 1, "kernel must be odd for same-size padding");
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        let n = out_channels * fan_in;
        Layer::Conv2d {
            weight: Tensor::new(
                vec![out_channels, in_channels, kernel, kernel],
                glorot(fan_in, fan_out, n, rng),
            )
            .unwrap()
            .with_grad(),
            bias: Tensor::zeros(vec![out_channels]).with_grad(),
            in_channels,
            out_channels,
            kernel,
        }
    }
}

/// Sequential network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Recorded forward pass: `activations[0]` is the input and
/// `activations[i + 1]` the output of layer `i`.
pub struct Trace {
    pub activations: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations
            .last()
            .expect("trace holds at least the input")
    }
}

fn conv_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    ic: usize,
    oc: usize,
    k: usize,
) -> Result<Tensor, NnError> {
    if input.shape.len() != 4 || input.shape[1] != ic {
        return Err(NnError::ShapeMismatch {
            context: "conv2d input",
            expected: vec![0, ic, 0, 0],
            got: input.shape.clone(),
        });
    }
    let (b, h, w) = (input.shape[0], input.shape[2], input.shape[3]);
    let pad = k / 2;
    let mut out = Tensor::zeros(vec![b, oc, h, w]);
    let istride_b = ic * h * w;
    let ostride_b = oc * h * w;
    // Shifted-window accumulation: padding checks hoisted out of the
    // per-pixel loops.
    for bi in 0..b {
        for o in 0..oc {
            let out_base = bi * ostride_b + o * h * w;
            out.data[out_base..out_base + h * w].fill(bias.data[o]);
            for c in 0..ic {
                let in_base = bi * istride_b + c * h * w;
                let w_base = o * ic * k * k + c * k * k;
                for ky in 0..k {
                    let y_lo = pad.saturating_sub(ky);
                    let y_hi = (h + pad - ky).min(h);
                    for kx in 0..k {
                        let wv = weight.data[w_base + ky * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let x_lo = pad.saturating_sub(kx);
                        let x_hi = (w + pad - kx).min(w);
                        for y in y_lo..y_hi {
                            let iy = y + ky - pad;
                            let orow = out_base + y * w;
                            let irow = in_base + iy * w;
                            for x in x_lo..x_hi {
                                out.data[orow + x] += wv * input.data[irow + x + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &Tensor,
    grad_out: &Tensor,
    weight: &mut Tensor,
    bias: &mut Tensor,
    ic: usize,
    oc: usize,
    k: usize,
) -> Tensor {
    let (b, h, w) = (input.shape[0], input.shape[2], input.shape[3]);
    let pad = k / 2;
    let mut grad_in = Tensor::zeros(input.shape.clone());
    let wgrad = weight.grad.as_mut().expect("parameter carries grad");
    let bgrad = bias.grad.as_mut().expect("parameter carries grad");
    let istride_b = ic * h * w;
    let ostride_b = oc * h * w;
    for bi in 0..b {
        for o in 0..oc {
            let out_base = bi * ostride_b + o * h * w;
            bgrad[o] += grad_out.data[out_base..out_base + h * w]
                .iter()
                .sum::<f64>();
            for c in 0..ic {
                let in_base = bi * istride_b + c * h * w;
                let w_base = o * ic * k * k + c * k * k;
                for ky in 0..k {
                    let y_lo = pad.saturating_sub(ky);
                    let y_hi = (h + pad - ky).min(h);
                    for kx in 0..k {
                        let wv = weight.data[w_base + ky * k + kx];
                        let x_lo = pad.saturating_sub(kx);
                        let x_hi = (w + pad - kx).min(w);
                        let mut wacc = 0.0;
                        for y in y_lo..y_hi {
                            let iy = y + ky - pad;
                            let orow = out_base + y * w;
                            let irow = in_base + iy * w;
                            for x in x_lo..x_hi {
                                let g = grad_out.data[orow + x];
                                let ii = irow + x + kx - pad;
                                wacc += g * input.data[ii];
                                grad_in.data[ii] += g * wv;
                            }
                        }
                        wgrad[w_base + ky * k + kx] += wacc;
                    }
                }
            }
        }
    }
    grad_in
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Output size of the last parameterized layer.
    pub fn output_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense { weight, .. } => Some(weight.shape[0]),
            Layer::Conv2d { out_channels, .. } => Some(*out_channels),
            _ => None,
        })
    }

    fn forward_layer(
        &self,
        idx: usize,
        input: &Tensor,
        original: &Tensor,
    ) -> Result<Tensor, NnError> {
        match &self.layers[idx] {
            Layer::Dense { weight, bias } => {
                let (out_dim, in_dim) = (weight.shape[0], weight.shape[1]);
                if input.shape.len() != 2 || input.shape[1] != in_dim {
                    return Err(NnError::ShapeMismatch {
                        context: "dense input",
                        expected: vec![0, in_dim],
                        got: input.shape.clone(),
                    });
                }
                let b = input.shape[0];
                let mut out = Tensor::zeros(vec![b, out_dim]);
                for bi in 0..b {
                    let row = &input.data[bi * in_dim..(bi + 1) * in_dim];
                    for o in 0..out_dim {
                        let wrow = &weight.data[o * in_dim..(o + 1) * in_dim];
                        let mut acc = bias.data[o];
                        for i in 0..in_dim {
                            acc += wrow[i] * row[i];
                        }
                        out.data[bi * out_dim + o] = acc;
                    }
                }
                Ok(out)
            }
            Layer::Conv2d {
                weight,
                bias,
                in_channels,
                out_channels,
                kernel,
            } => conv_forward(input, weight, bias, *in_channels, *out_channels, *kernel),
            Layer::LeakyRelu { slope } => {
                let mut out = input.clone();
                out.grad = None;
                for v in &mut out.data {
                    if *v < 0.0 {
                        *v *= slope;
                    }
                }
                Ok(out)
            }
            Layer::Tanh => {
                let mut out = input.clone();
                out.grad = None;
                for v in &mut out.data {
                    *v = v.tanh();
                }
                Ok(out)
            }
            Layer::AmplifiedTanh { gamma } => {
                let mut out = input.clone();
                out.grad = None;
                for v in &mut out.data {
                    *v = gamma * v.tanh();
                }
                Ok(out)
            }
            Layer::Softmax => {
                if input.shape.len() != 2 {
                    return Err(NnError::ShapeMismatch {
                        context: "softmax input",
                        expected: vec![0, 0],
                        got: input.shape.clone(),
                    });
                }
                let (b, c) = (input.shape[0], input.shape[1]);
                let mut out = Tensor::zeros(vec![b, c]);
                for bi in 0..b {
                    let row = &input.data[bi * c..(bi + 1) * c];
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for j in 0..c {
                        let e = (row[j] - mx).exp();
                        out.data[bi * c + j] = e;
                        sum += e;
                    }
                    for j in 0..c {
                        out.data[bi * c + j] /= sum;
                    }
                }
                Ok(out)
            }
            Layer::SkipConcat => {
                if input.shape.len() != 4 || original.shape.len() != 4 {
                    return Err(NnError::ShapeMismatch {
                        context: "skip_concat input",
                        expected: vec![0, 0, 0, 0],
                        got: input.shape.clone(),
                    });
                }
                let (b, c, h, w) = (
                    input.shape[0],
                    input.shape[1],
                    input.shape[2],
                    input.shape[3],
                );
                let c0 = original.shape[1];
                if original.shape[0] != b || original.shape[2] != h || original.shape[3] != w {
                    return Err(NnError::ShapeMismatch {
                        context: "skip_concat original",
                        expected: input.shape.clone(),
                        got: original.shape.clone(),
                    });
                }
                let mut out = Tensor::zeros(vec![b, c + c0, h, w]);
                let plane = h * w;
                for bi in 0..b {
                    let dst = bi * (c + c0) * plane;
                    let src = bi * c * plane;
                    out.data[dst..dst + c * plane]
                        .copy_from_slice(&input.data[src..src + c * plane]);
                    let src0 = bi * c0 * plane;
                    out.data[dst + c * plane..dst + (c + c0) * plane]
                        .copy_from_slice(&original.data[src0..src0 + c0 * plane]);
                }
                Ok(out)
            }
        }
    }

    /// Plain forward pass.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let mut cur = input.clone();
        cur.grad = None;
        for i in 0..self.layers.len() {
            cur = self.forward_layer(i, &cur, input)?;
        }
        Ok(cur)
    }

    /// Forward pass that records every activation for a later backward.
    pub fn forward_trace(&self, input: &Tensor) -> Result<Trace, NnError> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut first = input.clone();
        first.grad = None;
        acts.push(first);
        for i in 0..self.layers.len() {
            let next = self.forward_layer(i, &acts[i], &acts[0])?;
            acts.push(next);
        }
        Ok(Trace { activations: acts })
    }

    /// Backpropagate `grad_out` through a recorded forward, accumulating
    /// into every parameter's grad buffer; returns the input gradient.
    pub fn backward(&mut self, trace: &Trace, grad_out: &Tensor) -> Result<Tensor, NnError> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(NnError::InvalidLayer(
                "trace does not match the network it was recorded on".into(),
            ));
        }
        if grad_out.shape != trace.output().shape {
            return Err(NnError::ShapeMismatch {
                context: "backward grad_out",
                expected: trace.output().shape.clone(),
                got: grad_out.shape.clone(),
            });
        }
        let mut grad = grad_out.clone();
        grad.grad = None;
        // Skip connections feed extra gradient straight to the input.
        let mut input_extra = Tensor::zeros(trace.activations[0].shape.clone());
        for idx in (0..self.layers.len()).rev() {
            let input = &trace.activations[idx];
            let output = &trace.activations[idx + 1];
            grad = match &mut self.layers[idx] {
                Layer::Dense { weight, bias } => {
                    let (out_dim, in_dim) = (weight.shape[0], weight.shape[1]);
                    let b = input.shape[0];
                    let wgrad = weight.grad.as_mut().expect("parameter carries grad");
                    let bgrad = bias.grad.as_mut().expect("parameter carries grad");
                    let mut gin = Tensor::zeros(input.shape.clone());
                    for bi in 0..b {
                        let xrow = &input.data[bi * in_dim..(bi + 1) * in_dim];
                        let grow = &grad.data[bi * out_dim..(bi + 1) * out_dim];
                        for o in 0..out_dim {
                            let g = grow[o];
                            if g == 0.0 {
                                continue;
                            }
                            bgrad[o] += g;
                            let wrow = &weight.data[o * in_dim..(o + 1) * in_dim];
                            let wgrow = &mut wgrad[o * in_dim..(o + 1) * in_dim];
                            let girow = &mut gin.data[bi * in_dim..(bi + 1) * in_dim];
                            for i in 0..in_dim {
                                wgrow[i] += g * xrow[i];
                                girow[i] += g * wrow[i];
                            }
                        }
                    }
                    gin
                }
                Layer::Conv2d {
                    weight,
                    bias,
                    in_channels,
                    out_channels,
                    kernel,
                } => conv_backward(
                    input,
                    &grad,
                    weight,
                    bias,
                    *in_channels,
                    *out_channels,
                    *kernel,
                ),
                Layer::LeakyRelu { slope } => {
                    let mut gin = grad.clone();
                    for (g, &x) in gin.data.iter_mut().zip(&input.data) {
                        if x < 0.0 {
                            *g *= *slope;
                        }
                    }
                    gin
                }
                Layer::Tanh => {
                    let mut gin = grad.clone();
                    for (g, &y) in gin.data.iter_mut().zip(&output.data) {
                        *g *= 1.0 - y * y;
                    }
                    gin
                }
                Layer::AmplifiedTanh { gamma } => {
                    let mut gin = grad.clone();
                    for (g, &y) in gin.data.iter_mut().zip(&output.data) {
                        let t = y / *gamma;
                        *g *= *gamma * (1.0 - t * t);
                    }
                    gin
                }
                Layer::Softmax => {
                    let (b, c) = (output.shape[0], output.shape[1]);
                    let mut gin = Tensor::zeros(output.shape.clone());
                    for bi in 0..b {
                        let p = &output.data[bi * c..(bi + 1) * c];
                        let gout = &grad.data[bi * c..(bi + 1) * c];
                        let dot: f64 = p.iter().zip(gout).map(|(pi, gi)| pi * gi).sum();
                        for j in 0..c {
                            gin.data[bi * c + j] = p[j] * (gout[j] - dot);
                        }
                    }
                    gin
                }
                Layer::SkipConcat => {
                    let (b, c_out, h, w) = (
                        output.shape[0],
                        output.shape[1],
                        output.shape[2],
                        output.shape[3],
                    );
                    let c = input.shape[1];
                    let c0 = c_out - c;
                    let plane = h * w;
                    let mut gin = Tensor::zeros(input.shape.clone());
                    for bi in 0..b {
                        let src = bi * c_out * plane;
                        let dst = bi * c * plane;
                        gin.data[dst..dst + c * plane]
                            .copy_from_slice(&grad.data[src..src + c * plane]);
                        let dst0 = bi * c0 * plane;
                        for i in 0..c0 * plane {
                            input_extra.data[dst0 + i] += grad.data[src + c * plane + i];
                        }
                    }
                    gin
                }
            };
        }
        for (g, e) in grad.data.iter_mut().zip(&input_extra.data) {
            *g += e;
        }
        Ok(grad)
    }

    /// All trainable tensors in a fixed order (weights and biases).
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

/// Mean softmax cross-entropy over a batch of logits; returns the loss and
/// the gradient with respect to the logits, (softmax - onehot) / batch.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    if logits.shape.len() != 2 || logits.shape[0] != labels.len() {
        return Err(NnError::ShapeMismatch {
            context: "cross entropy logits",
            expected: vec![labels.len(), 0],
            got: logits.shape.clone(),
        });
    }
    let (b, c) = (logits.shape[0], logits.shape[1]);
    let mut grad = Tensor::zeros(vec![b, c]);
    let mut loss = 0.0;
    for bi in 0..b {
        let row = &logits.data[bi * c..(bi + 1) * c];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - mx).exp();
        }
        let log_sum = sum.ln() + mx;
        let y = labels[bi];
        if y >= c {
            return Err(NnError::InvalidLayer(format!(
                "label {y} out of {c} classes"
            )));
        }
        loss += log_sum - row[y];
        for j in 0..c {
            let p = (row[j] - log_sum).exp();
            grad.data[bi * c + j] = (p - if j == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second-moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn for_network(net: &Network) -> Self {
        let sizes: Vec<usize> = net.params().iter().map(|p| p.numel()).collect();
        Self {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update from the accumulated gradients.
pub fn adam_step(net: &mut Network, state: &mut AdamState, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (pi, p) in net.params_mut().into_iter().enumerate() {
        let grad = p.grad.as_ref().expect("parameter carries grad").clone();
        let m = &mut state.m[pi];
        let v = &mut state.v[pi];
        for j in 0..grad.len() {
            let g = grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            p.data[j] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}
