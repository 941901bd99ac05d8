//! ConvNet layers: convolution, mean pooling, flatten, dense, softmax.
//!
//! Forward passes are plain index arithmetic over [`Tensor`]s; the backward
//! pass is hand-derived per layer and validated against central finite
//! differences (see [`finite_difference_check`]). Convolution is stride-1
//! cross-correlation (no kernel flip) over a zero-padded input. Mean pooling
//! carries no parameters.

use crate::error::{Error, Result};
use crate::loss;
use crate::params::{Gradients, ParamSet};
use crate::regularize;
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Linear,
    Sigmoid,
    Tanh,
    Relu,
}

/// Applies the activation to a pre-activation value.
pub fn activation_apply(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Linear => x,
        ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        ActivationKind::Tanh => x.tanh(),
        ActivationKind::Relu => x.max(0.0),
    }
}

/// Derivative of the activation with respect to its pre-activation input.
/// ReLU uses the subgradient 0 at exactly zero.
pub fn activation_grad(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Linear => 1.0,
        ActivationKind::Sigmoid => {
            let y = 1.0 / (1.0 + (-x).exp());
            y * (1.0 - y)
        }
        ActivationKind::Tanh => {
            let y = x.tanh();
            1.0 - y * y
        }
        ActivationKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// One layer of the network, in order of application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Stride-1 cross-correlation over a zero-padded input, one bias per
    /// output map added at every spatial position, then the activation.
    Conv {
        out_maps: usize,
        kernel: usize,
        padding: usize,
        activation: ActivationKind,
    },
    /// Block average over non-overlapping `s x s` windows. No parameters.
    MeanPool { s: usize },
    /// Row-major vectorization: `j = map * H * W + row * W + col`.
    Flatten,
    Dense {
        units: usize,
        activation: ActivationKind,
    },
    /// Final classifier: probabilities are `softmax(theta * z)`.
    SoftmaxOutput { classes: usize },
}

/// Softmax with max-subtraction; output is a probability vector whose
/// entries sum to 1 within 1e-12 and is invariant to shifting all logits.
pub fn softmax_probs(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 1 {
        return Err(Error::Geometry {
            op: "softmax_probs",
            msg: format!("expected rank-1 logits, got {:?}", logits.shape()),
        });
    }
    let max = logits
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::new(
        vec![logits.len()],
        exps.iter().map(|&e| e / total).collect(),
    )
}

/// Convolution forward: `z_j = act(sum_i input_i * w_ij + b_j)` with the bias
/// added at every spatial position.
pub fn conv_forward(
    inputs: &Tensor,
    weights: &Tensor,
    biases: &Tensor,
    padding: usize,
    activation: ActivationKind,
) -> Result<Tensor> {
    let pre = conv_preactivation(inputs, weights, biases, padding)?;
    Ok(pre.map(|v| activation_apply(activation, v)))
}

fn conv_preactivation(
    inputs: &Tensor,
    weights: &Tensor,
    biases: &Tensor,
    padding: usize,
) -> Result<Tensor> {
    if inputs.rank() != 3 || weights.rank() != 4 {
        return Err(Error::Geometry {
            op: "conv_forward",
            msg: format!(
                "expected rank-3 input and rank-4 weights, got {:?} and {:?}",
                inputs.shape(),
                weights.shape()
            ),
        });
    }
    let (d_in, h, w) = (inputs.shape()[0], inputs.shape()[1], inputs.shape()[2]);
    let (d_out, wd_in, k) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
    if wd_in != d_in {
        return Err(Error::ShapeMismatch {
            op: "conv_forward(channels)",
            left: inputs.shape().to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    if weights.shape()[3] != k {
        return Err(Error::Geometry {
            op: "conv_forward",
            msg: format!("kernel must be square, got {:?}", weights.shape()),
        });
    }
    if biases.shape() != [d_out] {
        return Err(Error::ShapeMismatch {
            op: "conv_forward(bias)",
            left: vec![d_out],
            right: biases.shape().to_vec(),
        });
    }
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
    if hp < k || wp < k {
        return Err(Error::Geometry {
            op: "conv_forward",
            msg: format!("kernel {k} exceeds padded input {hp}x{wp}"),
        });
    }
    let (ho, wo) = (hp - k + 1, wp - k + 1);
    let mut out = Tensor::zeros(&[d_out, ho, wo]);
    let p = padding as isize;
    for j in 0..d_out {
        let b = biases.data()[j];
        for y in 0..ho {
            for x in 0..wo {
                let mut acc = b;
                for i in 0..d_in {
                    for a in 0..k {
                        let r = y as isize + a as isize - p;
                        if r < 0 || r >= h as isize {
                            continue;
                        }
                        for bb in 0..k {
                            let c = x as isize + bb as isize - p;
                            if c < 0 || c >= w as isize {
                                continue;
                            }
                            let wv = weights.data()[((j * d_in + i) * k + a) * k + bb];
                            acc += inputs.at3(i, r as usize, c as usize) * wv;
                        }
                    }
                }
                out.set3(j, y, x, acc);
            }
        }
    }
    Ok(out)
}

/// Mean pooling: each output element is the average of an `s x s` block.
pub fn meanpool_forward(input: &Tensor, s: usize) -> Result<Tensor> {
    if input.rank() != 3 {
        return Err(Error::Geometry {
            op: "meanpool_forward",
            msg: format!("expected rank-3 input, got {:?}", input.shape()),
        });
    }
    let (d, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if s == 0 || !h.is_multiple_of(s) || !w.is_multiple_of(s) {
        return Err(Error::Geometry {
            op: "meanpool_forward",
            msg: format!("input {h}x{w} not divisible by pooling factor {s}"),
        });
    }
    let (ho, wo) = (h / s, w / s);
    let inv = 1.0 / (s * s) as f64;
    let mut out = Tensor::zeros(&[d, ho, wo]);
    for i in 0..d {
        for y in 0..ho {
            for x in 0..wo {
                let mut acc = 0.0;
                for m in 0..s {
                    for n in 0..s {
                        acc += input.at3(i, s * y + m, s * x + n);
                    }
                }
                out.set3(i, y, x, acc * inv);
            }
        }
    }
    Ok(out)
}

/// Vectorizes `[D, H, W]` into `[D * H * W]` with the row-major bijection
/// `j = map * H * W + row * W + col` (0-based).
pub fn flatten_forward(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 3 {
        return Err(Error::Geometry {
            op: "flatten_forward",
            msg: format!("expected rank-3 input, got {:?}", input.shape()),
        });
    }
    input.reshape(&[input.len()])
}

/// Dense forward: `act(W x + b)`.
pub fn dense_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    activation: ActivationKind,
) -> Result<Tensor> {
    let u = crate::tensor::matvec(weights, input)?;
    let u = u.zip(bias, "dense_forward(bias)", |a, b| a + b)?;
    Ok(u.map(|v| activation_apply(activation, v)))
}

#[derive(Debug, Clone)]
enum Trace {
    Conv {
        input: Tensor,
        pre: Tensor,
    },
    MeanPool {
        in_shape: Vec<usize>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
    Dense {
        input: Tensor,
        pre: Tensor,
        /// Elementwise multiplier applied to the activated output (dropout
        /// mask in train mode, uniform `p` at inference). `None` means 1.
        out_mult: Option<Tensor>,
        /// Elementwise multiplier applied to the weight matrix (dropconnect
        /// mask in train mode, uniform `q` at inference). `None` means 1.
        w_mult: Option<Tensor>,
    },
    Softmax {
        input: Tensor,
    },
}

/// Everything the backward pass needs from a forward run: per-layer inputs storage
/// and pre-activations, any dropout/dropconnect multipliers, and the output
/// probabilities.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    traces: Vec<Trace>,
    pub probs: Tensor,
}

enum DropPlan<'a> {
    Off,
    Infer {
        p: f64,
        q: f64,
    },
    Train {
        p: f64,
        q: f64,
        dropout_rng: &'a mut Rng,
        dropconnect_rng: &'a mut Rng,
    },
    Replay {
        prior: &'a ForwardCache,
    },
}

/// A feed-forward stack ending in a softmax classifier, with all parameters
/// held in a flat named [`ParamSet`] (`layer{i}.w`, `layer{i}.b`,
/// `layer{i}.theta`).
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    params: ParamSet,
    classes: usize,
}

impl Network {
    /// Validates the layer chain and initializes parameters: weights uniform
    /// in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new(input_shape: &[usize], layers: Vec<LayerSpec>, rng: &mut Rng) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Config(format!("bad input shape {input_shape:?}")));
        }
        let mut params = ParamSet::new();
        let mut shape = input_shape.to_vec();
        let mut classes = 0;
        for (i, layer) in layers.iter().enumerate() {
            let is_last = i + 1 == layers.len();
            match *layer {
                LayerSpec::Conv {
                    out_maps,
                    kernel,
                    padding,
                    ..
                } => {
                    if shape.len() != 3 {
                        return Err(Error::Config(format!(
                            "layer {i}: conv expects [maps, H, W] input, got {shape:?}"
                        )));
                    }
                    if out_maps == 0 || kernel == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: conv maps and kernel must be >= 1"
                        )));
                    }
                    let (d_in, h, w) = (shape[0], shape[1], shape[2]);
                    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
                    if hp < kernel || wp < kernel {
                        return Err(Error::Geometry {
                            op: "network_new",
                            msg: format!(
                                "layer {i}: kernel {kernel} exceeds padded input {hp}x{wp}"
                            ),
                        });
                    }
                    let fan_in = (d_in * kernel * kernel) as f64;
                    let fan_out = (out_maps * kernel * kernel) as f64;
                    let a = (6.0 / (fan_in + fan_out)).sqrt();
                    let wlen = out_maps * d_in * kernel * kernel;
                    let wdata: Vec<f64> = (0..wlen).map(|_| rng.uniform(-a, a)).collect();
                    params.push(
                        format!("layer{i}.w"),
                        Tensor::new(vec![out_maps, d_in, kernel, kernel], wdata)?,
                        true,
                    );
                    params.push(format!("layer{i}.b"), Tensor::zeros(&[out_maps]), false);
                    shape = vec![out_maps, hp - kernel + 1, wp - kernel + 1];
                }
                LayerSpec::MeanPool { s } => {
                    if shape.len() != 3 {
                        return Err(Error::Config(format!(
                            "layer {i}: pool expects [maps, H, W] input, got {shape:?}"
                        )));
                    }
                    if s == 0 || !shape[1].is_multiple_of(s) || !shape[2].is_multiple_of(s) {
                        return Err(Error::Geometry {
                            op: "network_new",
                            msg: format!(
                                "layer {i}: input {}x{} not divisible by pooling factor {s}",
                                shape[1], shape[2]
                            ),
                        });
                    }
                    shape = vec![shape[0], shape[1] / s, shape[2] / s];
                }
                LayerSpec::Flatten => {
                    if shape.len() != 3 {
                        return Err(Error::Config(format!(
                            "layer {i}: flatten expects [maps, H, W] input, got {shape:?}"
                        )));
                    }
                    shape = vec![shape[0] * shape[1] * shape[2]];
                }
                LayerSpec::Dense { units, .. } => {
                    if shape.len() != 1 {
                        return Err(Error::Config(format!(
                            "layer {i}: dense expects a flat vector input, got {shape:?}"
                        )));
                    }
                    if units == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: dense units must be >= 1"
                        )));
                    }
                    let n = shape[0];
                    let a = (6.0 / (n + units) as f64).sqrt();
                    let wdata: Vec<f64> = (0..units * n).map(|_| rng.uniform(-a, a)).collect();
                    params.push(
                        format!("layer{i}.w"),
                        Tensor::new(vec![units, n], wdata)?,
                        true,
                    );
                    params.push(format!("layer{i}.b"), Tensor::zeros(&[units]), false);
                    shape = vec![units];
                }
                LayerSpec::SoftmaxOutput { classes: k } => {
                    if !is_last {
                        return Err(Error::Config(format!(
                            "layer {i}: softmax output must be the final layer"
                        )));
                    }
                    if shape.len() != 1 {
                        return Err(Error::Config(format!(
                            "layer {i}: softmax expects a flat vector input, got {shape:?}"
                        )));
                    }
                    if k < 2 {
                        return Err(Error::Config(format!("layer {i}: need at least 2 classes")));
                    }
                    let n = shape[0];
                    let a = (6.0 / (n + k) as f64).sqrt();
                    let tdata: Vec<f64> = (0..k * n).map(|_| rng.uniform(-a, a)).collect();
                    params.push(
                        format!("layer{i}.theta"),
                        Tensor::new(vec![k, n], tdata)?,
                        true,
                    );
                    shape = vec![k];
                    classes = k;
                }
            }
        }
        if classes == 0 {
            return Err(Error::Config(
                "network must end with a softmax output layer".into(),
            ));
        }
        Ok(Network {
            layers,
            input_shape: input_shape.to_vec(),
            params,
            classes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Replaces all parameters with a mirror-shaped set (checkpoint restore,
    /// early-stop snapshots).
    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        self.params.check_mirror(&params, "set_params")?;
        self.params = params;
        Ok(())
    }

    fn param_pair(&self, i: usize) -> (&Tensor, Option<&Tensor>) {
        let w = &self
            .params
            .get(&format!("layer{i}.w"))
            .or_else(|| self.params.get(&format!("layer{i}.theta")))
            .expect("validated at construction")
            .value;
        let b = self.params.get(&format!("layer{i}.b")).map(|p| &p.value);
        (w, b)
    }

    /// Plain forward pass with no dropout anywhere.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.forward_impl(input, &mut DropPlan::Off)
    }

    /// Inference forward: dense activations are scaled by the dropout
    /// keep-probability `p` and dense weights by the dropconnect
    /// keep-probability `q` (mean-field of the train-time masking).
    pub fn forward_infer(&self, input: &Tensor, p: f64, q: f64) -> Result<(Tensor, ForwardCache)> {
        check_keep_prob(p)?;
        check_keep_prob(q)?;
        self.forward_impl(input, &mut DropPlan::Infer { p, q })
    }

    /// Training forward: per dense layer draws a dropconnect weight mask
    /// (row-major) and then a dropout unit mask from the given streams.
    /// Keep-probability 1 draws nothing.
    pub fn forward_train(
        &self,
        input: &Tensor,
        p: f64,
        q: f64,
        dropout_rng: &mut Rng,
        dropconnect_rng: &mut Rng,
    ) -> Result<(Tensor, ForwardCache)> {
        check_keep_prob(p)?;
        check_keep_prob(q)?;
        self.forward_impl(
            input,
            &mut DropPlan::Train {
                p,
                q,
                dropout_rng,
                dropconnect_rng,
            },
        )
    }

    /// Re-runs a forward pass reusing the masks recorded in `prior`. Used by
    /// finite-difference checks that must hold the masks fixed while
    /// parameters are perturbed.
    pub fn forward_replay(
        &self,
        input: &Tensor,
        prior: &ForwardCache,
    ) -> Result<(Tensor, ForwardCache)> {
        self.forward_impl(input, &mut DropPlan::Replay { prior })
    }

    fn forward_impl(&self, input: &Tensor, plan: &mut DropPlan) -> Result<(Tensor, ForwardCache)> {
        if input.shape() != self.input_shape {
            return Err(Error::ShapeMismatch {
                op: "network_forward",
                left: self.input_shape.clone(),
                right: input.shape().to_vec(),
            });
        }
        let mut cur = input.clone();
        let mut traces: Vec<Trace> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    padding,
                    activation,
                    ..
                } => {
                    let (w, b) = self.param_pair(i);
                    let pre = conv_preactivation(&cur, w, b.expect("conv bias"), padding)?;
                    let out = pre.map(|v| activation_apply(activation, v));
                    traces.push(Trace::Conv { input: cur, pre });
                    cur = out;
                }
                LayerSpec::MeanPool { s } => {
                    let out = meanpool_forward(&cur, s)?;
                    traces.push(Trace::MeanPool {
                        in_shape: cur.shape().to_vec(),
                    });
                    cur = out;
                }
                LayerSpec::Flatten => {
                    let out = flatten_forward(&cur)?;
                    traces.push(Trace::Flatten {
                        in_shape: cur.shape().to_vec(),
                    });
                    cur = out;
                }
                LayerSpec::Dense { activation, .. } => {
                    let (w, b) = self.param_pair(i);
                    let w_mult = match plan {
                        DropPlan::Off => None,
                        DropPlan::Infer { q, .. } => {
                            if *q < 1.0 {
                                Some(Tensor::full(w.shape(), *q))
                            } else {
                                None
                            }
                        }
                        DropPlan::Train {
                            q, dropconnect_rng, ..
                        } => {
                            if *q < 1.0 {
                                let (_, mask) = regularize::dropconnect_forward(
                                    w,
                                    *q,
                                    regularize::Mode::Train,
                                    dropconnect_rng,
                                )?;
                                Some(mask)
                            } else {
                                None
                            }
                        }
                        DropPlan::Replay { prior } => match prior.traces.get(i) {
                            Some(Trace::Dense { w_mult, .. }) => w_mult.clone(),
                            _ => {
                                return Err(Error::Config(
                                    "replay cache does not match network".into(),
                                ))
                            }
                        },
                    };
                    let w_eff = match &w_mult {
                        Some(m) => w.zip(m, "dense(w_mult)", |a, b| a * b)?,
                        None => w.clone(),
                    };
                    let u = crate::tensor::matvec(&w_eff, &cur)?;
                    let pre = u.zip(b.expect("dense bias"), "dense(bias)", |a, bb| a + bb)?;
                    let act_out = pre.map(|v| activation_apply(activation, v));
                    let out_mult = match plan {
                        DropPlan::Off => None,
                        DropPlan::Infer { p, .. } => {
                            if *p < 1.0 {
                                Some(Tensor::full(act_out.shape(), *p))
                            } else {
                                None
                            }
                        }
                        DropPlan::Train { p, dropout_rng, .. } => {
                            if *p < 1.0 {
                                let (_, mask) = regularize::dropout_forward(
                                    &act_out,
                                    *p,
                                    regularize::Mode::Train,
                                    dropout_rng,
                                )?;
                                Some(mask)
                            } else {
                                None
                            }
                        }
                        DropPlan::Replay { prior } => match prior.traces.get(i) {
                            Some(Trace::Dense { out_mult, .. }) => out_mult.clone(),
                            _ => {
                                return Err(Error::Config(
                                    "replay cache does not match network".into(),
                                ))
                            }
                        },
                    };
                    let dropped = match &out_mult {
                        Some(m) => act_out.zip(m, "dense(out_mult)", |a, b| a * b)?,
                        None => act_out,
                    };
                    traces.push(Trace::Dense {
                        input: cur,
                        pre,
                        out_mult,
                        w_mult,
                    });
                    cur = dropped;
                }
                LayerSpec::SoftmaxOutput { .. } => {
                    let (theta, _) = self.param_pair(i);
                    let logits = crate::tensor::matvec(theta, &cur)?;
                    let probs = softmax_probs(&logits)?;
                    traces.push(Trace::Softmax { input: cur });
                    cur = probs;
                }
            }
        }
        Ok((cur.clone(), ForwardCache { traces, probs: cur }))
    }

    /// Gradients of the cross-entropy-after-softmax loss at one sample. Uses
    /// the fused logit gradient `probs - onehot(label)`.
    pub fn backward(&self, cache: &ForwardCache, label: usize) -> Result<Gradients> {
        if label >= self.classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        let mut glogits = cache.probs.clone();
        glogits.data_mut()[label] -= 1.0;
        self.backward_from_logit_grad(cache, &glogits)
    }

    /// Backward pass from an arbitrary gradient with respect to the softmax
    /// logits. This is the general entry point; [`Network::backward`] and the
    /// MSE path both feed it.
    pub fn backward_from_logit_grad(
        &self,
        cache: &ForwardCache,
        glogits: &Tensor,
    ) -> Result<Gradients> {
        if cache.traces.len() != self.layers.len() {
            return Err(Error::Config("cache does not match network".into()));
        }
        if glogits.shape() != [self.classes] {
            return Err(Error::ShapeMismatch {
                op: "network_backward",
                left: vec![self.classes],
                right: glogits.shape().to_vec(),
            });
        }
        let mut grads = self.params.zeros_like();
        let mut upstream: Option<Tensor> = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let trace = &cache.traces[i];
            match (*layer, trace) {
                (LayerSpec::SoftmaxOutput { .. }, Trace::Softmax { input }) => {
                    let theta = &self.params.get(&format!("layer{i}.theta")).unwrap().value;
                    let (k, n) = (theta.shape()[0], theta.shape()[1]);
                    let dtheta = grads
                        .get_mut(&format!("layer{i}.theta"))
                        .unwrap()
                        .value
                        .data_mut();
                    for r in 0..k {
                        let g = glogits.data()[r];
                        for c in 0..n {
                            dtheta[r * n + c] = g * input.data()[c];
                        }
                    }
                    let mut dz = Tensor::zeros(&[n]);
                    for c in 0..n {
                        let mut acc = 0.0;
                        for r in 0..k {
                            acc += theta.data()[r * n + c] * glogits.data()[r];
                        }
                        dz.data_mut()[c] = acc;
                    }
                    upstream = Some(dz);
                }
                (
                    LayerSpec::Dense { activation, .. },
                    Trace::Dense {
                        input,
                        pre,
                        out_mult,
                        w_mult,
                    },
                ) => {
                    let mut dy = upstream.take().expect("upstream gradient");
                    if let Some(m) = out_mult {
                        dy = dy.zip(m, "dense_backward(out_mult)", |a, b| a * b)?;
                    }
                    let du = dy.zip(pre, "dense_backward(act)", |g, u| {
                        g * activation_grad(activation, u)
                    })?;
                    let w = &self.params.get(&format!("layer{i}.w")).unwrap().value;
                    let (m, n) = (w.shape()[0], w.shape()[1]);
                    {
                        let dw = grads
                            .get_mut(&format!("layer{i}.w"))
                            .unwrap()
                            .value
                            .data_mut();
                        for r in 0..m {
                            for c in 0..n {
                                let mut g = du.data()[r] * input.data()[c];
                                if let Some(mask) = w_mult {
                                    g *= mask.data()[r * n + c];
                                }
                                dw[r * n + c] = g;
                            }
                        }
                    }
                    grads
                        .get_mut(&format!("layer{i}.b"))
                        .unwrap()
                        .value
                        .data_mut()
                        .copy_from_slice(du.data());
                    let mut dx = Tensor::zeros(&[n]);
                    for c in 0..n {
                        let mut acc = 0.0;
                        for r in 0..m {
                            let mut wv = w.data()[r * n + c];
                            if let Some(mask) = w_mult {
                                wv *= mask.data()[r * n + c];
                            }
                            acc += wv * du.data()[r];
                        }
                        dx.data_mut()[c] = acc;
                    }
                    upstream = Some(dx);
                }
                (LayerSpec::Flatten, Trace::Flatten { in_shape }) => {
                    let up = upstream.take().expect("upstream gradient");
                    upstream = Some(up.reshape(in_shape)?);
                }
                (LayerSpec::MeanPool { s }, Trace::MeanPool { in_shape }) => {
                    let up = upstream.take().expect("upstream gradient");
                    let (d, ho, wo) = (up.shape()[0], up.shape()[1], up.shape()[2]);
                    let inv = 1.0 / (s * s) as f64;
                    let mut din = Tensor::zeros(in_shape);
                    for i_map in 0..d {
                        for y in 0..ho {
                            for x in 0..wo {
                                let g = up.at3(i_map, y, x) * inv;
                                for mm in 0..s {
                                    for nn in 0..s {
                                        din.set3(i_map, s * y + mm, s * x + nn, g);
                                    }
                                }
                            }
                        }
                    }
                    upstream = Some(din);
                }
                (
                    LayerSpec::Conv {
                        padding,
                        activation,
                        ..
                    },
                    Trace::Conv { input, pre },
                ) => {
                    let dz = upstream.take().expect("upstream gradient");
                    let du = dz.zip(pre, "conv_backward(act)", |g, u| {
                        g * activation_grad(activation, u)
                    })?;
                    let w = &self.params.get(&format!("layer{i}.w")).unwrap().value;
                    let (d_out, d_in, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
                    let (h, wdt) = (input.shape()[1], input.shape()[2]);
                    let (ho, wo) = (du.shape()[1], du.shape()[2]);
                    let p = padding as isize;
                    let mut dw = Tensor::zeros(w.shape());
                    let mut db = Tensor::zeros(&[d_out]);
                    let mut dx = Tensor::zeros(input.shape());
                    for j in 0..d_out {
                        let mut bacc = 0.0;
                        for y in 0..ho {
                            for x in 0..wo {
                                let g = du.at3(j, y, x);
                                if g == 0.0 {
                                    continue;
                                }
                                bacc += g;
                                for i_map in 0..d_in {
                                    for a in 0..k {
                                        let r = y as isize + a as isize - p;
                                        if r < 0 || r >= h as isize {
                                            continue;
                                        }
                                        for bb in 0..k {
                                            let c = x as isize + bb as isize - p;
                                            if c < 0 || c >= wdt as isize {
                                                continue;
                                            }
                                            let widx = ((j * d_in + i_map) * k + a) * k + bb;
                                            dw.data_mut()[widx] +=
                                                g * input.at3(i_map, r as usize, c as usize);
                                            let xidx = (i_map * h + r as usize) * wdt + c as usize;
                                            dx.data_mut()[xidx] += g * w.data()[widx];
                                        }
                                    }
                                }
                            }
                        }
                        db.data_mut()[j] = bacc;
                    }
                    grads.get_mut(&format!("layer{i}.w")).unwrap().value = dw;
                    grads.get_mut(&format!("layer{i}.b")).unwrap().value = db;
                    upstream = Some(dx);
                }
                _ => return Err(Error::Config("cache does not match network".into())),
            }
        }
        Ok(grads)
    }
}

fn check_keep_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!(
            "keep-probability must be in (0, 1], got {p}"
        )));
    }
    Ok(())
}

/// Outcome of a full-network finite-difference gradient validation.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub worst_rel: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub elements_checked: usize,
}

/// Central-difference check of every parameter gradient against the analytic
/// backward pass, for the cross-entropy loss at one sample.
///
/// Relative error per element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check(
    net: &mut Network,
    input: &Tensor,
    label: usize,
    h: f64,
) -> Result<GradCheckReport> {
    let (_, cache) = net.forward(input)?;
    let analytic = net.backward(&cache, label)?;
    let mut report = GradCheckReport {
        worst_rel: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        elements_checked: 0,
    };
    for pi in 0..net.params().len() {
        let name = net.params().at(pi).name.clone();
        let n_el = net.params().at(pi).value.len();
        for ei in 0..n_el {
            let orig = net.params().at(pi).value.data()[ei];
            net.params_mut().at_mut(pi).value.data_mut()[ei] = orig + h;
            let plus = ce_loss(net, input, label)?;
            net.params_mut().at_mut(pi).value.data_mut()[ei] = orig - h;
            let minus = ce_loss(net, input, label)?;
            net.params_mut().at_mut(pi).value.data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.at(pi).value.data()[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.elements_checked += 1;
            if rel > report.worst_rel {
                report.worst_rel = rel;
                report.worst_param = name.clone();
                report.worst_index = ei;
            }
        }
    }
    Ok(report)
}

fn ce_loss(net: &Network, input: &Tensor, label: usize) -> Result<f64> {
    let (probs, _) = net.forward(input)?;
    loss::cross_entropy(&probs, label)
}
