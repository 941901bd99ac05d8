//! Gradient-descent update rules, each a transition on
//! `(parameters, gradients, state)`.
//!
//! All arithmetic is elementwise per parameter tensor. A step with any
//! non-finite gradient is rejected and leaves parameters, slots, and the step
//! counter untouched. The SGD rule is shared by batch, stochastic, and
//! mini-batch training; what differs is which gradient the trainer supplies.

// The step loops index parallel arrays (parameters, gradients, slots); an
// index loop is the readable form for that.
#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimKind {
    Sgd,
    Momentum,
    Nag,
    Adagrad,
    AdaDelta,
    RmsProp,
    Adam,
    Nadam,
}

impl OptimKind {
    pub const ALL: [OptimKind; 8] = [
        OptimKind::Sgd,
        OptimKind::Momentum,
        OptimKind::Nag,
        OptimKind::Adagrad,
        OptimKind::AdaDelta,
        OptimKind::RmsProp,
        OptimKind::Adam,
        OptimKind::Nadam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimKind::Sgd => "sgd",
            OptimKind::Momentum => "momentum",
            OptimKind::Nag => "nag",
            OptimKind::Adagrad => "adagrad",
            OptimKind::AdaDelta => "adadelta",
            OptimKind::RmsProp => "rmsprop",
            OptimKind::Adam => "adam",
            OptimKind::Nadam => "nadam",
        }
    }

    pub fn from_name(name: &str) -> Option<OptimKind> {
        OptimKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Learning rate and decay coefficients. `gamma` doubles as the momentum
/// coefficient and the AdaDelta decay; `beta1`/`beta2` are the Adam-family
/// moment decays (0.9, 0.999, eps 1e-8 by convention). Zero values are
/// accepted for `alpha`, `gamma`, and `epsilon` so degenerate reductions
/// (momentum at gamma 0 equals SGD, and so on) stay expressible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub alpha: f64,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 0.01,
            gamma: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl HyperParams {
    pub fn with_alpha(alpha: f64) -> Self {
        HyperParams {
            alpha,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must be in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "beta1/beta2 must be in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Slots {
    None,
    /// Momentum / NAG velocity `v`.
    Velocity(Vec<Tensor>),
    /// Adagrad accumulated squared gradient `G`.
    Accum(Vec<Tensor>),
    /// RMSprop running average `E[g^2]`.
    AvgSq(Vec<Tensor>),
    /// AdaDelta running averages of `g^2` and of squared updates.
    AvgSqPair {
        grad: Vec<Tensor>,
        delta: Vec<Tensor>,
    },
    /// Adam / Nadam first and second moments.
    Moments {
        m: Vec<Tensor>,
        v: Vec<Tensor>,
    },
}

/// Per-parameter auxiliary slots plus the step counter `t`. Slot shapes
/// mirror the parameter shapes exactly; `t` advances by one per accepted
/// step.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimKind,
    t: u64,
    slots: Slots,
}

fn zeros_like(params: &ParamSet) -> Vec<Tensor> {
    params
        .iter()
        .map(|p| Tensor::zeros(p.value.shape()))
        .collect()
}

impl OptimizerState {
    pub fn new(kind: OptimKind, params: &ParamSet) -> Self {
        let slots = match kind {
            OptimKind::Sgd => Slots::None,
            OptimKind::Momentum | OptimKind::Nag => Slots::Velocity(zeros_like(params)),
            OptimKind::Adagrad => Slots::Accum(zeros_like(params)),
            OptimKind::RmsProp => Slots::AvgSq(zeros_like(params)),
            OptimKind::AdaDelta => Slots::AvgSqPair {
                grad: zeros_like(params),
                delta: zeros_like(params),
            },
            OptimKind::Adam | OptimKind::Nadam => Slots::Moments {
                m: zeros_like(params),
                v: zeros_like(params),
            },
        };
        OptimizerState { kind, t: 0, slots }
    }

    pub fn kind(&self) -> OptimKind {
        self.kind
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Serializes all slots plus the step counter as named tensors
    /// (`optim.t`, then `optim.<param>.<slot>` in parameter order).
    pub fn export(&self, params: &ParamSet) -> Vec<(String, Tensor)> {
        let mut out = vec![("optim.t".to_string(), Tensor::from_vec(vec![self.t as f64]))];
        let mut dump = |label: &str, tensors: &[Tensor]| {
            for (p, t) in params.iter().zip(tensors) {
                out.push((format!("optim.{}.{label}", p.name), t.clone()));
            }
        };
        match &self.slots {
            Slots::None => {}
            Slots::Velocity(v) => dump("v", v),
            Slots::Accum(g) => dump("G", g),
            Slots::AvgSq(e) => dump("Eg2", e),
            Slots::AvgSqPair { grad, delta } => {
                dump("Eg2", grad);
                dump("Edx2", delta);
            }
            Slots::Moments { m, v } => {
                dump("m", m);
                dump("v", v);
            }
        }
        out
    }

    /// Rebuilds a state from [`OptimizerState::export`] output.
    pub fn import(
        kind: OptimKind,
        params: &ParamSet,
        entries: &[(String, Tensor)],
    ) -> Result<OptimizerState> {
        let mut state = OptimizerState::new(kind, params);
        let lookup = |name: &str| -> Result<Tensor> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Config(format!("missing optimizer slot {name}")))
        };
        let t_tensor = lookup("optim.t")?;
        state.t = t_tensor.data()[0] as u64;
        let fill = |label: &str, tensors: &mut Vec<Tensor>| -> Result<()> {
            for (p, slot) in params.iter().zip(tensors.iter_mut()) {
                let loaded = lookup(&format!("optim.{}.{label}", p.name))?;
                if loaded.shape() != slot.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "optimizer_import",
                        left: slot.shape().to_vec(),
                        right: loaded.shape().to_vec(),
                    });
                }
                *slot = loaded;
            }
            Ok(())
        };
        match &mut state.slots {
            Slots::None => {}
            Slots::Velocity(v) => fill("v", v)?,
            Slots::Accum(g) => fill("G", g)?,
            Slots::AvgSq(e) => fill("Eg2", e)?,
            Slots::AvgSqPair { grad, delta } => {
                fill("Eg2", grad)?;
                fill("Edx2", delta)?;
            }
            Slots::Moments { m, v } => {
                fill("m", m)?;
                fill("v", v)?;
            }
        }
        Ok(state)
    }
}

fn pre_step(
    params: &ParamSet,
    grads: &Gradients,
    state: &OptimizerState,
    expected: OptimKind,
    hyper: &HyperParams,
) -> Result<()> {
    hyper.validate()?;
    if state.kind != expected {
        return Err(Error::Config(format!(
            "optimizer state is for {}, not {}",
            state.kind.name(),
            expected.name()
        )));
    }
    params.check_mirror(grads, "optimizer_step")?;
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(())
}

/// `theta <- theta - alpha * g`.
pub fn step_sgd(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    hyper: &HyperParams,
) -> Result<()> {
    pre_step(params, grads, state, OptimKind::Sgd, hyper)?;
    for i in 0..params.len() {
        let g = &grads.at(i).value;
        for (pv, gv) in params.at_mut(i).value.data_mut().iter_mut().zip(g.data()) {
            *pv -= hyper.alpha * gv;
        }
    }
    state.t += 1;
    Ok(())
}

/// Heavy ball: `v <- gamma v + alpha g; theta <- theta - v`, applying the
/// freshly updated velocity.
pub fn step_momentum(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    hyper: &HyperParams,
) -> Result<()> {
    pre_step(params, grads, state, OptimKind::Momentum, hyper)?;
    let Slots::Velocity(vs) = &mut state.slots else {
        unreachable!("kind checked")
    };
    for i in 0..params.len() {
        let g = &grads.at(i).value;
        let v = &mut vs[i];
        for ((pv, vv), gv) in params
            .at_mut(i)
            .value
            .data_mut()
            .iter_mut()
            .zip(v.data_mut())
            .zip(g.data())
        {
            *vv = hyper.gamma * *vv + hyper.alpha * gv;
            *pv -= *vv;
        }
    }
    state.t += 1;
    Ok(())
}

/// Nesterov: the gradient is evaluated at the lookahead point
/// `theta - gamma v`, so the caller passes a gradient callback instead of a
/// precomputed gradient. Then `v <- gamma v + alpha g_look; theta <- theta - v`.
pub fn step_nag(
    params: &mut ParamSet,
    grad_fn: &mut dyn FnMut(&ParamSet) -> Result<Gradients>,
    state: &mut OptimizerState,
    hyper: &HyperParams,
) -> Result<()> {
    hyper.validate()?;
    if state.kind != OptimKind::Nag {
        return Err(Error::Config(format!(
            "optimizer state is for {}, not nag",
            state.kind.name()
        )));
    }
    let Slots::Velocity(vs) = &state.slots else {
        unreachable!("kind checked")
    };
    let mut lookahead = params.clone();
    for i in 0..params.len() {
        for (lv, vv) in lookahead
            .at_mut(i)
            .value
            .data_mut()
            .iter_mut()
            .zip(vs[i].data())
        {
            *lv -= hyper.gamma * vv;
        }
    }
    let grads = grad_fn(&lookahead)?;
    params.check_mirror(&grads, "optimizer_step")?;
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    let Slots::Velocity(vs) = &mut state.slots else {
        unreachable!("kind checked")
    };
    for i in 0..params.len() {
        let g = &grads.at(i).value;
        let v = &mut vs[i];
        for ((pv, vv), gv) in params
            .at_mut(i)
            .value
            .data_mut()
            .iter_mut()
            .zip(v.data_mut())
            .zip(g.data())
        {
            *vv = hyper.gamma * *vv + hyper.alpha * gv;
            *pv -= *vv;
        }
    }
    state.t += 1;
    Ok(())
}

/// `G <- G + g^2; theta <- theta - alpha g / (sqrt(G) + eps)`.
pub fn step_adagrad(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    hyper: &HyperParams,
) -> Result<()> {
    pre_step(params, grads, state, OptimKind::Adagrad, hyper)?;
    let Slots::Accum(gs) = &mut state.slots else {
        unreachable!("kind checked")
    };
    for i in 0..params.len() {
        let g = &grads.at(i).value;
        let acc = &mut gs[i];
        for ((pv, av), gv) in params
            .at_mut(i)
            .value
            .data_mut()
            .iter_mut()
            .zip(acc.data_mut())
            .zip(g.data())
        {
            *av += gv * gv;
            *pv -= hyper.alpha * gv / (av.sqrt() + hyper.epsilon);
        }
    }
    state.t += 1;
    Ok(())
}

/// AdaDelta. No learning rate appears: the update RMS replaces it.
/// `E[g^2] <- gamma E[g^2] + (1 - gamma) g^2`, then
/// `dx = -(sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps)) g` using the previous
/// `E[dx^2]`, which is updated with the fresh `dx` afterwards.
pub fn step_adadelta(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    hyper: &HyperParams,
) -> Result<()> {
    pre_step(params, grads, state, OptimKind::AdaDelta, hyper)?;
    let Slots::AvgSqPair { grad, delta } = &mut state.slots else {
        unreachable!("kind checked")
    };
    for i in 0..params.len() {
        let g = &grads.at(i).value;
        let eg2 = &mut grad[i];
        let edx2 = &mut delta[i];
        for (((pv, ev), dv), gv) in params
            .at_mut(i)
            .value
            .data_mut()
            .iter_mut()
            .zip(eg2.data_mut())
            .zip(edx2.data_mut())
            .zip(g.data())
        {
            *ev = hyper.gamma * *ev + (1.0 - hyper.gamma) * gv * gv;
            let dx = -((*dv + hyper.epsilon).sqrt() / (*ev + hyper.epsilon).sqrt()) * gv;
            *dv = hyper.gamma * *dv + (1.0 - hyper.gamma) * dx * dx;
            *pv += dx;
        }
    }
    state.t += 1;
    Ok(())
}

/// `E[g^2] <- 0.9 E[g^2] + 0.1 g^2; theta <- theta - alpha g / (sqrt(E) + eps)`.
/// The 0.9/0.1 decay pair is fixed by convention.
pub fn step_rmsprop(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    hyper: &HyperParams,
) -> Result<()> {
    pre_step(params, grads, state, OptimKind::RmsProp, hyper)?;
    let Slots::AvgSq(es) = &mut state.slots else {
        unreachable!("kind checked")
    };
    for i in 0..params.len() {
        let g = &grads.at(i).value;
        let e = &mut es[i];
        for ((pv, ev), gv) in params
            .at_mut(i)
            .value
            .data_mut()
            .iter_mut()
            .zip(e.data_mut())
            .zip(g.data())
        {
            *ev = 0.9 * *ev + 0.1 * gv * gv;
            *pv -= hyper.alpha * gv / (ev.sqrt() + hyper.epsilon);
        }
    }
    state.t += 1;
    Ok(())
}

/// Adam with bias correction; `t` is incremented before the correction terms
/// are computed.
pub fn step_adam(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    hyper: &HyperParams,
) -> Result<()> {
    pre_step(params, grads, state, OptimKind::Adam, hyper)?;
    state.t += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.t as i32);
    let Slots::Moments { m, v } = &mut state.slots else {
        unreachable!("kind checked")
    };
    for i in 0..params.len() {
        let g = &grads.at(i).value;
        let mi = &mut m[i];
        let vi = &mut v[i];
        for (((pv, mv), vv), gv) in params
            .at_mut(i)
            .value
            .data_mut()
            .iter_mut()
            .zip(mi.data_mut())
            .zip(vi.data_mut())
            .zip(g.data())
        {
            *mv = hyper.beta1 * *mv + (1.0 - hyper.beta1) * gv;
            *vv = hyper.beta2 * *vv + (1.0 - hyper.beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= hyper.alpha * mhat / (vhat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

/// Nadam: Adam's moments with the Nesterov-style blend of the bias-corrected
/// momentum and the current gradient,
/// `theta <- theta - (alpha / (sqrt(vhat) + eps)) *
///  (beta1 mhat + (1 - beta1) g / (1 - beta1^t))`.
pub fn step_nadam(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    hyper: &HyperParams,
) -> Result<()> {
    pre_step(params, grads, state, OptimKind::Nadam, hyper)?;
    state.t += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.t as i32);
    let Slots::Moments { m, v } = &mut state.slots else {
        unreachable!("kind checked")
    };
    for i in 0..params.len() {
        let g = &grads.at(i).value;
        let mi = &mut m[i];
        let vi = &mut v[i];
        for (((pv, mv), vv), gv) in params
            .at_mut(i)
            .value
            .data_mut()
            .iter_mut()
            .zip(mi.data_mut())
            .zip(vi.data_mut())
            .zip(g.data())
        {
            *mv = hyper.beta1 * *mv + (1.0 - hyper.beta1) * gv;
            *vv = hyper.beta2 * *vv + (1.0 - hyper.beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            let blend = hyper.beta1 * mhat + (1.0 - hyper.beta1) * gv / bc1;
            *pv -= hyper.alpha * blend / (vhat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

/// Facade that owns kind, hyperparameters, and state, and dispatches to the
/// step functions above.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimKind,
    pub hyper: HyperParams,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(kind: OptimKind, hyper: HyperParams, params: &ParamSet) -> Result<Self> {
        hyper.validate()?;
        Ok(Optimizer {
            kind,
            hyper,
            state: OptimizerState::new(kind, params),
        })
    }

    /// Steps with a precomputed gradient. NAG cannot be driven this way
    /// because its gradient must be evaluated at the lookahead point.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        match self.kind {
            OptimKind::Sgd => step_sgd(params, grads, &mut self.state, &self.hyper),
            OptimKind::Momentum => step_momentum(params, grads, &mut self.state, &self.hyper),
            OptimKind::Nag => Err(Error::Config(
                "nag requires a gradient callback; use step_with".into(),
            )),
            OptimKind::Adagrad => step_adagrad(params, grads, &mut self.state, &self.hyper),
            OptimKind::AdaDelta => step_adadelta(params, grads, &mut self.state, &self.hyper),
            OptimKind::RmsProp => step_rmsprop(params, grads, &mut self.state, &self.hyper),
            OptimKind::Adam => step_adam(params, grads, &mut self.state, &self.hyper),
            OptimKind::Nadam => step_nadam(params, grads, &mut self.state, &self.hyper),
        }
    }

    /// Steps with a gradient callback. Non-NAG kinds evaluate it once at the
    /// current parameters; NAG evaluates it at the lookahead point.
    pub fn step_with(
        &mut self,
        params: &mut ParamSet,
        grad_fn: &mut dyn FnMut(&ParamSet) -> Result<Gradients>,
    ) -> Result<()> {
        if self.kind == OptimKind::Nag {
            step_nag(params, grad_fn, &mut self.state, &self.hyper)
        } else {
            let grads = grad_fn(params)?;
            self.step(params, &grads)
        }
    }
}

/// Learning-rate schedule selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrScheduleKind {
    Constant,
    /// Halves the rate every time the plateau signal fires.
    Halving,
    /// `alpha / (1 + k * epoch)`.
    Annealing {
        k: f64,
    },
}

/// Stateful schedule: tracks how many times the plateau signal has fired.
#[derive(Debug, Clone)]
pub struct LrScheduler {
    pub kind: LrScheduleKind,
    pub base: f64,
    halvings: u32,
}

impl LrScheduler {
    pub fn new(kind: LrScheduleKind, base: f64) -> Result<Self> {
        if base.is_nan() || base <= 0.0 {
            return Err(Error::Config(format!(
                "base learning rate must be > 0, got {base}"
            )));
        }
        Ok(LrScheduler {
            kind,
            base,
            halvings: 0,
        })
    }

    /// The rate for this epoch. `plateau` reports whether validation loss
    /// failed to improve in the previous epoch.
    pub fn alpha(&mut self, epoch: usize, plateau: bool) -> f64 {
        match self.kind {
            LrScheduleKind::Constant => self.base,
            LrScheduleKind::Halving => {
                if plateau {
                    self.halvings += 1;
                }
                self.base / f64::powi(2.0, self.halvings as i32)
            }
            LrScheduleKind::Annealing { k } => self.base / (1.0 + k * epoch as f64),
        }
    }
}
