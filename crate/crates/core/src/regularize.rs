//! Regularization toolkit: weight-norm penalties and their gradients,
//! classic dropout (test-time scaling by the keep-probability, no train-time
//! rescale), dropconnect, on-the-fly image augmentation, and the
//! early-stopping monitor.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Rng, Tensor};

/// Weight penalty `R(w)`. Values are unweighted; the strength `lambda` is
/// applied by the objective.
#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyKind {
    None,
    /// Sum of squared weights, gradient `2 w`.
    L2,
    /// Sum of absolute weights; subgradient `sign(w)` with `sign(0) = 0`.
    L1,
    /// Differentiable surrogate `sum sqrt(w^2 + eps)`.
    L1Smooth {
        eps: f64,
    },
    /// Convex mix `l1_fraction * l1_smooth + (1 - l1_fraction) * l2`.
    Elastic {
        l1_fraction: f64,
        eps: f64,
    },
}

pub fn penalty_value(kind: &PenaltyKind, weights: &Tensor) -> f64 {
    match *kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::L2 => weights.data().iter().map(|w| w * w).sum(),
        PenaltyKind::L1 => weights.data().iter().map(|w| w.abs()).sum(),
        PenaltyKind::L1Smooth { eps } => weights.data().iter().map(|w| (w * w + eps).sqrt()).sum(),
        PenaltyKind::Elastic { l1_fraction, eps } => {
            l1_fraction * penalty_value(&PenaltyKind::L1Smooth { eps }, weights)
                + (1.0 - l1_fraction) * penalty_value(&PenaltyKind::L2, weights)
        }
    }
}

pub fn penalty_grad(kind: &PenaltyKind, weights: &Tensor) -> Tensor {
    match *kind {
        PenaltyKind::None => Tensor::zeros(weights.shape()),
        PenaltyKind::L2 => weights.map(|w| 2.0 * w),
        PenaltyKind::L1 => weights.map(|w| {
            if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        PenaltyKind::L1Smooth { eps } => weights.map(|w| w / (w * w + eps).sqrt()),
        PenaltyKind::Elastic { l1_fraction, eps } => {
            let l1 = penalty_grad(&PenaltyKind::L1Smooth { eps }, weights);
            let l2 = penalty_grad(&PenaltyKind::L2, weights);
            l1.zip(&l2, "elastic_grad", |a, b| {
                l1_fraction * a + (1.0 - l1_fraction) * b
            })
            .expect("same shape by construction")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

fn check_keep_prob(p: f64, what: &str) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!(
            "{what} keep-probability must be in (0, 1], got {p}"
        )));
    }
    Ok(())
}

/// Classic dropout. Train mode keeps each element with probability `p`
/// (masks drawn in index order) and applies no rescale; inference scales the
/// whole input by `p` and reports an all-ones mask.
pub fn dropout_forward(x: &Tensor, p: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    check_keep_prob(p, "dropout")?;
    match mode {
        Mode::Train => {
            let mask = if p >= 1.0 {
                Tensor::full(x.shape(), 1.0)
            } else {
                let data: Vec<f64> = (0..x.len())
                    .map(|_| if rng.next_f64() < p { 1.0 } else { 0.0 })
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            };
            let y = x.zip(&mask, "dropout_forward", |a, m| a * m)?;
            Ok((y, mask))
        }
        Mode::Infer => Ok((x.scale(p), Tensor::full(x.shape(), 1.0))),
    }
}

/// Chain rule through the dropout mask: `grad = upstream (*) mask`.
pub fn dropout_backward(upstream: &Tensor, mask: &Tensor) -> Result<Tensor> {
    upstream.zip(mask, "dropout_backward", |g, m| g * m)
}

/// Dropconnect masks weights instead of activations. Inference uses the
/// mean-field weights `q * W`.
pub fn dropconnect_forward(
    weights: &Tensor,
    q: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor, Tensor)> {
    check_keep_prob(q, "dropconnect")?;
    match mode {
        Mode::Train => {
            let mask = if q >= 1.0 {
                Tensor::full(weights.shape(), 1.0)
            } else {
                let data: Vec<f64> = (0..weights.len())
                    .map(|_| if rng.next_f64() < q { 1.0 } else { 0.0 })
                    .collect();
                Tensor::new(weights.shape().to_vec(), data)?
            };
            let masked = weights.zip(&mask, "dropconnect_forward", |w, m| w * m)?;
            Ok((masked, mask))
        }
        Mode::Infer => Ok((weights.scale(q), Tensor::full(weights.shape(), 1.0))),
    }
}

/// One step of an augmentation recipe. Probabilistic steps draw exactly one
/// uniform per sample; crop and jitter always fire.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmentStep {
    HFlip {
        prob: f64,
    },
    VFlip {
        prob: f64,
    },
    /// Counter-clockwise quarter turn: `out(r, c) = in(H - 1 - c, r)`.
    Rotate90 {
        prob: f64,
    },
    /// Zero-pad by `pad`, then take a random `size x size` crop.
    Crop {
        pad: usize,
        size: usize,
    },
    /// Adds one uniform offset in `[-magnitude, magnitude]` per channel.
    Jitter {
        magnitude: f64,
    },
}

/// Mirrors each row: `out(r, c) = in(r, W - 1 - c)`.
pub fn hflip(image: &Tensor) -> Result<Tensor> {
    expect_rank3(image, "hflip")?;
    let (d, h, w) = dims3(image);
    let mut out = Tensor::zeros(image.shape());
    for m in 0..d {
        for r in 0..h {
            for c in 0..w {
                out.set3(m, r, c, image.at3(m, r, w - 1 - c));
            }
        }
    }
    Ok(out)
}

/// Mirrors the row order: `out(r, c) = in(H - 1 - r, c)`.
pub fn vflip(image: &Tensor) -> Result<Tensor> {
    expect_rank3(image, "vflip")?;
    let (d, h, w) = dims3(image);
    let mut out = Tensor::zeros(image.shape());
    for m in 0..d {
        for r in 0..h {
            for c in 0..w {
                out.set3(m, r, c, image.at3(m, h - 1 - r, c));
            }
        }
    }
    Ok(out)
}

/// Counter-clockwise quarter turn of every channel (square images).
pub fn rotate90(image: &Tensor) -> Result<Tensor> {
    expect_rank3(image, "rotate90")?;
    let (d, h, w) = dims3(image);
    if h != w {
        return Err(Error::Geometry {
            op: "rotate90",
            msg: format!("quarter turns need square images, got {h}x{w}"),
        });
    }
    let mut out = Tensor::zeros(image.shape());
    for m in 0..d {
        for r in 0..h {
            for c in 0..w {
                out.set3(m, r, c, image.at3(m, h - 1 - c, r));
            }
        }
    }
    Ok(out)
}

/// Applies the recipe steps in order, each probabilistic step fired by a draw
/// from the augmentation stream. The label is untouched by construction.
pub fn augment(image: &Tensor, recipe: &[AugmentStep], rng: &mut Rng) -> Result<Tensor> {
    expect_rank3(image, "augment")?;
    let mut cur = image.clone();
    for step in recipe {
        match *step {
            AugmentStep::HFlip { prob } => {
                if rng.next_f64() < prob {
                    cur = hflip(&cur)?;
                }
            }
            AugmentStep::VFlip { prob } => {
                if rng.next_f64() < prob {
                    cur = vflip(&cur)?;
                }
            }
            AugmentStep::Rotate90 { prob } => {
                if rng.next_f64() < prob {
                    cur = rotate90(&cur)?;
                }
            }
            AugmentStep::Crop { pad, size } => {
                let (d, h, w) = dims3(&cur);
                let (hp, wp) = (h + 2 * pad, w + 2 * pad);
                if size == 0 || size > hp || size > wp {
                    return Err(Error::Geometry {
                        op: "augment(crop)",
                        msg: format!("crop {size} does not fit padded {hp}x{wp}"),
                    });
                }
                let r0 = rng.index(hp - size + 1);
                let c0 = rng.index(wp - size + 1);
                let mut out = Tensor::zeros(&[d, size, size]);
                let p = pad as isize;
                for m in 0..d {
                    for r in 0..size {
                        for c in 0..size {
                            let sr = r as isize + r0 as isize - p;
                            let sc = c as isize + c0 as isize - p;
                            let v = if sr < 0 || sr >= h as isize || sc < 0 || sc >= w as isize {
                                0.0
                            } else {
                                cur.at3(m, sr as usize, sc as usize)
                            };
                            out.set3(m, r, c, v);
                        }
                    }
                }
                cur = out;
            }
            AugmentStep::Jitter { magnitude } => {
                let (d, h, w) = dims3(&cur);
                let mut out = cur.clone();
                for m in 0..d {
                    let offset = rng.uniform(-magnitude, magnitude);
                    for r in 0..h {
                        for c in 0..w {
                            out.set3(m, r, c, cur.at3(m, r, c) + offset);
                        }
                    }
                }
                cur = out;
            }
        }
    }
    Ok(cur)
}

fn expect_rank3(t: &Tensor, op: &'static str) -> Result<()> {
    if t.rank() != 3 {
        return Err(Error::Geometry {
            op,
            msg: format!("expected [maps, H, W], got {:?}", t.shape()),
        });
    }
    Ok(())
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    (t.shape()[0], t.shape()[1], t.shape()[2])
}

/// Full regularizer configuration carried by a training run.
#[derive(Debug, Clone)]
pub struct RegularizerConfig {
    pub penalty: PenaltyKind,
    pub lambda: f64,
    pub dropout_p: f64,
    pub dropconnect_q: f64,
    pub recipe: Vec<AugmentStep>,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            penalty: PenaltyKind::None,
            lambda: 0.0,
            dropout_p: 1.0,
            dropconnect_q: 1.0,
            recipe: Vec::new(),
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        check_keep_prob(self.dropout_p, "dropout")?;
        check_keep_prob(self.dropconnect_q, "dropconnect")?;
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "penalty weight must be >= 0, got {}",
                self.lambda
            )));
        }
        if let PenaltyKind::L1Smooth { eps } | PenaltyKind::Elastic { eps, .. } = self.penalty {
            if eps <= 0.0 {
                return Err(Error::Config(format!(
                    "smoothing epsilon must be > 0, got {eps}"
                )));
            }
        }
        Ok(())
    }
}

/// Decision returned by the early-stopping monitor after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub enum StopDecision {
    Continue,
    /// Training should halt; carries the best snapshot and its epoch.
    Stop {
        best_params: ParamSet,
        best_epoch: usize,
    },
}

/// Tracks the best validation loss and the parameter snapshot that produced
/// it. An epoch improves when it beats the best loss by more than
/// `min_delta`; the stale counter resets exactly then, and the monitor stops
/// once the counter exceeds `patience`.
#[derive(Debug, Clone)]
pub struct EarlyStopMonitor {
    pub patience: usize,
    pub min_delta: f64,
    best_loss: f64,
    best_epoch: usize,
    best_params: Option<ParamSet>,
    stale_epochs: usize,
}

impl EarlyStopMonitor {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopMonitor {
            patience,
            min_delta,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            best_params: None,
            stale_epochs: 0,
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// The best snapshot seen so far, if any epoch has been recorded.
    pub fn best_params(&self) -> Option<&ParamSet> {
        self.best_params.as_ref()
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64, params: &ParamSet) -> StopDecision {
        if self.best_loss - val_loss > self.min_delta {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.best_params = Some(params.clone());
            self.stale_epochs = 0;
            return StopDecision::Continue;
        }
        self.stale_epochs += 1;
        if self.stale_epochs > self.patience {
            StopDecision::Stop {
                best_params: self.best_params.clone().unwrap_or_else(|| params.clone()),
                best_epoch: self.best_epoch,
            }
        } else {
            StopDecision::Continue
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_value_and_grad() {
        let w = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(penalty_value(&PenaltyKind::L2, &w), 25.0);
        assert_eq!(penalty_grad(&PenaltyKind::L2, &w).data(), &[6.0, 8.0]);
    }

    #[test]
    fn l1_value_and_sign_zero() {
        let w = Tensor::from_vec(vec![3.0, -4.0]);
        assert_eq!(penalty_value(&PenaltyKind::L1, &w), 7.0);
        let g = penalty_grad(&PenaltyKind::L1, &Tensor::from_vec(vec![3.0, -4.0, 0.0]));
        assert_eq!(g.data(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn l1_smooth_approaches_l1() {
        let w = Tensor::from_vec(vec![3.0, -4.0]);
        let kind = PenaltyKind::L1Smooth { eps: 1e-16 };
        assert!((penalty_value(&kind, &w) - 7.0).abs() < 1e-8);
        let g = penalty_grad(&kind, &w);
        assert!((g.data()[0] - 1.0).abs() < 1e-8);
        assert!((g.data()[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn penalty_grads_match_finite_differences() {
        let w = Tensor::from_vec(vec![0.7, -1.3, 2.1, -0.2]);
        let kinds = [
            PenaltyKind::L2,
            PenaltyKind::L1,
            PenaltyKind::L1Smooth { eps: 1e-4 },
            PenaltyKind::Elastic {
                l1_fraction: 0.3,
                eps: 1e-4,
            },
        ];
        let h = 1e-6;
        for kind in &kinds {
            let g = penalty_grad(kind, &w);
            for i in 0..w.len() {
                let mut wp = w.clone();
                wp.data_mut()[i] += h;
                let mut wm = w.clone();
                wm.data_mut()[i] -= h;
                let numeric = (penalty_value(kind, &wp) - penalty_value(kind, &wm)) / (2.0 * h);
                assert!(
                    (g.data()[i] - numeric).abs() < 1e-8,
                    "{kind:?} component {i}: {} vs {numeric}",
                    g.data()[i]
                );
            }
        }
    }

    #[test]
    fn l1_smooth_grad_matches_fd_at_zero() {
        let w = Tensor::from_vec(vec![0.0]);
        let kind = PenaltyKind::L1Smooth { eps: 1e-4 };
        let g = penalty_grad(&kind, &w);
        let h = 1e-6;
        let numeric = (penalty_value(&kind, &w.map(|v| v + h))
            - penalty_value(&kind, &w.map(|v| v - h)))
            / (2.0 * h);
        assert!((g.data()[0] - numeric).abs() < 1e-8);
    }

    #[test]
    fn dropout_keep_all_and_infer_scaling() {
        let x = Tensor::new(vec![1, 1, 2], vec![2.0, 4.0]).unwrap();
        let mut rng = Rng::from_seed(1);
        let (y, mask) = dropout_forward(&x, 1.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.data().iter().all(|&m| m == 1.0));

        let (y, _) = dropout_forward(&x, 0.5, Mode::Infer, &mut rng).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dropout_rejects_zero_keep_prob() {
        let x = Tensor::from_vec(vec![1.0]);
        let mut rng = Rng::from_seed(1);
        assert!(dropout_forward(&x, 0.0, Mode::Train, &mut rng).is_err());
        assert!(dropout_forward(&x, -0.5, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_monte_carlo_expectation() {
        // 10k masks; sample mean of y must sit within 3 standard errors of
        // p * x elementwise. Var of mask is p(1-p).
        let x = Tensor::from_vec(vec![1.0, 2.0, -3.0, 0.5]);
        let p = 0.5;
        let trials = 10_000;
        let mut rng = Rng::from_seed(77);
        let mut sums = vec![0.0; x.len()];
        for _ in 0..trials {
            let (y, _) = dropout_forward(&x, p, Mode::Train, &mut rng).unwrap();
            for (s, v) in sums.iter_mut().zip(y.data()) {
                *s += v;
            }
        }
        let stderr_unit = (p * (1.0 - p) / trials as f64).sqrt();
        for (i, (&sum, &xv)) in sums.iter().zip(x.data()).enumerate() {
            let mean = sum / trials as f64;
            let expect = p * xv;
            let tol = 3.0 * stderr_unit * xv.abs();
            assert!(
                (mean - expect).abs() <= tol,
                "component {i}: mean {mean}, expect {expect}, tol {tol}"
            );
        }
    }

    #[test]
    fn dropout_backward_masks_gradient() {
        let up = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let ones = Tensor::full(&[3], 1.0);
        assert_eq!(dropout_backward(&up, &ones).unwrap(), up);
        let mask = Tensor::from_vec(vec![1.0, 0.0, 1.0]);
        let g = dropout_backward(&up, &mask).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 3.0]);
        let bad = Tensor::from_vec(vec![1.0, 0.0]);
        assert!(dropout_backward(&up, &bad).is_err());
    }

    #[test]
    fn dropout_backward_matches_fd_with_frozen_mask() {
        // loss(x) = sum((mask (*) x)^2); gradient via the mask chain rule
        let x = Tensor::from_vec(vec![0.4, -1.1, 0.8, 0.3, -0.6]);
        let mut rng = Rng::from_seed(9);
        let (_, mask) = dropout_forward(&x, 0.6, Mode::Train, &mut rng).unwrap();
        let loss = |t: &Tensor| -> f64 {
            t.zip(&mask, "m", |a, m| a * m)
                .unwrap()
                .data()
                .iter()
                .map(|v| v * v)
                .sum()
        };
        let y = x.zip(&mask, "m", |a, m| a * m).unwrap();
        let upstream = y.scale(2.0);
        let analytic = dropout_backward(&upstream, &mask).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let numeric = (loss(&xp) - loss(&xm)) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-6, "component {i}: {a} vs {numeric}");
        }
    }

    #[test]
    fn dropconnect_keep_all_and_monte_carlo() {
        let w = Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let mut rng = Rng::from_seed(3);
        let (masked, _) = dropconnect_forward(&w, 1.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(masked, w);
        assert!(dropconnect_forward(&w, 0.0, Mode::Train, &mut rng).is_err());

        let q = 0.7;
        let trials = 10_000;
        let mut sums = vec![0.0; w.len()];
        for _ in 0..trials {
            let (m, _) = dropconnect_forward(&w, q, Mode::Train, &mut rng).unwrap();
            for (s, v) in sums.iter_mut().zip(m.data()) {
                *s += v;
            }
        }
        let stderr_unit = (q * (1.0 - q) / trials as f64).sqrt();
        for (i, (&sum, &wv)) in sums.iter().zip(w.data()).enumerate() {
            let mean = sum / trials as f64;
            let expect = q * wv;
            let tol = 3.0 * stderr_unit * wv.abs();
            assert!(
                (mean - expect).abs() <= tol,
                "component {i}: mean {mean}, expect {expect}"
            );
        }
    }

    #[test]
    fn dropconnect_equals_dropout_for_single_weight() {
        // a 1x1 dense layer: masking the weight or masking the output is the
        // same map when the mask draw is shared
        let w = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        let x = 3.0;
        for seed in 0..20 {
            let mut rng_a = Rng::from_seed(seed);
            let mut rng_b = Rng::from_seed(seed);
            let (wm, _) = dropconnect_forward(&w, 0.5, Mode::Train, &mut rng_a).unwrap();
            let through_weight = wm.data()[0] * x;
            let out = Tensor::from_vec(vec![w.data()[0] * x]);
            let (yo, _) = dropout_forward(&out, 0.5, Mode::Train, &mut rng_b).unwrap();
            assert_eq!(through_weight, yo.data()[0]);
        }
    }

    #[test]
    fn hflip_case_and_involution() {
        let img = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let flipped = hflip(&img).unwrap();
        assert_eq!(flipped.data(), &[2.0, 1.0, 4.0, 3.0]);
        assert_eq!(hflip(&flipped).unwrap(), img);
    }

    #[test]
    fn rotate90_index_map_oracle() {
        // oracle: out(r, c) = in(H - 1 - c, r), enumerated on a 2x2
        let img = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let rot = rotate90(&img).unwrap();
        assert_eq!(rot.data(), &[3.0, 1.0, 4.0, 2.0]);
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(rot.at3(0, r, c), img.at3(0, 2 - 1 - c, r));
            }
        }
    }

    #[test]
    fn flips_and_rotations_preserve_pixel_multiset() {
        let img = Tensor::new(vec![2, 3, 3], (0..18).map(f64::from).collect()).unwrap();
        for out in [hflip(&img).unwrap(), vflip(&img).unwrap()] {
            let mut a = img.data().to_vec();
            let mut b = out.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
            assert_eq!(out.shape(), img.shape());
        }
        let sq = Tensor::new(vec![1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let rot = rotate90(&sq).unwrap();
        let mut a = sq.data().to_vec();
        let mut b = rot.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn augment_applies_recipe_and_keeps_crop_size() {
        let img = Tensor::new(vec![1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let recipe = vec![
            AugmentStep::HFlip { prob: 1.0 },
            AugmentStep::Crop { pad: 1, size: 4 },
        ];
        let mut rng = Rng::from_seed(12);
        let out = augment(&img, &recipe, &mut rng).unwrap();
        assert_eq!(out.shape(), &[1, 4, 4]);

        let bad = vec![AugmentStep::Crop { pad: 0, size: 9 }];
        assert!(augment(&img, &bad, &mut rng).is_err());
    }

    #[test]
    fn augment_is_deterministic_per_seed() {
        let img = Tensor::new(vec![1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let recipe = vec![
            AugmentStep::HFlip { prob: 0.5 },
            AugmentStep::VFlip { prob: 0.5 },
            AugmentStep::Rotate90 { prob: 0.5 },
            AugmentStep::Jitter { magnitude: 0.1 },
        ];
        let a = augment(&img, &recipe, &mut Rng::from_seed(5)).unwrap();
        let b = augment(&img, &recipe, &mut Rng::from_seed(5)).unwrap();
        assert_eq!(a, b);
    }

    fn snapshot(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_vec(vec![v]), true);
        p
    }

    #[test]
    fn early_stop_hand_trace() {
        // losses 1.0, 0.8, 0.9, 0.95 with patience 1: the second
        // non-improving epoch (epoch 3) trips the stop; best is epoch 1
        let mut monitor = EarlyStopMonitor::new(1, 0.0);
        assert_eq!(
            monitor.update(0, 1.0, &snapshot(0.0)),
            StopDecision::Continue
        );
        assert_eq!(
            monitor.update(1, 0.8, &snapshot(1.0)),
            StopDecision::Continue
        );
        assert_eq!(
            monitor.update(2, 0.9, &snapshot(2.0)),
            StopDecision::Continue
        );
        match monitor.update(3, 0.95, &snapshot(3.0)) {
            StopDecision::Stop {
                best_params,
                best_epoch,
            } => {
                assert_eq!(best_epoch, 1);
                assert_eq!(best_params.get("w").unwrap().value.data(), &[1.0]);
            }
            other => panic!("expected stop, got {other:?}"),
        }
    }

    #[test]
    fn early_stop_never_fires_on_strict_decrease() {
        let mut monitor = EarlyStopMonitor::new(0, 0.0);
        for epoch in 0..50 {
            let loss = 1.0 / (epoch + 1) as f64;
            assert_eq!(
                monitor.update(epoch, loss, &snapshot(epoch as f64)),
                StopDecision::Continue
            );
        }
    }

    #[test]
    fn early_stop_patience_zero_is_immediate() {
        let mut monitor = EarlyStopMonitor::new(0, 0.0);
        assert_eq!(
            monitor.update(0, 0.5, &snapshot(0.0)),
            StopDecision::Continue
        );
        match monitor.update(1, 0.5, &snapshot(1.0)) {
            StopDecision::Stop { best_epoch, .. } => assert_eq!(best_epoch, 0),
            other => panic!("expected stop, got {other:?}"),
        }
    }

    #[test]
    fn early_stop_returns_minimum_loss_snapshot() {
        let losses = [0.9, 0.7, 0.8, 0.75, 0.72, 0.74, 0.9];
        let mut monitor = EarlyStopMonitor::new(10, 0.0);
        for (epoch, &l) in losses.iter().enumerate() {
            monitor.update(epoch, l, &snapshot(epoch as f64));
        }
        assert_eq!(monitor.best_epoch(), 1);
        assert_eq!(monitor.best_loss(), 0.7);
        assert_eq!(
            monitor
                .best_params()
                .unwrap()
                .get("w")
                .unwrap()
                .value
                .data(),
            &[1.0]
        );
    }
}
