//! The training loop: dataset splits, batch policies, per-epoch updates with
//! augmentation/dropout/penalties, inference-mode evaluation, and the full
//! `fit` driver with learning-rate scheduling and early stopping.
//!
//! Batch gradients are the mean of per-sample gradients, accumulated in
//! ascending sample-index order so results are bit-identical regardless of
//! how a batch was listed. Mini-batch with batch size 1 therefore reproduces
//! stochastic mode exactly, and mini-batch over the whole set reproduces full
//! batch.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::loss::{self, Objective};
use crate::net::Network;
use crate::optim::{LrScheduleKind, LrScheduler, Optimizer};
use crate::params::Gradients;
use crate::regularize::{self, RegularizerConfig, StopDecision};
use crate::tensor::{shuffle, Rng, RngStreams, Tensor};

/// Labelled samples with a fixed class count and uniform input shape.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<(Tensor, usize)>,
    classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<(Tensor, usize)>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config("dataset needs at least 2 classes".into()));
        }
        if let Some((first, _)) = samples.first() {
            let shape = first.shape().to_vec();
            for (i, (t, label)) in samples.iter().enumerate() {
                if t.shape() != shape {
                    return Err(Error::ShapeMismatch {
                        op: "dataset_new",
                        left: shape,
                        right: t.shape().to_vec(),
                    });
                }
                if *label >= classes {
                    return Err(Error::LabelOutOfRange {
                        label: samples[i].1,
                        classes,
                    });
                }
            }
        }
        Ok(Dataset { samples, classes })
    }

    pub fn samples(&self) -> &[(Tensor, usize)] {
        &self.samples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Which gradient drives each update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchPolicy {
    /// One update per epoch from the whole-set mean gradient.
    FullBatch,
    /// One update per sample, samples visited in reshuffled order.
    Stochastic,
    /// Shuffled indices chunked to size `n`; the last chunk may be short.
    MiniBatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One row of the metrics history.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub elapsed_ms: u64,
}

/// Shuffles, then deals the first chunk to train, the next to validation,
/// and the last to test. Validation and test sizes are floored; the
/// remainder goes to train.
pub fn split_dataset(
    data: &Dataset,
    fractions: (f64, f64, f64),
    rng: &mut Rng,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fs <= 0.0 {
        return Err(Error::Config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    if (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {fractions:?}"
        )));
    }
    let n = data.len();
    let n_val = (n as f64 * fv).floor() as usize;
    let n_test = (n as f64 * fs).floor() as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split of {n} samples leaves an empty subset (train {n_train}, val {n_val}, test {n_test})"
        )));
    }
    let order = shuffle(&(0..n).collect::<Vec<_>>(), rng);
    let collect = |range: &[usize]| -> Vec<(Tensor, usize)> {
        range.iter().map(|&i| data.samples[i].clone()).collect()
    };
    Ok((
        Dataset::new(collect(&order[..n_train]), data.classes)?,
        Dataset::new(collect(&order[n_train..n_train + n_val]), data.classes)?,
        Dataset::new(collect(&order[n_train + n_val..]), data.classes)?,
    ))
}

/// Index batches for one epoch under the given policy. Full batch keeps the
/// natural order; stochastic and mini-batch reshuffle every call.
pub fn iterate_batches(
    train: &Dataset,
    policy: BatchPolicy,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    let n = train.len();
    if n == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    match policy {
        BatchPolicy::FullBatch => Ok(vec![(0..n).collect()]),
        BatchPolicy::Stochastic => {
            let order = shuffle(&(0..n).collect::<Vec<_>>(), rng);
            Ok(order.into_iter().map(|i| vec![i]).collect())
        }
        BatchPolicy::MiniBatch(size) => {
            if size == 0 || size > n {
                return Err(Error::Config(format!(
                    "mini-batch size {size} invalid for {n} samples"
                )));
            }
            let order = shuffle(&(0..n).collect::<Vec<_>>(), rng);
            Ok(order.chunks(size).map(|c| c.to_vec()).collect())
        }
    }
}

fn argmax_lowest(probs: &Tensor) -> usize {
    let mut best = 0;
    for (i, &v) in probs.data().iter().enumerate().skip(1) {
        if v > probs.data()[best] {
            best = i;
        }
    }
    best
}

/// Mean gradient over a batch at the given candidate parameters, plus the
/// summed data loss and correct count from the same passes. Samples are
/// processed in ascending index order.
#[allow(clippy::too_many_arguments)]
fn batch_gradient(
    scratch: &mut Network,
    data: &Dataset,
    indices: &[usize],
    objective: &Objective,
    reg: &RegularizerConfig,
    streams: &mut RngStreams,
    loss_sum: &mut f64,
    correct: &mut usize,
) -> Result<Gradients> {
    let mut acc = scratch.params().zeros_like();
    for &idx in indices {
        let (image, label) = &data.samples()[idx];
        let input = if reg.recipe.is_empty() {
            image.clone()
        } else {
            regularize::augment(image, &reg.recipe, &mut streams.augment)?
        };
        let (probs, cache) = scratch.forward_train(
            &input,
            reg.dropout_p,
            reg.dropconnect_q,
            &mut streams.dropout,
            &mut streams.dropconnect,
        )?;
        let sample_loss = loss::data_loss(objective.loss, &probs, *label)?;
        if !sample_loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        *loss_sum += sample_loss;
        if argmax_lowest(&probs) == *label {
            *correct += 1;
        }
        let glogits = loss::logit_grad(objective.loss, &probs, *label)?;
        let grads = scratch.backward_from_logit_grad(&cache, &glogits)?;
        for (a, g) in acc.iter_mut().zip(grads.iter()) {
            for (av, gv) in a.value.data_mut().iter_mut().zip(g.value.data()) {
                *av += gv;
            }
        }
    }
    let inv = 1.0 / indices.len() as f64;
    for a in acc.iter_mut() {
        for av in a.value.data_mut() {
            *av *= inv;
        }
    }
    if objective.lambda > 0.0 {
        for a in acc.iter_mut().filter(|p| p.penalized) {
            let w = &scratch.params().get(&a.name).unwrap().value;
            let pg = regularize::penalty_grad(&objective.penalty, w);
            for (av, gv) in a.value.data_mut().iter_mut().zip(pg.data()) {
                *av += objective.lambda * gv;
            }
        }
    }
    Ok(acc)
}

/// One pass over the training set: augment, forward with train-mode
/// dropout/dropconnect, mean batch gradient plus `lambda * grad R`, one
/// optimizer step per batch. Within each batch samples are processed in
/// ascending index order.
///
/// The returned loss/accuracy are measured at the points where gradients
/// were evaluated (for NAG that is the lookahead point).
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    net: &mut Network,
    train: &Dataset,
    objective: &Objective,
    opt: &mut Optimizer,
    reg: &RegularizerConfig,
    policy: BatchPolicy,
    streams: &mut RngStreams,
    epoch: usize,
    alpha: f64,
) -> Result<MetricsRecord> {
    reg.validate()?;
    opt.hyper.alpha = alpha;
    let started = Instant::now();
    let batches = iterate_batches(train, policy, &mut streams.shuffle)?;
    let mut scratch = net.clone();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for mut batch in batches {
        batch.sort_unstable();
        let mut params = net.params().clone();
        let mut grad_fn = |candidate: &crate::params::ParamSet| -> Result<Gradients> {
            scratch.set_params(candidate.clone())?;
            batch_gradient(
                &mut scratch,
                train,
                &batch,
                objective,
                reg,
                streams,
                &mut loss_sum,
                &mut correct,
            )
        };
        opt.step_with(&mut params, &mut grad_fn)?;
        net.set_params(params)?;
    }
    Ok(MetricsRecord {
        epoch,
        split: Split::Train,
        loss: loss_sum / train.len() as f64,
        accuracy: correct as f64 / train.len() as f64,
        lr: alpha,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}

/// Mean data loss and accuracy of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Inference-mode evaluation: dense activations scaled by the dropout
/// keep-probability, weights by the dropconnect keep-probability, no
/// augmentation. Ties in the argmax resolve to the lowest class index.
pub fn evaluate(
    net: &Network,
    data: &Dataset,
    objective: &Objective,
    reg: &RegularizerConfig,
) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (image, label) in data.samples() {
        let (probs, _) = net.forward_infer(image, reg.dropout_p, reg.dropconnect_q)?;
        loss_sum += loss::data_loss(objective.loss, &probs, *label)?;
        if argmax_lowest(&probs) == *label {
            correct += 1;
        }
    }
    Ok(EvalMetrics {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped { stop_epoch: usize },
}

/// Full run description for [`fit`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub objective: Objective,
    pub reg: RegularizerConfig,
    pub policy: BatchPolicy,
    pub max_epochs: usize,
    /// `(patience, min_delta)`; `None` disables early stopping and the
    /// best-snapshot restore.
    pub early_stop: Option<(usize, f64)>,
    pub schedule: LrScheduleKind,
    pub base_alpha: f64,
    /// When false, `elapsed_ms` is recorded as 0 so that repeated runs emit
    /// byte-identical metrics.
    pub timing: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub history: Vec<MetricsRecord>,
    pub stop_reason: StopReason,
    /// Epoch of the restored snapshot when early stopping was enabled.
    pub best_epoch: Option<usize>,
}

/// Repeats `train_epoch` + validation up to `max_epochs`, driving the
/// learning-rate schedule with the plateau signal (validation loss failed to
/// improve on its best in the previous epoch) and the early-stop monitor.
/// With early stopping enabled, the best validation snapshot is restored at
/// the end regardless of why training stopped; a final test-set evaluation
/// is appended to the history.
pub fn fit(
    net: &mut Network,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    opt: &mut Optimizer,
    cfg: &FitConfig,
    streams: &mut RngStreams,
) -> Result<FitResult> {
    if cfg.max_epochs == 0 {
        return Ok(FitResult {
            history: Vec::new(),
            stop_reason: StopReason::MaxEpochs,
            best_epoch: None,
        });
    }
    let mut scheduler = LrScheduler::new(cfg.schedule, cfg.base_alpha)?;
    let mut monitor = cfg
        .early_stop
        .map(|(patience, delta)| regularize::EarlyStopMonitor::new(patience, delta));
    let mut history = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut best_epoch = None;
    let mut best_val = f64::INFINITY;
    let mut plateau = false;
    let mut last_epoch = 0;
    for epoch in 0..cfg.max_epochs {
        last_epoch = epoch;
        let alpha = scheduler.alpha(epoch, plateau);
        let mut train_rec = train_epoch(
            net,
            train,
            &cfg.objective,
            opt,
            &cfg.reg,
            cfg.policy,
            streams,
            epoch,
            alpha,
        )?;
        if !cfg.timing {
            train_rec.elapsed_ms = 0;
        }
        history.push(train_rec);

        let started = Instant::now();
        let val_metrics = evaluate(net, val, &cfg.objective, &cfg.reg)?;
        history.push(MetricsRecord {
            epoch,
            split: Split::Val,
            loss: val_metrics.loss,
            accuracy: val_metrics.accuracy,
            lr: alpha,
            elapsed_ms: if cfg.timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });

        plateau = val_metrics.loss >= best_val;
        if val_metrics.loss < best_val {
            best_val = val_metrics.loss;
        }

        if let Some(m) = monitor.as_mut() {
            match m.update(epoch, val_metrics.loss, net.params()) {
                StopDecision::Continue => {}
                StopDecision::Stop {
                    best_params,
                    best_epoch: be,
                } => {
                    net.set_params(best_params)?;
                    best_epoch = Some(be);
                    stop_reason = StopReason::EarlyStopped { stop_epoch: epoch };
                    break;
                }
            }
        }
    }
    if stop_reason == StopReason::MaxEpochs {
        if let Some(m) = monitor.as_ref() {
            if let Some(best) = m.best_params() {
                net.set_params(best.clone())?;
                best_epoch = Some(m.best_epoch());
            }
        }
    }

    let started = Instant::now();
    let test_metrics = evaluate(net, test, &cfg.objective, &cfg.reg)?;
    history.push(MetricsRecord {
        epoch: last_epoch,
        split: Split::Test,
        loss: test_metrics.loss,
        accuracy: test_metrics.accuracy,
        lr: history.last().map(|r| r.lr).unwrap_or(cfg.base_alpha),
        elapsed_ms: if cfg.timing {
            started.elapsed().as_millis() as u64
        } else {
            0
        },
    });
    Ok(FitResult {
        history,
        stop_reason,
        best_epoch,
    })
}

/// Two-class synthetic image task: class 0 brightens the top-left quadrant,
/// class 1 the bottom-right. Background pixels draw from `[0, 0.3)`, bright
/// pixels from `[0.7, 1.0)`; labels alternate 0, 1, 0, 1, ... so classes are
/// balanced. One uniform draw per pixel keeps generation reproducible.
pub fn synthetic_quadrants(n: usize, side: usize, rng: &mut Rng) -> Result<Dataset> {
    if side < 2 {
        return Err(Error::Config(format!(
            "synthetic images need side >= 2, got {side}"
        )));
    }
    let half = side / 2;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let mut img = Tensor::zeros(&[1, side, side]);
        for r in 0..side {
            for c in 0..side {
                let bright = if label == 0 {
                    r < half && c < half
                } else {
                    r >= half && c >= half
                };
                let v = if bright {
                    rng.uniform(0.7, 1.0)
                } else {
                    rng.uniform(0.0, 0.3)
                };
                img.set3(0, r, c, v);
            }
        }
        samples.push((img, label));
    }
    Dataset::new(samples, 2)
}
