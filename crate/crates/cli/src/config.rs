//! Flat `key = value` run configuration: one pair per line, `#` comments,
//! dotted keys, unknown keys rejected. `emit_reference` produces the
//! annotated defaults file; parsing it back yields the default config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gradlab_core::optim::LrScheduleKind;
use gradlab_core::regularize::AugmentStep;
use gradlab_core::{
    ActivationKind, BatchPolicy, HyperParams, LayerSpec, OptimKind, PenaltyKind, RegularizerConfig,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Seeded two-class bright-quadrant images generated in-process.
    Synthetic { samples: usize, side: usize },
    /// IDX image/label file pair (big-endian magic + dims, raw bytes).
    Idx { images: PathBuf, labels: PathBuf },
    /// Rows of `label,p1,...,p_{side*side}` with pixel values 0-255.
    Csv { path: PathBuf, side: usize },
}

/// Everything a run needs, resolved from config text plus flag overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub timing: bool,
    pub dataset: DatasetSource,
    pub split: (f64, f64, f64),
    pub arch_input: Vec<usize>,
    pub arch_layers: Vec<LayerSpec>,
    pub optimizer: OptimKind,
    pub hyper: HyperParams,
    pub penalty: PenaltyKind,
    pub lambda: f64,
    pub dropout_p: f64,
    pub dropconnect_q: f64,
    pub augment: Vec<AugmentStep>,
    pub policy: BatchPolicy,
    pub max_epochs: usize,
    pub early_stop: bool,
    pub patience: usize,
    pub min_delta: f64,
    pub schedule: LrScheduleKind,
    pub gradcheck_h: f64,
    pub gradcheck_tol: f64,
    pub bench_max_steps: usize,
    pub bench_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            timing: false,
            dataset: DatasetSource::Synthetic {
                samples: 1000,
                side: 12,
            },
            split: (0.8, 0.1, 0.1),
            arch_input: vec![1, 12, 12],
            arch_layers: vec![
                LayerSpec::Conv {
                    out_maps: 4,
                    kernel: 3,
                    padding: 1,
                    activation: ActivationKind::Relu,
                },
                LayerSpec::MeanPool { s: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 16,
                    activation: ActivationKind::Tanh,
                },
                LayerSpec::SoftmaxOutput { classes: 2 },
            ],
            optimizer: OptimKind::Adam,
            hyper: HyperParams {
                alpha: 0.001,
                ..Default::default()
            },
            penalty: PenaltyKind::None,
            lambda: 0.0,
            dropout_p: 1.0,
            dropconnect_q: 1.0,
            augment: Vec::new(),
            policy: BatchPolicy::MiniBatch(32),
            max_epochs: 20,
            early_stop: true,
            patience: 5,
            min_delta: 0.0,
            schedule: LrScheduleKind::Constant,
            gradcheck_h: 1e-5,
            gradcheck_tol: 1e-6,
            bench_max_steps: 10_000,
            bench_tol: 1e-6,
        }
    }
}

impl RunConfig {
    pub fn regularizer(&self) -> RegularizerConfig {
        RegularizerConfig {
            penalty: self.penalty.clone(),
            lambda: self.lambda,
            dropout_p: self.dropout_p,
            dropconnect_q: self.dropconnect_q,
            recipe: self.augment.clone(),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "output.dir",
    "output.timing",
    "dataset.kind",
    "dataset.samples",
    "dataset.side",
    "dataset.images",
    "dataset.labels",
    "dataset.csv",
    "split.train",
    "split.val",
    "split.test",
    "arch.input",
    "arch.layers",
    "optimizer.kind",
    "optimizer.alpha",
    "optimizer.gamma",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.epsilon",
    "regularizer.penalty",
    "regularizer.lambda",
    "regularizer.smooth_eps",
    "regularizer.l1_fraction",
    "regularizer.dropout_p",
    "regularizer.dropconnect_q",
    "regularizer.augment",
    "batch.policy",
    "batch.size",
    "train.max_epochs",
    "train.early_stop",
    "train.patience",
    "train.min_delta",
    "train.lr_schedule",
    "train.anneal_k",
    "gradcheck.h",
    "gradcheck.tol",
    "bench.max_steps",
    "bench.tol",
];

struct Raw {
    entries: BTreeMap<String, (String, usize)>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }
}

fn parse_lines(text: &str) -> Result<Raw> {
    let mut entries = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(CliError::Parse {
                line: line_no,
                msg: format!("expected `key = value`, got `{trimmed}`"),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(CliError::Parse {
                line: line_no,
                msg: "empty key".into(),
            });
        }
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::UnknownKey { line: line_no, key });
        }
        if entries.insert(key.clone(), (value, line_no)).is_some() {
            return Err(CliError::Parse {
                line: line_no,
                msg: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(Raw { entries })
}

fn parse_f64(raw: &Raw, key: &'static str, default: f64) -> Result<f64> {
    match raw.entries.get(key) {
        None => Ok(default),
        Some((v, line)) => v.parse::<f64>().map_err(|_| CliError::Parse {
            line: *line,
            msg: format!("{key}: `{v}` is not a number"),
        }),
    }
}

fn parse_usize(raw: &Raw, key: &'static str, default: usize) -> Result<usize> {
    match raw.entries.get(key) {
        None => Ok(default),
        Some((v, line)) => v.parse::<usize>().map_err(|_| CliError::Parse {
            line: *line,
            msg: format!("{key}: `{v}` is not a non-negative integer"),
        }),
    }
}

fn parse_u64(raw: &Raw, key: &'static str, default: u64) -> Result<u64> {
    match raw.entries.get(key) {
        None => Ok(default),
        Some((v, line)) => v.parse::<u64>().map_err(|_| CliError::Parse {
            line: *line,
            msg: format!("{key}: `{v}` is not an unsigned integer"),
        }),
    }
}

fn parse_bool(raw: &Raw, key: &'static str, default: bool) -> Result<bool> {
    match raw.entries.get(key) {
        None => Ok(default),
        Some((v, line)) => match v.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(CliError::Parse {
                line: *line,
                msg: format!("{key}: `{v}` is not true/false"),
            }),
        },
    }
}

fn parse_activation(s: &str, line: usize) -> Result<ActivationKind> {
    match s {
        "linear" => Ok(ActivationKind::Linear),
        "sigmoid" => Ok(ActivationKind::Sigmoid),
        "tanh" => Ok(ActivationKind::Tanh),
        "relu" => Ok(ActivationKind::Relu),
        _ => Err(CliError::Parse {
            line,
            msg: format!("unknown activation `{s}` (linear|sigmoid|tanh|relu)"),
        }),
    }
}

/// Layer grammar: comma-separated entries of
/// `conv:<maps>:<kernel>:<pad>:<act>`, `pool:<s>`, `flatten`,
/// `dense:<units>:<act>`, `softmax:<classes>`.
fn parse_layers(spec: &str, line: usize) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let fields: Vec<&str> = part.split(':').collect();
        let bad = |msg: String| CliError::Parse { line, msg };
        let num = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| bad(format!("`{s}` is not an integer in `{part}`")))
        };
        match fields[0] {
            "conv" if fields.len() == 5 => layers.push(LayerSpec::Conv {
                out_maps: num(fields[1])?,
                kernel: num(fields[2])?,
                padding: num(fields[3])?,
                activation: parse_activation(fields[4], line)?,
            }),
            "pool" if fields.len() == 2 => layers.push(LayerSpec::MeanPool { s: num(fields[1])? }),
            "flatten" if fields.len() == 1 => layers.push(LayerSpec::Flatten),
            "dense" if fields.len() == 3 => layers.push(LayerSpec::Dense {
                units: num(fields[1])?,
                activation: parse_activation(fields[2], line)?,
            }),
            "softmax" if fields.len() == 2 => layers.push(LayerSpec::SoftmaxOutput {
                classes: num(fields[1])?,
            }),
            _ => {
                return Err(bad(format!(
                    "bad layer `{part}` (conv:<maps>:<k>:<pad>:<act> | pool:<s> | flatten | dense:<units>:<act> | softmax:<K>)"
                )))
            }
        }
    }
    if layers.is_empty() {
        return Err(CliError::Parse {
            line,
            msg: "arch.layers is empty".into(),
        });
    }
    Ok(layers)
}

fn layers_to_string(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(|l| match l {
            LayerSpec::Conv {
                out_maps,
                kernel,
                padding,
                activation,
            } => format!(
                "conv:{out_maps}:{kernel}:{padding}:{}",
                act_name(*activation)
            ),
            LayerSpec::MeanPool { s } => format!("pool:{s}"),
            LayerSpec::Flatten => "flatten".to_string(),
            LayerSpec::Dense { units, activation } => {
                format!("dense:{units}:{}", act_name(*activation))
            }
            LayerSpec::SoftmaxOutput { classes } => format!("softmax:{classes}"),
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn act_name(a: ActivationKind) -> &'static str {
    match a {
        ActivationKind::Linear => "linear",
        ActivationKind::Sigmoid => "sigmoid",
        ActivationKind::Tanh => "tanh",
        ActivationKind::Relu => "relu",
    }
}

/// Augmentation grammar: comma-separated entries of `hflip:<prob>`,
/// `vflip:<prob>`, `rotate90:<prob>`, `crop:<pad>:<size>`,
/// `jitter:<magnitude>`. Empty string means no augmentation.
fn parse_augment(spec: &str, line: usize) -> Result<Vec<AugmentStep>> {
    let mut steps = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let fields: Vec<&str> = part.split(':').collect();
        let bad = |msg: String| CliError::Parse { line, msg };
        let prob = |s: &str| -> Result<f64> {
            let p = s
                .parse::<f64>()
                .map_err(|_| bad(format!("`{s}` is not a number in `{part}`")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(bad(format!("probability `{s}` outside [0, 1] in `{part}`")));
            }
            Ok(p)
        };
        match fields[0] {
            "hflip" if fields.len() == 2 => steps.push(AugmentStep::HFlip {
                prob: prob(fields[1])?,
            }),
            "vflip" if fields.len() == 2 => steps.push(AugmentStep::VFlip {
                prob: prob(fields[1])?,
            }),
            "rotate90" if fields.len() == 2 => steps.push(AugmentStep::Rotate90 {
                prob: prob(fields[1])?,
            }),
            "crop" if fields.len() == 3 => steps.push(AugmentStep::Crop {
                pad: fields[1]
                    .parse()
                    .map_err(|_| bad(format!("bad pad in `{part}`")))?,
                size: fields[2]
                    .parse()
                    .map_err(|_| bad(format!("bad size in `{part}`")))?,
            }),
            "jitter" if fields.len() == 2 => steps.push(AugmentStep::Jitter {
                magnitude: fields[1]
                    .parse()
                    .map_err(|_| bad(format!("bad magnitude in `{part}`")))?,
            }),
            _ => {
                return Err(bad(format!(
                    "bad augment step `{part}` (hflip:<p> | vflip:<p> | rotate90:<p> | crop:<pad>:<size> | jitter:<mag>)"
                )))
            }
        }
    }
    Ok(steps)
}

fn augment_to_string(steps: &[AugmentStep]) -> String {
    steps
        .iter()
        .map(|s| match s {
            AugmentStep::HFlip { prob } => format!("hflip:{prob}"),
            AugmentStep::VFlip { prob } => format!("vflip:{prob}"),
            AugmentStep::Rotate90 { prob } => format!("rotate90:{prob}"),
            AugmentStep::Crop { pad, size } => format!("crop:{pad}:{size}"),
            AugmentStep::Jitter { magnitude } => format!("jitter:{magnitude}"),
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses config text. Unknown keys, malformed values, and out-of-range
/// values are rejected with the line number or key name.
pub fn parse_config_text(text: &str) -> Result<RunConfig> {
    let raw = parse_lines(text)?;
    let d = RunConfig::default();

    let line_of = |key: &str| raw.entries.get(key).map(|(_, l)| *l).unwrap_or(0);

    let seed = parse_u64(&raw, "seed", d.seed)?;
    let out_dir = PathBuf::from(raw.get("output.dir").unwrap_or("out"));
    let timing = parse_bool(&raw, "output.timing", d.timing)?;

    let kind = raw.get("dataset.kind").unwrap_or("synthetic");
    let samples = parse_usize(&raw, "dataset.samples", 1000)?;
    let side = parse_usize(&raw, "dataset.side", 12)?;
    let dataset = match kind {
        "synthetic" => {
            if samples == 0 {
                return Err(CliError::Range {
                    key: "dataset.samples",
                    bound: ">= 1",
                    got: samples.to_string(),
                });
            }
            DatasetSource::Synthetic { samples, side }
        }
        "idx" => DatasetSource::Idx {
            images: PathBuf::from(raw.get("dataset.images").unwrap_or("")),
            labels: PathBuf::from(raw.get("dataset.labels").unwrap_or("")),
        },
        "csv" => DatasetSource::Csv {
            path: PathBuf::from(raw.get("dataset.csv").unwrap_or("")),
            side,
        },
        other => {
            return Err(CliError::Parse {
                line: line_of("dataset.kind"),
                msg: format!("unknown dataset.kind `{other}` (synthetic|idx|csv)"),
            })
        }
    };

    let split = (
        parse_f64(&raw, "split.train", d.split.0)?,
        parse_f64(&raw, "split.val", d.split.1)?,
        parse_f64(&raw, "split.test", d.split.2)?,
    );
    for (key, v) in [
        ("split.train", split.0),
        ("split.val", split.1),
        ("split.test", split.2),
    ] {
        if !(v > 0.0 && v < 1.0) {
            return Err(CliError::Range {
                key,
                bound: "in (0, 1)",
                got: v.to_string(),
            });
        }
    }

    let arch_input = match raw.get("arch.input") {
        None => d.arch_input.clone(),
        Some(s) => {
            let dims: std::result::Result<Vec<usize>, _> =
                s.split('x').map(|p| p.trim().parse::<usize>()).collect();
            dims.map_err(|_| CliError::Parse {
                line: line_of("arch.input"),
                msg: format!("arch.input `{s}` is not like 1x12x12 or 8"),
            })?
        }
    };
    let arch_layers = match raw.get("arch.layers") {
        None => d.arch_layers.clone(),
        Some(s) => parse_layers(s, line_of("arch.layers"))?,
    };

    let optimizer = match raw.get("optimizer.kind") {
        None => d.optimizer,
        Some(s) => OptimKind::from_name(s).ok_or_else(|| CliError::Parse {
            line: line_of("optimizer.kind"),
            msg: format!("unknown optimizer.kind `{s}`"),
        })?,
    };
    let hyper = HyperParams {
        alpha: parse_f64(&raw, "optimizer.alpha", d.hyper.alpha)?,
        gamma: parse_f64(&raw, "optimizer.gamma", d.hyper.gamma)?,
        beta1: parse_f64(&raw, "optimizer.beta1", d.hyper.beta1)?,
        beta2: parse_f64(&raw, "optimizer.beta2", d.hyper.beta2)?,
        epsilon: parse_f64(&raw, "optimizer.epsilon", d.hyper.epsilon)?,
    };
    if hyper.alpha < 0.0 || !hyper.alpha.is_finite() {
        return Err(CliError::Range {
            key: "optimizer.alpha",
            bound: ">= 0",
            got: hyper.alpha.to_string(),
        });
    }
    if !(0.0..=1.0).contains(&hyper.gamma) {
        return Err(CliError::Range {
            key: "optimizer.gamma",
            bound: "in [0, 1]",
            got: hyper.gamma.to_string(),
        });
    }
    if !(0.0..1.0).contains(&hyper.beta1) {
        return Err(CliError::Range {
            key: "optimizer.beta1",
            bound: "in [0, 1)",
            got: hyper.beta1.to_string(),
        });
    }
    if !(0.0..1.0).contains(&hyper.beta2) {
        return Err(CliError::Range {
            key: "optimizer.beta2",
            bound: "in [0, 1)",
            got: hyper.beta2.to_string(),
        });
    }
    if hyper.epsilon < 0.0 {
        return Err(CliError::Range {
            key: "optimizer.epsilon",
            bound: ">= 0",
            got: hyper.epsilon.to_string(),
        });
    }

    let smooth_eps = parse_f64(&raw, "regularizer.smooth_eps", 1e-8)?;
    if smooth_eps <= 0.0 {
        return Err(CliError::Range {
            key: "regularizer.smooth_eps",
            bound: "> 0",
            got: smooth_eps.to_string(),
        });
    }
    let l1_fraction = parse_f64(&raw, "regularizer.l1_fraction", 0.5)?;
    if !(0.0..=1.0).contains(&l1_fraction) {
        return Err(CliError::Range {
            key: "regularizer.l1_fraction",
            bound: "in [0, 1]",
            got: l1_fraction.to_string(),
        });
    }
    let penalty = match raw.get("regularizer.penalty").unwrap_or("none") {
        "none" => PenaltyKind::None,
        "l2" => PenaltyKind::L2,
        "l1" => PenaltyKind::L1,
        "l1_smooth" => PenaltyKind::L1Smooth { eps: smooth_eps },
        "elastic" => PenaltyKind::Elastic {
            l1_fraction,
            eps: smooth_eps,
        },
        other => {
            return Err(CliError::Parse {
                line: line_of("regularizer.penalty"),
                msg: format!("unknown penalty `{other}` (none|l2|l1|l1_smooth|elastic)"),
            })
        }
    };
    let lambda = parse_f64(&raw, "regularizer.lambda", d.lambda)?;
    if lambda < 0.0 {
        return Err(CliError::Range {
            key: "regularizer.lambda",
            bound: ">= 0",
            got: lambda.to_string(),
        });
    }
    let dropout_p = parse_f64(&raw, "regularizer.dropout_p", d.dropout_p)?;
    if !(dropout_p > 0.0 && dropout_p <= 1.0) {
        return Err(CliError::Range {
            key: "regularizer.dropout_p",
            bound: "in (0, 1]",
            got: dropout_p.to_string(),
        });
    }
    let dropconnect_q = parse_f64(&raw, "regularizer.dropconnect_q", d.dropconnect_q)?;
    if !(dropconnect_q > 0.0 && dropconnect_q <= 1.0) {
        return Err(CliError::Range {
            key: "regularizer.dropconnect_q",
            bound: "in (0, 1]",
            got: dropconnect_q.to_string(),
        });
    }
    let augment = match raw.get("regularizer.augment") {
        None => Vec::new(),
        Some(s) => parse_augment(s, line_of("regularizer.augment"))?,
    };

    let batch_size = parse_usize(&raw, "batch.size", 32)?;
    let policy = match raw.get("batch.policy").unwrap_or("mini") {
        "full" => BatchPolicy::FullBatch,
        "stochastic" => BatchPolicy::Stochastic,
        "mini" => {
            if batch_size == 0 {
                return Err(CliError::Range {
                    key: "batch.size",
                    bound: ">= 1",
                    got: batch_size.to_string(),
                });
            }
            BatchPolicy::MiniBatch(batch_size)
        }
        other => {
            return Err(CliError::Parse {
                line: line_of("batch.policy"),
                msg: format!("unknown batch.policy `{other}` (full|stochastic|mini)"),
            })
        }
    };

    let anneal_k = parse_f64(&raw, "train.anneal_k", 0.01)?;
    if anneal_k <= 0.0 {
        return Err(CliError::Range {
            key: "train.anneal_k",
            bound: "> 0",
            got: anneal_k.to_string(),
        });
    }
    let schedule = match raw.get("train.lr_schedule").unwrap_or("constant") {
        "constant" => LrScheduleKind::Constant,
        "halving" => LrScheduleKind::Halving,
        "annealing" => LrScheduleKind::Annealing { k: anneal_k },
        other => {
            return Err(CliError::Parse {
                line: line_of("train.lr_schedule"),
                msg: format!("unknown train.lr_schedule `{other}` (constant|halving|annealing)"),
            })
        }
    };

    let gradcheck_h = parse_f64(&raw, "gradcheck.h", d.gradcheck_h)?;
    if gradcheck_h <= 0.0 {
        return Err(CliError::Range {
            key: "gradcheck.h",
            bound: "> 0",
            got: gradcheck_h.to_string(),
        });
    }
    let gradcheck_tol = parse_f64(&raw, "gradcheck.tol", d.gradcheck_tol)?;
    if gradcheck_tol <= 0.0 {
        return Err(CliError::Range {
            key: "gradcheck.tol",
            bound: "> 0",
            got: gradcheck_tol.to_string(),
        });
    }
    let bench_max_steps = parse_usize(&raw, "bench.max_steps", d.bench_max_steps)?;
    if bench_max_steps == 0 {
        return Err(CliError::Range {
            key: "bench.max_steps",
            bound: ">= 1",
            got: bench_max_steps.to_string(),
        });
    }
    let bench_tol = parse_f64(&raw, "bench.tol", d.bench_tol)?;
    if bench_tol <= 0.0 {
        return Err(CliError::Range {
            key: "bench.tol",
            bound: "> 0",
            got: bench_tol.to_string(),
        });
    }

    let cfg = RunConfig {
        seed,
        out_dir,
        timing,
        dataset,
        split,
        arch_input,
        arch_layers,
        optimizer,
        hyper,
        penalty,
        lambda,
        dropout_p,
        dropconnect_q,
        augment,
        policy,
        max_epochs: parse_usize(&raw, "train.max_epochs", d.max_epochs)?,
        early_stop: parse_bool(&raw, "train.early_stop", d.early_stop)?,
        patience: parse_usize(&raw, "train.patience", d.patience)?,
        min_delta: parse_f64(&raw, "train.min_delta", d.min_delta)?,
        schedule,
        gradcheck_h,
        gradcheck_tol,
        bench_max_steps,
        bench_tol,
    };
    if cfg.min_delta < 0.0 {
        return Err(CliError::Range {
            key: "train.min_delta",
            bound: ">= 0",
            got: cfg.min_delta.to_string(),
        });
    }
    Ok(cfg)
}

/// Reads and parses a config file. Referenced dataset files must exist.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let cfg = parse_config_text(&text)?;
    match &cfg.dataset {
        DatasetSource::Idx { images, labels } => {
            for p in [images, labels] {
                if !p.is_file() {
                    return Err(CliError::Usage(format!(
                        "dataset file does not exist: {}",
                        p.display()
                    )));
                }
            }
        }
        DatasetSource::Csv { path, .. } => {
            if !path.is_file() {
                return Err(CliError::Usage(format!(
                    "dataset file does not exist: {}",
                    path.display()
                )));
            }
        }
        DatasetSource::Synthetic { .. } => {}
    }
    Ok(cfg)
}

/// Serializes a config as plain key = value pairs (no comments); parsing the
/// result reproduces the config.
pub fn emit_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let (kind, samples, side, images, labels, csv) = match &cfg.dataset {
        DatasetSource::Synthetic { samples, side } => (
            "synthetic",
            *samples,
            *side,
            String::new(),
            String::new(),
            String::new(),
        ),
        DatasetSource::Idx { images, labels } => (
            "idx",
            1000,
            12,
            images.display().to_string(),
            labels.display().to_string(),
            String::new(),
        ),
        DatasetSource::Csv { path, side } => (
            "csv",
            1000,
            *side,
            String::new(),
            String::new(),
            path.display().to_string(),
        ),
    };
    let (schedule, anneal_k) = match cfg.schedule {
        LrScheduleKind::Constant => ("constant", 0.01),
        LrScheduleKind::Halving => ("halving", 0.01),
        LrScheduleKind::Annealing { k } => ("annealing", k),
    };
    let (penalty, smooth_eps, l1_fraction) = match &cfg.penalty {
        PenaltyKind::None => ("none", 1e-8, 0.5),
        PenaltyKind::L2 => ("l2", 1e-8, 0.5),
        PenaltyKind::L1 => ("l1", 1e-8, 0.5),
        PenaltyKind::L1Smooth { eps } => ("l1_smooth", *eps, 0.5),
        PenaltyKind::Elastic { l1_fraction, eps } => ("elastic", *eps, *l1_fraction),
    };
    let batch_size = match cfg.policy {
        BatchPolicy::MiniBatch(n) => n,
        _ => 32,
    };
    let policy = match cfg.policy {
        BatchPolicy::FullBatch => "full",
        BatchPolicy::Stochastic => "stochastic",
        BatchPolicy::MiniBatch(_) => "mini",
    };
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "output.dir = {}", cfg.out_dir.display());
    let _ = writeln!(s, "output.timing = {}", cfg.timing);
    let _ = writeln!(s, "dataset.kind = {kind}");
    let _ = writeln!(s, "dataset.samples = {samples}");
    let _ = writeln!(s, "dataset.side = {side}");
    let _ = writeln!(s, "dataset.images = {images}");
    let _ = writeln!(s, "dataset.labels = {labels}");
    let _ = writeln!(s, "dataset.csv = {csv}");
    let _ = writeln!(s, "split.train = {}", cfg.split.0);
    let _ = writeln!(s, "split.val = {}", cfg.split.1);
    let _ = writeln!(s, "split.test = {}", cfg.split.2);
    let _ = writeln!(
        s,
        "arch.input = {}",
        cfg.arch_input
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x")
    );
    let _ = writeln!(s, "arch.layers = {}", layers_to_string(&cfg.arch_layers));
    let _ = writeln!(s, "optimizer.kind = {}", cfg.optimizer.name());
    let _ = writeln!(s, "optimizer.alpha = {}", cfg.hyper.alpha);
    let _ = writeln!(s, "optimizer.gamma = {}", cfg.hyper.gamma);
    let _ = writeln!(s, "optimizer.beta1 = {}", cfg.hyper.beta1);
    let _ = writeln!(s, "optimizer.beta2 = {}", cfg.hyper.beta2);
    let _ = writeln!(s, "optimizer.epsilon = {}", cfg.hyper.epsilon);
    let _ = writeln!(s, "regularizer.penalty = {penalty}");
    let _ = writeln!(s, "regularizer.lambda = {}", cfg.lambda);
    let _ = writeln!(s, "regularizer.smooth_eps = {smooth_eps}");
    let _ = writeln!(s, "regularizer.l1_fraction = {l1_fraction}");
    let _ = writeln!(s, "regularizer.dropout_p = {}", cfg.dropout_p);
    let _ = writeln!(s, "regularizer.dropconnect_q = {}", cfg.dropconnect_q);
    let _ = writeln!(
        s,
        "regularizer.augment = {}",
        augment_to_string(&cfg.augment)
    );
    let _ = writeln!(s, "batch.policy = {policy}");
    let _ = writeln!(s, "batch.size = {batch_size}");
    let _ = writeln!(s, "train.max_epochs = {}", cfg.max_epochs);
    let _ = writeln!(s, "train.early_stop = {}", cfg.early_stop);
    let _ = writeln!(s, "train.patience = {}", cfg.patience);
    let _ = writeln!(s, "train.min_delta = {}", cfg.min_delta);
    let _ = writeln!(s, "train.lr_schedule = {schedule}");
    let _ = writeln!(s, "train.anneal_k = {anneal_k}");
    let _ = writeln!(s, "gradcheck.h = {}", cfg.gradcheck_h);
    let _ = writeln!(s, "gradcheck.tol = {}", cfg.gradcheck_tol);
    let _ = writeln!(s, "bench.max_steps = {}", cfg.bench_max_steps);
    let _ = writeln!(s, "bench.tol = {}", cfg.bench_tol);
    s
}

/// The annotated defaults file: every known key with its default value and a
/// short comment.
pub fn emit_reference() -> String {
    let d = RunConfig::default();
    let body = emit_config(&d);
    let mut out = String::new();
    out.push_str("# gradlab run configuration reference\n");
    out.push_str("# Flat `key = value` pairs, one per line; `#` starts a comment line.\n");
    out.push_str("# Unknown keys are rejected. Values shown are the defaults.\n");
    out.push('\n');
    let comments: BTreeMap<&str, &str> = BTreeMap::from([
        ("seed", "master seed; all random streams derive from it"),
        ("output.dir", "directory for metrics, checkpoints, trajectories"),
        ("output.timing", "record wall-clock ms (breaks byte-identical reruns)"),
        ("dataset.kind", "synthetic | idx | csv"),
        ("dataset.samples", "synthetic: number of images"),
        ("dataset.side", "synthetic/csv: image side length"),
        ("dataset.images", "idx: image file path"),
        ("dataset.labels", "idx: label file path"),
        ("dataset.csv", "csv: data file path"),
        ("split.train", "fractions must sum to 1; floor to val/test, remainder to train"),
        ("arch.input", "input shape, e.g. 1x12x12 (maps x rows x cols) or 8 (vector)"),
        (
            "arch.layers",
            "conv:<maps>:<kernel>:<pad>:<act> | pool:<s> | flatten | dense:<units>:<act> | softmax:<K>",
        ),
        ("optimizer.kind", "sgd | momentum | nag | adagrad | adadelta | rmsprop | adam | nadam"),
        ("optimizer.alpha", "learning rate (adadelta ignores it)"),
        ("optimizer.gamma", "momentum / adadelta decay coefficient"),
        ("regularizer.penalty", "none | l2 | l1 | l1_smooth | elastic"),
        ("regularizer.lambda", "penalty strength"),
        ("regularizer.smooth_eps", "l1_smooth / elastic smoothing epsilon"),
        ("regularizer.l1_fraction", "elastic: weight on the l1_smooth part"),
        ("regularizer.dropout_p", "keep-probability for dense activations"),
        ("regularizer.dropconnect_q", "keep-probability for dense weights"),
        (
            "regularizer.augment",
            "hflip:<p> | vflip:<p> | rotate90:<p> | crop:<pad>:<size> | jitter:<mag>, comma-separated",
        ),
        ("batch.policy", "full | stochastic | mini"),
        ("batch.size", "mini-batch size"),
        ("train.early_stop", "restore the best validation snapshot when done"),
        ("train.patience", "stale epochs tolerated beyond the best before stopping"),
        ("train.min_delta", "required improvement over the best validation loss"),
        ("train.lr_schedule", "constant | halving | annealing"),
        ("train.anneal_k", "annealing: alpha / (1 + k * epoch)"),
        ("gradcheck.h", "central-difference step"),
        ("gradcheck.tol", "worst relative error allowed (exit 1 above it)"),
        ("bench.max_steps", "trajectory step budget"),
        ("bench.tol", "gradient-norm convergence tolerance"),
    ]);
    for line in body.lines() {
        if let Some((key, _)) = line.split_once(" = ") {
            if let Some(c) = comments.get(key) {
                out.push_str(&format!("# {c}\n"));
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_defaults() {
        let cfg = parse_config_text("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = parse_config_text("# hello\n\n  # indented comment\nseed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn negative_alpha_names_key() {
        let err = parse_config_text("optimizer.alpha = -1").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("optimizer.alpha"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = parse_config_text("seed = 1\nnot.a.key = 3\n").unwrap_err();
        match err {
            CliError::UnknownKey { line, key } => {
                assert_eq!(line, 2);
                assert_eq!(key, "not.a.key");
            }
            other => panic!("expected unknown key, got {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_config_text("seed = 1\njust some words\n").unwrap_err();
        match err {
            CliError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn defaults_roundtrip_through_emit() {
        let d = RunConfig::default();
        let cfg = parse_config_text(&emit_config(&d)).unwrap();
        assert_eq!(cfg, d);
    }

    #[test]
    fn reference_parses_to_defaults() {
        let cfg = parse_config_text(&emit_reference()).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn layer_and_augment_grammar() {
        let cfg = parse_config_text(
            "arch.layers = conv:2:3:0:sigmoid,pool:2,flatten,softmax:4\n\
             regularizer.augment = hflip:0.5,crop:2:12,jitter:0.1\n",
        )
        .unwrap();
        assert_eq!(cfg.arch_layers.len(), 4);
        assert_eq!(cfg.augment.len(), 3);

        assert!(parse_config_text("arch.layers = conv:2:3\n").is_err());
        assert!(parse_config_text("regularizer.augment = hflip:1.5\n").is_err());
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(parse_config_text("seed = 1\nseed = 2\n").is_err());
    }
}
