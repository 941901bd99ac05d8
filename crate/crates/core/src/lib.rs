//! gradlab: a self-contained deep-learning micro-framework.
//!
//! Dense f64 tensors, a small ConvNet layer zoo (convolution, mean pooling,
//! flatten, dense, softmax) with a hand-derived backward pass, eight
//! gradient-descent update rules, the usual regularizers (weight penalties,
//! dropout, dropconnect, augmentation, early stopping), training loops, and
//! an oracle-grade verification surface: finite-difference gradient checks,
//! closed-form first-step optimizer oracles, and analytic test-function
//! convergence batteries.

pub mod error;
pub mod loss;
pub mod net;
pub mod optim;
pub mod params;
pub mod regularize;
pub mod tensor;
pub mod testfns;
pub mod trainer;

pub use error::{Error, Result};
pub use net::{ActivationKind, ForwardCache, LayerSpec, Network};
pub use optim::{HyperParams, LrScheduleKind, OptimKind, Optimizer, OptimizerState};
pub use params::{Gradients, Param, ParamSet};
pub use regularize::{AugmentStep, EarlyStopMonitor, PenaltyKind, RegularizerConfig};
pub use tensor::{Rng, RngStreams, StreamId, Tensor};
pub use trainer::{BatchPolicy, Dataset, FitConfig, FitResult, MetricsRecord, Split, StopReason};
