//! Analytic scalar fields with known gradients, the central-difference
//! oracle, and gradient-descent trajectories over them. This is the
//! verification battery the optimizers are exercised against.

use crate::error::{Error, Result};
use crate::optim::{HyperParams, OptimKind, Optimizer};
use crate::params::{Gradients, ParamSet};
use crate::tensor::Tensor;

type ValueFn = Box<dyn Fn(&[f64]) -> f64>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64>>;

/// A differentiable function `R^n -> R` with its analytic gradient and, when
/// known, its minimizer.
pub struct ScalarField {
    pub name: String,
    pub dim: usize,
    value: ValueFn,
    grad: GradFn,
    pub minimizer: Option<Vec<f64>>,
    pub min_value: Option<f64>,
}

impl ScalarField {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + 'static,
    ) -> Self {
        ScalarField {
            name: name.into(),
            dim,
            value: Box::new(value),
            grad: Box::new(grad),
            minimizer: None,
            min_value: None,
        }
    }

    pub fn with_minimizer(mut self, at: Vec<f64>, value: f64) -> Self {
        self.minimizer = Some(at);
        self.min_value = Some(value);
        self
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }

    /// Axis-scaled bowl `f(x) = sum lambda_i x_i^2 / 2` with gradient
    /// `lambda_i x_i`, minimized at the origin.
    pub fn quadratic_bowl(lambdas: Vec<f64>) -> Self {
        let dim = lambdas.len();
        let l1 = lambdas.clone();
        let l2 = lambdas.clone();
        ScalarField::new(
            "quadratic",
            dim,
            move |x| x.iter().zip(&l1).map(|(xi, li)| 0.5 * li * xi * xi).sum(),
            move |x| x.iter().zip(&l2).map(|(xi, li)| li * xi).collect(),
        )
        .with_minimizer(vec![0.0; dim], 0.0)
    }

    /// `(1 - x)^2 + 100 (y - x^2)^2`, the classic banana valley with
    /// minimizer (1, 1).
    pub fn rosenbrock() -> Self {
        ScalarField::new(
            "rosenbrock",
            2,
            |x| {
                let (a, b) = (x[0], x[1]);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            |x| {
                let (a, b) = (x[0], x[1]);
                vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ]
            },
        )
        .with_minimizer(vec![1.0, 1.0], 0.0)
    }
}

/// Central-difference gradient: component `i` is
/// `(f(x + h e_i) - f(x - h e_i)) / (2h)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Directional derivative `grad f(x) . v / |v|`. The direction is normalized
/// internally; a zero vector is rejected.
pub fn directional_derivative(field: &ScalarField, x: &[f64], v: &[f64]) -> Result<f64> {
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Config("direction vector must be nonzero".into()));
    }
    let grad = field.grad(x);
    Ok(grad.iter().zip(v).map(|(g, c)| g * c / norm).sum())
}

/// Why a trajectory ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrajectoryEnd {
    /// Gradient norm fell below the tolerance.
    Converged,
    /// Step budget exhausted first.
    BudgetExhausted,
    /// Iterates blew past `|x| > 1e12` or went non-finite.
    Diverged,
}

/// A recorded optimization run: the visited points (including the start),
/// per-point objective values, and how it ended.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub converged: bool,
    pub steps: usize,
    pub end: TrajectoryEnd,
}

const DIVERGENCE_RADIUS: f64 = 1e12;

/// Iterates the chosen update rule on the field's gradient until the
/// gradient norm drops below `tolerance` or the budget runs out.
pub fn gd_trajectory(
    field: &ScalarField,
    kind: OptimKind,
    hyper: HyperParams,
    x0: &[f64],
    max_steps: usize,
    tolerance: f64,
) -> Result<Trajectory> {
    if x0.len() != field.dim {
        return Err(Error::ShapeMismatch {
            op: "gd_trajectory",
            left: vec![field.dim],
            right: vec![x0.len()],
        });
    }
    let mut params = ParamSet::new();
    params.push("x", Tensor::from_vec(x0.to_vec()), true);
    let mut opt = Optimizer::new(kind, hyper, &params)?;

    let mut traj = Trajectory {
        points: vec![x0.to_vec()],
        values: vec![field.value(x0)],
        grad_norms: vec![norm(&field.grad(x0))],
        converged: false,
        steps: 0,
        end: TrajectoryEnd::BudgetExhausted,
    };

    for _ in 0..max_steps {
        let x = traj.points.last().unwrap();
        if *traj.grad_norms.last().unwrap() < tolerance {
            traj.converged = true;
            traj.end = TrajectoryEnd::Converged;
            return Ok(traj);
        }
        if norm(x) > DIVERGENCE_RADIUS || !x.iter().all(|v| v.is_finite()) {
            traj.end = TrajectoryEnd::Diverged;
            return Ok(traj);
        }
        let mut grad_fn = |p: &ParamSet| -> Result<Gradients> {
            let g = field.grad(p.get("x").unwrap().value.data());
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("field gradient"));
            }
            let mut gs = ParamSet::new();
            gs.push("x", Tensor::from_vec(g), true);
            Ok(gs)
        };
        match opt.step_with(&mut params, &mut grad_fn) {
            Ok(()) => {}
            Err(Error::NonFinite(_)) => {
                traj.end = TrajectoryEnd::Diverged;
                return Ok(traj);
            }
            Err(e) => return Err(e),
        }
        traj.steps += 1;
        let x = params.get("x").unwrap().value.data().to_vec();
        traj.values.push(field.value(&x));
        traj.grad_norms.push(norm(&field.grad(&x)));
        traj.points.push(x);
    }
    if *traj.grad_norms.last().unwrap() < tolerance {
        traj.converged = true;
        traj.end = TrajectoryEnd::Converged;
    } else if norm(traj.points.last().unwrap()) > DIVERGENCE_RADIUS {
        traj.end = TrajectoryEnd::Diverged;
    }
    Ok(traj)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Per-optimizer hyperparameters for the convergence battery on the
/// quadratic bowl. Calibrated once against the reference run and frozen;
/// each entry drives the gradient norm below 1e-6 from (1, 1) within
/// 10,000 steps.
pub fn battery_hyper(kind: OptimKind) -> HyperParams {
    let base = HyperParams::default();
    match kind {
        OptimKind::Sgd => HyperParams { alpha: 0.1, ..base },
        OptimKind::Momentum => HyperParams { alpha: 0.1, ..base },
        OptimKind::Nag => HyperParams { alpha: 0.1, ..base },
        OptimKind::Adagrad => HyperParams { alpha: 0.5, ..base },
        // no learning rate; epsilon picks the floor the accumulators decay to
        OptimKind::AdaDelta => HyperParams {
            epsilon: 1e-6,
            ..base
        },
        // The RMS normalization makes steps ~alpha regardless of |g|, so the
        // descent crosses the bowl at rate alpha and then stalls unless the
        // epsilon-dominated tail contracts: near zero the factor per step is
        // 1 - alpha/eps. alpha 1e-3 crosses in ~1.5k steps; eps 1e-2 gives a
        // 0.9 tail contraction.
        OptimKind::RmsProp => HyperParams {
            alpha: 1e-3,
            epsilon: 1e-2,
            ..base
        },
        OptimKind::Adam => HyperParams {
            alpha: 0.05,
            ..base
        },
        OptimKind::Nadam => HyperParams {
            alpha: 0.05,
            ..base
        },
    }
}

/// The CSV layout shared by the trajectory emitters: one row per visited
/// point.
pub fn trajectory_csv_header(dim: usize) -> String {
    let mut cols = vec!["step".to_string()];
    cols.extend((0..dim).map(|i| format!("x{i}")));
    cols.push("f".to_string());
    cols.push("grad_norm".to_string());
    cols.join(",")
}

/// Formats one trajectory row; floats carry 17 significant digits so parsing
/// them back is exact.
pub fn trajectory_csv_row(step: usize, point: &[f64], value: f64, grad_norm: f64) -> String {
    let mut cols = vec![step.to_string()];
    cols.extend(point.iter().map(|v| format!("{v:.16e}")));
    cols.push(format!("{value:.16e}"));
    cols.push(format!("{grad_norm:.16e}"));
    cols.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn fd_gradient_constant_is_zero() {
        let g = fd_gradient(|_| 3.25, &[1.0, -2.0, 0.5], 1e-5);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fd_gradient_square_at_three() {
        let g = fd_gradient(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn fd_gradient_matches_rosenbrock_analytic() {
        let field = ScalarField::rosenbrock();
        let x = [0.5, 0.5];
        let numeric = fd_gradient(|p| field.value(p), &x, 1e-6);
        let analytic = field.grad(&x);
        for (n, a) in numeric.iter().zip(&analytic) {
            let rel = (n - a).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel < 1e-6, "{n} vs {a}");
        }
    }

    #[test]
    fn directional_derivative_axis_orthogonal_and_limit() {
        let plane = ScalarField::new("plane", 2, |x| x[0], |_| vec![1.0, 0.0]);
        assert_eq!(
            directional_derivative(&plane, &[0.3, 0.7], &[2.0, 0.0]).unwrap(),
            1.0
        );
        // orthogonal to the gradient
        let d = directional_derivative(&plane, &[0.3, 0.7], &[0.0, -5.0]).unwrap();
        assert!(d.abs() < 1e-8);
        assert!(directional_derivative(&plane, &[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn directional_derivative_matches_one_sided_quotient() {
        let field = ScalarField::rosenbrock();
        let mut rng = Rng::from_seed(6);
        for _ in 0..20 {
            let x = [rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)];
            let v = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
            if v.iter().map(|c| c * c).sum::<f64>() < 1e-3 {
                continue;
            }
            let d = directional_derivative(&field, &x, &v).unwrap();
            let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
            let h = 1e-6;
            let moved = [x[0] + h * v[0] / norm, x[1] + h * v[1] / norm];
            let quotient = (field.value(&moved) - field.value(&x)) / h;
            assert!(
                (d - quotient).abs() < 1e-4 * d.abs().max(1.0),
                "{d} vs {quotient}"
            );
        }
    }

    #[test]
    fn builtin_gradients_match_fd_at_random_points() {
        let fields = [
            ScalarField::quadratic_bowl(vec![1.0, 1.0]),
            ScalarField::quadratic_bowl(vec![0.5, 4.0, 9.0]),
            ScalarField::rosenbrock(),
        ];
        let mut rng = Rng::from_seed(13);
        for field in &fields {
            for _ in 0..100 {
                let x: Vec<f64> = (0..field.dim).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let analytic = field.grad(&x);
                let numeric = fd_gradient(|p| field.value(p), &x, 1e-6);
                for (a, n) in analytic.iter().zip(&numeric) {
                    let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                    assert!(rel < 1e-6, "{}: {a} vs {n} at {x:?}", field.name);
                }
            }
        }
    }

    #[test]
    fn descent_direction_decreases_quadratic() {
        let field = ScalarField::quadratic_bowl(vec![1.0, 3.0]);
        let mut rng = Rng::from_seed(2);
        for _ in 0..50 {
            let x = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
            let g = field.grad(&x);
            if norm(&g) == 0.0 {
                continue;
            }
            // any alpha below the stability bound 2/L with L = 3 descends
            let alpha = rng.uniform(1e-4, 0.6);
            let moved = [x[0] - alpha * g[0], x[1] - alpha * g[1]];
            assert!(field.value(&moved) < field.value(&x));
        }
    }

    #[test]
    fn sgd_trajectory_geometric_decay_oracle() {
        // oracle: x_k = 0.9^k (1, 1); gradient norm sqrt(2) 0.9^k < 1e-6
        // within ceil(log(1e-6 / sqrt 2) / log 0.9) = 135 steps
        let field = ScalarField::quadratic_bowl(vec![1.0, 1.0]);
        let traj = gd_trajectory(
            &field,
            OptimKind::Sgd,
            HyperParams::with_alpha(0.1),
            &[1.0, 1.0],
            150,
            1e-6,
        )
        .unwrap();
        assert!(traj.converged);
        assert!(traj.steps <= 150);
        for (k, point) in traj.points.iter().enumerate().take(20) {
            let expect = 0.9f64.powi(k as i32);
            for c in point {
                assert!((c - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trajectory_at_minimizer_converges_immediately() {
        let field = ScalarField::rosenbrock();
        let traj = gd_trajectory(
            &field,
            OptimKind::Sgd,
            HyperParams::with_alpha(0.001),
            &[1.0, 1.0],
            100,
            1e-6,
        )
        .unwrap();
        assert!(traj.converged);
        assert_eq!(traj.steps, 0);
    }

    #[test]
    fn unstable_step_size_flags_divergence() {
        // |1 - alpha| > 1 blows up the quadratic iteration
        let field = ScalarField::quadratic_bowl(vec![1.0, 1.0]);
        let traj = gd_trajectory(
            &field,
            OptimKind::Sgd,
            HyperParams::with_alpha(2.5),
            &[1.0, 1.0],
            100_000,
            1e-6,
        )
        .unwrap();
        assert!(!traj.converged);
        assert_eq!(traj.end, TrajectoryEnd::Diverged);
    }

    #[test]
    fn battery_every_optimizer_converges_on_bowl() {
        let field = ScalarField::quadratic_bowl(vec![1.0, 1.0]);
        for kind in OptimKind::ALL {
            let traj = gd_trajectory(&field, kind, battery_hyper(kind), &[1.0, 1.0], 10_000, 1e-6)
                .unwrap();
            assert!(
                traj.converged,
                "{}: end {:?} after {} steps, last grad norm {:.3e}",
                kind.name(),
                traj.end,
                traj.steps,
                traj.grad_norms.last().unwrap()
            );
        }
    }

    #[test]
    fn adam_crosses_rosenbrock_valley() {
        let field = ScalarField::rosenbrock();
        let traj = gd_trajectory(
            &field,
            OptimKind::Adam,
            HyperParams::with_alpha(0.01),
            &[-1.2, 1.0],
            50_000,
            1e-9,
        )
        .unwrap();
        let best = traj.values.iter().cloned().fold(f64::MAX, f64::min);
        assert!(best < 1e-3, "best value {best}");
    }

    #[test]
    fn trajectory_csv_schema_roundtrip() {
        let header = trajectory_csv_header(2);
        assert_eq!(header, "step,x0,x1,f,grad_norm");
        let row = trajectory_csv_row(3, &[0.5, -0.25], 1.0 / 3.0, 0.125);
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "3");
        assert_eq!(fields[1].parse::<f64>().unwrap(), 0.5);
        assert_eq!(fields[3].parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
