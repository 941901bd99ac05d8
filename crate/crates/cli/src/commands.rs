//! Subcommand implementations. Every command is deterministic given
//! (config, seed): repeated runs emit byte-identical files unless
//! `output.timing = true`.

use std::path::Path;

use gradlab_core::loss::{LossKind, Objective};
use gradlab_core::net::finite_difference_check;
use gradlab_core::testfns::{
    battery_hyper, gd_trajectory, trajectory_csv_header, trajectory_csv_row, ScalarField,
    Trajectory,
};
use gradlab_core::trainer::{evaluate, fit, split_dataset, FitConfig, MetricsRecord, Split};
use gradlab_core::{HyperParams, Network, OptimKind, Optimizer, Rng, RngStreams, Tensor};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::load_dataset;
use crate::error::{CliError, Result};
use crate::metrics::write_metrics;

fn build_network(cfg: &RunConfig, streams: &mut RngStreams) -> Result<Network> {
    Network::new(
        &cfg.arch_input,
        cfg.arch_layers.clone(),
        &mut streams.weight_init,
    )
    .map_err(CliError::Core)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(CliError::io(&cfg.out_dir))
}

fn objective(cfg: &RunConfig) -> Objective {
    Objective {
        loss: LossKind::CrossEntropy,
        penalty: cfg.penalty.clone(),
        lambda: cfg.lambda,
    }
}

/// `train`: full fit over the configured dataset; writes `metrics.csv` and
/// `checkpoint.glb` into the output directory.
pub fn run_train(cfg: &RunConfig) -> Result<()> {
    ensure_out_dir(cfg)?;
    let mut streams = RngStreams::from_master(cfg.seed);
    let data = load_dataset(cfg)?;
    let (train, val, test) =
        split_dataset(&data, cfg.split, &mut streams.shuffle).map_err(CliError::Core)?;
    let mut net = build_network(cfg, &mut streams)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.hyper, net.params()).map_err(CliError::Core)?;
    let fit_cfg = FitConfig {
        objective: objective(cfg),
        reg: cfg.regularizer(),
        policy: cfg.policy,
        max_epochs: cfg.max_epochs,
        early_stop: cfg.early_stop.then_some((cfg.patience, cfg.min_delta)),
        schedule: cfg.schedule,
        base_alpha: cfg.hyper.alpha,
        timing: cfg.timing,
    };
    let result = fit(
        &mut net,
        &train,
        &val,
        &test,
        &mut opt,
        &fit_cfg,
        &mut streams,
    )
    .map_err(CliError::Core)?;

    let metrics_path = cfg.out_dir.join("metrics.csv");
    write_metrics(&result.history, &metrics_path)?;
    let ckpt_path = cfg.out_dir.join("checkpoint.glb");
    checkpoint::save(&net, &opt, &ckpt_path)?;

    let test_rec = result.history.iter().rev().find(|r| r.split == Split::Test);
    println!(
        "trained {} epochs ({:?}); best epoch {:?}",
        result
            .history
            .iter()
            .filter(|r| r.split == Split::Train)
            .count(),
        result.stop_reason,
        result.best_epoch
    );
    if let Some(r) = test_rec {
        println!("test loss {:.6}, test accuracy {:.4}", r.loss, r.accuracy);
    }
    println!("wrote {}", metrics_path.display());
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

/// `eval`: restores a checkpoint into the configured architecture and
/// reports test-split metrics; writes `eval.csv`.
pub fn run_eval(cfg: &RunConfig, checkpoint_path: &Path) -> Result<()> {
    ensure_out_dir(cfg)?;
    let mut streams = RngStreams::from_master(cfg.seed);
    let data = load_dataset(cfg)?;
    let (_, _, test) =
        split_dataset(&data, cfg.split, &mut streams.shuffle).map_err(CliError::Core)?;
    let mut net = build_network(cfg, &mut streams)?;
    let _state = checkpoint::load(&mut net, cfg.optimizer, checkpoint_path)?;
    let metrics =
        evaluate(&net, &test, &objective(cfg), &cfg.regularizer()).map_err(CliError::Core)?;
    let record = MetricsRecord {
        epoch: 0,
        split: Split::Test,
        loss: metrics.loss,
        accuracy: metrics.accuracy,
        lr: cfg.hyper.alpha,
        elapsed_ms: 0,
    };
    let path = cfg.out_dir.join("eval.csv");
    write_metrics(&[record], &path)?;
    println!(
        "test loss {:.6}, test accuracy {:.4} over {} samples",
        metrics.loss,
        metrics.accuracy,
        test.len()
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// `gradcheck`: central-difference validation of every parameter gradient of
/// the configured architecture on a seeded random input. Returns whether the
/// worst relative error stayed below the configured tolerance.
pub fn run_gradcheck(cfg: &RunConfig) -> Result<bool> {
    let mut streams = RngStreams::from_master(cfg.seed);
    let mut net = build_network(cfg, &mut streams)?;
    let numel: usize = cfg.arch_input.iter().product();
    let mut input_rng = Rng::from_seed(cfg.seed);
    let input = Tensor::new(
        cfg.arch_input.clone(),
        (0..numel).map(|_| input_rng.next_f64()).collect(),
    )
    .map_err(CliError::Core)?;
    let report =
        finite_difference_check(&mut net, &input, 0, cfg.gradcheck_h).map_err(CliError::Core)?;
    println!(
        "checked {} parameter elements with h = {:.1e}",
        report.elements_checked, cfg.gradcheck_h
    );
    println!(
        "worst relative error {:.3e} at {}[{}]",
        report.worst_rel, report.worst_param, report.worst_index
    );
    let pass = report.worst_rel < cfg.gradcheck_tol;
    println!(
        "{} (tolerance {:.1e})",
        if pass { "PASS" } else { "FAIL" },
        cfg.gradcheck_tol
    );
    Ok(pass)
}

fn rosenbrock_hyper(kind: OptimKind) -> HyperParams {
    let base = HyperParams::default();
    match kind {
        // steep valley walls: plain gradient steps need a small rate to stay
        // stable
        OptimKind::Sgd | OptimKind::Momentum | OptimKind::Nag => HyperParams {
            alpha: 1e-4,
            ..base
        },
        OptimKind::Adagrad => HyperParams { alpha: 0.5, ..base },
        OptimKind::AdaDelta => HyperParams {
            epsilon: 1e-6,
            ..base
        },
        OptimKind::RmsProp => HyperParams {
            alpha: 1e-3,
            epsilon: 1e-2,
            ..base
        },
        OptimKind::Adam | OptimKind::Nadam => HyperParams {
            alpha: 0.01,
            ..base
        },
    }
}

fn write_trajectory(path: &Path, traj: &Trajectory, dim: usize) -> Result<()> {
    let mut out = trajectory_csv_header(dim);
    out.push('\n');
    for (step, point) in traj.points.iter().enumerate() {
        out.push_str(&trajectory_csv_row(
            step,
            point,
            traj.values[step],
            traj.grad_norms[step],
        ));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(CliError::io(path))
}

/// `bench`: runs every optimizer over the quadratic bowl and Rosenbrock,
/// writing one trajectory CSV per run plus `bench_summary.csv`, and prints
/// the convergence table.
pub fn run_bench(cfg: &RunConfig) -> Result<()> {
    ensure_out_dir(cfg)?;
    type BenchCase<'a> = (&'a ScalarField, &'a [f64], fn(OptimKind) -> HyperParams);
    let quadratic = ScalarField::quadratic_bowl(vec![1.0, 1.0]);
    let rosenbrock = ScalarField::rosenbrock();
    let cases: [BenchCase; 2] = [
        (&quadratic, &[1.0, 1.0], battery_hyper),
        (&rosenbrock, &[-1.2, 1.0], rosenbrock_hyper),
    ];
    let mut summary = String::from("field,optimizer,converged,steps,final_f,final_grad_norm\n");
    println!(
        "{:<12} {:<10} {:>9} {:>7} {:>13} {:>15}",
        "field", "optimizer", "converged", "steps", "final_f", "final_grad_norm"
    );
    for (field, start, hyper_fn) in cases {
        for kind in OptimKind::ALL {
            let traj = gd_trajectory(
                field,
                kind,
                hyper_fn(kind),
                start,
                cfg.bench_max_steps,
                cfg.bench_tol,
            )
            .map_err(CliError::Core)?;
            let path = cfg
                .out_dir
                .join(format!("traj_{}_{}.csv", field.name, kind.name()));
            write_trajectory(&path, &traj, field.dim)?;
            let final_f = *traj.values.last().unwrap();
            let final_g = *traj.grad_norms.last().unwrap();
            println!(
                "{:<12} {:<10} {:>9} {:>7} {:>13.3e} {:>15.3e}",
                field.name,
                kind.name(),
                traj.converged,
                traj.steps,
                final_f,
                final_g
            );
            summary.push_str(&format!(
                "{},{},{},{},{:.16e},{:.16e}\n",
                field.name,
                kind.name(),
                traj.converged,
                traj.steps,
                final_f,
                final_g
            ));
        }
    }
    let summary_path = cfg.out_dir.join("bench_summary.csv");
    std::fs::write(&summary_path, summary).map_err(CliError::io(&summary_path))?;
    println!("wrote {}", summary_path.display());
    Ok(())
}
