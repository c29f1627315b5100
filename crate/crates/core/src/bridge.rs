//! The general training loop run full-batch with plain gradient steps and no
//! averaging or labeled term, compared iterate by iterate with the simplified
//! linear dynamics.

use serde::Serialize;

use crate::error::Result;
use crate::lga::{lga_train_observed, LgaConfig, TrainSetup};
use crate::linreg_lab::{make_diagonal_design, DiagonalProblem, LabHyper, SimplifiedLga};
use crate::models::Model;
use crate::ndcore::{max_abs_diff, Matrix, Rng};
use crate::optim::{OptimizerKind, ScheduleConfig};
use crate::synthdata::{Dataset, Split};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BridgeReport {
    pub iterations: usize,
    /// Largest max-norm gap over all iterates of `θ` and the label parameters.
    pub max_deviation: f64,
    /// `‖θ‖_∞` at the end, to show the dynamics moved.
    pub final_theta_inf: f64,
}

/// Training configuration under which [`lga_train_observed`] on the linear
/// model follows [`SimplifiedLga`] with `hyper`.
pub fn bridge_config(
    problem: &DiagonalProblem,
    hyper: LabHyper,
    iterations: usize,
    seed: u64,
) -> LgaConfig {
    LgaConfig {
        lr_theta: hyper.alpha_theta,
        // The lab objective carries a factor ½ that the training loop omits.
        lr_w: hyper.alpha_w / 2.0,
        batch_labeled: problem.n_l,
        batch_unlabeled: problem.n_u,
        iterations,
        eps_norm: hyper.eps_norm,
        ema_grad_decay: 0.0,
        ema_v4_decay: 0.0,
        schedule: ScheduleConfig::constant(0.0),
        optimizer: OptimizerKind::Sgd,
        seed,
        record_every: iterations,
    }
}

pub fn bridge_check(
    problem: &DiagonalProblem,
    hyper: LabHyper,
    iterations: usize,
    seed: u64,
) -> Result<BridgeReport> {
    let design = make_diagonal_design(problem, &mut Rng::new(seed))?;
    let model = Model::linear(problem.dim())?;
    let labeled = Dataset::labeled(
        design.x_l.clone(),
        Matrix::column(&design.y_l),
        Split::Labeled,
    )?;
    let unlabeled = Dataset::unlabeled(design.x_u.clone());
    let cfg = bridge_config(problem, hyper, iterations, seed);
    let theta0 = vec![0.0; problem.dim()];
    let setup = TrainSetup {
        model: &model,
        labeled: &labeled,
        unlabeled: &unlabeled,
        test: None,
        theta_init: &theta0,
    };
    let mut sim = SimplifiedLga::new(&design, hyper);
    let mut worst = 0.0f64;
    let mut failure = None;
    lga_train_observed(setup, &cfg, None, |_, state| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = sim.step() {
            failure = Some(e);
            return;
        }
        worst = worst.max(max_abs_diff(&state.theta, &sim.theta));
        worst = worst.max(max_abs_diff(state.labels.w.as_slice(), &sim.y_u));
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(BridgeReport {
        iterations,
        max_deviation: worst,
        final_theta_inf: sim.theta.norm_inf(),
    })
}
