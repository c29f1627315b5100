//! The label gradient alignment training loop and its supervised baseline.
//!
//! Every iteration takes a labeled minibatch and an unlabeled minibatch with
//! the matching rows of the label parameters `w`. The model trains on the
//! imputed labels `f(w)` plus `T(i)` times the labeled gradient, while `w`
//! descends the normalized squared distance between a moving average of the
//! labeled gradient and the gradient induced by the imputed labels.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::metrics::{evaluate, AlignmentProbe, UpdateKind};
use crate::models::{ForwardPass, LabelParam, Model, ParamVector};
use crate::ndcore::{Matrix, Rng};
use crate::optim::{
    EmaState, NormalizerState, OptimizerKind, ParamOptimizer, RowOptimizer, ScheduleConfig,
};
use crate::synthdata::{argmax, Dataset};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LgaConfig {
    pub lr_theta: f64,
    pub lr_w: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub iterations: usize,
    pub eps_norm: f64,
    pub ema_grad_decay: f64,
    pub ema_v4_decay: f64,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Emit a record every this-many iterations, plus the last one.
    pub record_every: usize,
}

impl Default for LgaConfig {
    fn default() -> Self {
        LgaConfig {
            lr_theta: 1e-3,
            lr_w: 1e-2,
            batch_labeled: 100,
            batch_unlabeled: 100,
            iterations: 1000,
            eps_norm: 1e-8,
            ema_grad_decay: 0.99,
            ema_v4_decay: 0.999,
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerKind::default(),
            seed: 0,
            record_every: 50,
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

impl LgaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_theta", self.lr_theta), ("lr_w", self.lr_w)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1".into()));
        }
        if !(self.eps_norm >= 0.0 && self.eps_norm.is_finite()) {
            return Err(invalid(format!(
                "eps_norm must be non-negative, got {}",
                self.eps_norm
            )));
        }
        for (name, d) in [
            ("ema_grad_decay", self.ema_grad_decay),
            ("ema_v4_decay", self.ema_v4_decay),
        ] {
            if !(0.0..1.0).contains(&d) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {d}")));
            }
        }
        self.schedule.validate()
    }

    fn check_batches(&self, n_labeled: usize, n_unlabeled: Option<usize>) -> Result<()> {
        if self.batch_labeled == 0 || (n_unlabeled.is_some() && self.batch_unlabeled == 0) {
            return Err(Error::Empty("minibatch"));
        }
        if self.batch_labeled > n_labeled {
            return Err(invalid(format!(
                "labeled batch {} exceeds {n_labeled} labeled rows",
                self.batch_labeled
            )));
        }
        if let Some(n_u) = n_unlabeled {
            if self.batch_unlabeled > n_u {
                return Err(invalid(format!(
                    "unlabeled batch {} exceeds {n_u} unlabeled rows",
                    self.batch_unlabeled
                )));
            }
        }
        Ok(())
    }

    fn record_due(&self, i: usize) -> bool {
        i.is_multiple_of(self.record_every) || i == self.iterations
    }
}

/// Free label parameters for every unlabeled row and their optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputedLabelState {
    pub w: Matrix,
    pub optimizer: RowOptimizer,
    pub param: LabelParam,
}

impl ImputedLabelState {
    /// `w = 0`: uniform labels under softmax, zero targets under identity.
    pub fn zeros(rows: usize, cols: usize, param: LabelParam, kind: OptimizerKind) -> Self {
        ImputedLabelState::from_w(Matrix::zeros(rows, cols), param, kind)
    }

    pub fn from_w(w: Matrix, param: LabelParam, kind: OptimizerKind) -> Self {
        let optimizer = RowOptimizer::new(kind, w.rows(), w.cols());
        ImputedLabelState {
            w,
            optimizer,
            param,
        }
    }

    pub fn labels(&self) -> Matrix {
        self.param.apply(&self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    pub rows: Vec<usize>,
    pub x: Matrix,
    pub w: Matrix,
}

/// Distinct rows drawn uniformly, with the inputs and label parameters of
/// those rows in the same order.
pub fn sample_paired_minibatch(
    rng: &mut Rng,
    x_u: &Matrix,
    state: &ImputedLabelState,
    size: usize,
) -> Result<PairedBatch> {
    if size > x_u.rows() {
        return Err(invalid(format!(
            "minibatch of {size} from {} rows",
            x_u.rows()
        )));
    }
    if size == 0 {
        return Err(Error::Empty("minibatch"));
    }
    if state.w.rows() != x_u.rows() {
        return Err(shape_mismatch(
            "paired minibatch",
            format!("{} label rows", x_u.rows()),
            format!("{}", state.w.rows()),
        ));
    }
    let rows = rng.sample_distinct(x_u.rows(), size);
    Ok(paired_rows(x_u, state, rows))
}

fn paired_rows(x_u: &Matrix, state: &ImputedLabelState, rows: Vec<usize>) -> PairedBatch {
    PairedBatch {
        x: x_u.select_rows(&rows),
        w: state.w.select_rows(&rows),
        rows,
    }
}

/// Gradient of the distance with respect to the minibatch label parameters
/// given the back-propagated coefficients `2 r / denominator`.
fn label_param_gradient(
    pass: &ForwardPass<'_>,
    param: LabelParam,
    y: &Matrix,
    backcoef: &[f64],
) -> Matrix {
    // r = EMA(g_ℓ) − g_u, so ∂dist/∂y = −Σ backcoef_i ∂g_u,i/∂y.
    let mut grad_y = pass.label_contraction(backcoef);
    grad_y.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
    param.pullback(y, &grad_y)
}

/// Normalized distance between `target` and the gradient induced by labels
/// `f(w)` on `x_u`, and its gradient with respect to `w`, with the
/// normalizer held at its current average.
pub fn imputed_label_gradient(
    model: &Model,
    theta: &[f64],
    x_u: &Matrix,
    w: &Matrix,
    param: LabelParam,
    target: &[f64],
    normalizer: &NormalizerState,
) -> Result<(f64, Matrix)> {
    let y = param.apply(w);
    let pass = model.forward(theta, x_u)?;
    let g_u = pass.backward(&pass.logit_grad(model.loss_kind(), &y));
    crate::ndcore::ensure_same_len("imputed label target", g_u.len(), target.len())?;
    let r: Vec<f64> = target.iter().zip(g_u.iter()).map(|(a, b)| a - b).collect();
    let (dist, back) = normalizer.evaluate(&r)?;
    Ok((dist, label_param_gradient(&pass, param, &y, &back)))
}

/// Mutable state of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct LgaState {
    pub theta: ParamVector,
    pub theta_optimizer: ParamOptimizer,
    pub labels: ImputedLabelState,
    pub ema_grad: EmaState,
    pub normalizer: NormalizerState,
}

impl LgaState {
    pub fn new(
        model: &Model,
        cfg: &LgaConfig,
        theta: ParamVector,
        n_unlabeled: usize,
    ) -> Result<Self> {
        if theta.len() != model.num_params() {
            return Err(shape_mismatch(
                "initial parameters",
                format!("{}", model.num_params()),
                format!("{}", theta.len()),
            ));
        }
        Ok(LgaState {
            theta_optimizer: ParamOptimizer::new(cfg.optimizer, theta.len()),
            theta,
            labels: ImputedLabelState::zeros(
                n_unlabeled,
                model.output_dim(),
                model.label_param(),
                cfg.optimizer,
            ),
            ema_grad: EmaState::new(cfg.ema_grad_decay)?,
            normalizer: NormalizerState::new(cfg.eps_norm, cfg.ema_v4_decay)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub labeled_loss: f64,
    pub unlabeled_loss: f64,
    pub grad_dist: f64,
    pub g_theta: ParamVector,
    pub displacement: ParamVector,
    pub g_w: Matrix,
}

fn check_finite(iteration: usize, what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalFailure {
            iteration,
            what: format!("non-finite {what}"),
        })
    }
}

/// One iteration on the given labeled batch and unlabeled batch.
pub fn lga_step(
    model: &Model,
    state: &mut LgaState,
    cfg: &LgaConfig,
    x_l: &Matrix,
    y_l: &Matrix,
    batch: &PairedBatch,
    iteration: usize,
) -> Result<StepOutcome> {
    if x_l.rows() == 0 || batch.rows.is_empty() {
        return Err(Error::Empty("minibatch"));
    }
    let (labeled_loss, g_l) = model.loss_and_grad(&state.theta, x_l, y_l)?;
    check_finite(iteration, "labeled gradient", &g_l)?;

    let y_u = state.labels.param.apply(&batch.w);
    let pass = model.forward(&state.theta, &batch.x)?;
    let unlabeled_loss = pass.loss(model.loss_kind(), &y_u);
    let g_u = pass.backward(&pass.logit_grad(model.loss_kind(), &y_u));
    check_finite(iteration, "unlabeled gradient", &g_u)?;

    let t = cfg.schedule.value(iteration);
    let g_theta: ParamVector = g_u.iter().zip(g_l.iter()).map(|(u, l)| u + t * l).collect();

    let ema = state.ema_grad.update(&g_l)?;
    let r: Vec<f64> = ema.iter().zip(g_u.iter()).map(|(a, b)| a - b).collect();
    let (grad_dist, back) = state.normalizer.normalized_sq_dist(&r)?;
    let g_w = label_param_gradient(&pass, state.labels.param, &y_u, &back);
    check_finite(iteration, "label gradient", g_w.as_slice())?;

    let before = state.theta.clone();
    state
        .theta_optimizer
        .update(&mut state.theta, &g_theta, cfg.lr_theta)?;
    let displacement = state
        .theta
        .iter()
        .zip(before.iter())
        .map(|(a, b)| a - b)
        .collect();
    let labels = &mut state.labels;
    labels
        .optimizer
        .update_rows(&mut labels.w, &batch.rows, &g_w, cfg.lr_w)?;
    check_finite(iteration, "parameters", &state.theta)?;

    Ok(StepOutcome {
        labeled_loss,
        unlabeled_loss,
        grad_dist,
        g_theta,
        displacement,
        g_w,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub labeled_loss: f64,
    pub unlabeled_loss: Option<f64>,
    pub grad_dist: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub alignment: Option<f64>,
    /// Argmax accuracy of the imputed labels against the hidden labels.
    pub imputed_accuracy: Option<f64>,
    pub wall_time_s: f64,
}

impl TrainRecord {
    /// The record with its timing zeroed, for run-to-run comparisons.
    pub fn without_timing(mut self) -> Self {
        self.wall_time_s = 0.0;
        self
    }
}

/// Labeled, unlabeled and test sets plus the initial parameters.
#[derive(Clone, Copy, Debug)]
pub struct TrainSetup<'a> {
    pub model: &'a Model,
    pub labeled: &'a Dataset,
    pub unlabeled: &'a Dataset,
    pub test: Option<&'a Dataset>,
    pub theta_init: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct LgaOutcome {
    pub records: Vec<TrainRecord>,
    pub theta: ParamVector,
    pub w: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedOutcome {
    pub records: Vec<TrainRecord>,
    pub theta: ParamVector,
}

/// Row indices for a batch: identity order when the batch covers the whole
/// set, a uniform sample of distinct rows otherwise.
fn batch_rows(rng: &mut Rng, n: usize, size: usize) -> Vec<usize> {
    if size == n {
        (0..n).collect()
    } else {
        rng.sample_distinct(n, size)
    }
}

struct Recorder<'a, 'p> {
    model: &'a Model,
    test: Option<&'a Dataset>,
    probe: Option<&'p mut AlignmentProbe>,
    start: Instant,
    records: Vec<TrainRecord>,
}

impl Recorder<'_, '_> {
    fn record(
        &mut self,
        iteration: usize,
        theta_before: &[f64],
        theta_after: &[f64],
        update: Option<(&[f64], &[f64])>,
        partial: TrainRecord,
    ) -> Result<()> {
        let mut rec = partial;
        rec.iteration = iteration;
        if let Some(test) = self.test {
            let ev = evaluate(self.model, theta_after, test)?;
            rec.test_loss = Some(ev.loss);
            rec.test_accuracy = Some(ev.accuracy);
        }
        if let (Some(probe), Some((displacement, gradient))) = (self.probe.as_deref_mut(), update) {
            let u = match probe.config().update {
                UpdateKind::Displacement => displacement,
                UpdateKind::Gradient => gradient,
            };
            if probe.due(iteration) && u.iter().any(|v| *v != 0.0) {
                rec.alignment = Some(probe.alignment(self.model, theta_before, u)?);
            }
        }
        rec.wall_time_s = self.start.elapsed().as_secs_f64();
        self.records.push(rec);
        Ok(())
    }
}

fn empty_record() -> TrainRecord {
    TrainRecord {
        iteration: 0,
        labeled_loss: f64::NAN,
        unlabeled_loss: None,
        grad_dist: None,
        test_loss: None,
        test_accuracy: None,
        alignment: None,
        imputed_accuracy: None,
        wall_time_s: 0.0,
    }
}

fn imputed_accuracy(unlabeled: &Dataset, w: &Matrix, param: LabelParam) -> Option<f64> {
    let hidden = unlabeled.hidden_labels()?;
    let y = param.apply(w);
    let hits = (0..y.rows())
        .filter(|&i| argmax(y.row(i)) == argmax(hidden.row(i)))
        .count();
    Some(hits as f64 / y.rows().max(1) as f64)
}

pub fn lga_train(
    setup: TrainSetup<'_>,
    cfg: &LgaConfig,
    probe: Option<&mut AlignmentProbe>,
) -> Result<LgaOutcome> {
    lga_train_observed(setup, cfg, probe, |_, _| {})
}

/// [`lga_train`] with a callback receiving each iteration index and the
/// state after that iteration.
pub fn lga_train_observed<F>(
    setup: TrainSetup<'_>,
    cfg: &LgaConfig,
    probe: Option<&mut AlignmentProbe>,
    mut observer: F,
) -> Result<LgaOutcome>
where
    F: FnMut(usize, &LgaState),
{
    cfg.validate()?;
    let TrainSetup {
        model,
        labeled,
        unlabeled,
        test,
        theta_init,
    } = setup;
    let y_l = labeled.labels()?;
    cfg.check_batches(labeled.len(), Some(unlabeled.len()))?;
    let mut state = LgaState::new(model, cfg, theta_init.to_vec().into(), unlabeled.len())?;

    let root = Rng::new(cfg.seed);
    let mut rng_l = root.substream("labeled-batches");
    let mut rng_u = root.substream("unlabeled-batches");
    let mut rec = Recorder {
        model,
        test,
        probe,
        start: Instant::now(),
        records: Vec::new(),
    };

    for i in 1..=cfg.iterations {
        let rows_l = batch_rows(&mut rng_l, labeled.len(), cfg.batch_labeled);
        let x_l = labeled.x.select_rows(&rows_l);
        let y_b = y_l.select_rows(&rows_l);
        let rows_u = batch_rows(&mut rng_u, unlabeled.len(), cfg.batch_unlabeled);
        let batch = paired_rows(&unlabeled.x, &state.labels, rows_u);

        let before = cfg.record_due(i).then(|| state.theta.clone());
        let out = lga_step(model, &mut state, cfg, &x_l, &y_b, &batch, i)?;
        observer(i, &state);

        if let Some(before) = before {
            let partial = TrainRecord {
                labeled_loss: out.labeled_loss,
                unlabeled_loss: Some(out.unlabeled_loss),
                grad_dist: Some(out.grad_dist),
                imputed_accuracy: imputed_accuracy(unlabeled, &state.labels.w, state.labels.param),
                ..empty_record()
            };
            rec.record(
                i,
                &before,
                &state.theta,
                Some((&out.displacement, &out.g_theta)),
                partial,
            )?;
        }
    }
    Ok(LgaOutcome {
        records: rec.records,
        theta: state.theta,
        w: state.labels.w,
    })
}

/// The optimizer on labeled minibatches alone, drawing the same labeled
/// batch sequence as [`lga_train`] under the same seed.
pub fn supervised_train(
    model: &Model,
    cfg: &LgaConfig,
    labeled: &Dataset,
    test: Option<&Dataset>,
    theta_init: &[f64],
    probe: Option<&mut AlignmentProbe>,
) -> Result<SupervisedOutcome> {
    cfg.validate()?;
    let y_l = labeled.labels()?;
    cfg.check_batches(labeled.len(), None)?;
    if theta_init.len() != model.num_params() {
        return Err(shape_mismatch(
            "initial parameters",
            format!("{}", model.num_params()),
            format!("{}", theta_init.len()),
        ));
    }
    let mut theta: ParamVector = theta_init.to_vec().into();
    let mut opt = ParamOptimizer::new(cfg.optimizer, theta.len());
    let mut rng_l = Rng::new(cfg.seed).substream("labeled-batches");
    let mut rec = Recorder {
        model,
        test,
        probe,
        start: Instant::now(),
        records: Vec::new(),
    };

    for i in 1..=cfg.iterations {
        let rows = batch_rows(&mut rng_l, labeled.len(), cfg.batch_labeled);
        let x = labeled.x.select_rows(&rows);
        let y = y_l.select_rows(&rows);
        let (loss, g) = model.loss_and_grad(&theta, &x, &y)?;
        check_finite(i, "labeled gradient", &g)?;
        let before = theta.clone();
        opt.update(&mut theta, &g, cfg.lr_theta)?;
        check_finite(i, "parameters", &theta)?;
        if cfg.record_due(i) {
            let displacement: Vec<f64> = theta
                .iter()
                .zip(before.iter())
                .map(|(a, b)| a - b)
                .collect();
            let partial = TrainRecord {
                labeled_loss: loss,
                ..empty_record()
            };
            rec.record(i, &before, &theta, Some((&displacement, &g)), partial)?;
        }
    }
    Ok(SupervisedOutcome {
        records: rec.records,
        theta,
    })
}
