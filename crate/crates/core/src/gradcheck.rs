//! Central finite-difference oracles for the model derivatives.
//!
//! Everything here goes through the model's primal outputs (`loss`, `logits`,
//! `grad_theta_affine`) only, never through the analytic derivative path it
//! is used to check.

use serde::Serialize;

use crate::error::Result;
use crate::models::{LossKind, MlpConfig, Model, ParamVector};
use crate::ndcore::{norm2, Matrix, Rng, Vector};

/// Base finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Instances whose rectifier pre-activations come closer than this to zero
/// are re-drawn, so that no finite-difference stencil straddles a kink.
pub const KINK_MARGIN: f64 = 1e-3;

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, with `0` when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm2(a).max(norm2(b));
    if scale == 0.0 {
        0.0
    } else {
        norm2(&diff) / scale
    }
}

/// Central differences of the loss, coordinate by coordinate, with step
/// `FD_STEP * (1 + |θ_i|)`.
pub fn fd_grad_theta(model: &Model, theta: &[f64], x: &Matrix, y: &Matrix) -> Result<ParamVector> {
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let h = FD_STEP * (1.0 + theta[i].abs());
        probe[i] = theta[i] + h;
        let plus = model.loss(&probe, x, y)?;
        probe[i] = theta[i] - h;
        let minus = model.loss(&probe, x, y)?;
        probe[i] = theta[i];
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out.into())
}

fn shifted(theta: &[f64], dir: &[f64], step: f64) -> Vec<f64> {
    theta.iter().zip(dir).map(|(t, d)| t + step * d).collect()
}

fn direction_step(dir: &[f64]) -> Option<f64> {
    let norm = norm2(dir);
    (norm > 0.0).then(|| FD_STEP / norm)
}

/// `(z(θ + h u) − z(θ − h u)) / 2h`.
pub fn fd_logit_jvp(model: &Model, theta: &[f64], x: &Matrix, u: &[f64]) -> Result<Matrix> {
    let Some(h) = direction_step(u) else {
        return Ok(Matrix::zeros(x.rows(), model.output_dim()));
    };
    let plus = model.logits(&shifted(theta, u, h), x)?;
    let minus = model.logits(&shifted(theta, u, -h), x)?;
    let data = plus
        .as_slice()
        .iter()
        .zip(minus.as_slice())
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    Matrix::from_vec(plus.rows(), plus.cols(), data)
}

/// Central differences of `y ↦ ∇_θ L(θ, X, y) · v` over every label entry.
pub fn fd_label_contraction(
    model: &Model,
    theta: &[f64],
    x: &Matrix,
    y: &Matrix,
    v: &[f64],
) -> Result<Matrix> {
    let h = FD_STEP;
    let mut probe = y.clone();
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        for c in 0..y.cols() {
            let base = y.get(i, c);
            probe.set(i, c, base + h);
            let plus = model.grad_theta_affine(theta, x, &probe)?.dot(v);
            probe.set(i, c, base - h);
            let minus = model.grad_theta_affine(theta, x, &probe)?.dot(v);
            probe.set(i, c, base);
            out.set(i, c, (plus - minus) / (2.0 * h));
        }
    }
    Ok(out)
}

/// `(∇L(θ + h v) − ∇L(θ − h v)) / 2h`.
pub fn fd_hvp(
    model: &Model,
    theta: &[f64],
    x: &Matrix,
    y: &Matrix,
    v: &[f64],
) -> Result<ParamVector> {
    let Some(h) = direction_step(v) else {
        return Ok(Vector::zeros(theta.len()));
    };
    let plus = model.grad_theta(&shifted(theta, v, h), x, y)?;
    let minus = model.grad_theta(&shifted(theta, v, -h), x, y)?;
    Ok(plus
        .iter()
        .zip(minus.iter())
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect())
}

/// A random model, parameter point, batch and direction for derivative checks.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: Model,
    pub theta: ParamVector,
    pub x: Matrix,
    pub y: Matrix,
    pub direction: ParamVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InstanceFamily {
    LinearMse,
    MlpMse,
    MlpCrossEntropy,
}

impl InstanceFamily {
    pub const ALL: [InstanceFamily; 3] = [
        InstanceFamily::LinearMse,
        InstanceFamily::MlpMse,
        InstanceFamily::MlpCrossEntropy,
    ];
}

/// Draw an instance with at most `max_params` parameters and `max_batch` rows,
/// re-drawing inputs until every rectifier pre-activation clears
/// [`KINK_MARGIN`].
pub fn random_instance(
    rng: &mut Rng,
    family: InstanceFamily,
    max_params: usize,
    max_batch: usize,
) -> Result<Instance> {
    let n = 1 + rng.index(max_batch);
    let model = loop {
        let input = 1 + rng.index(6);
        let model = match family {
            InstanceFamily::LinearMse => Model::linear(input)?,
            InstanceFamily::MlpMse | InstanceFamily::MlpCrossEntropy => {
                let cfg = MlpConfig {
                    input_dim: input,
                    hidden_dim: 2 + rng.index(7),
                    num_hidden_layers: 1 + rng.index(3),
                    output_dim: 1 + rng.index(4),
                    activation: crate::models::Activation::Relu,
                };
                let loss = if family == InstanceFamily::MlpMse {
                    LossKind::MeanSquaredError
                } else {
                    LossKind::SoftmaxCrossEntropy
                };
                Model::mlp(&cfg, loss)?
            }
        };
        if model.num_params() <= max_params {
            break model;
        }
    };
    let mut theta = model.init_params(rng);
    // Nonzero biases so that every parameter has a nontrivial derivative.
    for t in theta.iter_mut() {
        if *t == 0.0 {
            *t = 0.1 * rng.normal();
        }
    }
    let m = model.input_dim();
    let k = model.output_dim();

    let x = loop {
        let data = (0..n * m).map(|_| rng.normal()).collect();
        let x = Matrix::from_vec(n, m, data)?;
        let pass = model.forward(&theta, &x)?;
        if pass.min_hidden_preactivation() > KINK_MARGIN {
            break x;
        }
    };

    let y = match model.loss_kind() {
        LossKind::MeanSquaredError => {
            Matrix::from_vec(n, k, (0..n * k).map(|_| rng.normal()).collect())?
        }
        LossKind::SoftmaxCrossEntropy => {
            let w = Matrix::from_vec(n, k, (0..n * k).map(|_| rng.normal()).collect())?;
            crate::models::LabelParam::Softmax.apply(&w)
        }
    };
    let direction: ParamVector = (0..model.num_params()).map(|_| rng.normal()).collect();
    Ok(Instance {
        model,
        theta,
        x,
        y,
        direction,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct OpCheck {
    pub op: String,
    pub instances: usize,
    pub max_relative_error: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Derivative op and the threshold its finite-difference check must meet.
pub const CHECKED_OPS: [(&str, f64); 4] = [
    ("grad_theta", 1e-6),
    ("logit_jvp", 1e-6),
    ("grad_label_contraction", 1e-5),
    ("hvp", 1e-5),
];

/// Compare every analytic derivative against its finite-difference oracle on
/// `instances_per_op` random instances (families cycled).
pub fn check_all(
    rng: &mut Rng,
    instances_per_op: usize,
    max_params: usize,
    max_batch: usize,
) -> Result<Vec<OpCheck>> {
    let mut worst = [0.0f64; 4];
    for t in 0..instances_per_op {
        let family = InstanceFamily::ALL[t % InstanceFamily::ALL.len()];
        let inst = random_instance(rng, family, max_params, max_batch)?;
        let Instance {
            model,
            theta,
            x,
            y,
            direction,
        } = &inst;

        let g = model.grad_theta(theta, x, y)?;
        let g_fd = fd_grad_theta(model, theta, x, y)?;
        worst[0] = worst[0].max(relative_error(&g, &g_fd));

        let j = model.logit_jvp(theta, x, direction)?;
        let j_fd = fd_logit_jvp(model, theta, x, direction)?;
        worst[1] = worst[1].max(relative_error(j.as_slice(), j_fd.as_slice()));

        let c = model.grad_label_contraction(theta, x, direction)?;
        let c_fd = fd_label_contraction(model, theta, x, y, direction)?;
        worst[2] = worst[2].max(relative_error(c.as_slice(), c_fd.as_slice()));

        let hv = model.hvp(theta, x, y, direction)?;
        let hv_fd = fd_hvp(model, theta, x, y, direction)?;
        worst[3] = worst[3].max(relative_error(&hv, &hv_fd));
    }
    Ok(CHECKED_OPS
        .iter()
        .zip(worst)
        .map(|(&(op, threshold), err)| OpCheck {
            op: op.to_string(),
            instances: instances_per_op,
            max_relative_error: err,
            threshold,
            passed: err <= threshold,
        })
        .collect())
}
