//! Differentiable model families and the derivative quantities the training
//! loop and diagnostics need.
//!
//! Parameters are a single flat vector laid out layer by layer: the weight
//! matrix of each layer (row-major, `input x output`) followed by its bias.

mod network;

use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::ndcore::{Matrix, Rng, Vector};

pub use network::ForwardPass;

pub type ParamVector = Vector;

/// Smallest probability admitted inside the cross-entropy logarithm.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Tolerance on label row sums for cross-entropy.
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `(1/2n) * sum (z - y)^2`
    MeanSquaredError,
    /// Mean over samples of `-sum_c y_c log softmax(z)_c`.
    SoftmaxCrossEntropy,
}

impl LossKind {
    /// Label parameterization paired with this loss.
    pub fn label_parameterization(self) -> LabelParam {
        match self {
            LossKind::MeanSquaredError => LabelParam::Identity,
            LossKind::SoftmaxCrossEntropy => LabelParam::Softmax,
        }
    }
}

/// Map from free label parameters `w` to labels `y = f(w)`, applied row-wise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelParam {
    Identity,
    Softmax,
}

impl LabelParam {
    pub fn apply(self, w: &Matrix) -> Matrix {
        match self {
            LabelParam::Identity => w.clone(),
            LabelParam::Softmax => {
                let mut y = w.clone();
                for i in 0..y.rows() {
                    softmax_in_place(y.row_mut(i));
                }
                y
            }
        }
    }

    /// Pull a gradient with respect to `y = f(w)` back to `w`.
    /// For softmax this multiplies each row by `diag(y) - y yᵀ`.
    pub fn pullback(self, y: &Matrix, grad_y: &Matrix) -> Matrix {
        match self {
            LabelParam::Identity => grad_y.clone(),
            LabelParam::Softmax => {
                let mut out = grad_y.clone();
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = grad_y.row(i);
                    let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yc, gc)) in out.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yc * (gc - inner);
                    }
                }
                out
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpConfig {
    /// Three rectifier hidden layers plus a linear output layer.
    pub fn four_layer(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden_dim,
            num_hidden_layers: 3,
            output_dim,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.hidden_dim == 0
            || self.num_hidden_layers == 0
            || self.output_dim == 0
        {
            return Err(Error::InvalidConfig(format!(
                "all MLP dimensions must be at least 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Layer {
    pub input: usize,
    pub output: usize,
    pub bias: bool,
    pub w_offset: usize,
    pub b_offset: usize,
}

/// A feed-forward network with rectifier hidden layers and a linear output,
/// paired with a loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    loss: LossKind,
    num_params: usize,
}

impl Model {
    /// Linear regressor `z = X θ` without intercept, trained with squared error.
    pub fn linear(input_dim: usize) -> Result<Model> {
        Model::from_layers(&[(input_dim, 1, false)], LossKind::MeanSquaredError)
    }

    pub fn mlp(cfg: &MlpConfig, loss: LossKind) -> Result<Model> {
        cfg.validate()?;
        let mut shapes = Vec::with_capacity(cfg.num_hidden_layers + 1);
        let mut input = cfg.input_dim;
        for _ in 0..cfg.num_hidden_layers {
            shapes.push((input, cfg.hidden_dim, true));
            input = cfg.hidden_dim;
        }
        shapes.push((input, cfg.output_dim, true));
        Model::from_layers(&shapes, loss)
    }

    fn from_layers(shapes: &[(usize, usize, bool)], loss: LossKind) -> Result<Model> {
        let mut layers = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for &(input, output, bias) in shapes {
            if input == 0 || output == 0 {
                return Err(Error::InvalidConfig(format!(
                    "layer dimensions must be at least 1, got {input}x{output}"
                )));
            }
            let w_offset = offset;
            offset += input * output;
            let b_offset = offset;
            if bias {
                offset += output;
            }
            layers.push(Layer {
                input,
                output,
                bias,
                w_offset,
                b_offset,
            });
        }
        Ok(Model {
            layers,
            loss,
            num_params: offset,
        })
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn label_param(&self) -> LabelParam {
        self.loss.label_parameterization()
    }

    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Gaussian weights with standard deviation `sqrt(2 / fan_in)`, zero biases.
    pub fn init_params(&self, rng: &mut Rng) -> ParamVector {
        let mut theta = vec![0.0; self.num_params];
        for layer in &self.layers {
            let std = (2.0 / layer.input as f64).sqrt();
            for w in &mut theta[layer.w_offset..layer.w_offset + layer.input * layer.output] {
                *w = std * rng.normal();
            }
        }
        theta.into()
    }

    pub fn forward<'a>(&self, theta: &[f64], x: &'a Matrix) -> Result<ForwardPass<'a>> {
        self.check_params(theta)?;
        self.check_inputs(x)?;
        Ok(ForwardPass::run(self, theta, x))
    }

    pub fn logits(&self, theta: &[f64], x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(theta, x)?.into_logits())
    }

    pub fn loss(&self, theta: &[f64], x: &Matrix, y: &Matrix) -> Result<f64> {
        self.check_labels(x, y, true)?;
        let pass = self.forward(theta, x)?;
        Ok(pass.loss(self.loss, y))
    }

    /// `∇_θ L(θ, X, y)`.
    pub fn grad_theta(&self, theta: &[f64], x: &Matrix, y: &Matrix) -> Result<ParamVector> {
        self.check_labels(x, y, true)?;
        let pass = self.forward(theta, x)?;
        let g = pass.logit_grad(self.loss, y);
        Ok(pass.backward(&g))
    }

    /// Loss and gradient from one forward pass.
    pub fn loss_and_grad(
        &self,
        theta: &[f64],
        x: &Matrix,
        y: &Matrix,
    ) -> Result<(f64, ParamVector)> {
        self.check_labels(x, y, true)?;
        let pass = self.forward(theta, x)?;
        let g = pass.logit_grad(self.loss, y);
        Ok((pass.loss(self.loss, y), pass.backward(&g)))
    }

    /// The gradient formula extended affinely to arbitrary real labels.
    ///
    /// For cross-entropy this is `(1/n) Σ J_iᵀ (p_i − y_i)` with no simplex
    /// check, which is what differentiating with respect to individual label
    /// entries requires.
    pub fn grad_theta_affine(&self, theta: &[f64], x: &Matrix, y: &Matrix) -> Result<ParamVector> {
        self.check_labels(x, y, false)?;
        let pass = self.forward(theta, x)?;
        let g = pass.logit_grad(self.loss, y);
        Ok(pass.backward(&g))
    }

    /// Forward-mode tangent of the logits in parameter direction `u`.
    pub fn logit_jvp(&self, theta: &[f64], x: &Matrix, u: &[f64]) -> Result<Matrix> {
        self.check_direction("logit_jvp", u)?;
        let pass = self.forward(theta, x)?;
        Ok(pass.jvp(u))
    }

    /// `∂/∂y [∇_θ L(θ, X, y) · v]`, an `n x k` matrix that does not depend on `y`.
    pub fn grad_label_contraction(&self, theta: &[f64], x: &Matrix, v: &[f64]) -> Result<Matrix> {
        self.check_direction("grad_label_contraction", v)?;
        let pass = self.forward(theta, x)?;
        Ok(pass.label_contraction(v))
    }

    /// Hessian-vector product `∇²_θ L(θ, X, y) v` by forward-over-reverse
    /// differentiation.
    pub fn hvp(&self, theta: &[f64], x: &Matrix, y: &Matrix, v: &[f64]) -> Result<ParamVector> {
        self.check_direction("hvp", v)?;
        self.check_labels(x, y, true)?;
        let pass = self.forward(theta, x)?;
        Ok(pass.hvp(self.loss, y, v))
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params {
            return Err(shape_mismatch(
                "model parameters",
                format!("{} parameters", self.num_params),
                format!("{}", theta.len()),
            ));
        }
        Ok(())
    }

    fn check_direction(&self, op: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.num_params {
            return Err(shape_mismatch(
                op,
                format!("direction of length {}", self.num_params),
                format!("{}", v.len()),
            ));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("{op} direction"),
            });
        }
        Ok(())
    }

    fn check_inputs(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(shape_mismatch(
                "model inputs",
                format!("{} columns", self.input_dim()),
                format!("{} columns", x.cols()),
            ));
        }
        Ok(())
    }

    fn check_labels(&self, x: &Matrix, y: &Matrix, require_simplex: bool) -> Result<()> {
        if y.rows() != x.rows() || y.cols() != self.output_dim() {
            return Err(shape_mismatch(
                "labels",
                format!("{}x{}", x.rows(), self.output_dim()),
                format!("{}x{}", y.rows(), y.cols()),
            ));
        }
        if require_simplex && self.loss == LossKind::SoftmaxCrossEntropy {
            for i in 0..y.rows() {
                let row = y.row(i);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|v| *v < -SIMPLEX_TOL) {
                    return Err(Error::NonSimplexLabels { row: i, sum });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
