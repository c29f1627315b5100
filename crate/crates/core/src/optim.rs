//! Adam, exponential moving averages, the per-coordinate normalized squared
//! distance between gradients, and the labeled-gradient coefficient schedule.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::ndcore::{ensure_same_len, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a dense parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    /// One bias-corrected Adam step, in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        ensure_same_len("adam_update params", self.m.len(), params.len())?;
        ensure_same_len("adam_update grad", self.m.len(), grad.len())?;
        check_lr(lr)?;
        ensure_finite("adam gradient", grad)?;
        self.step += 1;
        adam_kernel(
            &self.config,
            self.step,
            params,
            grad,
            &mut self.m,
            &mut self.v,
            lr,
        );
        Ok(())
    }
}

/// Functional form: returns the new parameters and state.
pub fn adam_update(
    state: &AdamState,
    params: &[f64],
    grad: &[f64],
    lr: f64,
) -> Result<(Vec<f64>, AdamState)> {
    let mut state = state.clone();
    let mut params = params.to_vec();
    state.update(&mut params, grad, lr)?;
    Ok((params, state))
}

fn adam_kernel(
    cfg: &AdamConfig,
    step: u64,
    params: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
) {
    let t = step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "learning rate must be positive, got {lr}"
        )))
    }
}

/// Adam over the rows of a matrix where only some rows receive a gradient
/// each step. Each row keeps its own step counter so bias correction
/// reflects how often that row has actually been updated.
#[derive(Clone, Debug, PartialEq)]
pub struct RowAdamState {
    pub config: AdamConfig,
    pub m: Matrix,
    pub v: Matrix,
    pub steps: Vec<u64>,
}

impl RowAdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        RowAdamState {
            config,
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            steps: vec![0; rows],
        }
    }

    /// Update `params` rows listed in `rows` with the matching rows of `grad`.
    pub fn update_rows(
        &mut self,
        params: &mut Matrix,
        rows: &[usize],
        grad: &Matrix,
        lr: f64,
    ) -> Result<()> {
        check_row_update(params, &self.m, rows, grad)?;
        check_lr(lr)?;
        ensure_finite("row adam gradient", grad.as_slice())?;
        for (k, &r) in rows.iter().enumerate() {
            self.steps[r] += 1;
            // Split borrows of the three matrices at row r.
            let mut m_row = self.m.row(r).to_vec();
            let mut v_row = self.v.row(r).to_vec();
            adam_kernel(
                &self.config,
                self.steps[r],
                params.row_mut(r),
                grad.row(k),
                &mut m_row,
                &mut v_row,
                lr,
            );
            self.m.row_mut(r).copy_from_slice(&m_row);
            self.v.row_mut(r).copy_from_slice(&v_row);
        }
        Ok(())
    }
}

fn check_row_update(
    params: &Matrix,
    moments: &Matrix,
    rows: &[usize],
    grad: &Matrix,
) -> Result<()> {
    if params.shape() != moments.shape() {
        return Err(crate::error::shape_mismatch(
            "row update params",
            format!("{:?}", moments.shape()),
            format!("{:?}", params.shape()),
        ));
    }
    if grad.rows() != rows.len() || grad.cols() != params.cols() {
        return Err(crate::error::shape_mismatch(
            "row update gradient",
            format!("{}x{}", rows.len(), params.cols()),
            format!("{}x{}", grad.rows(), grad.cols()),
        ));
    }
    if let Some(bad) = rows.iter().find(|&&r| r >= params.rows()) {
        return Err(Error::InvalidDimension(format!(
            "row index {bad} out of range for {} rows",
            params.rows()
        )));
    }
    Ok(())
}

/// Update rule applied to model parameters and imputed labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam(AdamConfig),
    /// Plain gradient descent.
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam(AdamConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamOptimizer {
    Adam(AdamState),
    Sgd,
}

impl ParamOptimizer {
    pub fn new(kind: OptimizerKind, dim: usize) -> Self {
        match kind {
            OptimizerKind::Adam(cfg) => ParamOptimizer::Adam(AdamState::new(dim, cfg)),
            OptimizerKind::Sgd => ParamOptimizer::Sgd,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        match self {
            ParamOptimizer::Adam(state) => state.update(params, grad, lr),
            ParamOptimizer::Sgd => {
                ensure_same_len("sgd grad", params.len(), grad.len())?;
                check_lr(lr)?;
                ensure_finite("sgd gradient", grad)?;
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RowOptimizer {
    Adam(RowAdamState),
    Sgd,
}

impl RowOptimizer {
    pub fn new(kind: OptimizerKind, rows: usize, cols: usize) -> Self {
        match kind {
            OptimizerKind::Adam(cfg) => RowOptimizer::Adam(RowAdamState::new(rows, cols, cfg)),
            OptimizerKind::Sgd => RowOptimizer::Sgd,
        }
    }

    pub fn update_rows(
        &mut self,
        params: &mut Matrix,
        rows: &[usize],
        grad: &Matrix,
        lr: f64,
    ) -> Result<()> {
        match self {
            RowOptimizer::Adam(state) => state.update_rows(params, rows, grad, lr),
            RowOptimizer::Sgd => {
                check_row_update(params, params, rows, grad)?;
                check_lr(lr)?;
                ensure_finite("sgd row gradient", grad.as_slice())?;
                for (k, &r) in rows.iter().enumerate() {
                    for (p, g) in params.row_mut(r).iter_mut().zip(grad.row(k)) {
                        *p -= lr * g;
                    }
                }
                Ok(())
            }
        }
    }
}

/// Exponential moving average, warm-started at the first observation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    pub decay: f64,
    value: Option<Vec<f64>>,
}

impl EmaState {
    pub fn new(decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::InvalidConfig(format!(
                "EMA decay must lie in [0, 1), got {decay}"
            )));
        }
        Ok(EmaState { decay, value: None })
    }

    /// An average that already holds `value`.
    pub fn with_value(decay: f64, value: Vec<f64>) -> Result<Self> {
        let mut ema = EmaState::new(decay)?;
        ema.value = Some(value);
        Ok(ema)
    }

    pub fn is_initialized(&self) -> bool {
        self.value.is_some()
    }

    pub fn value(&self) -> Option<&[f64]> {
        self.value.as_deref()
    }

    pub fn update(&mut self, x: &[f64]) -> Result<&[f64]> {
        match &mut self.value {
            None => {
                self.value = Some(x.to_vec());
            }
            Some(value) => {
                ensure_same_len("ema_update", value.len(), x.len())?;
                let rho = self.decay;
                for (v, xi) in value.iter_mut().zip(x) {
                    *v = rho * *v + (1.0 - rho) * xi;
                }
            }
        }
        Ok(self.value.as_deref().expect("initialized above"))
    }
}

/// Functional form of [`EmaState::update`].
pub fn ema_update(state: &EmaState, x: &[f64]) -> Result<EmaState> {
    let mut next = state.clone();
    next.update(x)?;
    Ok(next)
}

/// State of the normalized squared distance
/// `Σ r_i² / (ε + sqrt(EMA(r_i⁴)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizerState {
    pub eps_norm: f64,
    pub ema_v4: EmaState,
}

impl NormalizerState {
    pub fn new(eps_norm: f64, decay: f64) -> Result<Self> {
        if !(eps_norm >= 0.0 && eps_norm.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eps_norm must be finite and non-negative, got {eps_norm}"
            )));
        }
        Ok(NormalizerState {
            eps_norm,
            ema_v4: EmaState::new(decay)?,
        })
    }

    /// Fold `r⁴` into the average, then evaluate the distance and its
    /// gradient with the denominator held fixed.
    pub fn normalized_sq_dist(&mut self, r: &[f64]) -> Result<(f64, Vec<f64>)> {
        ensure_finite("normalized distance input", r)?;
        let r4: Vec<f64> = r.iter().map(|v| v.powi(4)).collect();
        self.ema_v4.update(&r4)?;
        self.evaluate(r)
    }

    /// Distance and frozen-denominator gradient against the current average,
    /// without updating it.
    pub fn evaluate(&self, r: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ema = self
            .ema_v4
            .value()
            .ok_or(Error::Empty("normalizer average"))?;
        ensure_same_len("normalized distance", ema.len(), r.len())?;
        let mut dist = 0.0;
        let mut back = Vec::with_capacity(r.len());
        for (ri, e) in r.iter().zip(ema) {
            let denom = self.eps_norm + e.sqrt();
            if *ri == 0.0 {
                back.push(0.0);
                continue;
            }
            dist += ri * ri / denom;
            back.push(2.0 * ri / denom);
        }
        Ok((dist, back))
    }
}

/// Functional form of [`NormalizerState::normalized_sq_dist`].
pub fn normalized_sq_dist(
    r: &[f64],
    state: &NormalizerState,
) -> Result<(f64, Vec<f64>, NormalizerState)> {
    let mut next = state.clone();
    let (dist, back) = next.normalized_sq_dist(r)?;
    Ok((dist, back, next))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    LinearRamp,
}

/// Coefficient `T(i)` on the labeled gradient in the parameter update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub t_max: f64,
    pub warmup_iters: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Constant,
            t_max: 1.0,
            warmup_iters: 0,
        }
    }
}

impl ScheduleConfig {
    pub fn constant(t: f64) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Constant,
            t_max: t,
            warmup_iters: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "schedule t_max must be finite and non-negative, got {}",
                self.t_max
            )));
        }
        Ok(())
    }

    /// `T(i)` for iteration `i >= 1`.
    pub fn value(&self, i: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.t_max,
            ScheduleKind::LinearRamp => {
                if self.warmup_iters == 0 {
                    self.t_max
                } else {
                    self.t_max * (i as f64 / self.warmup_iters as f64).min(1.0)
                }
            }
        }
    }
}

pub fn schedule_t(cfg: &ScheduleConfig, i: usize) -> f64 {
    cfg.value(i)
}
