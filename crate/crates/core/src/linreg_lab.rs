//! Linear least squares with diagonal designs: closed forms, the simplified
//! full-batch label gradient alignment dynamics, and their per-dimension
//! scalar reduction.
//!
//! With `(1/n_ℓ) X_ℓᵀX_ℓ = diag(λ_ℓ)`, `(1/n_u) X_uᵀX_u = diag(λ_u)` and
//! `b = (1/n_ℓ) X_ℓᵀy_ℓ`, the gradients are `g_ℓ = λ_ℓ θ − b` and
//! `g_u = λ_u θ − u` with `u = (1/n_u) X_uᵀy_u`, so every coordinate evolves
//! on its own. The learning progress of coordinate `i` is `c_i = λ_ℓ,i θ_i / b_i`,
//! which is `1` at the least-squares solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{
    cholesky_solve, max_abs_diff, orthonormal_columns, symmetric_eigen, Matrix, Rng, Vector,
};

/// Least-squares solution `(XᵀX)⁻¹Xᵀy`, cross-checked against the
/// eigen-expansion `Σ_i q_i q_iᵀ (1/n)Xᵀy / λ_i`.
pub fn theta_star(x: &Matrix, y: &[f64]) -> Result<Vector> {
    let rhs = x.t_matvec(y)?;
    let direct = cholesky_solve(&x.gram(1.0), &rhs)?;
    let eigen = theta_star_eigen(x, y)?;
    let scale = 1.0 + direct.norm_inf();
    if max_abs_diff(&direct, &eigen) > 1e-10 * scale {
        return Err(Error::NumericalFailure {
            iteration: 0,
            what: "normal-equation and eigen-form solutions disagree".into(),
        });
    }
    Ok(direct)
}

pub fn theta_star_eigen(x: &Matrix, y: &[f64]) -> Result<Vector> {
    modal_sum(x, y, |lambda| {
        if lambda <= 0.0 {
            Err(Error::Singular)
        } else {
            Ok(1.0 / lambda)
        }
    })
}

/// `Σ_i weight(λ_i) q_i q_iᵀ (1/n) Xᵀy` over the eigenpairs of `(1/n)XᵀX`.
fn modal_sum(x: &Matrix, y: &[f64], weight: impl Fn(f64) -> Result<f64>) -> Result<Vector> {
    let n = x.rows() as f64;
    let eig = symmetric_eigen(&x.gram(n))?;
    let mut xty = x.t_matvec(y)?;
    xty.iter_mut().for_each(|v| *v /= n);
    let mut out = Vector::zeros(x.cols());
    for (i, &lambda) in eig.values.iter().enumerate() {
        let q = eig.vectors.col(i);
        let coef = weight(lambda)? * q.dot(&xty);
        crate::ndcore::axpy(coef, &q, &mut out);
    }
    Ok(out)
}

/// Gradient-descent iterate `θ_k` from `θ_0 = 0` in closed form:
/// `Σ_i (1 − (1 − αλ_i)^k) / λ_i · q_i q_iᵀ (1/n)Xᵀy`.
pub fn gd_closed_form(x: &Matrix, y: &[f64], alpha: f64, k: u32) -> Result<Vector> {
    modal_sum(x, y, |lambda| {
        Ok(if lambda == 0.0 {
            alpha * k as f64
        } else {
            (1.0 - (1.0 - alpha * lambda).powi(k as i32)) / lambda
        })
    })
}

/// `k` explicit steps of `θ ← θ − α (1/n) Xᵀ(Xθ − y)` from zero.
pub fn gd_iterative(x: &Matrix, y: &[f64], alpha: f64, k: u32) -> Result<Vector> {
    let n = x.rows() as f64;
    let mut theta = Vector::zeros(x.cols());
    for _ in 0..k {
        let mut resid = x.matvec(&theta)?;
        resid.iter_mut().zip(y).for_each(|(r, yi)| *r -= yi);
        let g = x.t_matvec(&resid)?;
        crate::ndcore::axpy(-alpha / n, &g, &mut theta);
    }
    Ok(theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalProblem {
    pub lambda_l: Vec<f64>,
    pub lambda_u: Vec<f64>,
    pub b: Vec<f64>,
    pub n_l: usize,
    pub n_u: usize,
}

impl DiagonalProblem {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Eigenvalues must be positive except that `λ_u` may be zero.
    pub fn validate(&self) -> Result<()> {
        let m = self.b.len();
        if m == 0 || self.lambda_l.len() != m || self.lambda_u.len() != m {
            return Err(Error::InvalidDimension(format!(
                "diagonal problem needs equal non-empty λ_ℓ, λ_u, b (got {}, {}, {})",
                self.lambda_l.len(),
                self.lambda_u.len(),
                m
            )));
        }
        if self.lambda_l.iter().any(|l| !(*l > 0.0 && l.is_finite()))
            || self.lambda_u.iter().any(|l| !(*l >= 0.0 && l.is_finite()))
        {
            return Err(Error::InvalidConfig(
                "eigenvalues must be finite, λ_ℓ > 0, λ_u ≥ 0".into(),
            ));
        }
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "b".into() });
        }
        if self.n_l < m || self.n_u < m {
            return Err(Error::InvalidDimension(format!(
                "need at least {m} rows per set, got n_ℓ = {}, n_u = {}",
                self.n_l, self.n_u
            )));
        }
        Ok(())
    }

    /// Least-squares solution `b_i / λ_ℓ,i`.
    pub fn theta_star(&self) -> Vec<f64> {
        self.b
            .iter()
            .zip(&self.lambda_l)
            .map(|(b, l)| b / l)
            .collect()
    }
}

/// Materialized inputs realizing a [`DiagonalProblem`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalDesign {
    pub problem: DiagonalProblem,
    pub x_l: Matrix,
    pub y_l: Vector,
    pub x_u: Matrix,
    /// Orthonormal basis of the column space of `x_u`.
    pub u_basis: Matrix,
}

fn scaled_basis(basis: &Matrix, lambda: &[f64]) -> Matrix {
    let n = basis.rows() as f64;
    let mut x = basis.clone();
    for i in 0..x.rows() {
        for (v, l) in x.row_mut(i).iter_mut().zip(lambda) {
            *v *= (n * l).sqrt();
        }
    }
    x
}

/// `X = √n U diag(√λ)` with random orthonormal `U`, and
/// `y_ℓ = X_ℓ diag(1/λ_ℓ) b`.
pub fn make_diagonal_design(problem: &DiagonalProblem, rng: &mut Rng) -> Result<DiagonalDesign> {
    problem.validate()?;
    let m = problem.dim();
    let u_l = orthonormal_columns(rng, problem.n_l, m)?;
    let u_u = orthonormal_columns(rng, problem.n_u, m)?;
    let x_l = scaled_basis(&u_l, &problem.lambda_l);
    let x_u = scaled_basis(&u_u, &problem.lambda_u);
    let y_l = x_l.matvec(&problem.theta_star())?;
    Ok(DiagonalDesign {
        problem: problem.clone(),
        x_l,
        y_l,
        x_u,
        u_basis: u_u,
    })
}

/// Normalization of the label objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabMode {
    /// `Σ r_i² / stopgrad(r_i²)`: each coordinate contributes `1 / r_i`.
    StopGradient,
    /// `Σ r_i² / (ε + sqrt(r_i⁴))`.
    FullNormalized,
}

/// Coordinates with `|r| <` this get no update in stop-gradient mode.
pub const STOPGRAD_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabHyper {
    pub alpha_theta: f64,
    pub alpha_w: f64,
    pub eps_norm: f64,
    pub mode: LabMode,
}

impl Default for LabHyper {
    fn default() -> Self {
        LabHyper {
            alpha_theta: 1e-3,
            alpha_w: 1e-3,
            eps_norm: 1e-3,
            mode: LabMode::FullNormalized,
        }
    }
}

impl LabHyper {
    /// `r / den`, the gradient of the half-normalized square in `r`.
    pub fn coef(&self, r: f64) -> f64 {
        match self.mode {
            LabMode::StopGradient => {
                if r.abs() < STOPGRAD_GUARD {
                    0.0
                } else {
                    1.0 / r
                }
            }
            LabMode::FullNormalized => r / (self.eps_norm + (r.powi(4)).sqrt()),
        }
    }
}

/// Full-batch plain gradient descent on `θ` and `y_u`:
/// `θ ← θ − α_θ g_u`, `y_u ← y_u − α_w ∇_{y_u} ½‖g_ℓ − g_u‖²_normalized`.
#[derive(Clone, Debug)]
pub struct SimplifiedLga<'a> {
    design: &'a DiagonalDesign,
    hyper: LabHyper,
    pub theta: Vector,
    pub y_u: Vector,
    pub k: usize,
}

impl<'a> SimplifiedLga<'a> {
    pub fn new(design: &'a DiagonalDesign, hyper: LabHyper) -> Self {
        SimplifiedLga {
            design,
            hyper,
            theta: Vector::zeros(design.problem.dim()),
            y_u: Vector::zeros(design.problem.n_u),
            k: 0,
        }
    }

    fn grad(x: &Matrix, theta: &[f64], y: &[f64]) -> Result<Vector> {
        let mut resid = x.matvec(theta)?;
        resid.iter_mut().zip(y).for_each(|(r, yi)| *r -= yi);
        Ok(x.t_matvec(&resid)?.scaled(1.0 / x.rows() as f64))
    }

    /// `(g_ℓ, g_u)` at the current state.
    pub fn gradients(&self) -> Result<(Vector, Vector)> {
        let d = self.design;
        Ok((
            Self::grad(&d.x_l, &self.theta, &d.y_l)?,
            Self::grad(&d.x_u, &self.theta, &self.y_u)?,
        ))
    }

    pub fn step(&mut self) -> Result<()> {
        let (g_l, g_u) = self.gradients()?;
        let coef: Vec<f64> = g_l
            .iter()
            .zip(g_u.iter())
            .map(|(l, u)| self.hyper.coef(l - u))
            .collect();
        let dy = self.design.x_u.matvec(&coef)?;
        let n_u = self.design.problem.n_u as f64;
        crate::ndcore::axpy(-self.hyper.alpha_theta, &g_u, &mut self.theta);
        crate::ndcore::axpy(-self.hyper.alpha_w / n_u, &dy, &mut self.y_u);
        self.k += 1;
        if !self.theta.is_finite() || !self.y_u.is_finite() {
            return Err(Error::NumericalFailure {
                iteration: self.k,
                what: "simplified dynamics diverged".into(),
            });
        }
        Ok(())
    }

    /// `c_i = λ_ℓ,i θ_i / b_i`.
    pub fn c(&self) -> Vec<f64> {
        progress(&self.design.problem, &self.theta)
    }
}

fn progress(problem: &DiagonalProblem, theta: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(problem.lambda_l.iter().zip(&problem.b))
        .map(|(t, (l, b))| l * t / b)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabTrajectory {
    /// Row `k` holds `c_k`, for `k = 0..=k_max`.
    pub c: Matrix,
    pub theta: Vector,
    pub y_u: Vector,
}

pub fn simplified_lga_run(
    design: &DiagonalDesign,
    hyper: LabHyper,
    k_max: usize,
) -> Result<LabTrajectory> {
    let m = design.problem.dim();
    let mut sim = SimplifiedLga::new(design, hyper);
    let mut c = Matrix::zeros(k_max + 1, m);
    c.row_mut(0).copy_from_slice(&sim.c());
    for k in 1..=k_max {
        sim.step()?;
        c.row_mut(k).copy_from_slice(&sim.c());
    }
    Ok(LabTrajectory {
        c,
        theta: sim.theta,
        y_u: sim.y_u,
    })
}

/// One coordinate's eigenvalues and target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarDim {
    pub lambda_l: f64,
    pub lambda_u: f64,
    pub b: f64,
}

/// The same dynamics reduced to one coordinate, tracking `θ_i` and
/// `u_i = (1/n_u) e_iᵀX_uᵀy_u`. Returns `c_0, …, c_{k_max}`.
pub fn scalar_recurrence_run(
    dim: ScalarDim,
    n_u: usize,
    hyper: LabHyper,
    k_max: usize,
) -> Result<Vec<f64>> {
    let ScalarDim {
        lambda_l,
        lambda_u,
        b,
    } = dim;
    let step_w = hyper.alpha_w * lambda_u / n_u as f64;
    let (mut theta, mut u) = (0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(0.0);
    for k in 1..=k_max {
        let g_u = lambda_u * theta - u;
        let g_l = lambda_l * theta - b;
        let r = g_l - g_u;
        theta -= hyper.alpha_theta * g_u;
        u -= step_w * hyper.coef(r);
        if !(theta.is_finite() && u.is_finite()) {
            return Err(Error::NumericalFailure {
                iteration: k,
                what: "scalar recurrence diverged".into(),
            });
        }
        out.push(lambda_l * theta / b);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    LambdaL(f64),
    LambdaU(f64),
}

/// Largest change in `c_{·,i}` over `k ≤ k_max` when the eigenvalues of
/// dimension `j` are replaced by each perturbation in turn. Every run uses a
/// design drawn from `seed`.
pub fn prop1_independence_check(
    base: &DiagonalProblem,
    i: usize,
    j: usize,
    perturbations: &[Perturbation],
    hyper: LabHyper,
    k_max: usize,
    seed: u64,
) -> Result<f64> {
    let m = base.dim();
    if i >= m || j >= m {
        return Err(Error::InvalidDimension(format!(
            "dimensions {i}, {j} out of range for {m}"
        )));
    }
    let trajectory = |p: &DiagonalProblem| -> Result<Vec<f64>> {
        let design = make_diagonal_design(p, &mut Rng::new(seed))?;
        let run = simplified_lga_run(&design, hyper, k_max)?;
        Ok(run.c.col(i).into_inner())
    };
    let reference = trajectory(base)?;
    let mut worst = 0.0f64;
    for p in perturbations {
        let mut prob = base.clone();
        match *p {
            Perturbation::LambdaL(v) => prob.lambda_l[j] = v,
            Perturbation::LambdaU(v) => prob.lambda_u[j] = v,
        }
        worst = worst.max(max_abs_diff(&reference, &trajectory(&prob)?));
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub iterations: usize,
    /// Whether the stopping rule fired within the budget.
    pub converged: bool,
    pub labeled_grad_inf: f64,
    pub dist_to_theta_star: f64,
    pub c: Vec<f64>,
    /// See [`label_step_gain`].
    pub label_gain: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Largest linearized gain `α_w λ_u,i / (n_u ε)` of the imputed-label update
/// around `r = 0` in full-normalized mode. Above 2 the update overshoots and
/// the dynamics settle into a cycle instead of the fixed point.
pub fn label_step_gain(problem: &DiagonalProblem, hyper: LabHyper) -> f64 {
    let lmax = problem.lambda_u.iter().copied().fold(0.0, f64::max);
    hyper.alpha_w * lmax / (problem.n_u as f64 * hyper.eps_norm)
}

/// Run the simplified dynamics until both `θ` and `y_u` move by at most
/// `1e-12` in max-norm over one step, or `max_iter` steps, then compare against the least-squares solution.
pub fn fixed_point_check(
    design: &DiagonalDesign,
    hyper: LabHyper,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointReport> {
    let mut sim = SimplifiedLga::new(design, hyper);
    let mut converged = false;
    while sim.k < max_iter {
        let (theta_prev, y_prev) = (sim.theta.clone(), sim.y_u.clone());
        sim.step()?;
        // θ alone is stationary on the first step from zero, so the imputed
        // labels have to settle as well.
        if max_abs_diff(&theta_prev, &sim.theta) <= 1e-12
            && max_abs_diff(&y_prev, &sim.y_u) <= 1e-12
        {
            converged = true;
            break;
        }
    }
    let (g_l, _) = sim.gradients()?;
    let star = theta_star(&design.x_l, &design.y_l)?;
    let labeled_grad_inf = g_l.norm_inf();
    let dist = max_abs_diff(&sim.theta, &star);
    Ok(FixedPointReport {
        iterations: sim.k,
        converged,
        labeled_grad_inf,
        dist_to_theta_star: dist,
        c: sim.c(),
        label_gain: label_step_gain(&design.problem, hyper),
        tol,
        passed: labeled_grad_inf <= tol && dist <= tol,
    })
}

/// Which eigenvalue a learning-speed panel sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Labeled,
    Unlabeled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedPanel {
    pub sweep: SweepKind,
    pub grid: Vec<f64>,
    /// Value of the eigenvalue that is not swept.
    pub fixed: f64,
    pub b: f64,
    pub n_u: usize,
}

impl SpeedPanel {
    /// One coordinate per grid value.
    pub fn problem(&self) -> DiagonalProblem {
        let m = self.grid.len();
        let fixed = vec![self.fixed; m];
        let (lambda_l, lambda_u) = match self.sweep {
            SweepKind::Labeled => (self.grid.clone(), fixed),
            SweepKind::Unlabeled => (fixed, self.grid.clone()),
        };
        DiagonalProblem {
            lambda_l,
            lambda_u,
            b: vec![self.b; m],
            n_l: m,
            n_u: self.n_u.max(m),
        }
    }

    /// `c_k` per grid value, from the matrix simulation.
    pub fn run(&self, hyper: LabHyper, k_max: usize, seed: u64) -> Result<LabTrajectory> {
        let design = make_diagonal_design(&self.problem(), &mut Rng::new(seed))?;
        simplified_lga_run(&design, hyper, k_max)
    }
}

/// First `k` in `window` where the columns of `c` are not strictly
/// increasing from left to right, if any.
pub fn first_order_violation(c: &Matrix, window: std::ops::RangeInclusive<usize>) -> Option<usize> {
    window.into_iter().find(|&k| {
        let row = c.row(k);
        row.windows(2).any(|p| p[0] >= p[1])
    })
}
