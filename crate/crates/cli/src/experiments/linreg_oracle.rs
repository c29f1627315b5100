//! Closed forms and reductions of the linear dynamics checked against
//! direct simulation.

use serde::Serialize;

use lga_core::bridge::{bridge_check, BridgeReport};
use lga_core::linreg_lab::{
    gd_closed_form, gd_iterative, make_diagonal_design, scalar_recurrence_run, simplified_lga_run,
    LabHyper, LabMode, ScalarDim,
};
use lga_core::ndcore::{max_abs_diff, symmetric_eigen, Matrix, Rng};

use super::random_problem;
use crate::config::{LinregOracleConfig, RunConfig};
use crate::error::CliResult;
use crate::output::RunDir;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub cases: usize,
    pub max_deviation: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn new(cases: usize, max_deviation: f64, threshold: f64) -> Check {
        Check {
            cases,
            max_deviation,
            threshold,
            passed: max_deviation <= threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LinregOracleReport {
    pub closed_form: Check,
    pub recurrence_full: Check,
    pub recurrence_stopgrad: Check,
    pub bridge: Check,
    pub bridge_runs: Vec<BridgeReport>,
    pub passed: bool,
}

fn closed_form(lo: &LinregOracleConfig, rng: &mut Rng) -> CliResult<Check> {
    let mut worst = 0.0f64;
    for _ in 0..lo.problems {
        let m = 1 + rng.index(lo.max_dim);
        let n = m + rng.index(2 * m + 1);
        let x = Matrix::from_vec(n, m, (0..n * m).map(|_| rng.normal()).collect())?;
        let y: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let lmax = symmetric_eigen(&x.gram(n as f64))?.values[0];
        let alpha = rng.uniform_range(0.1, 1.0) / lmax;
        let k = rng.index(lo.max_k as usize + 1) as u32;
        let closed = gd_closed_form(&x, &y, alpha, k)?;
        let iter = gd_iterative(&x, &y, alpha, k)?;
        worst = worst.max(max_abs_diff(&closed, &iter));
    }
    Ok(Check::new(lo.problems, worst, lo.closed_form_tol))
}

fn recurrence(
    lo: &LinregOracleConfig,
    mode: LabMode,
    n_u: usize,
    rng: &mut Rng,
) -> CliResult<Check> {
    let hyper = LabHyper {
        mode,
        ..LabHyper::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..lo.recurrence_problems {
        let m = 1 + rng.index(4);
        let n_l = m + rng.index(4);
        let problem = random_problem(rng, m, n_l, n_u);
        let design = make_diagonal_design(&problem, rng)?;
        let run = simplified_lga_run(&design, hyper, lo.recurrence_k_max)?;
        for i in 0..m {
            let dim = ScalarDim {
                lambda_l: problem.lambda_l[i],
                lambda_u: problem.lambda_u[i],
                b: problem.b[i],
            };
            let scalar = scalar_recurrence_run(dim, n_u, hyper, lo.recurrence_k_max)?;
            worst = worst.max(max_abs_diff(&scalar, &run.c.col(i)));
        }
    }
    Ok(Check::new(lo.recurrence_problems, worst, lo.recurrence_tol))
}

fn bridge(lo: &LinregOracleConfig, rng: &mut Rng) -> CliResult<(Check, Vec<BridgeReport>)> {
    let mut runs = Vec::new();
    for _ in 0..lo.recurrence_problems {
        let m = 1 + rng.index(4);
        let (n_l, n_u) = (m + rng.index(4), m + rng.index(4));
        let problem = random_problem(rng, m, n_l, n_u);
        runs.push(bridge_check(
            &problem,
            LabHyper::default(),
            lo.bridge_iterations,
            rng.next_u64(),
        )?);
    }
    let worst = runs.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    Ok((Check::new(runs.len(), worst, lo.bridge_tol), runs))
}

pub fn run(cfg: &RunConfig, dir: &mut RunDir) -> CliResult<LinregOracleReport> {
    let lo = &cfg.linreg_oracle;
    let root = Rng::new(cfg.seed);
    let closed_form = closed_form(lo, &mut root.substream("closed-form"))?;
    let recurrence_full = recurrence(
        lo,
        LabMode::FullNormalized,
        lo.full_n_u,
        &mut root.substream("recurrence-full"),
    )?;
    let recurrence_stopgrad = recurrence(
        lo,
        LabMode::StopGradient,
        lo.stopgrad_n_u,
        &mut root.substream("recurrence-stopgrad"),
    )?;
    let (bridge, bridge_runs) = bridge(lo, &mut root.substream("bridge"))?;
    let passed =
        closed_form.passed && recurrence_full.passed && recurrence_stopgrad.passed && bridge.passed;
    let report = LinregOracleReport {
        closed_form,
        recurrence_full,
        recurrence_stopgrad,
        bridge,
        bridge_runs,
        passed,
    };
    dir.json("report.json", &report)?;
    Ok(report)
}
