//! Progress `c_k` of the simplified dynamics, sweeping one eigenvalue at a
//! time.

use serde::Serialize;

use lga_core::linreg_lab::{first_order_violation, SpeedPanel, SweepKind};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::{num, RunDir};

pub const HEADER: [&str; 5] = ["k", "dim", "lambda_l", "lambda_u", "c"];

#[derive(Clone, Debug, Serialize)]
pub struct PanelReport {
    pub sweep: SweepKind,
    pub file: String,
    pub grid: Vec<f64>,
    pub final_c: Vec<f64>,
    pub max_final_gap: f64,
    /// First iteration in the window where the ordering breaks.
    pub order_violation: Option<usize>,
    pub ordered: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LearnspeedReport {
    pub k_max: usize,
    pub order_window: [usize; 2],
    pub final_tol: f64,
    pub panels: Vec<PanelReport>,
}

impl LearnspeedReport {
    pub fn all_hold(&self) -> bool {
        self.panels.iter().all(|p| p.ordered && p.converged)
    }
}

pub fn panel_file(sweep: SweepKind) -> &'static str {
    match sweep {
        SweepKind::Labeled => "learnspeed_vary_lambda_l.csv",
        SweepKind::Unlabeled => "learnspeed_vary_lambda_u.csv",
    }
}

pub fn run(cfg: &RunConfig, dir: &mut RunDir) -> CliResult<LearnspeedReport> {
    let ls = &cfg.learnspeed;
    let mut panels = Vec::new();
    for sweep in [SweepKind::Labeled, SweepKind::Unlabeled] {
        let panel = SpeedPanel {
            sweep,
            grid: ls.grid.clone(),
            fixed: ls.fixed,
            b: ls.b,
            n_u: ls.n_u,
        };
        let problem = panel.problem();
        let traj = panel.run(ls.hyper, ls.k_max, cfg.seed)?;

        let file = panel_file(sweep);
        let mut table = dir.table(file, &HEADER)?;
        for k in (0..=ls.k_max).filter(|k| k.is_multiple_of(ls.record_every) || *k == ls.k_max) {
            for (i, c) in traj.c.row(k).iter().enumerate() {
                table.row(&[
                    k.to_string(),
                    i.to_string(),
                    num(problem.lambda_l[i]),
                    num(problem.lambda_u[i]),
                    num(*c),
                ])?;
            }
        }
        table.finish()?;

        let final_c = traj.c.row(ls.k_max).to_vec();
        let max_final_gap = final_c.iter().map(|c| (c - 1.0).abs()).fold(0.0, f64::max);
        let order_violation =
            first_order_violation(&traj.c, ls.order_window[0]..=ls.order_window[1]);
        panels.push(PanelReport {
            sweep,
            file: file.to_string(),
            grid: ls.grid.clone(),
            final_c,
            max_final_gap,
            order_violation,
            ordered: order_violation.is_none(),
            converged: max_final_gap <= ls.final_tol,
        });
    }
    let report = LearnspeedReport {
        k_max: ls.k_max,
        order_window: ls.order_window,
        final_tol: ls.final_tol,
        panels,
    };
    dir.json("report.json", &report)?;
    Ok(report)
}
