//! Analytic derivatives against finite differences on random instances.

use serde::Serialize;

use lga_core::gradcheck::{check_all, OpCheck};
use lga_core::ndcore::Rng;

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::RunDir;

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub ops: Vec<OpCheck>,
    pub passed: bool,
}

pub fn run(cfg: &RunConfig, dir: &mut RunDir) -> CliResult<GradcheckReport> {
    let gc = &cfg.gradcheck;
    let mut rng = Rng::new(cfg.seed).substream("gradcheck");
    let ops = check_all(&mut rng, gc.instances_per_op, gc.max_params, gc.max_batch)?;
    let passed = ops.iter().all(|o| o.passed);
    let report = GradcheckReport { ops, passed };
    dir.json("report.json", &report)?;
    Ok(report)
}
