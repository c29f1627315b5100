//! LGA against the supervised baseline on concentric rings.

use rayon::prelude::*;
use serde::Serialize;

use lga_core::lga::{lga_train, supervised_train, TrainRecord, TrainSetup};
use lga_core::metrics::AlignmentProbe;
use lga_core::models::{LossKind, MlpConfig, Model};
use lga_core::ndcore::Rng;
use lga_core::synthdata::{gen_rings, split_counts};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::{cell, num, RunDir};

pub const RECORDS_HEADER: [&str; 10] = [
    "iteration",
    "trial",
    "method",
    "test_loss",
    "test_acc",
    "alignment",
    "grad_dist",
    "labeled_loss",
    "unlabeled_loss",
    "imputed_acc",
];

pub const SUMMARY_HEADER: [&str; 6] = ["method", "metric", "iteration", "trials", "mean", "std"];

pub const FINAL_HEADER: [&str; 5] = [
    "trial",
    "method",
    "final_test_acc",
    "final_test_loss",
    "mean_alignment_late",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Supervised,
    Lga,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Supervised => "supervised",
            Method::Lga => "lga",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub method: Method,
    pub records: Vec<TrainRecord>,
}

impl TrialResult {
    fn last(&self) -> &TrainRecord {
        self.records.last().expect("at least one record per run")
    }

    pub fn final_accuracy(&self) -> f64 {
        self.last().test_accuracy.unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.last().test_loss.unwrap_or(f64::NAN)
    }

    /// Mean alignment over records after `from`.
    pub fn mean_alignment_after(&self, from: usize) -> f64 {
        mean(
            &self
                .records
                .iter()
                .filter(|r| r.iteration > from)
                .filter_map(|r| r.alignment)
                .collect::<Vec<_>>(),
        )
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MethodSummary {
    pub final_test_acc_mean: f64,
    pub final_test_acc_std: f64,
    pub final_test_loss_mean: f64,
    pub final_test_loss_std: f64,
    pub alignment_late_mean: f64,
    pub alignment_late_std: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RingsReport {
    pub trials: usize,
    pub iterations: usize,
    pub class_counts_labeled: Vec<usize>,
    pub supervised: MethodSummary,
    pub lga: MethodSummary,
    pub accuracy_not_worse: bool,
    pub loss_not_worse: bool,
    pub alignment_higher: bool,
}

impl RingsReport {
    pub fn all_hold(&self) -> bool {
        self.accuracy_not_worse && self.loss_not_worse && self.alignment_higher
    }
}

fn summarize(results: &[TrialResult], method: Method, half: usize) -> MethodSummary {
    let mine: Vec<&TrialResult> = results.iter().filter(|r| r.method == method).collect();
    let acc: Vec<f64> = mine.iter().map(|r| r.final_accuracy()).collect();
    let loss: Vec<f64> = mine.iter().map(|r| r.final_loss()).collect();
    let align: Vec<f64> = mine.iter().map(|r| r.mean_alignment_after(half)).collect();
    MethodSummary {
        final_test_acc_mean: mean(&acc),
        final_test_acc_std: std_dev(&acc),
        final_test_loss_mean: mean(&loss),
        final_test_loss_std: std_dev(&loss),
        alignment_late_mean: mean(&align),
        alignment_late_std: std_dev(&align),
    }
}

/// Both methods on one freshly generated dataset, from the same initial
/// parameters and the same labeled batch stream.
pub fn run_trial(cfg: &RunConfig, trial: usize) -> CliResult<[TrialResult; 2]> {
    let rc = &cfg.rings;
    let root = Rng::new(cfg.seed);
    let mut data_cfg = rc.data;
    data_cfg.seed = root
        .substream_indexed("rings-data", trial as u64)
        .next_u64();
    let data = gen_rings(&data_cfg)?;

    let mlp = MlpConfig {
        input_dim: data_cfg.dim,
        hidden_dim: rc.hidden_dim,
        num_hidden_layers: rc.num_hidden_layers,
        output_dim: data_cfg.num_classes,
        activation: lga_core::models::Activation::Relu,
    };
    let model = Model::mlp(&mlp, LossKind::SoftmaxCrossEntropy)?;
    let theta0 = model.init_params(&mut root.substream_indexed("rings-init", trial as u64));

    let mut train = rc.train;
    train.seed = root
        .substream_indexed("rings-train", trial as u64)
        .next_u64();
    let mut probe_cfg = rc.probe;
    probe_cfg.seed = root
        .substream_indexed("rings-probe", trial as u64)
        .next_u64();

    let mut probe = AlignmentProbe::new(&data.test, probe_cfg)?;
    let sup = supervised_train(
        &model,
        &train,
        &data.labeled,
        Some(&data.test),
        &theta0,
        Some(&mut probe),
    )?;

    let mut probe = AlignmentProbe::new(&data.test, probe_cfg)?;
    let setup = TrainSetup {
        model: &model,
        labeled: &data.labeled,
        unlabeled: &data.unlabeled,
        test: Some(&data.test),
        theta_init: &theta0,
    };
    let lga = lga_train(setup, &train, Some(&mut probe))?;

    Ok([
        TrialResult {
            trial,
            method: Method::Supervised,
            records: sup.records,
        },
        TrialResult {
            trial,
            method: Method::Lga,
            records: lga.records,
        },
    ])
}

/// Run every trial (in parallel), then write per-record, per-trial and
/// summary tables plus `report.json`.
pub fn run(cfg: &RunConfig, dir: &mut RunDir) -> CliResult<RingsReport> {
    let per_trial: Vec<CliResult<[TrialResult; 2]>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect();
    let mut results = Vec::with_capacity(2 * cfg.trials);
    for r in per_trial {
        results.extend(r?);
    }
    results.sort_by_key(|r| (r.trial, r.method == Method::Lga));

    let mut records = dir.table("rings_records.csv", &RECORDS_HEADER)?;
    for r in &results {
        for rec in &r.records {
            records.row(&[
                rec.iteration.to_string(),
                r.trial.to_string(),
                r.method.name().to_string(),
                cell(rec.test_loss),
                cell(rec.test_accuracy),
                cell(rec.alignment),
                cell(rec.grad_dist),
                num(rec.labeled_loss),
                cell(rec.unlabeled_loss),
                cell(rec.imputed_accuracy),
            ])?;
        }
    }
    records.finish()?;

    let half = cfg.rings.train.iterations / 2;
    let mut finals = dir.table("rings_final.csv", &FINAL_HEADER)?;
    for r in &results {
        finals.row(&[
            r.trial.to_string(),
            r.method.name().to_string(),
            num(r.final_accuracy()),
            num(r.final_loss()),
            num(r.mean_alignment_after(half)),
        ])?;
    }
    finals.finish()?;

    write_summary(dir, &results)?;

    let data0 = gen_rings(&cfg.rings.data)?;
    let supervised = summarize(&results, Method::Supervised, half);
    let lga = summarize(&results, Method::Lga, half);
    let report = RingsReport {
        trials: cfg.trials,
        iterations: cfg.rings.train.iterations,
        class_counts_labeled: split_counts(&data0.labeled)?,
        supervised,
        lga,
        accuracy_not_worse: lga.final_test_acc_mean >= supervised.final_test_acc_mean,
        loss_not_worse: lga.final_test_loss_mean <= supervised.final_test_loss_mean,
        alignment_higher: lga.alignment_late_mean > supervised.alignment_late_mean,
    };
    dir.json("report.json", &report)?;
    Ok(report)
}

type MetricFn = fn(&TrainRecord) -> Option<f64>;

const SUMMARY_METRICS: [(&str, MetricFn); 4] = [
    ("test_loss", |r| r.test_loss),
    ("test_acc", |r| r.test_accuracy),
    ("alignment", |r| r.alignment),
    ("grad_dist", |r| r.grad_dist),
];

fn write_summary(dir: &mut RunDir, results: &[TrialResult]) -> CliResult<()> {
    let mut table = dir.table("rings_summary.csv", &SUMMARY_HEADER)?;
    for method in [Method::Supervised, Method::Lga] {
        let runs: Vec<&TrialResult> = results.iter().filter(|r| r.method == method).collect();
        let Some(first) = runs.first() else { continue };
        for (metric, get) in SUMMARY_METRICS {
            for (idx, rec) in first.records.iter().enumerate() {
                let vals: Vec<f64> = runs
                    .iter()
                    .filter_map(|r| r.records.get(idx).and_then(get))
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                table.row(&[
                    method.name().to_string(),
                    metric.to_string(),
                    rec.iteration.to_string(),
                    vals.len().to_string(),
                    num(mean(&vals)),
                    num(std_dev(&vals)),
                ])?;
            }
        }
    }
    table.finish()?;
    Ok(())
}
