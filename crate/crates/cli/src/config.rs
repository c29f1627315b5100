//! Run configuration, presets and layered resolution.
//!
//! A run starts from a preset, overlays the TOML file if one is given, then
//! applies command-line overrides. The fully resolved result is what gets
//! written back to the run directory.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use lga_core::lga::LgaConfig;
use lga_core::linreg_lab::{LabHyper, LabMode};
use lga_core::metrics::ProbeConfig;
use lga_core::optim::{AdamConfig, OptimizerKind, ScheduleConfig};
use lga_core::synthdata::RingsConfig;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Learnspeed,
    Rings,
    Propcheck,
    Gradcheck,
    LinregOracle,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Learnspeed => "learnspeed",
            Experiment::Rings => "rings",
            Experiment::Propcheck => "propcheck",
            Experiment::Gradcheck => "gradcheck",
            Experiment::LinregOracle => "linreg-oracle",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Minutes on a single core.
    #[default]
    Desk,
    /// Full-size rings: 5000 labeled points, 128 hidden units, 25 trials.
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnspeedConfig {
    pub hyper: LabHyper,
    pub grid: Vec<f64>,
    /// Value of the eigenvalue held fixed in each panel.
    pub fixed: f64,
    pub b: f64,
    pub n_u: usize,
    pub k_max: usize,
    pub record_every: usize,
    /// Iterations over which the ordering of the curves is checked.
    pub order_window: [usize; 2],
    /// Allowed distance of every final `c` from 1.
    pub final_tol: f64,
}

impl Default for LearnspeedConfig {
    fn default() -> Self {
        LearnspeedConfig {
            hyper: LabHyper::default(),
            grid: vec![0.1, 0.3, 1.0],
            fixed: 1.0,
            b: 1.0,
            n_u: 3,
            k_max: 100_000,
            record_every: 100,
            order_window: [10, 20_000],
            final_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingsExperiment {
    pub data: RingsConfig,
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    /// Training settings; the supervised baseline uses the θ-side fields.
    pub train: LgaConfig,
    pub probe: ProbeConfig,
}

impl Default for RingsExperiment {
    fn default() -> Self {
        RingsExperiment {
            data: RingsConfig {
                dim: 50,
                n_labeled: 1000,
                unlabeled_multiplier: 5,
                n_test: 10_000,
                num_classes: 5,
                seed: 0,
            },
            hidden_dim: 64,
            num_hidden_layers: 3,
            train: LgaConfig {
                lr_theta: 1e-3,
                lr_w: 0.1,
                batch_labeled: 100,
                batch_unlabeled: 100,
                iterations: 4000,
                eps_norm: 1e-8,
                ema_grad_decay: 0.99,
                ema_v4_decay: 0.999,
                schedule: ScheduleConfig::constant(1.0),
                optimizer: OptimizerKind::Adam(AdamConfig::default()),
                seed: 0,
                record_every: 50,
            },
            probe: ProbeConfig {
                iters: 20,
                tol: 1e-6,
                max_samples: Some(1000),
                warm_start: true,
                seed: 0,
                update: Default::default(),
                every: Some(200),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropcheckConfig {
    pub k_max: usize,
    pub hyper: LabHyper,
    /// Stop-gradient runs need enough unlabeled rows that the residuals stay
    /// away from zero over the horizon.
    pub stopgrad_n_u: usize,
    pub full_n_u: usize,
    pub perturbations: Vec<f64>,
    pub independence_tol: f64,
    pub control_min: f64,
    pub fixed_point_problems: usize,
    pub fixed_point_hyper: LabHyper,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iter: usize,
    pub c_tol: f64,
}

impl Default for PropcheckConfig {
    fn default() -> Self {
        PropcheckConfig {
            k_max: 10_000,
            hyper: LabHyper::default(),
            stopgrad_n_u: 200,
            full_n_u: 4,
            perturbations: vec![0.2, 2.0, 5.0],
            independence_tol: 1e-10,
            control_min: 1e-3,
            fixed_point_problems: 10,
            fixed_point_hyper: LabHyper {
                alpha_theta: 1e-2,
                alpha_w: 1e-2,
                eps_norm: 1e-2,
                mode: LabMode::FullNormalized,
            },
            fixed_point_tol: 1e-6,
            fixed_point_max_iter: 1_000_000,
            c_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub instances_per_op: usize,
    pub max_params: usize,
    pub max_batch: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            instances_per_op: 100,
            max_params: 200,
            max_batch: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinregOracleConfig {
    pub problems: usize,
    pub max_dim: usize,
    pub max_k: u32,
    pub closed_form_tol: f64,
    pub recurrence_problems: usize,
    pub recurrence_k_max: usize,
    pub recurrence_tol: f64,
    pub full_n_u: usize,
    pub stopgrad_n_u: usize,
    pub bridge_iterations: usize,
    pub bridge_tol: f64,
}

impl Default for LinregOracleConfig {
    fn default() -> Self {
        LinregOracleConfig {
            problems: 20,
            max_dim: 10,
            max_k: 1000,
            closed_form_tol: 1e-8,
            recurrence_problems: 10,
            recurrence_k_max: 10_000,
            recurrence_tol: 1e-8,
            full_n_u: 5,
            stopgrad_n_u: 200,
            bridge_iterations: 100,
            bridge_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub trials: usize,
    pub learnspeed: LearnspeedConfig,
    pub rings: RingsExperiment,
    pub propcheck: PropcheckConfig,
    pub gradcheck: GradcheckConfig,
    pub linreg_oracle: LinregOracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Desk)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = RunConfig {
            preset,
            seed: 0,
            trials: 5,
            learnspeed: LearnspeedConfig::default(),
            rings: RingsExperiment::default(),
            propcheck: PropcheckConfig::default(),
            gradcheck: GradcheckConfig::default(),
            linreg_oracle: LinregOracleConfig::default(),
        };
        if preset == Preset::Paper {
            cfg.trials = 25;
            cfg.rings.data.n_labeled = 5000;
            cfg.rings.hidden_dim = 128;
            cfg.rings.train.iterations = 10_000;
        }
        cfg
    }

    /// Preset, then the TOML text on top, then the overrides.
    pub fn resolve(
        preset: Preset,
        toml_text: Option<&str>,
        seed: Option<u64>,
        trials: Option<usize>,
    ) -> Result<Self, CliError> {
        let mut base = toml::Value::try_from(RunConfig::preset(preset))
            .map_err(|e| CliError::Config(format!("serializing preset: {e}")))?;
        if let Some(text) = toml_text {
            let overlay: toml::Value =
                toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
            if let Some(p) = overlay.get("preset") {
                if p.as_str() != Some(preset_name(preset)) {
                    return Err(CliError::Config(format!(
                        "config file preset {p} conflicts with selected preset {}",
                        preset_name(preset)
                    )));
                }
            }
            merge(&mut base, overlay);
        }
        let mut cfg: RunConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(t) = trials {
            cfg.trials = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(
        path: Option<&Path>,
        preset: Preset,
        seed: Option<u64>,
        trials: Option<usize>,
    ) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            ),
            None => None,
        };
        RunConfig::resolve(preset, text.as_deref(), seed, trials)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        self.rings
            .data
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.rings
            .train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.rings.hidden_dim == 0 || self.rings.num_hidden_layers == 0 {
            return bad("rings network needs at least one hidden unit and layer".into());
        }
        let ls = &self.learnspeed;
        if ls.grid.is_empty() || ls.k_max == 0 || ls.record_every == 0 {
            return bad("learnspeed needs a grid, k_max >= 1 and record_every >= 1".into());
        }
        if ls.order_window[0] > ls.order_window[1] || ls.order_window[1] > ls.k_max {
            return bad(format!(
                "learnspeed order window {:?} must lie within 0..={}",
                ls.order_window, ls.k_max
            ));
        }
        if self.gradcheck.instances_per_op == 0 || self.gradcheck.max_batch == 0 {
            return bad("gradcheck needs at least one instance and one row".into());
        }
        let lo = &self.linreg_oracle;
        if lo.problems == 0 || lo.max_dim == 0 || lo.recurrence_problems == 0 {
            return bad("linreg-oracle needs at least one problem of dimension >= 1".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("serializing config: {e}")))
    }
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Desk => "desk",
        Preset::Paper => "paper",
    }
}

/// Recursive table merge: values in `overlay` replace those in `base`.
fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
