use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, SplitRoles};
use crate::error::{Error, Result};
use crate::model::VggConfig;
use crate::optim::{HyperParams, OptimizerKind};
use crate::sched::{Schedule, SchedulerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    /// Initial learning rate; the schedule takes it from here.
    pub lr: f64,
    pub params: HyperParams,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimizerKind::SgdNesterov,
            lr: 0.01,
            params: HyperParams::default(),
        }
    }
}

/// Scheduler choice plus optional overrides of its defaults. An override that
/// the chosen kind does not use is a config error.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedConfig {
    pub kind: SchedulerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_0: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_mult: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pct_start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub div: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_div: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl SchedConfig {
    pub fn of_kind(kind: SchedulerKind) -> Self {
        SchedConfig {
            kind,
            ..SchedConfig::default()
        }
    }

    /// The concrete schedule for a run starting at `lr` and lasting `epochs`.
    pub fn build(&self, lr: f64, epochs: usize) -> Result<Schedule> {
        let mut s = Schedule::with_defaults(self.kind, lr, epochs);
        let mut used = Vec::new();
        macro_rules! set {
            ($field:ident, $target:expr) => {
                if let Some(v) = self.$field {
                    *$target = v;
                    used.push(stringify!($field));
                }
            };
        }
        match &mut s {
            Schedule::Constant { .. } => {}
            Schedule::Rlrp {
                factor,
                patience,
                min_lr,
                min_delta,
                ..
            } => {
                set!(factor, factor);
                set!(patience, patience);
                set!(min_lr, min_lr);
                set!(min_delta, min_delta);
            }
            Schedule::Cosine { eta_min, t_max, .. } => {
                set!(eta_min, eta_min);
                set!(t_max, t_max);
            }
            Schedule::CosineWr {
                eta_min,
                t_0,
                t_mult,
                ..
            } => {
                set!(eta_min, eta_min);
                set!(t_0, t_0);
                set!(t_mult, t_mult);
            }
            Schedule::OneCycle {
                pct_start,
                div,
                final_div,
                ..
            } => {
                set!(pct_start, pct_start);
                set!(div, div);
                set!(final_div, final_div);
            }
            Schedule::StepLr {
                step_size, gamma, ..
            } => {
                set!(step_size, step_size);
                set!(gamma, gamma);
            }
        }
        let given = self.overrides();
        if let Some(extra) = given.iter().find(|k| !used.contains(k)) {
            return Err(Error::Config(format!(
                "sched.{extra} does not apply to the {} schedule",
                self.kind.name()
            )));
        }
        s.validate()?;
        Ok(s)
    }

    fn overrides(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        let flags = [
            ("factor", self.factor.is_some()),
            ("patience", self.patience.is_some()),
            ("min_lr", self.min_lr.is_some()),
            ("min_delta", self.min_delta.is_some()),
            ("eta_min", self.eta_min.is_some()),
            ("t_max", self.t_max.is_some()),
            ("t_0", self.t_0.is_some()),
            ("t_mult", self.t_mult.is_some()),
            ("pct_start", self.pct_start.is_some()),
            ("div", self.div.is_some()),
            ("final_div", self.final_div.is_some()),
            ("step_size", self.step_size.is_some()),
            ("gamma", self.gamma.is_some()),
        ];
        for (name, set) in flags {
            if set {
                v.push(name);
            }
        }
        v
    }
}

/// How the ten crop predictions of one image are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropAveraging {
    #[default]
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Source images per batch; each contributes its crops.
    pub batch_size: usize,
    pub seed: u64,
    /// Static loss scale; 1 disables scaling.
    pub loss_scale: f64,
    pub averaging: CropAveraging,
    pub precision: Precision,
    /// Write measured seconds into metrics.tsv instead of 0. Off by default
    /// so that logs of equal-seed runs are byte-identical.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 64,
            seed: 0,
            loss_scale: 1.0,
            averaging: CropAveraging::Probabilities,
            precision: Precision::F32,
            log_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub lr: f64,
    /// `cosine` or `cosine-wr`.
    pub scheduler: SchedulerKind,
    pub t_0: usize,
    pub t_mult: usize,
    /// Train on training + validation and keep the final epoch.
    pub merge_val: bool,
    /// On each warm restart, reload the best weights seen so far.
    pub restore_best_on_restart: bool,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            epochs: 50,
            lr: 1e-4,
            scheduler: SchedulerKind::Cosine,
            t_0: 10,
            t_mult: 2,
            merge_val: false,
            restore_best_on_restart: false,
        }
    }
}

impl FineTuneConfig {
    pub fn schedule(&self) -> Result<Schedule> {
        let s = match self.scheduler {
            SchedulerKind::Cosine => Schedule::Cosine {
                eta_max: self.lr,
                eta_min: 0.0,
                t_max: self.epochs,
            },
            SchedulerKind::CosineWr => Schedule::CosineWr {
                eta_max: self.lr,
                eta_min: 0.0,
                t_0: self.t_0,
                t_mult: self.t_mult,
            },
            other => {
                return Err(Error::Config(format!(
                    "fine-tuning uses cosine or cosine-wr, not {}",
                    other.name()
                )))
            }
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub roles: SplitRoles,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit_per_class: Option<usize>,
    pub augment: AugmentConfig,
}

/// Everything one run needs, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: VggConfig,
    pub optim: OptimConfig,
    pub sched: SchedConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub finetune: FineTuneConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn schedule(&self) -> Result<Schedule> {
        self.sched.build(self.optim.lr, self.train.epochs)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.params.validate()?;
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return Err(Error::Config(format!(
                "optim.lr = {} must be positive",
                self.optim.lr
            )));
        }
        self.schedule()?;
        self.data.roles.validate()?;
        self.data.augment.validate()?;
        if self.data.limit_per_class == Some(0) {
            return Err(Error::Config(
                "data.limit_per_class must be at least 1".into(),
            ));
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(Error::Config(
                "train.epochs and train.batch_size must be at least 1".into(),
            ));
        }
        if !(t.loss_scale > 0.0 && t.loss_scale.is_finite()) {
            return Err(Error::Config(format!(
                "train.loss_scale = {} must be positive",
                t.loss_scale
            )));
        }
        if self.finetune.epochs == 0 || self.finetune.lr.is_nan() || self.finetune.lr <= 0.0 {
            return Err(Error::Config(
                "finetune.epochs and finetune.lr must be positive".into(),
            ));
        }
        self.finetune.schedule()?;
        Ok(())
    }
}
