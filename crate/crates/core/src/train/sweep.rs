use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{prepare_out_dir, run_experiment, RunConfig, SchedConfig, SplitData};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::sched::SchedulerKind;
use crate::tensor::Real;

/// Optimizer comparison: fixed rate, and plateau reduction from 0.01.
pub const OPTIMIZER_FIXED_LR: f64 = 0.001;
pub const OPTIMIZER_DECAY_LR: f64 = 0.01;
pub const SCHEDULER_LR: f64 = 0.01;

pub const SWEEP_SUMMARY: &str = "sweep_summary.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Optimizer,
    Scheduler,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimizer" => Ok(SweepAxis::Optimizer),
            "scheduler" => Ok(SweepAxis::Scheduler),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub name: String,
    pub config: RunConfig,
}

/// One run per axis value, all other settings taken from `base`.
pub fn sweep_plan(axis: SweepAxis, base: &RunConfig) -> Vec<SweepRun> {
    let mut runs = Vec::new();
    match axis {
        SweepAxis::Optimizer => {
            for kind in OptimizerKind::ALL {
                for (sched, lr) in [
                    (SchedulerKind::Constant, OPTIMIZER_FIXED_LR),
                    (SchedulerKind::Rlrp, OPTIMIZER_DECAY_LR),
                ] {
                    let mut config = base.clone();
                    config.optim.kind = kind;
                    config.optim.lr = lr;
                    config.sched = SchedConfig::of_kind(sched);
                    runs.push(SweepRun {
                        name: format!("{}-{}", kind.name(), sched.name()),
                        config,
                    });
                }
            }
        }
        SweepAxis::Scheduler => {
            for kind in SchedulerKind::ALL {
                let mut config = base.clone();
                config.optim.lr = SCHEDULER_LR;
                config.sched = SchedConfig::of_kind(kind);
                runs.push(SweepRun {
                    name: kind.name().to_string(),
                    config,
                });
            }
        }
    }
    runs
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub name: String,
    pub optimizer: OptimizerKind,
    pub scheduler: SchedulerKind,
    pub lr: f64,
    pub best_val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub error: Option<String>,
}

/// Collated table, one row per run.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| v.to_string());
    let mut s = String::from("run\toptimizer\tscheduler\tlr\tbest_val_acc\ttest_acc\tstatus\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.name,
            r.optimizer.name(),
            r.scheduler.name(),
            r.lr,
            opt(r.best_val_acc),
            opt(r.test_acc),
            r.error
                .as_deref()
                .map_or("ok".to_string(), |e| format!("failed: {e}"))
        );
    }
    s
}

/// Run `plan` sequentially under `out/<name>/`. A failed run is recorded in
/// its row and the sweep moves on.
pub fn run_sweep<T: Real>(
    plan: &[SweepRun],
    data: &SplitData,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(plan.len());
    for run in plan {
        let dir = out.join(&run.name);
        log::info!("sweep run {}", run.name);
        let result = prepare_out_dir(&dir, &run.config)
            .and_then(|_| run_experiment::<T>(&run.config, data, Some(&dir)));
        let mut row = SweepRow {
            name: run.name.clone(),
            optimizer: run.config.optim.kind,
            scheduler: run.config.sched.kind,
            lr: run.config.optim.lr,
            best_val_acc: None,
            test_acc: None,
            error: None,
        };
        match result {
            Ok(o) => {
                row.best_val_acc = Some(o.best.best_val_acc);
                row.test_acc = Some(o.test.accuracy);
            }
            Err(e) => {
                log::warn!("sweep run {} failed: {e}", run.name);
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
        let path = out.join(SWEEP_SUMMARY);
        fs::write(&path, sweep_table(&rows)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_sizes() {
        let base = RunConfig::default();
        let opt = sweep_plan(SweepAxis::Optimizer, &base);
        assert_eq!(opt.len(), 14);
        assert_eq!(opt.iter().filter(|r| r.config.optim.lr == 0.001).count(), 7);
        assert!(opt
            .iter()
            .filter(|r| r.config.sched.kind == SchedulerKind::Rlrp)
            .all(|r| r.config.optim.lr == 0.01));
        let sch = sweep_plan(SweepAxis::Scheduler, &base);
        assert_eq!(sch.len(), 6);
        assert!(sch
            .iter()
            .all(|r| r.config.optim.lr == 0.01 && r.config.validate().is_ok()));
        let mut names: Vec<_> = opt.iter().chain(&sch).map(|r| r.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 20);
    }
}
