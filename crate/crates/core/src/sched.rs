//! Per-epoch learning-rate schedules.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    Constant,
    #[default]
    Rlrp,
    Cosine,
    CosineWr,
    OneCycle,
    StepLr,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 6] = [
        SchedulerKind::Constant,
        SchedulerKind::Rlrp,
        SchedulerKind::Cosine,
        SchedulerKind::CosineWr,
        SchedulerKind::OneCycle,
        SchedulerKind::StepLr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Constant => "constant",
            SchedulerKind::Rlrp => "rlrp",
            SchedulerKind::Cosine => "cosine",
            SchedulerKind::CosineWr => "cosine-wr",
            SchedulerKind::OneCycle => "one-cycle",
            SchedulerKind::StepLr => "step-lr",
        }
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheduler {s:?}")))
    }
}

/// A schedule and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    Constant {
        lr: f64,
    },
    /// Multiply by `factor` once the monitored metric (maximized) has failed
    /// to beat its best by more than `min_delta` for `patience` consecutive
    /// observations.
    Rlrp {
        initial_lr: f64,
        factor: f64,
        patience: usize,
        min_lr: f64,
        min_delta: f64,
    },
    Cosine {
        eta_max: f64,
        eta_min: f64,
        t_max: usize,
    },
    /// Cosine annealing restarted at the end of each cycle; cycle `k` lasts
    /// `t_0 * t_mult^k` epochs.
    CosineWr {
        eta_max: f64,
        eta_min: f64,
        t_0: usize,
        t_mult: usize,
    },
    /// Linear ramp from `max_lr / div` to `max_lr` over the first
    /// `pct_start` of `total` epochs, then cosine decay to
    /// `max_lr / final_div` at epoch `total - 1`.
    OneCycle {
        max_lr: f64,
        pct_start: f64,
        div: f64,
        final_div: f64,
        total: usize,
    },
    StepLr {
        lr: f64,
        step_size: usize,
        gamma: f64,
    },
}

impl Schedule {
    /// The schedule's defaults for a run of `epochs` epochs starting at `lr`.
    pub fn with_defaults(kind: SchedulerKind, lr: f64, epochs: usize) -> Schedule {
        match kind {
            SchedulerKind::Constant => Schedule::Constant { lr },
            SchedulerKind::Rlrp => Schedule::Rlrp {
                initial_lr: lr,
                factor: 0.75,
                patience: 5,
                min_lr: 1e-6,
                min_delta: 0.0,
            },
            SchedulerKind::Cosine => Schedule::Cosine {
                eta_max: lr,
                eta_min: 0.0,
                t_max: epochs,
            },
            SchedulerKind::CosineWr => Schedule::CosineWr {
                eta_max: lr,
                eta_min: 0.0,
                t_0: 10,
                t_mult: 2,
            },
            SchedulerKind::OneCycle => Schedule::OneCycle {
                max_lr: lr,
                pct_start: 0.3,
                div: 25.0,
                final_div: 1e4,
                total: epochs,
            },
            SchedulerKind::StepLr => Schedule::StepLr {
                lr,
                step_size: 30,
                gamma: 0.1,
            },
        }
    }

    pub fn kind(&self) -> SchedulerKind {
        match self {
            Schedule::Constant { .. } => SchedulerKind::Constant,
            Schedule::Rlrp { .. } => SchedulerKind::Rlrp,
            Schedule::Cosine { .. } => SchedulerKind::Cosine,
            Schedule::CosineWr { .. } => SchedulerKind::CosineWr,
            Schedule::OneCycle { .. } => SchedulerKind::OneCycle,
            Schedule::StepLr { .. } => SchedulerKind::StepLr,
        }
    }

    pub fn initial_lr(&self) -> f64 {
        match *self {
            Schedule::Constant { lr } | Schedule::StepLr { lr, .. } => lr,
            Schedule::Rlrp { initial_lr, .. } => initial_lr,
            Schedule::Cosine { eta_max, .. } | Schedule::CosineWr { eta_max, .. } => eta_max,
            Schedule::OneCycle { max_lr, div, .. } => max_lr / div,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| {
            Err(Error::Config(format!(
                "{} schedule: {msg}",
                self.kind().name()
            )))
        };
        let pos = |x: f64| x > 0.0 && x.is_finite();
        match *self {
            Schedule::Constant { lr } if !pos(lr) => bad("lr must be positive"),
            Schedule::Rlrp {
                initial_lr,
                factor,
                patience,
                min_lr,
                min_delta,
            } => {
                if !pos(initial_lr) || !pos(min_lr) || min_lr > initial_lr {
                    bad("need 0 < min_lr <= initial_lr")
                } else if !(factor > 0.0 && factor < 1.0) {
                    bad("factor must lie in (0, 1)")
                } else if patience == 0 || min_delta < 0.0 {
                    bad("patience must be positive and min_delta non-negative")
                } else {
                    Ok(())
                }
            }
            Schedule::Cosine {
                eta_max,
                eta_min,
                t_max,
            } => {
                if !pos(eta_max) || !(0.0..=eta_max).contains(&eta_min) || t_max == 0 {
                    bad("need 0 <= eta_min <= eta_max, eta_max > 0, t_max > 0")
                } else {
                    Ok(())
                }
            }
            Schedule::CosineWr {
                eta_max,
                eta_min,
                t_0,
                t_mult,
            } => {
                if !pos(eta_max) || !(0.0..=eta_max).contains(&eta_min) || t_0 == 0 || t_mult == 0 {
                    bad("need 0 <= eta_min <= eta_max, eta_max > 0, t_0 > 0, t_mult > 0")
                } else {
                    Ok(())
                }
            }
            Schedule::OneCycle {
                max_lr,
                pct_start,
                div,
                final_div,
                total,
            } => {
                if !pos(max_lr) || !pos(div) || !pos(final_div) {
                    bad("max_lr, div and final_div must be positive")
                } else if !(0.0..1.0).contains(&pct_start)
                    || pct_start * total as f64 >= total as f64 - 1.0
                {
                    bad("the warm-up must end before the final epoch")
                } else {
                    Ok(())
                }
            }
            Schedule::StepLr {
                lr,
                step_size,
                gamma,
            } => {
                if !pos(lr) || step_size == 0 || !pos(gamma) {
                    bad("lr, step_size and gamma must be positive")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Position inside the current warm-restart cycle and that cycle's length.
pub fn restart_cycle(epoch: usize, t_0: usize, t_mult: usize) -> (usize, usize) {
    if t_mult == 1 {
        return (epoch % t_0, t_0);
    }
    let (mut pos, mut len) = (epoch, t_0);
    while pos >= len {
        pos -= len;
        len *= t_mult;
    }
    (pos, len)
}

fn cosine(eta_max: f64, eta_min: f64, pos: f64, len: f64) -> f64 {
    eta_min + 0.5 * (eta_max - eta_min) * (1.0 + (PI * pos / len).cos())
}

/// Scheduler state: the schedule plus the bookkeeping that evolves with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    pub schedule: Schedule,
    current_lr: f64,
    epoch: usize,
    best: Option<f64>,
    stagnation: usize,
    reductions: usize,
}

impl Scheduler {
    pub fn new(schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        let current_lr = schedule.initial_lr();
        Ok(Scheduler {
            schedule,
            current_lr,
            epoch: 0,
            best: None,
            stagnation: 0,
            reductions: 0,
        })
    }

    pub fn current_lr(&self) -> f64 {
        self.current_lr
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }

    /// Closed-form learning rate for `epoch`. Plateau reduction has no closed
    /// form and reports its current rate.
    pub fn lr_for_epoch(&self, epoch: usize) -> Result<f64> {
        let e = epoch as f64;
        Ok(match self.schedule {
            Schedule::Constant { lr } => lr,
            Schedule::Rlrp { .. } => self.current_lr,
            Schedule::StepLr {
                lr,
                step_size,
                gamma,
            } => lr * gamma.powi((epoch / step_size) as i32),
            Schedule::Cosine {
                eta_max,
                eta_min,
                t_max,
            } => cosine(eta_max, eta_min, e, t_max as f64),
            Schedule::CosineWr {
                eta_max,
                eta_min,
                t_0,
                t_mult,
            } => {
                let (pos, len) = restart_cycle(epoch, t_0, t_mult);
                cosine(eta_max, eta_min, pos as f64, len as f64)
            }
            Schedule::OneCycle {
                max_lr,
                pct_start,
                div,
                final_div,
                total,
            } => {
                if epoch >= total {
                    return Err(Error::ScheduleExhausted {
                        epoch,
                        horizon: total,
                    });
                }
                let start = max_lr / div;
                let end = max_lr / final_div;
                let warm = pct_start * total as f64;
                if e <= warm {
                    if warm == 0.0 {
                        max_lr
                    } else {
                        start + (max_lr - start) * e / warm
                    }
                } else {
                    cosine(max_lr, end, e - warm, (total - 1) as f64 - warm)
                }
            }
        })
    }

    /// Enter `epoch` and return the rate to train it with.
    pub fn begin_epoch(&mut self, epoch: usize) -> Result<f64> {
        if epoch < self.epoch {
            return Err(Error::State(format!(
                "scheduler epochs must not go backwards ({epoch} after {})",
                self.epoch
            )));
        }
        self.current_lr = self.lr_for_epoch(epoch)?;
        self.epoch = epoch;
        Ok(self.current_lr)
    }

    /// Whether `epoch` starts a new warm-restart cycle.
    pub fn is_restart(&self, epoch: usize) -> bool {
        match self.schedule {
            Schedule::CosineWr { t_0, t_mult, .. } => {
                epoch > 0 && restart_cycle(epoch, t_0, t_mult).0 == 0
            }
            _ => false,
        }
    }

    /// Feed one epoch's validation accuracy. Only plateau reduction reacts;
    /// the returned rate applies from the next epoch.
    pub fn observe(&mut self, metric: f64) -> Result<f64> {
        if !metric.is_finite() {
            return Err(Error::Numeric(format!(
                "scheduler metric {metric} is not finite"
            )));
        }
        if let Schedule::Rlrp {
            factor,
            patience,
            min_lr,
            min_delta,
            ..
        } = self.schedule
        {
            match self.best {
                Some(best) if metric <= best + min_delta => {
                    self.stagnation += 1;
                    if self.stagnation >= patience {
                        let reduced = (self.current_lr * factor).max(min_lr);
                        if reduced < self.current_lr {
                            self.current_lr = reduced;
                            self.reductions += 1;
                        }
                        self.stagnation = 0;
                    }
                }
                _ => {
                    self.best = Some(metric);
                    self.stagnation = 0;
                }
            }
        }
        Ok(self.current_lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(kind: SchedulerKind, lr: f64, epochs: usize) -> Scheduler {
        Scheduler::new(Schedule::with_defaults(kind, lr, epochs)).unwrap()
    }

    #[test]
    fn cosine_endpoints() {
        let s = Scheduler::new(Schedule::Cosine {
            eta_max: 0.01,
            eta_min: 0.0,
            t_max: 300,
        })
        .unwrap();
        assert_eq!(s.lr_for_epoch(0).unwrap(), 0.01);
        assert!((s.lr_for_epoch(150).unwrap() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn warm_restart_resets() {
        let s = sched(SchedulerKind::CosineWr, 0.01, 300);
        assert_eq!(s.lr_for_epoch(10).unwrap(), 0.01);
        assert_eq!(s.lr_for_epoch(30).unwrap(), 0.01);
        assert!(s.lr_for_epoch(9).unwrap() < 0.001);
        assert!(s.is_restart(10) && s.is_restart(30) && s.is_restart(70));
        assert!(!s.is_restart(0) && !s.is_restart(11));
        assert_eq!(restart_cycle(35, 10, 2), (5, 40));
        assert_eq!(restart_cycle(25, 10, 1), (5, 10));
    }

    #[test]
    fn step_decay() {
        let s = Scheduler::new(Schedule::StepLr {
            lr: 0.01,
            step_size: 30,
            gamma: 0.1,
        })
        .unwrap();
        assert!((s.lr_for_epoch(30).unwrap() - 0.001).abs() < 1e-18);
        assert_eq!(s.lr_for_epoch(29).unwrap(), 0.01);
    }

    #[test]
    fn one_cycle_shape_and_horizon() {
        let s = sched(SchedulerKind::OneCycle, 0.01, 100);
        assert!((s.lr_for_epoch(0).unwrap() - 0.01 / 25.0).abs() < 1e-18);
        assert!((s.lr_for_epoch(30).unwrap() - 0.01).abs() < 1e-15);
        assert!((s.lr_for_epoch(99).unwrap() - 0.01 / 1e4).abs() < 1e-15);
        assert!(matches!(
            s.lr_for_epoch(100),
            Err(Error::ScheduleExhausted {
                epoch: 100,
                horizon: 100
            })
        ));
    }

    #[test]
    fn plateau_reduces_on_fifth_stagnant_epoch() {
        let mut s = sched(SchedulerKind::Rlrp, 0.01, 300);
        assert_eq!(s.observe(0.60).unwrap(), 0.01);
        for _ in 0..4 {
            assert_eq!(s.observe(0.59).unwrap(), 0.01);
        }
        assert_eq!(s.observe(0.60).unwrap(), 0.0075);
        for _ in 0..5 {
            s.observe(0.55).unwrap();
        }
        assert!((s.current_lr() - 0.005625).abs() < 1e-18);
        assert_eq!(s.reductions(), 2);
    }

    #[test]
    fn plateau_ignores_improvement() {
        let mut s = sched(SchedulerKind::Rlrp, 0.01, 300);
        for i in 0..20 {
            s.observe(0.5 + 0.01 * i as f64).unwrap();
        }
        assert_eq!(s.current_lr(), 0.01);
        assert!(matches!(s.observe(f64::NAN), Err(Error::Numeric(_))));
    }

    #[test]
    fn epochs_are_monotone() {
        let mut s = sched(SchedulerKind::Cosine, 0.01, 10);
        s.begin_epoch(3).unwrap();
        assert!(matches!(s.begin_epoch(2), Err(Error::State(_))));
    }

    #[test]
    fn validation_rejects_nonsense() {
        assert!(Scheduler::new(Schedule::Constant { lr: 0.0 }).is_err());
        assert!(Scheduler::new(Schedule::with_defaults(SchedulerKind::OneCycle, 0.01, 1)).is_err());
        assert!("warmup".parse::<SchedulerKind>().is_err());
    }
}
