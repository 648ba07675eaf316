//! Training runs, ten-crop evaluation, fine-tuning and sweeps.

mod config;
mod eval;
mod metrics;
mod sweep;

pub use config::{
    CropAveraging, DataConfig, FineTuneConfig, OptimConfig, Precision, RunConfig, SchedConfig,
    TrainConfig,
};
pub use eval::{average_crops, evaluate, evaluate_with, EvalResult};
pub use metrics::{test_line, ConfusionMatrix, EpochMetrics, METRICS_HEADER};
pub use sweep::{run_sweep, sweep_plan, sweep_table, SweepAxis, SweepRow, SweepRun};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{
    make_batches, merge_train_val, AugmentConfig, Batch, BatchMode, FerRecord, SplitRoles,
};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, VggModel};
use crate::nn::{softmax_cross_entropy, Mode};
use crate::optim::Optimizer;
use crate::sched::{Schedule, Scheduler};
use crate::tensor::{Real, SeededRng};

const TAG_INIT: u64 = 0x494e;
const TAG_DROPOUT: u64 = 0x4450;
const FINETUNE_SALT: u64 = 0x4654_0000_0000;

pub const CONFIG_ECHO: &str = "config.echo";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const TIMING_FILE: &str = "timing.tsv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Records split by experimental role.
#[derive(Debug, Clone, Default)]
pub struct SplitData {
    pub train: Vec<FerRecord>,
    pub val: Vec<FerRecord>,
    pub test: Vec<FerRecord>,
}

impl SplitData {
    pub fn from_records(records: &[FerRecord], roles: &SplitRoles) -> Self {
        let pick = |u| records.iter().filter(|r| r.usage == u).cloned().collect();
        SplitData {
            train: pick(roles.train),
            val: pick(roles.validation),
            test: pick(roles.test),
        }
    }

    /// Validation records moved into training; validation left empty.
    pub fn merged(records: &[FerRecord], roles: &SplitRoles) -> Self {
        SplitData::from_records(&merge_train_val(records, roles), roles)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean unscaled cross-entropy over training crops.
    pub loss: f64,
    pub accuracy: f64,
    pub samples: usize,
}

/// One pass over `batches`: forward, loss scaled by `loss_scale`, backward,
/// gradients unscaled, optimizer step.
pub fn train_epoch<T: Real>(
    model: &mut VggModel<T>,
    optimizer: &mut Optimizer<T>,
    batches: impl IntoIterator<Item = Result<Batch<T>>>,
    lr: f64,
    loss_scale: f64,
    rng: &mut SeededRng,
) -> Result<EpochStats> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut samples = 0usize;
    for (b, batch) in batches.into_iter().enumerate() {
        let batch = batch?;
        let logits = model.forward(&batch.images, Mode::Train, Some(rng))?;
        let out = softmax_cross_entropy(&logits, &batch.labels).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("batch {b}: {m}")),
            other => other,
        })?;
        if !out.loss.is_finite() {
            return Err(Error::Numeric(format!("batch {b}: loss is {}", out.loss)));
        }
        let n = batch.len();
        loss_sum += out.loss * n as f64;
        samples += n;
        correct += logits
            .argmax_axis(1)?
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();

        let mut grads = if loss_scale == 1.0 {
            model.backward(&out.logit_grad)?
        } else {
            model.backward(&out.logit_grad.scale(T::of(loss_scale)))?
        };
        if loss_scale != 1.0 {
            let inv = T::of(1.0 / loss_scale);
            for g in grads.params.values_mut() {
                *g = g.scale(inv);
            }
        }
        optimizer.step(&mut model.params_mut(), &grads.params, lr)?;
    }
    if samples == 0 {
        return Err(Error::Data("training epoch saw no batches".into()));
    }
    Ok(EpochStats {
        loss: loss_sum / samples as f64,
        accuracy: correct as f64 / samples as f64,
        samples,
    })
}

/// What a finished run hands back.
#[derive(Debug, Clone)]
pub struct RunOutcome<T: Real> {
    pub metrics: Vec<EpochMetrics>,
    /// Best by validation accuracy; the final epoch when no validation split.
    pub best: Checkpoint<T>,
    pub best_epoch: usize,
    pub final_model: VggModel<T>,
    /// Ten-crop test evaluation of `best`.
    pub test: EvalResult,
}

/// Fixed inputs of one training loop.
pub struct FitPlan<'a> {
    pub schedule: Schedule,
    pub epochs: usize,
    pub seed: u64,
    pub train: &'a [FerRecord],
    /// `None` switches to final-epoch selection.
    pub val: Option<&'a [FerRecord]>,
    pub test: &'a [FerRecord],
    pub augment: &'a AugmentConfig,
    pub train_cfg: &'a TrainConfig,
    pub restore_best_on_restart: bool,
    pub out: Option<&'a Path>,
}

struct LogFiles {
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
    metrics_path: PathBuf,
    timing_path: PathBuf,
}

impl LogFiles {
    fn create(dir: &Path) -> Result<Self> {
        let metrics_path = dir.join(METRICS_FILE);
        let timing_path = dir.join(TIMING_FILE);
        let open = |p: &Path| {
            File::create(p)
                .map(BufWriter::new)
                .map_err(|e| Error::io(p, e))
        };
        let mut files = LogFiles {
            metrics: open(&metrics_path)?,
            timing: open(&timing_path)?,
            metrics_path,
            timing_path,
        };
        files.metrics_line(METRICS_HEADER)?;
        files.timing_line("epoch\tseconds")?;
        Ok(files)
    }

    fn metrics_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.metrics, "{line}")
            .and_then(|_| self.metrics.flush())
            .map_err(|e| Error::io(&self.metrics_path, e))
    }

    fn timing_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.timing, "{line}")
            .and_then(|_| self.timing.flush())
            .map_err(|e| Error::io(&self.timing_path, e))
    }
}

/// The shared epoch loop behind [`run_experiment`] and [`fine_tune`].
pub fn fit<T: Real>(
    mut model: VggModel<T>,
    mut optimizer: Optimizer<T>,
    plan: &FitPlan,
) -> Result<RunOutcome<T>> {
    if plan.epochs == 0 {
        return Err(Error::Config("a run needs at least one epoch".into()));
    }
    if plan.train.is_empty() {
        return Err(Error::Data("the training split is empty".into()));
    }
    if plan.test.is_empty() {
        return Err(Error::Data("the test split is empty".into()));
    }
    if let Some(val) = plan.val {
        if val.is_empty() {
            return Err(Error::Data("the validation split is empty".into()));
        }
    } else if matches!(plan.schedule, Schedule::Rlrp { .. }) {
        return Err(Error::Config(
            "plateau reduction needs a validation split".into(),
        ));
    }
    let cfg = plan.train_cfg;
    let mut scheduler = Scheduler::new(plan.schedule.clone())?;
    let mut logs = plan.out.map(LogFiles::create).transpose()?;
    let mut metrics = Vec::new();
    let mut best: Option<(Checkpoint<T>, usize)> = None;

    for epoch in 0..plan.epochs {
        let started = Instant::now();
        let lr = scheduler.begin_epoch(epoch)?;
        if plan.restore_best_on_restart && scheduler.is_restart(epoch) {
            if let Some((ckpt, e)) = &best {
                log::info!("epoch {epoch}: warm restart, restoring weights of epoch {e}");
                ckpt.restore_into(&mut model)?;
            }
        }
        let batches = make_batches::<T>(
            plan.train,
            plan.augment,
            plan.seed,
            epoch as u64,
            BatchMode::Train,
            cfg.batch_size,
        )?;
        let mut rng = SeededRng::substream(plan.seed, TAG_DROPOUT, epoch as u64, 0);
        let stats = train_epoch(
            &mut model,
            &mut optimizer,
            batches,
            lr,
            cfg.loss_scale,
            &mut rng,
        )
        .map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, {m}")),
            other => other,
        })?;
        let val_acc = match plan.val {
            Some(val) => {
                let acc = evaluate(&model, val, cfg.batch_size, cfg.averaging)?.accuracy;
                scheduler.observe(acc)?;
                Some(acc)
            }
            None => None,
        };
        let improved = match (&best, val_acc) {
            (None, _) | (_, None) => true,
            (Some((b, _)), Some(acc)) => acc > b.best_val_acc,
        };
        if improved {
            let ckpt = Checkpoint {
                optimizer: Some(optimizer.clone()),
                scheduler: Some(scheduler.clone()),
                epoch: epoch as u64,
                best_val_acc: val_acc.unwrap_or(0.0),
                ..Checkpoint::from_model(&model)
            };
            if let Some(dir) = plan.out {
                ckpt.save(&dir.join(BEST_CHECKPOINT))?;
            }
            best = Some((ckpt, epoch));
        }
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: stats.loss,
            train_acc: stats.accuracy,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} loss {:.4} train {:.4} val {}",
            m.train_loss,
            m.train_acc,
            val_acc.map_or("-".into(), |v| format!("{v:.4}"))
        );
        if let Some(logs) = logs.as_mut() {
            logs.metrics_line(&m.tsv_line(cfg.log_wall_time))?;
            logs.timing_line(&format!("{epoch}\t{:.3}", m.seconds))?;
        }
        metrics.push(m);
    }

    let (best, best_epoch) = best.expect("at least one epoch ran");
    let test = evaluate(&best.to_model()?, plan.test, cfg.batch_size, cfg.averaging)?;
    if let Some(logs) = logs.as_mut() {
        logs.metrics_line(&test_line(test.accuracy, &test.confusion))?;
    }
    let outcome = RunOutcome {
        metrics,
        best,
        best_epoch,
        final_model: model,
        test,
    };
    if let Some(dir) = plan.out {
        write_summary(dir, &outcome)?;
    }
    Ok(outcome)
}

/// The weights a run under `cfg` starts from.
pub fn initial_model<T: Real>(cfg: &RunConfig) -> Result<VggModel<T>> {
    VggModel::build(
        &cfg.model,
        &mut SeededRng::with_stream(cfg.train.seed, TAG_INIT),
    )
}

/// Train a freshly initialized model under `cfg`.
pub fn run_experiment<T: Real>(
    cfg: &RunConfig,
    data: &SplitData,
    out: Option<&Path>,
) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    let seed = cfg.train.seed;
    let model = initial_model::<T>(cfg)?;
    let optimizer = Optimizer::new(cfg.optim.kind, cfg.optim.params.clone())?;
    let plan = FitPlan {
        schedule: cfg.schedule()?,
        epochs: cfg.train.epochs,
        seed,
        train: &data.train,
        val: Some(&data.val),
        test: &data.test,
        augment: &cfg.data.augment,
        train_cfg: &cfg.train,
        restore_best_on_restart: false,
        out,
    };
    fit(model, optimizer, &plan)
}

/// Continue from `checkpoint` under a cosine schedule with a fresh optimizer.
/// With `merge_val`, `data.val` must already be folded into `data.train`
/// (see [`SplitData::merged`]) and the final epoch is kept.
pub fn fine_tune<T: Real>(
    checkpoint: &Checkpoint<T>,
    cfg: &RunConfig,
    data: &SplitData,
    out: Option<&Path>,
) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    let ft = &cfg.finetune;
    let model = checkpoint.to_model()?;
    let optimizer = Optimizer::new(cfg.optim.kind, cfg.optim.params.clone())?;
    let plan = FitPlan {
        schedule: ft.schedule()?,
        epochs: ft.epochs,
        seed: cfg.train.seed ^ FINETUNE_SALT,
        train: &data.train,
        val: if ft.merge_val { None } else { Some(&data.val) },
        test: &data.test,
        augment: &cfg.data.augment,
        train_cfg: &cfg.train,
        restore_best_on_restart: ft.restore_best_on_restart,
        out,
    };
    fit(model, optimizer, &plan)
}

pub fn summary_text<T: Real>(outcome: &RunOutcome<T>) -> String {
    let best_val = outcome
        .metrics
        .iter()
        .filter_map(|m| m.val_acc)
        .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))));
    let mut s = String::new();
    s.push_str(&format!("epochs_run\t{}\n", outcome.metrics.len()));
    s.push_str(&format!("best_epoch\t{}\n", outcome.best_epoch));
    s.push_str(&format!(
        "best_val_acc\t{}\n",
        best_val.map_or("-".to_string(), |v| v.to_string())
    ));
    s.push_str(&format!("test_acc\t{}\n", outcome.test.accuracy));
    s.push_str("confusion (rows true, columns predicted)\n");
    s.push_str(&outcome.test.confusion.table());
    s
}

fn write_summary<T: Real>(dir: &Path, outcome: &RunOutcome<T>) -> Result<()> {
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, summary_text(outcome)).map_err(|e| Error::io(&path, e))
}

/// Create `dir` and echo the effective config into it.
pub fn prepare_out_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_ECHO);
    fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))
}
