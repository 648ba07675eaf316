//! The `fer` command line.

mod overrides;

pub use overrides::apply_overrides;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{
    limit_per_class, read_csv, synthetic_records, write_csv, Dataset, FerRecord, SyntheticSpec,
    Usage, IMAGE_SIDE,
};
use crate::error::Error;
use crate::model::{peek, Checkpoint, VggConfig};
use crate::saliency::{read_image, record_saliency, write_image, Raster, SaliencyTarget};
use crate::sched::SchedulerKind;
use crate::tensor::{DType, Real};
use crate::train::{
    evaluate, fine_tune, initial_model, prepare_out_dir, run_experiment, run_sweep, summary_text,
    sweep_plan, sweep_table, Precision, RunConfig, SplitData, SweepAxis,
};

/// Process exit codes, one per error category.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INPUT: i32 = 3;
    pub const CONFIG: i32 = 4;
    pub const NUMERIC: i32 = 5;
    pub const IO: i32 = 6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Internal,
    Input,
    Config,
    Numeric,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Internal => exit::INTERNAL,
            Category::Input => exit::INPUT,
            Category::Config => exit::CONFIG,
            Category::Numeric => exit::NUMERIC,
            Category::Io => exit::IO,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Category::Internal => "internal",
            Category::Input => "input",
            Category::Config => "config",
            Category::Numeric => "numeric",
            Category::Io => "io",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.category.label(), self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let category = match &e {
            Error::Parse { .. } | Error::Data(_) | Error::Checkpoint(_) | Error::Label(_) => {
                Category::Input
            }
            Error::Config(_) | Error::ScheduleExhausted { .. } => Category::Config,
            Error::Numeric(_) | Error::DegenerateBatch(_) => Category::Numeric,
            Error::Io { .. } => Category::Io,
            Error::Shape(_) | Error::State(_) | Error::Registry(_) => Category::Internal,
        };
        CliError {
            category,
            message: e.to_string().replace('\n', " "),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn input_err(message: impl Into<String>) -> CliError {
    CliError {
        category: Category::Input,
        message: message.into(),
    }
}

/// Reading a user-supplied file: a missing or unreadable file is an input
/// error, not an I/O failure of the run.
fn as_input(e: Error) -> CliError {
    match e {
        Error::Io { path, source } => {
            input_err(format!("cannot read {}: {source}", path.display()))
        }
        other => other.into(),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "fer",
    version,
    about = "Train and inspect VGG-style facial expression classifiers on FER2013"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep at most this many images per class in every split.
    #[arg(long)]
    pub limit_per_class: Option<usize>,
    /// Use the small model (widths 8/16/32/64, FC 64/32).
    #[arg(long)]
    pub scale_model: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train from scratch.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// FER2013 CSV; overrides `data.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One run per optimizer or per scheduler.
    Sweep {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue a checkpoint under a cosine schedule.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        scheduler: Option<FineTuneSched>,
        /// Train on training + validation and keep the final epoch.
        #[arg(long)]
        merge_val: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ten-crop accuracy and confusion matrix of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "validation")]
        split: SplitArg,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Saliency map, overlay and original for records or a 48x48 PGM.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Zero-based data row. Repeatable.
        #[arg(long = "record")]
        records: Vec<usize>,
        /// A 48x48 binary PGM instead of dataset records.
        #[arg(long, conflicts_with = "records")]
        image: Option<PathBuf>,
        /// Class for the loss; defaults to the model's prediction for --image.
        #[arg(long)]
        label: Option<usize>,
        /// Differentiate the label's logit instead of the loss.
        #[arg(long)]
        logit: bool,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class, per-split counts of a CSV.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Write a synthetic FER-format CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Images per class for Training, PublicTest, PrivateTest.
        #[arg(long, value_delimiter = ',', default_values_t = [8, 8, 8])]
        per_class: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a freshly initialized checkpoint.
    Init {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum AxisArg {
    Optimizer,
    Scheduler,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum FineTuneSched {
    Cosine,
    CosineWr,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

/// Parse `args` (program name first) and run. Returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("{e}");
            e.category.exit_code()
        }
    }
}

/// Entry point of the `fer` binary.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    run(std::env::args_os())
}

fn effective_config(args: &ConfigArgs, data: Option<&Path>) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| as_input(Error::io(path, e)))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    cfg = apply_overrides(&cfg, &args.sets)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(n) = args.limit_per_class {
        cfg.data.limit_per_class = Some(n);
    }
    if args.scale_model {
        let small = VggConfig::small();
        cfg.model.stage_widths = small.stage_widths;
        cfg.model.fc_widths = small.fc_widths;
    }
    if let Some(path) = data {
        cfg.data.csv = Some(path.to_path_buf());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_records(cfg: &RunConfig) -> CliResult<Vec<FerRecord>> {
    let path = cfg
        .data
        .csv
        .as_ref()
        .ok_or_else(|| input_err("no dataset given: pass --data or set data.csv"))?;
    let Dataset {
        records, warnings, ..
    } = read_csv(path).map_err(as_input)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(match cfg.data.limit_per_class {
        Some(n) => limit_per_class(&records, n),
        None => records,
    })
}

fn create_out(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    prepare_out_dir(dir, cfg).map_err(CliError::from)
}

macro_rules! with_real {
    ($dtype:expr, $f:ident ( $($arg:expr),* )) => {
        match $dtype {
            DType::F32 => $f::<f32>($($arg),*),
            DType::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn precision_dtype(p: Precision) -> DType {
    match p {
        Precision::F32 => DType::F32,
        Precision::F64 => DType::F64,
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train { cfg, data, out } => {
            let cfg = effective_config(&cfg, data.as_deref())?;
            let records = load_records(&cfg)?;
            let split = SplitData::from_records(&records, &cfg.data.roles);
            create_out(&out, &cfg)?;
            with_real!(
                precision_dtype(cfg.train.precision),
                train_run(&cfg, &split, &out)
            )
        }
        Command::Sweep {
            axis,
            cfg,
            data,
            out,
        } => {
            let cfg = effective_config(&cfg, data.as_deref())?;
            let records = load_records(&cfg)?;
            let split = SplitData::from_records(&records, &cfg.data.roles);
            let axis = match axis {
                AxisArg::Optimizer => SweepAxis::Optimizer,
                AxisArg::Scheduler => SweepAxis::Scheduler,
            };
            let plan = sweep_plan(axis, &cfg);
            for run in &plan {
                run.config.validate()?;
            }
            create_out(&out, &cfg)?;
            let rows = with_real!(
                precision_dtype(cfg.train.precision),
                run_sweep(&plan, &split, &out)
            )?;
            print!("{}", sweep_table(&rows));
            Ok(())
        }
        Command::Finetune {
            checkpoint,
            scheduler,
            merge_val,
            cfg,
            data,
            out,
        } => {
            let mut cfg = effective_config(&cfg, data.as_deref())?;
            if let Some(s) = scheduler {
                cfg.finetune.scheduler = match s {
                    FineTuneSched::Cosine => SchedulerKind::Cosine,
                    FineTuneSched::CosineWr => SchedulerKind::CosineWr,
                };
            }
            cfg.finetune.merge_val |= merge_val;
            let (dtype, model) = peek(&checkpoint).map_err(as_input)?;
            cfg.model = model;
            cfg.validate()?;
            let records = load_records(&cfg)?;
            let split = if cfg.finetune.merge_val {
                SplitData::merged(&records, &cfg.data.roles)
            } else {
                SplitData::from_records(&records, &cfg.data.roles)
            };
            with_real!(dtype, finetune_run(&checkpoint, &cfg, &split, &out))
        }
        Command::Eval {
            checkpoint,
            split,
            cfg,
            data,
        } => {
            let cfg = effective_config(&cfg, data.as_deref())?;
            let (dtype, _) = peek(&checkpoint).map_err(as_input)?;
            let records = load_records(&cfg)?;
            let roles = cfg.data.roles;
            let usage = match split {
                SplitArg::Train => roles.train,
                SplitArg::Validation => roles.validation,
                SplitArg::Test => roles.test,
            };
            let chosen: Vec<FerRecord> = records.into_iter().filter(|r| r.usage == usage).collect();
            with_real!(dtype, eval_run(&checkpoint, &cfg, &chosen, usage))
        }
        Command::Saliency {
            checkpoint,
            records,
            image,
            label,
            logit,
            alpha,
            cfg,
            data,
            out,
        } => {
            let cfg = effective_config(&cfg, data.as_deref())?;
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Config(format!("--alpha {alpha} is outside [0, 1]")).into());
            }
            let (dtype, _) = peek(&checkpoint).map_err(as_input)?;
            let inputs = saliency_inputs(&cfg, &records, image.as_deref(), label)?;
            let target = if logit {
                SaliencyTarget::Logit
            } else {
                SaliencyTarget::Loss
            };
            let dir = out.join("saliency");
            fs::create_dir_all(&dir).map_err(|e| CliError::from(Error::io(&dir, e)))?;
            with_real!(
                dtype,
                saliency_run(&checkpoint, &inputs, target, alpha, &dir)
            )
        }
        Command::Stats { data } => {
            let ds = read_csv(&data).map_err(as_input)?;
            for w in &ds.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", ds.counts.report());
            Ok(())
        }
        Command::Synth {
            out,
            per_class,
            seed,
        } => {
            if per_class.len() != 3 {
                return Err(Error::Config(
                    "--per-class takes three counts: train,validation,test".into(),
                )
                .into());
            }
            let spec = SyntheticSpec {
                per_class: [per_class[0], per_class[1], per_class[2]],
                ..SyntheticSpec::default()
            };
            let records = synthetic_records(&spec, seed);
            let file = fs::File::create(&out).map_err(|e| CliError::from(Error::io(&out, e)))?;
            write_csv(&records, std::io::BufWriter::new(file))
                .map_err(|e| CliError::from(Error::io(&out, e)))?;
            println!("wrote {} records to {}", records.len(), out.display());
            Ok(())
        }
        Command::Init { cfg, out } => {
            let cfg = effective_config(&cfg, None)?;
            with_real!(precision_dtype(cfg.train.precision), init_run(&cfg, &out))
        }
    }
}

fn train_run<T: Real>(cfg: &RunConfig, data: &SplitData, out: &Path) -> CliResult<()> {
    let outcome = run_experiment::<T>(cfg, data, Some(out))?;
    print!("{}", summary_text(&outcome));
    Ok(())
}

fn finetune_run<T: Real>(
    path: &Path,
    cfg: &RunConfig,
    data: &SplitData,
    out: &Path,
) -> CliResult<()> {
    let ckpt = Checkpoint::<T>::load(path).map_err(as_input)?;
    create_out(out, cfg)?;
    let outcome = fine_tune(&ckpt, cfg, data, Some(out))?;
    print!("{}", summary_text(&outcome));
    Ok(())
}

fn eval_run<T: Real>(
    path: &Path,
    cfg: &RunConfig,
    records: &[FerRecord],
    usage: Usage,
) -> CliResult<()> {
    if records.is_empty() {
        return Err(input_err(format!("the {} split is empty", usage.as_str())));
    }
    let model = Checkpoint::<T>::load(path).map_err(as_input)?.to_model()?;
    let result = evaluate(&model, records, cfg.train.batch_size, cfg.train.averaging)?;
    println!("split\t{}", usage.as_str());
    println!("records\t{}", records.len());
    println!("accuracy\t{}", result.accuracy);
    print!("{}", result.confusion.table());
    Ok(())
}

/// A named face to explain.
struct SaliencyInput {
    name: String,
    record: FerRecord,
    /// Use the model's prediction as the label.
    predict_label: bool,
}

fn saliency_inputs(
    cfg: &RunConfig,
    ids: &[usize],
    image: Option<&Path>,
    label: Option<usize>,
) -> CliResult<Vec<SaliencyInput>> {
    if let Some(path) = image {
        let raster = read_image(path).map_err(as_input)?;
        let Raster::Gray {
            width,
            height,
            values,
        } = raster
        else {
            return Err(input_err(format!(
                "{} is not a gray (P5) image",
                path.display()
            )));
        };
        if width != IMAGE_SIDE || height != IMAGE_SIDE {
            return Err(input_err(format!(
                "{} is {width}x{height}, expected 48x48",
                path.display()
            )));
        }
        let pixels = values.iter().map(|&v| (v * 255.0).round() as u8).collect();
        let record = FerRecord::new(0, label.unwrap_or(0), pixels, Usage::Training)?;
        let stem = path
            .file_stem()
            .map_or("image".into(), |s| s.to_string_lossy().into_owned());
        return Ok(vec![SaliencyInput {
            name: stem,
            record,
            predict_label: label.is_none(),
        }]);
    }
    if ids.is_empty() {
        return Err(Error::Config("pass --record or --image".into()).into());
    }
    let records = load_records(cfg)?;
    ids.iter()
        .map(|&i| {
            let mut record = records
                .iter()
                .find(|r| r.id == i)
                .cloned()
                .ok_or_else(|| input_err(format!("record {i} is not in the dataset")))?;
            if let Some(l) = label {
                record = FerRecord::new(record.id, l, record.pixels, record.usage)?;
            }
            Ok(SaliencyInput {
                name: format!("record{i}"),
                record,
                predict_label: false,
            })
        })
        .collect()
}

fn saliency_run<T: Real>(
    path: &Path,
    inputs: &[SaliencyInput],
    target: SaliencyTarget,
    alpha: f64,
    dir: &Path,
) -> CliResult<()> {
    let mut model = Checkpoint::<T>::load(path).map_err(as_input)?.to_model()?;
    for input in inputs {
        let mut record = input.record.clone();
        if input.predict_label {
            let ds = [record.clone()];
            record.label = evaluate(&model, &ds, 1, Default::default())?.predictions[0];
        }
        let t = record_saliency(&mut model, &record, target, alpha)?;
        for (suffix, raster) in [
            ("original.pgm", &t.original),
            ("saliency.pgm", &t.map.raster()),
            ("overlay.ppm", &t.overlay),
        ] {
            let file = dir.join(format!("{}_{suffix}", input.name));
            write_image(raster, &file)?;
            println!("{}", file.display());
        }
    }
    Ok(())
}

fn init_run<T: Real>(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let model = initial_model::<T>(cfg)?;
    Checkpoint::from_model(&model).save(out)?;
    println!(
        "wrote {} ({} parameters)",
        out.display(),
        model.num_parameters()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_partition_errors() {
        let cases = [
            (
                Error::Parse {
                    line: 1,
                    message: String::new(),
                },
                exit::INPUT,
            ),
            (Error::Config(String::new()), exit::CONFIG),
            (Error::Numeric(String::new()), exit::NUMERIC),
            (Error::io("x", std::io::Error::other("boom")), exit::IO),
            (Error::State(String::new()), exit::INTERNAL),
        ];
        for (e, code) in cases {
            assert_eq!(CliError::from(e).category.exit_code(), code);
        }
        let codes = [
            exit::INTERNAL,
            exit::USAGE,
            exit::INPUT,
            exit::CONFIG,
            exit::NUMERIC,
            exit::IO,
        ];
        let mut sorted = codes.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["fer", "train"]), exit::USAGE);
        assert_eq!(run(["fer", "frobnicate"]), exit::USAGE);
    }

    #[test]
    fn error_line_format() {
        let e = CliError::from(Error::Data("empty".into()));
        assert_eq!(e.to_string(), "error[input]: data error: empty");
    }
}
