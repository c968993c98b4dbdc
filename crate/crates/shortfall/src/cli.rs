//! Command-line surface. Flags override values from `--config`, which
//! override the built-in defaults.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{self, PredictInput, SampleSelector};
use crate::config::{RunConfig, ScalarKind};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "shortfall", version, about = "Time-to-shortfall forecasting for part delivery lanes")]
pub struct Cli {
    /// TOML run configuration; omitted keys take the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic lane corpus and its ground-truth manifest.
    Gen(GenArgs),
    /// Cut lanes into labelled windows, split by lane and normalize.
    Prepare(PrepareArgs),
    /// Train a model on a prepared dataset.
    Train(TrainArgs),
    /// Score a checkpoint on labelled windows with the adapted metrics.
    Eval(EvalArgs),
    /// Run the rolling weekly QA harness on a lane corpus.
    Qa(QaArgs),
    /// Predict survival curves and median shortfall times.
    Predict(PredictArgs),
    /// Attribute one prediction to its inputs with Shapley values.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of simulated days per lane.
    #[arg(long, value_name = "N")]
    pub days: Option<usize>,
    /// Target share of censored windows.
    #[arg(long, value_name = "F")]
    pub censoring_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Lane corpus (JSON Lines).
    #[arg(long, value_name = "FILE")]
    pub lanes: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Days between consecutive window ends.
    #[arg(long, value_name = "N")]
    pub stride: Option<usize>,
    /// Share of lanes held out for validation.
    #[arg(long, value_name = "F")]
    pub validation_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Train the homogeneous model without group embeddings.
    #[arg(long)]
    pub ablate: bool,
    /// Maximum number of epochs.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long, value_name = "F")]
    pub learning_rate: Option<f64>,
    /// Mini-batch size.
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Epochs without improvement before stopping.
    #[arg(long, value_name = "N")]
    pub patience: Option<usize>,
    /// Prediction horizon in days.
    #[arg(long, value_name = "N")]
    pub horizon: Option<usize>,
    /// Encoder width per direction.
    #[arg(long, value_name = "N")]
    pub hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Labelled windows (JSON Lines).
    #[arg(long, value_name = "FILE")]
    pub windows: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Forecasting horizon in days.
    #[arg(long, value_name = "N")]
    pub horizon_days: Option<u32>,
    /// Allowed timing error in days.
    #[arg(long, value_name = "N")]
    pub tolerance_days: Option<u32>,
}

#[derive(Debug, Args)]
pub struct QaArgs {
    /// Lane corpus (JSON Lines).
    #[arg(long, value_name = "FILE")]
    pub lanes: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of weekly iterations.
    #[arg(long, value_name = "N")]
    pub iterations: Option<usize>,
    /// Days between iteration origins.
    #[arg(long, value_name = "N")]
    pub step: Option<u32>,
    /// Maximum epochs per iteration.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Use the homogeneous model without group embeddings.
    #[arg(long)]
    pub ablate: bool,
    /// Forecasting horizon in days.
    #[arg(long, value_name = "N")]
    pub horizon_days: Option<u32>,
    /// Allowed timing error in days.
    #[arg(long, value_name = "N")]
    pub tolerance_days: Option<u32>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["windows", "lanes"])))]
pub struct PredictArgs {
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Normalized windows written by `prepare`.
    #[arg(long, value_name = "FILE")]
    pub windows: Option<PathBuf>,
    /// Raw lanes; each lane's latest window is scored.
    #[arg(long, value_name = "FILE")]
    pub lanes: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScalarArg {
    /// Restricted mean survival time.
    Rmst,
    /// Hazard at the step given by --hazard-step.
    Hazard,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("selector").required(true).args(["sample", "lane"])))]
pub struct ExplainArgs {
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Labelled windows holding the sample to explain.
    #[arg(long, value_name = "FILE")]
    pub windows: PathBuf,
    /// Windows whose mean is the attribution baseline, normally the training split.
    #[arg(long, value_name = "FILE")]
    pub background: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// 0-based record index of the sample.
    #[arg(long, value_name = "N")]
    pub sample: Option<usize>,
    /// Lane key `site/plant/part`; picks its latest window.
    #[arg(long, value_name = "KEY")]
    pub lane: Option<String>,
    /// With --lane, the window ending on this day.
    #[arg(long, value_name = "N", requires = "lane", conflicts_with = "sample")]
    pub end_day: Option<u32>,
    /// Sampled permutations.
    #[arg(long, value_name = "N")]
    pub permutations: Option<usize>,
    /// Rows kept in the waterfall before aggregation.
    #[arg(long, value_name = "N")]
    pub top_k: Option<usize>,
    /// Explained scalar.
    #[arg(long, value_enum)]
    pub scalar: Option<ScalarArg>,
    /// 1-based hazard step for --scalar hazard.
    #[arg(long, value_name = "N")]
    pub hazard_step: Option<usize>,
    /// Treat the three group ids as extra players.
    #[arg(long)]
    pub include_ids: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Cli {
    /// Configuration file, then global flags, then command flags.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, self.seed);
        match &self.command {
            Command::Gen(a) => {
                set(&mut c.generator.days, a.days);
                set(&mut c.generator.censoring_fraction, a.censoring_fraction);
            }
            Command::Prepare(a) => {
                set(&mut c.pipeline.stride, a.stride);
                set(&mut c.pipeline.validation_fraction, a.validation_fraction);
            }
            Command::Train(a) => {
                if a.ablate {
                    c.model.heterogeneous = false;
                }
                set(&mut c.training.max_epochs, a.epochs);
                set(&mut c.training.learning_rate, a.learning_rate);
                set(&mut c.training.batch_size, a.batch_size);
                set(&mut c.training.patience, a.patience);
                set(&mut c.model.horizon, a.horizon);
                set(&mut c.model.encoder_hidden, a.hidden);
            }
            Command::Eval(a) => {
                set(&mut c.evaluation.horizon, a.horizon_days);
                set(&mut c.evaluation.tolerance, a.tolerance_days);
            }
            Command::Qa(a) => {
                if a.ablate {
                    c.model.heterogeneous = false;
                }
                set(&mut c.evaluation.iterations, a.iterations);
                set(&mut c.evaluation.step, a.step);
                set(&mut c.training.max_epochs, a.epochs);
                set(&mut c.evaluation.horizon, a.horizon_days);
                set(&mut c.evaluation.tolerance, a.tolerance_days);
            }
            Command::Predict(_) => {}
            Command::Explain(a) => {
                set(&mut c.explain.permutations, a.permutations);
                set(&mut c.explain.top_k, a.top_k);
                set(
                    &mut c.explain.scalar,
                    a.scalar.map(|s| match s {
                        ScalarArg::Rmst => ScalarKind::Rmst,
                        ScalarArg::Hazard => ScalarKind::Hazard,
                    }),
                );
                set(&mut c.explain.hazard_step, a.hazard_step);
                if a.include_ids {
                    c.explain.include_ids = true;
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn run(&self, out: &mut dyn Write) -> Result<()> {
        let c = self.resolve_config()?;
        match &self.command {
            Command::Gen(a) => commands::gen(&c, &a.out, out).map(drop),
            Command::Prepare(a) => commands::prepare(&c, &a.lanes, &a.out, out).map(drop),
            Command::Train(a) => commands::train(&c, &a.data, &a.out, out).map(drop),
            Command::Eval(a) => commands::eval(&c, &a.checkpoint, &a.windows, &a.out, out).map(drop),
            Command::Qa(a) => commands::rolling_qa(&c, &a.lanes, &a.out, out).map(drop),
            Command::Predict(a) => {
                let input = match (&a.windows, &a.lanes) {
                    (Some(w), None) => PredictInput::Windows(w.clone()),
                    (None, Some(l)) => PredictInput::Lanes(l.clone()),
                    _ => return Err(Error::Validation("give exactly one of --windows and --lanes".into())),
                };
                commands::predict(&c, &a.checkpoint, &input, &a.out, out).map(drop)
            }
            Command::Explain(a) => {
                let selector = match (a.sample, &a.lane) {
                    (Some(i), None) => SampleSelector::Index(i),
                    (None, Some(key)) => SampleSelector::Lane { key: key.clone(), end_day: a.end_day },
                    _ => return Err(Error::Validation("give exactly one of --sample and --lane".into())),
                };
                commands::explain(&c, &a.checkpoint, &a.windows, &a.background, &selector, &a.out, out).map(drop)
            }
        }
    }
}
