use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::pipeline::{Context, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "lfo",
    version,
    about = "Learning-from-observation experiment pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single-threaded, bit-reproducible mode.
    #[arg(long)]
    pub reference: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate training, evaluation and auxiliary datasets.
    GenData(RunArgs),
    /// Meta-train the localizers and train the classifier baselines.
    MetaTrain(RunArgs),
    /// Score localization and label the auxiliary pool.
    Localize(RunArgs),
    /// Train the reward models of every comparison arm.
    TrainReward(RunArgs),
    /// Train subtask policies against each reward.
    TrainPolicy(RunArgs),
    /// Evaluate the policies and write the RL table.
    Evaluate(RunArgs),
    /// Run every stage in order.
    ReproduceAll(RunArgs),
    /// Print the full config with defaults filled in.
    ConfigDump(ConfigArgs),
    /// List every config key and the derived stage seeds.
    Describe(ConfigArgs),
}

fn load(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn context(args: &RunArgs) -> Result<Context> {
    let mut config = load(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone().map(PathBuf::from))
        .ok_or_else(|| {
            HarnessError::Config("no output directory: pass --out or set output_dir".into())
        })?;
    Context::new(config, &out, args.reference)
}

pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(HarnessError::Config(e.to_string())),
    };
    let (stage, args) = match &cli.command {
        Command::ConfigDump(a) => {
            println!("{}", load(&a.config)?.dump());
            return Ok(());
        }
        Command::Describe(a) => {
            print!("{}", load(&a.config)?.describe());
            return Ok(());
        }
        Command::GenData(a) => (Some(Stage::GenData), a),
        Command::MetaTrain(a) => (Some(Stage::MetaTrain), a),
        Command::Localize(a) => (Some(Stage::Localize), a),
        Command::TrainReward(a) => (Some(Stage::TrainReward), a),
        Command::TrainPolicy(a) => (Some(Stage::TrainPolicy), a),
        Command::Evaluate(a) => (Some(Stage::Evaluate), a),
        Command::ReproduceAll(a) => (None, a),
    };
    let mut ctx = context(args)?;
    match stage {
        Some(s) => ctx.run(s)?,
        None => ctx.reproduce_all()?,
    };
    eprintln!(
        "report written to {}",
        ctx.store.dir().join(crate::pipeline::REPORT_DIR).display()
    );
    Ok(())
}
